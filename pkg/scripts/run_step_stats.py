#!/usr/bin/env python3
"""Paired quadcopter step-response statistics (default 30 repetitions).

Each repetition collects fresh excitation data and runs both methods on
identical seeds; reports paired cost and violation-duration
distributions.  Equivalent to ``deepc-bench step-stats``.
"""

import sys

from deepc.cli import main

if __name__ == "__main__":
    sys.exit(main(["step-stats", *sys.argv[1:]]))
