#!/usr/bin/env python3
"""Quadcopter figure-eight tracking, data-driven vs identify-then-MPC.

One 60-second closed-loop run per method on identical data and noise
seeds; writes reference and trajectory CSVs for plotting.  Equivalent to
``deepc-bench figure8``.
"""

import sys

from deepc.cli import main

if __name__ == "__main__":
    sys.exit(main(["figure8", *sys.argv[1:]]))
