#!/usr/bin/env python3
"""Closed-loop agreement of model-based MPC and the data-driven planner.

Runs both controllers on seeded random LTI systems and reports the worst
per-step input deviation (they coincide when the data spans the behavior).
Equivalent to ``deepc-bench equivalence``.
"""

import sys

from deepc.cli import main

if __name__ == "__main__":
    sys.exit(main(["equivalence", *sys.argv[1:]]))
