#!/usr/bin/env python3
"""Average quadcopter cost over the regularization-weight grids.

Sweeps the column-weight penalty (at fixed window-slack weight 1e5) and
the window-slack weight (at fixed column-weight penalty 300), 8 fresh
data sets per grid point by default.  Equivalent to
``deepc-bench reg-sweep``.
"""

import sys

from deepc.cli import main

if __name__ == "__main__":
    sys.exit(main(["reg-sweep", *sys.argv[1:]]))
