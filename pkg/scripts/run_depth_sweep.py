#!/usr/bin/env python3
"""Depth sweep of relu, swish and eswish:1.5.

Defaults to the reduced ``desk`` preset; pass ``--preset paper`` for depths
23 to 44 at width 512. Without ``--data-dir`` or ESWISH_DATA_DIR, add ``--synthetic``.
"""
import sys

from eswish.cli import main

if __name__ == "__main__":
    sys.exit(main(["train-depth", "--out", "out/depth"] + sys.argv[1:]))
