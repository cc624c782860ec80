#!/usr/bin/env python3
"""Output landscapes and slope summary for the beta family plus relu, at five seeds.

Extra arguments are passed through, e.g. ``--resolution 256 --out out/ls``.
"""
import sys

from eswish.cli import main

ACTS = "relu,elu,swish,eswish:1,eswish:1.25,eswish:1.5,eswish:1.75,eswish:2"

if __name__ == "__main__":
    extra = sys.argv[1:]
    status = 0
    for seed in range(5):
        argv = ["landscape", "--act", ACTS, "--seed", str(seed), "--resolution", "128",
                "--out", f"out/landscape/seed{seed}"]
        status = max(status, main(argv + extra))
    sys.exit(status)
