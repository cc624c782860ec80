#!/usr/bin/env python3
"""Fixed 784-200-100-60-30-10 MLP with dropout, four activations, three seeds, 20 epochs."""
import sys

from eswish.cli import main

if __name__ == "__main__":
    sys.exit(main(["train-mnist", "--preset", "paper", "--out", "out/mnist"] + sys.argv[1:]))
