"""
Latent Channel Tracker
Model-free massive-MIMO channel estimation experiments from the command line.
"""

import sys

from src.cli import cli

if __name__ == "__main__":
    sys.exit(cli(sys.argv[1:]))
