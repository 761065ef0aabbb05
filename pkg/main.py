"""
Main entry point for the Heavy-Tail Eigenvalue Lab.
Run this file with a subcommand, e.g. ``python main.py simulate --config cfg.json --out runs/x``.
"""

import sys

from app.main import run

if __name__ == "__main__":
    sys.exit(run())
