"""
Main entry point for the ToothPoint detector.

This module prepares a headless pygame environment (images and overlays are
drawn off-screen), puts the project root on the Python path so the
toothnet and Utility packages resolve, and hands the command line to the
command surface.

Usage:
    python Main.py synthesize --count 200 --out data
    python Main.py train --dataset data --out runs/full
    python Main.py eval --dataset data --checkpoint runs/full/checkpoint.tpckpt --out runs/eval
    python Main.py infer --checkpoint runs/full/checkpoint.tpckpt --image scan.png --out runs/infer
    python Main.py gradcheck --out runs/gradcheck

Dependencies:
    - toothnet.cli: command parsing and dispatch
    - Utility: image I/O, fonts and logging setup
"""

import os
import sys

os.environ.setdefault("SDL_VIDEODRIVER", "dummy")

# Add the project root directory to Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from toothnet.cli import main

if __name__ == "__main__":
    sys.exit(main())
