#!/usr/bin/env python3
"""
cityscope - Command Line Interface

Usage:
    python city_tools.py synth --out data/synthetic
    python city_tools.py scan --root data/synthetic --out manifest.json
    python city_tools.py split --manifest manifest.json --seed 0
    python city_tools.py train --manifest manifest.json --out-dir runs/vanilla
    python city_tools.py finetune --manifest manifest.json --weights weights/vgg16 --out-dir runs/finetune
    python city_tools.py evaluate --manifest manifest.json --checkpoint runs/vanilla/checkpoint.ckpt
    python city_tools.py predict --image photo.jpg --checkpoint runs/vanilla/checkpoint.ckpt
    python city_tools.py plot --history runs/vanilla/history.jsonl --out-dir plots
    python city_tools.py compare --runs runs/vanilla runs/finetune
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cli import main  # noqa: E402

if __name__ == '__main__':
    sys.exit(main())
