"""
Helpers shared by the test modules: tiny image trees and tiny networks
"""

import os
import sys

import numpy as np
from PIL import Image

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))
from src.dataset_pipeline import scan_dataset, split_dataset  # noqa: E402
from src.model_zoo import VanillaConfig, build_vanilla_cnn  # noqa: E402
from src.synthetic import generate_synthetic_dataset  # noqa: E402

TINY_CLASSES = ('Alpha', 'Beta', 'Gamma')


def write_image(path, size=(12, 10), color=(200, 30, 30), mode='RGB', fmt=None):
    """Write a solid-color image with a small gradient so resizing has work to do."""
    width, height = size
    ramp = np.linspace(0, 40, width, dtype=np.float64)[None, :, None]
    pixels = np.clip(np.array(color, dtype=np.float64)[None, None, :] + ramp, 0, 255)
    pixels = np.broadcast_to(pixels, (height, width, 3)).astype(np.uint8)
    image = Image.fromarray(pixels)
    if mode != 'RGB':
        image = image.convert(mode)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    image.save(path, format=fmt)
    return path


def write_tree(root, per_class=4, classes=TINY_CLASSES):
    """<root>/<Class>/img_N.png, one hue per class."""
    colors = [(220, 40, 40), (40, 220, 40), (40, 40, 220), (220, 220, 40), (40, 220, 220)]
    for index, name in enumerate(classes):
        for number in range(per_class):
            write_image(os.path.join(root, name, f'img_{number}.png'), color=colors[index % len(colors)])
    return root


def split_synthetic(root, per_class=10, size=16, classes=TINY_CLASSES, seed=0, ratios=(0.6, 0.2, 0.2)):
    """Generate, scan and split a small synthetic dataset."""
    generate_synthetic_dataset(root, classes, per_class=per_class, size=size, seed=seed)
    manifest, _ = scan_dataset(root)
    return split_dataset(manifest, ratios, seed=seed)


def tiny_vanilla(input_shape=(8, 8, 3), num_classes=3, dropout=0.0):
    """One conv block with batchnorm, dense(8), softmax."""
    config = VanillaConfig(filters=(4,), block_dropout_after=(), dense_units=(8,), head_dropout=dropout)
    return build_vanilla_cnn(input_shape, num_classes, config)
