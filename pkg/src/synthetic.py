"""
Synthetic city dataset

Writes a ``<out>/<ClassName>/img_XXXX.png`` tree in which each class is
encoded by a dominant hue plus seeded noise. Used to exercise the whole
pipeline when the real city photographs are not available.
"""

import colorsys
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadConfigError
from .logging_config import setup_logging
from .rng import SplitMix64

logger = setup_logging('synthetic')

CITY_NAMES = ('Ahmedabad', 'Delhi', 'Kerala', 'Kolkata', 'Mumbai')


def class_color(class_index, num_classes):
    """Base RGB color (0-255) of a class: hues evenly spaced around the wheel."""
    r, g, b = colorsys.hsv_to_rgb(class_index / num_classes, 0.85, 0.9)
    return np.array([r, g, b]) * 255.0


def generate_synthetic_dataset(out_dir, class_names=CITY_NAMES, per_class=100,
                               size=175, seed=0, noise=0.25):
    """
    Generate a hue-coded image tree

    Args:
        out_dir: Destination directory (created if missing)
        class_names: One subdirectory per name
        per_class: Images per class
        size: Square image side in pixels
        seed: SplitMix64 seed; identical seeds give identical files
        noise: Half-width of the uniform per-pixel noise, as a fraction of 255

    Returns:
        Path to the dataset root
    """
    if per_class < 1 or size < 8 or len(class_names) < 2:
        raise BadConfigError(
            f"need >= 2 classes, >= 1 image per class and size >= 8 "
            f"(got {len(class_names)}, {per_class}, {size})"
        )
    out_dir = Path(out_dir)
    rng = SplitMix64(seed)

    for class_index, name in enumerate(class_names):
        class_dir = out_dir / name
        class_dir.mkdir(parents=True, exist_ok=True)
        base = class_color(class_index, len(class_names))
        for image_index in range(per_class):
            # Per-image brightness jitter, then per-pixel noise
            brightness = 0.8 + 0.4 * rng.uniform(())
            pixel_noise = (rng.uniform((size, size, 3)) * 2.0 - 1.0) * noise * 255.0
            pixels = np.clip(base * brightness + pixel_noise, 0, 255).astype(np.uint8)
            Image.fromarray(pixels).save(class_dir / f'img_{image_index:04d}.png')

    logger.info(
        f"Generated {per_class * len(class_names)} synthetic images "
        f"({len(class_names)} classes, {size}x{size}) in {out_dir}"
    )
    return out_dir
