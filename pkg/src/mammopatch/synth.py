"""Seeded synthetic image corpus.

Stand-in data for pipeline runs and tests: smoothed-noise gray textures in
the 14-bit range, where positive images additionally carry one bright disc
with a soft edge and a random radius and contrast. The mask marks exactly
the disc pixels, so a positive image's central patch always clears the
mass-overlap rule and a negative image never does.
"""

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DomainError
from .patches import MAX_INTENSITY
from .imgfiles import write_gimg, write_gmsk

TEXTURE_SIGMA = 3.0
TEXTURE_LOW = 0.18
TEXTURE_HIGH = 0.55
RADIUS_RANGE = (0.20, 0.35)  # fraction of the shorter image side
CONTRAST_RANGE = (0.25, 0.45)  # fraction of full scale
EDGE_SOFTNESS = 0.18  # soft rim width as a fraction of the radius


def generate_image(rng, rows: int, cols: int, positive: bool):
    """One texture image and its mask; the disc is present iff positive."""
    noise = rng.normal(0.0, 1.0, size=(rows, cols))
    tex = gaussian_filter(noise, sigma=TEXTURE_SIGMA)
    lo, hi = tex.min(), tex.max()
    span = hi - lo if hi > lo else 1.0
    levels = TEXTURE_LOW + (TEXTURE_HIGH - TEXTURE_LOW) * (tex - lo) / span
    mask = np.zeros((rows, cols), dtype=bool)
    if positive:
        side = min(rows, cols)
        radius = rng.uniform(*RADIUS_RANGE) * side
        contrast = rng.uniform(*CONTRAST_RANGE)
        cy = rows / 2.0 + rng.uniform(-0.05, 0.05) * rows
        cx = cols / 2.0 + rng.uniform(-0.05, 0.05) * cols
        yy = np.arange(rows)[:, None] - cy
        xx = np.arange(cols)[None, :] - cx
        dist = np.sqrt(yy * yy + xx * xx)
        rim = max(EDGE_SOFTNESS * radius, 1.0)
        profile = np.clip((radius - dist) / rim, 0.0, 1.0)
        levels = levels + contrast * profile
        mask = dist <= radius
    pixels = np.clip(np.rint(levels * MAX_INTENSITY), 0, MAX_INTENSITY).astype(np.uint16)
    return pixels, mask


def generate_corpus(out_dir, n_positive: int, n_negative: int,
                    rows: int, cols: int, seed: int):
    """Write a corpus under ``out_dir/images`` and ``out_dir/masks``.

    Positives come first (pos_0000...), then negatives (neg_0000...); each
    image NAME.gimg pairs with masks/NAME.gmsk. Returns the image count.
    """
    if n_positive < 0 or n_negative < 0 or n_positive + n_negative == 0:
        raise DomainError(
            f"need a positive total image count, got {n_positive}+{n_negative}"
        )
    if rows < 8 or cols < 8:
        raise DomainError(f"images of {rows}x{cols} are too small to texture")
    out_dir = Path(out_dir)
    images = out_dir / "images"
    masks = out_dir / "masks"
    images.mkdir(parents=True, exist_ok=True)
    masks.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for kind, count in (("pos", n_positive), ("neg", n_negative)):
        for i in range(count):
            name = f"{kind}_{i:04d}"
            pixels, mask = generate_image(rng, rows, cols, kind == "pos")
            write_gimg(images / f"{name}.gimg", pixels)
            write_gmsk(masks / f"{name}.gmsk", mask)
    return n_positive + n_negative
