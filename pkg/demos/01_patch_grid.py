"""Walk through patch extraction: the strided origin grid, overlap
labeling against a mask, and the two augmentation variants."""

import numpy as np

from mammopatch import (
    GrayImage,
    MassMask,
    PatchGridConfig,
    build_dataset,
    extract_patches,
    grid_origins,
    label_patch,
)

# The origin grid is 1-based and keeps an origin only while the patch
# still has a pixel of slack before the far edge.
print("origins for a 1000-pixel extent, 454 patch, 300 stride:",
      grid_origins(1000, 454, 300))
print("a 455-pixel extent cannot hold a 454 patch:",
      grid_origins(455, 454, 1))

# Build a small synthetic image: background noise plus a bright disc.
rng = np.random.default_rng(0)
rows = cols = 96
px = (rng.random((rows, cols)) * 4000).astype(np.uint16)
rr, cc = np.mgrid[0:rows, 0:cols]
disc = (rr - 19) ** 2 + (cc - 19) ** 2 <= 11 ** 2
px[disc] += 9000
image = GrayImage(px, "demo")
mask = MassMask(disc)

cfg = PatchGridConfig(patch_height=40, patch_width=40, stride=28)
patches = extract_patches(image, cfg)
print(f"\n{len(patches)} patches on the {rows}x{cols} image:")
for r, c, grid in patches:
    label = label_patch((r, c), cfg, mask)
    inside = int(mask.bits[r - 1:r - 1 + 40, c - 1:c - 1 + 40].sum())
    frac = inside / (40 * 40)
    print(f"  origin ({r:2d},{c:2d})  mass pixels {inside:4d} "
          f"({frac:5.1%})  -> {label}")

# build_dataset drops the ambiguous patches and, with augment on, adds a
# flipped and a rotated copy of every kept patch.
kept = build_dataset(image, mask, cfg, augment=True)
print(f"\nbuild_dataset kept {len(kept)} rows (augmented)")
for p in kept[:6]:
    print(f"  {p.source_id} origin ({p.origin_row},{p.origin_col}) "
          f"{p.augment:9s} {p.label}")
