"""Patch extraction, labeling, geometric augmentation, and normalization.

Images are 14-bit grayscale (intensities 0..16383) held as 2-D uint16
arrays. Patches are cut on a strided grid with 1-based origins; a patch
at origin r is kept only while r + patch_height < rows (strict), which
deliberately discards grid positions touching the image boundary.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, DomainError, ShapeError

MAX_INTENSITY = 16383  # 14-bit sensor range

LABEL_MASS = "mass"
LABEL_NON_MASS = "non-mass"
LABEL_DISCARD = "discard"

AUG_ORIGINAL = "original"
AUG_FLIPPED = "flipped"
AUG_ROTATED90 = "rotated90"


@dataclass(frozen=True)
class GrayImage:
    """A single-channel intensity image plus its source identifier."""

    pixels: np.ndarray
    id: str

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise ShapeError(f"image {self.id!r}: pixels must be a nonempty 2-D grid")
        if px.min() < 0 or px.max() > MAX_INTENSITY:
            raise DomainError(
                f"image {self.id!r}: intensities must lie in [0, {MAX_INTENSITY}]"
            )
        object.__setattr__(self, "pixels", px.astype(np.uint16, copy=False))

    @property
    def rows(self):
        return self.pixels.shape[0]

    @property
    def cols(self):
        return self.pixels.shape[1]


@dataclass(frozen=True)
class MassMask:
    """Binary ground-truth grid marking mass pixels of a paired GrayImage."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.size == 0:
            raise ShapeError("mask bits must be a nonempty 2-D grid")
        object.__setattr__(self, "bits", b.astype(bool, copy=False))

    @property
    def rows(self):
        return self.bits.shape[0]

    @property
    def cols(self):
        return self.bits.shape[1]

    def check_matches(self, image: GrayImage):
        if self.bits.shape != image.pixels.shape:
            raise ShapeError(
                f"mask shape {self.bits.shape} does not match image "
                f"{image.id!r} shape {image.pixels.shape}"
            )


@dataclass(frozen=True)
class PatchGridConfig:
    """Grid geometry and the mask-overlap fraction a mass patch must reach."""

    patch_height: int = 454
    patch_width: int = 454
    stride: int = 300
    positive_overlap_min: float = 0.10

    def __post_init__(self):
        if min(self.patch_height, self.patch_width, self.stride) < 1:
            raise DomainError("patch_height, patch_width and stride must all be >= 1")
        if not 0.0 < self.positive_overlap_min <= 1.0:
            raise DomainError("positive_overlap_min must lie in (0, 1]")


@dataclass(frozen=True)
class LabeledPatch:
    """A patch with class label, augmentation tag, and source provenance.

    origin_row/origin_col are 1-based offsets into the source image; all
    augmented variants keep the origin of the patch they were derived from.
    """

    pixels: np.ndarray = field(repr=False)
    label: str
    augment: str
    source_id: str
    origin_row: int
    origin_col: int

    def key(self):
        """Source-patch identity shared by all augmented variants."""
        return (self.source_id, self.origin_row, self.origin_col)


def grid_origins(extent: int, patch_extent: int, stride: int) -> list[int]:
    """1-based origins 1, 1+stride, ... kept while origin + patch_extent < extent."""
    origins = []
    pos = 1
    while pos + patch_extent < extent:
        origins.append(pos)
        pos += stride
    return origins


def extract_patches(image: GrayImage, cfg: PatchGridConfig):
    """Cut the strided patch grid out of an image.

    Returns (origin_row, origin_col, pixel grid) triples in row-major scan
    order. An image too small to hold any patch yields an empty list.
    """
    px = image.pixels
    rows_1b = grid_origins(image.rows, cfg.patch_height, cfg.stride)
    cols_1b = grid_origins(image.cols, cfg.patch_width, cfg.stride)
    out = []
    for r in rows_1b:
        for c in cols_1b:
            grid = px[r - 1 : r - 1 + cfg.patch_height, c - 1 : c - 1 + cfg.patch_width]
            out.append((r, c, grid.copy()))
    return out


def label_patch(patch_origin, cfg: PatchGridConfig, mask: MassMask) -> str:
    """Label the patch rectangle at a 1-based origin against the mass mask.

    mass      when mask pixels inside the rectangle reach
              positive_overlap_min * patch area,
    non-mass  when the rectangle contains no mask pixel,
    discard   otherwise (boundary-straddling patches).
    """
    r, c = patch_origin
    h, w = cfg.patch_height, cfg.patch_width
    if r < 1 or c < 1 or r - 1 + h > mask.rows or c - 1 + w > mask.cols:
        raise BoundsError(
            f"patch rectangle at ({r}, {c}) size {h}x{w} exceeds "
            f"mask bounds {mask.rows}x{mask.cols}"
        )
    inside = int(mask.bits[r - 1 : r - 1 + h, c - 1 : c - 1 + w].sum())
    if inside == 0:
        return LABEL_NON_MASS
    if inside >= cfg.positive_overlap_min * (h * w):
        return LABEL_MASS
    return LABEL_DISCARD


def flip_x(patch: np.ndarray) -> np.ndarray:
    """Flip about the x axis (reverse row order)."""
    p = np.asarray(patch)
    if p.ndim != 2 or p.size == 0:
        raise ShapeError("flip_x needs a nonempty 2-D grid")
    return p[::-1].copy()


def rotate90(patch: np.ndarray) -> np.ndarray:
    """Quarter turn counterclockwise about the grid center; squares only."""
    p = np.asarray(patch)
    if p.ndim != 2 or p.size == 0:
        raise ShapeError("rotate90 needs a nonempty 2-D grid")
    if p.shape[0] != p.shape[1]:
        raise ShapeError(f"rotate90 needs a square grid, got {p.shape}")
    return np.rot90(p).copy()


def normalize_patch(patch: np.ndarray) -> np.ndarray:
    """Shift/scale to zero mean, unit population std.

    A patch whose std falls below 1e-12 (flat background) maps to the
    all-zero grid rather than raising, so batch pipelines stay total.
    """
    p = np.asarray(patch, dtype=np.float64)
    if p.size == 0:
        raise ShapeError("normalize_patch needs a nonempty grid")
    std = p.std()
    if std < 1e-12:
        return np.zeros_like(p)
    return (p - p.mean()) / std


def augment_patch(patch: LabeledPatch):
    """The two geometric variants (x-flip, 90-degree rotation) of a patch."""
    return [
        LabeledPatch(
            flip_x(patch.pixels),
            patch.label,
            AUG_FLIPPED,
            patch.source_id,
            patch.origin_row,
            patch.origin_col,
        ),
        LabeledPatch(
            rotate90(patch.pixels),
            patch.label,
            AUG_ROTATED90,
            patch.source_id,
            patch.origin_row,
            patch.origin_col,
        ),
    ]


def build_dataset(
    image: GrayImage,
    mask: MassMask,
    cfg: PatchGridConfig,
    augment: bool = False,
    skip_blank: bool = False,
):
    """Extract, label, and optionally augment every usable patch of one image.

    Ambiguous (discard-labeled) patches are dropped; with skip_blank, flat
    patches (std < 1e-12) are dropped too. Augmentation appends a flipped
    and a rotated variant directly after each original, tripling the count.
    """
    mask.check_matches(image)
    out = []
    for r, c, grid in extract_patches(image, cfg):
        label = label_patch((r, c), cfg, mask)
        if label == LABEL_DISCARD:
            continue
        if skip_blank and grid.astype(np.float64).std() < 1e-12:
            continue
        patch = LabeledPatch(grid, label, AUG_ORIGINAL, image.id, r, c)
        out.append(patch)
        if augment:
            out.extend(augment_patch(patch))
    return out
