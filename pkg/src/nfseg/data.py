"""Segmentation samples: a seeded synthetic scene generator, a Potsdam-style
tile loader, crop/flip augmentation, and point sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractViolation, DecodeError, LoadError
from .fields import PointSet, cell_centers

NUM_CLASSES = 6
CLASS_NAMES = ("impervious", "building", "low_vegetation", "tree", "car", "clutter")

# ISPRS Potsdam label colors, indexed by class
POTSDAM_COLORS = np.array([
    (255, 255, 255),
    (0, 0, 255),
    (0, 255, 255),
    (0, 255, 0),
    (255, 255, 0),
    (255, 0, 0),
], dtype=np.uint8)


@dataclass
class SegSample:
    """RGB image ``[3, H, W]`` in ``[0, 1]`` with an aligned class mask ``[H, W]``."""

    image: np.ndarray
    mask: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ContractViolation(f"image must be [3,H,W], got {self.image.shape}")
        if self.mask.shape != self.image.shape[1:]:
            raise ContractViolation(f"mask {self.mask.shape} not aligned with image "
                                    f"{self.image.shape}")

    @property
    def size(self):
        return self.mask.shape

    def validate(self):
        if not np.isfinite(self.image).all() or self.image.min() < 0 or self.image.max() > 1:
            raise ContractViolation(f"{self.name or 'sample'}: image values outside [0, 1]")
        if self.mask.size and (self.mask.min() < 0 or self.mask.max() >= NUM_CLASSES):
            raise ContractViolation(f"{self.name or 'sample'}: invalid class in mask")
        return self


@dataclass(frozen=True)
class TileRef:
    """A lazily decoded image/label tile pair on disk."""

    name: str
    image_path: Path
    label_path: Path

    def load(self):
        image = _read_png(self.image_path)
        labels = _read_png(self.label_path)
        if image.shape[:2] != labels.shape[:2]:
            raise LoadError(f"tile {self.name}: image {image.shape[:2]} and label "
                            f"{labels.shape[:2]} sizes differ")
        mask = decode_label_colors(labels)
        img = np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32) / 255.0
        return SegSample(img, mask, self.name)


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def __getitem__(self, name):
        if name not in ("train", "val", "test"):
            raise KeyError(name)
        return getattr(self, name)


def resolve(item):
    """Materialize a split entry (SegSample or TileRef) as a SegSample."""
    return item.load() if isinstance(item, TileRef) else item


# -- synthetic scenes ----------------------------------------------------------

# building and car share these colors: a car is only recognizable from its
# size and from sitting on a road stripe
SHARED_PALETTE = np.array([
    (0.72, 0.30, 0.25),
    (0.25, 0.35, 0.75),
    (0.85, 0.80, 0.62),
    (0.45, 0.28, 0.50),
])
STRIPE_COLOR = (0.30, 0.36, 0.40)
TREE_COLOR = (0.20, 0.55, 0.22)
NOISE_SIGMA = 0.05


def _jitter(rng, color, amount=0.04):
    return np.clip(np.asarray(color) + rng.uniform(-amount, amount, 3), 0, 1)


def _paint(image, mask, region, color, cls):
    image[:, region] = np.asarray(color)[:, None]
    mask[region] = cls


def generate_synthetic(seed, H=64, W=64):
    """Deterministic synthetic scene for ``seed``.

    Object sizes are fixed in pixels and object counts scale with image area,
    so larger images hold more geometry, like larger crops of an aerial tile.
    Classes: 0 textured background, 1 rectangles, 2 stripes, 3 ellipses,
    4 small squares on stripes (colored like rectangles), 5 clutter blobs.
    """
    if H < 32 or W < 32:
        raise ContractViolation("synthetic images need H, W >= 32")
    rng = np.random.default_rng(seed)
    area = H * W / 4096.0
    yy, xx = np.mgrid[0:H, 0:W] + 0.5

    base = rng.uniform(0.50, 0.62) + rng.uniform(-0.03, 0.03, 3)
    texture = np.zeros((H, W))
    for _ in range(3):
        fx, fy = rng.uniform(0.05, 0.25, 2)
        texture += 0.03 * np.sin(fx * xx + fy * yy + rng.uniform(0, 2 * np.pi))
    image = base[:, None, None] + texture[None]
    mask = np.zeros((H, W), dtype=np.uint8)

    for _ in range(rng.poisson(1.5 * area)):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        a, b = rng.uniform(4, 9, 2)
        t = rng.uniform(0, np.pi)
        dx, dy = xx - cx, yy - cy
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        _paint(image, mask, (u / a) ** 2 + (v / b) ** 2 <= 1, _jitter(rng, TREE_COLOR), 3)

    for _ in range(rng.poisson(1.5 * area)):
        h, w = rng.integers(8, 19, 2)
        y0, x0 = rng.integers(-4, H - 4), rng.integers(-4, W - 4)
        region = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        _paint(image, mask, region, _jitter(rng, SHARED_PALETTE[rng.integers(4)]), 1)

    stripes = []
    for _ in range(max(1, rng.poisson(W / 64.0))):
        horizontal = rng.random() < 0.5
        span = H if horizontal else W
        width = int(rng.integers(5, 9))
        start = int(rng.integers(0, span - width + 1))
        coord = yy if horizontal else xx
        _paint(image, mask, (coord >= start) & (coord < start + width),
               _jitter(rng, STRIPE_COLOR, 0.03), 2)
        stripes.append((horizontal, start, width))

    for horizontal, start, width in stripes:
        length = W if horizontal else H
        for _ in range(1 + rng.poisson(length / 64.0)):
            side = int(rng.integers(3, min(5, width) + 1))
            across = start + int(rng.integers(0, width - side + 1))
            along = int(rng.integers(0, length - side + 1))
            y0, x0 = (across, along) if horizontal else (along, across)
            region = (yy >= y0) & (yy < y0 + side) & (xx >= x0) & (xx < x0 + side)
            _paint(image, mask, region, _jitter(rng, SHARED_PALETTE[rng.integers(4)]), 4)

    for _ in range(rng.poisson(1.0 * area)):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        region = np.zeros((H, W), dtype=bool)
        for _ in range(int(rng.integers(2, 4))):
            oy, ox = rng.uniform(-2.5, 2.5, 2)
            r = rng.uniform(1.5, 3.0)
            region |= (yy - cy - oy) ** 2 + (xx - cx - ox) ** 2 <= r * r
        _paint(image, mask, region, rng.uniform(0.05, 0.95, 3), 5)

    image += rng.normal(0.0, NOISE_SIGMA, image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return SegSample(image, mask, f"synthetic-{seed}")


MAX_SPLIT_ITEMS = 100_000


def synthetic_split(seed, size, n_train=200, n_val=40, n_test=40):
    """Train/val/test lists of synthetic scenes.

    Sample ``i`` (counted across the three splits) uses generator seed
    ``seed * MAX_SPLIT_ITEMS + i``, so splits never share a scene.
    """
    total = n_train + n_val + n_test
    if total > MAX_SPLIT_ITEMS:
        raise ContractViolation(f"at most {MAX_SPLIT_ITEMS} synthetic samples per dataset")
    H, W = (size, size) if np.isscalar(size) else size
    samples = [generate_synthetic(seed * MAX_SPLIT_ITEMS + i, H, W) for i in range(total)]
    return DatasetSplit(samples[:n_train], samples[n_train:n_train + n_val],
                        samples[n_train + n_val:])


# -- label colors and tiles ----------------------------------------------------

def _color_codes(rgb):
    rgb = rgb.astype(np.uint32)
    return (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]


_PALETTE_CODES = _color_codes(POTSDAM_COLORS)
_CODE_ORDER = np.argsort(_PALETTE_CODES)
_SORTED_CODES = _PALETTE_CODES[_CODE_ORDER]


def decode_label_colors(rgb):
    """Map an ``[H, W, 3]`` uint8 label image to class indices via the Potsdam colors."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise DecodeError(f"label image must be [H, W, 3] RGB, got shape {rgb.shape}")
    codes = _color_codes(rgb)
    pos = np.clip(np.searchsorted(_SORTED_CODES, codes), 0, len(_SORTED_CODES) - 1)
    bad = _SORTED_CODES[pos] != codes
    if bad.any():
        i, j = (int(v) for v in np.argwhere(bad)[0])
        color = tuple(int(c) for c in rgb[i, j])
        raise DecodeError(f"unknown label color {color} at pixel (row={i}, col={j})",
                          location=(i, j), color=color)
    return _CODE_ORDER[pos].astype(np.uint8)


def encode_label_colors(mask):
    """Class mask ``[H, W]`` to an ``[H, W, 3]`` uint8 Potsdam color image."""
    mask = np.asarray(mask)
    if mask.size and (mask.min() < 0 or mask.max() >= NUM_CLASSES):
        raise ContractViolation("mask contains invalid class indices")
    return POTSDAM_COLORS[mask]


def _read_png(path):
    from PIL import Image

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except FileNotFoundError as exc:
        raise LoadError(f"missing file {path}") from exc


def write_png(path, rgb):
    from PIL import Image

    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)


def image_to_png_array(image):
    """``[3, H, W]`` float image in ``[0, 1]`` to ``[H, W, 3]`` uint8."""
    return np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)


def read_image(path):
    """Read an RGB PNG as a ``[3, H, W]`` float32 image in ``[0, 1]``."""
    return np.ascontiguousarray(_read_png(path).transpose(2, 0, 1), dtype=np.float32) / 255.0


def load_tile_dataset(directory, train_tiles=None, val_tiles=None, test_tiles=None):
    """Index ``<dir>/images/<tile>.png`` + ``<dir>/labels/<tile>.png`` pairs.

    Tiles are assigned to splits by the given name lists; without any lists
    every tile goes to ``train``. Tiles are decoded lazily via ``TileRef.load``.
    """
    root = Path(directory)
    image_dir, label_dir = root / "images", root / "labels"
    if not image_dir.is_dir() or not label_dir.is_dir():
        raise LoadError(f"{root} needs 'images' and 'labels' subdirectories")
    images = {p.stem: p for p in image_dir.glob("*.png")}
    labels = {p.stem: p for p in label_dir.glob("*.png")}
    for name in sorted(set(images) ^ set(labels)):
        kind = "label" if name in images else "image"
        raise LoadError(f"tile {name!r} has no matching {kind} file")

    def refs(names):
        out = []
        for name in names:
            if name not in images:
                raise LoadError(f"tile {name!r} not found in {root}")
            out.append(TileRef(name, images[name], labels[name]))
        return out

    if train_tiles is None and val_tiles is None and test_tiles is None:
        return DatasetSplit(train=refs(sorted(images)))
    split = DatasetSplit(refs(train_tiles or []), refs(val_tiles or []), refs(test_tiles or []))
    names = [t.name for part in (split.train, split.val, split.test) for t in part]
    if len(names) != len(set(names)):
        raise ContractViolation("a tile is assigned to more than one split")
    return split


# -- augmentation and sampling -------------------------------------------------

def random_crop(sample, size, rng):
    """Aligned ``size x size`` crop of image and mask at a uniform random offset."""
    H, W = sample.mask.shape
    if size < 1 or size > min(H, W):
        raise ContractViolation(f"crop size {size} does not fit a {H}x{W} sample")
    oy = int(rng.integers(0, H - size + 1))
    ox = int(rng.integers(0, W - size + 1))
    return SegSample(sample.image[:, oy:oy + size, ox:ox + size],
                     sample.mask[oy:oy + size, ox:ox + size], sample.name)


def flip_augment(sample, rng):
    """Flip horizontally and vertically, each independently with probability 0.5."""
    image, mask = sample.image, sample.mask
    if rng.random() < 0.5:
        image, mask = image[:, :, ::-1], mask[:, ::-1]
    if rng.random() < 0.5:
        image, mask = image[:, ::-1, :], mask[::-1, :]
    return SegSample(np.ascontiguousarray(image), np.ascontiguousarray(mask), sample.name)


def sample_points_train(mask, S, rng, replace=True):
    """``S`` random pixel centers with the class found at each."""
    if S < 1:
        raise ContractViolation("need at least one point")
    H, W = mask.shape
    if not replace and S > H * W:
        raise ContractViolation(f"cannot draw {S} distinct pixels from {H}x{W}")
    idx = rng.choice(H * W, size=S, replace=replace) if not replace else rng.integers(0, H * W, S)
    i, j = np.divmod(idx, W)
    coords = np.stack([(j + 0.5) / W, (i + 0.5) / H], axis=-1)
    return PointSet(coords, np.asarray(mask)[i, j].astype(np.int64))


def dense_grid(H, W):
    """One point per pixel center, row-major (index ``i * W + j`` is pixel ``(i, j)``)."""
    if H < 1 or W < 1:
        raise ContractViolation("grid needs H, W >= 1")
    return PointSet(cell_centers(H, W))


def class_histogram(samples):
    counts = np.zeros(NUM_CLASSES, dtype=np.int64)
    for s in samples:
        counts += np.bincount(resolve(s).mask.reshape(-1), minlength=NUM_CLASSES)
    return counts
