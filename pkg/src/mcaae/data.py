"""Dataset ingestion, preprocessing and synthetic desk-scale generators.

File formats: IDX (big-endian, magic 0x00000803 for u8 images and
0x00000801 for u8 labels) and binary PGM (P5, maxval 255). Images are
float64 grayscale in [0, 1] everywhere in memory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, ValidationError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class ImageDataset:
    images: np.ndarray  # [n, h, w] float64 in [0, 1]
    labels: np.ndarray  # [n] int64
    class_names: list[str]
    name: str

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.validate()

    def validate(self):
        if self.images.ndim != 3:
            raise DimensionError(f"images must be [n, h, w], got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DimensionError(
                f"{len(self.images)} images vs {len(self.labels)} labels"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValidationError("pixel values must lie in [0, 1]")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= len(self.class_names)
        ):
            raise ValidationError("labels must index into class_names")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def subset(self, indices, name: str | None = None) -> "ImageDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return ImageDataset(
            self.images[indices],
            self.labels[indices],
            list(self.class_names),
            name if name is not None else self.name,
        )


# --------------------------------------------------------------------------
# IDX files


def _read_idx_header(data: bytes, path, expected_magic: int, n_dims: int):
    need = 4 * (1 + n_dims)
    if len(data) < need:
        raise FormatError(f"{path}: file too short for IDX header", offset=len(data))
    magic = struct.unpack(">I", data[:4])[0]
    if magic != expected_magic:
        raise FormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}",
            offset=0,
        )
    dims = struct.unpack(f">{n_dims}I", data[4:need])
    return dims, need


def load_idx(images_path, labels_path, name: str | None = None) -> ImageDataset:
    """Load an IDX image/label file pair; pixels are scaled to [0, 1]."""
    img_data = Path(images_path).read_bytes()
    (count, rows, cols), offset = _read_idx_header(img_data, images_path, IDX_IMAGE_MAGIC, 3)
    expected = count * rows * cols
    if len(img_data) - offset != expected:
        raise FormatError(
            f"{images_path}: expected {expected} pixel bytes, found {len(img_data) - offset}",
            offset=offset,
        )
    pixels = np.frombuffer(img_data, dtype=np.uint8, offset=offset)
    images = pixels.reshape(count, rows, cols).astype(np.float64) / 255.0

    lbl_data = Path(labels_path).read_bytes()
    (lbl_count,), lbl_offset = _read_idx_header(lbl_data, labels_path, IDX_LABEL_MAGIC, 1)
    if lbl_count != count:
        raise FormatError(
            f"{labels_path}: label count {lbl_count} != image count {count}", offset=4
        )
    if len(lbl_data) - lbl_offset != lbl_count:
        raise FormatError(
            f"{labels_path}: expected {lbl_count} label bytes, found {len(lbl_data) - lbl_offset}",
            offset=lbl_offset,
        )
    labels = np.frombuffer(lbl_data, dtype=np.uint8, offset=lbl_offset).astype(np.int64)
    n_classes = int(labels.max()) + 1 if len(labels) else 0
    return ImageDataset(
        images,
        labels,
        [str(c) for c in range(n_classes)],
        name if name is not None else Path(images_path).stem,
    )


def save_idx(ds: ImageDataset, images_path, labels_path) -> None:
    """Write a dataset as an IDX pair, quantizing pixels to u8."""
    n, h, w = ds.images.shape
    pixels = np.clip(np.rint(ds.images * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


# --------------------------------------------------------------------------
# PGM files


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255) from a [h, w] image in [0, 1]."""
    if image.ndim != 2:
        raise DimensionError("PGM writer expects a single [h, w] image")
    h, w = image.shape
    data = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file", offset=0)
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header", offset=pos)
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}", offset=pos)
    if len(data) - pos < w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes", offset=pos)
    pixels = np.frombuffer(data, dtype=np.uint8, offset=pos, count=w * h)
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def load_image_dir(root, name: str | None = None) -> ImageDataset:
    """Class-per-subdirectory layout of PGM files."""
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValidationError(f"{root}: no class subdirectories found")
    images, labels = [], []
    for label, class_dir in enumerate(class_dirs):
        for pgm in sorted(class_dir.glob("*.pgm")):
            images.append(read_pgm(pgm))
            labels.append(label)
    if not images:
        raise ValidationError(f"{root}: no .pgm files found")
    return ImageDataset(
        np.stack(images),
        np.asarray(labels),
        [p.name for p in class_dirs],
        name if name is not None else root.name,
    )


# --------------------------------------------------------------------------
# Preprocessing


def _resize_bilinear(image: np.ndarray, target: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resize of a square image."""
    side = image.shape[0]
    if side == target:
        return image.copy()
    scale = side / target
    src = (np.arange(target) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, side - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, side - 1)
    frac = src - lo
    rows = image[lo, :] * (1 - frac)[:, None] + image[hi, :] * frac[:, None]
    return rows[:, lo] * (1 - frac)[None, :] + rows[:, hi] * frac[None, :]


def preprocess(image: np.ndarray, target_size: int = 64) -> np.ndarray:
    """Centre crop to square, bilinear resize, grayscale by channel mean.

    Accepts [h, w] or [h, w, c] input in [0, 1]; a target-sized grayscale
    input passes through unchanged (the op is idempotent).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image.mean(axis=2)
    if image.ndim != 2 or image.size == 0:
        raise DimensionError(f"expected a non-empty [h, w(, c)] image, got {image.shape}")
    h, w = image.shape
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return _resize_bilinear(image[top : top + side, left : left + side], target_size)


def preprocess_dataset(ds: ImageDataset, target_size: int = 64) -> ImageDataset:
    images = np.stack([preprocess(img, target_size) for img in ds.images])
    return ImageDataset(images, ds.labels.copy(), list(ds.class_names), ds.name)


# --------------------------------------------------------------------------
# Sampling


def subsample_indices_per_class(
    labels: np.ndarray, n_per_class: int, rng: np.random.Generator
) -> np.ndarray:
    """Sorted indices of a uniform without-replacement draw of up to
    n samples per class; short classes keep everything."""
    chosen = []
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        if len(idx) > n_per_class:
            idx = rng.choice(idx, size=n_per_class, replace=False)
        chosen.append(idx)
    if not chosen:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(chosen))


def subsample_per_class(
    ds: ImageDataset, n_per_class: int, rng: np.random.Generator
) -> ImageDataset:
    """Uniform without-replacement draw of up to n samples per class."""
    return ds.subset(subsample_indices_per_class(ds.labels, n_per_class, rng))


@dataclass
class OodPairing:
    """Balanced in/out sample draw for OOD scoring, with provenance."""

    in_samples: ImageDataset
    out_samples: ImageDataset
    in_indices: np.ndarray = field(repr=False, default=None)
    out_indices: np.ndarray = field(repr=False, default=None)


def _stratified_indices(ds: ImageDataset, n_wanted: int, rng: np.random.Generator) -> np.ndarray:
    """Per-class uniform draw whose class counts differ by at most one,
    short classes permitting."""
    per_class = [np.flatnonzero(ds.labels == c) for c in range(len(ds.class_names))]
    per_class = [idx for idx in per_class if len(idx)]
    quotas = np.zeros(len(per_class), dtype=np.int64)
    base = n_wanted // len(per_class)
    extra = n_wanted - base * len(per_class)
    quotas[:] = base
    bonus = rng.permutation(len(per_class))[:extra]
    quotas[bonus] += 1
    # classes smaller than their quota hand the shortfall to the others
    for _ in range(len(per_class)):
        short = sum(max(0, q - len(idx)) for q, idx in zip(quotas, per_class))
        quotas = np.minimum(quotas, [len(idx) for idx in per_class])
        if short == 0:
            break
        room = [i for i, (q, idx) in enumerate(zip(quotas, per_class)) if q < len(idx)]
        for i in range(short):
            if not room:
                break
            quotas[room[i % len(room)]] += 1
    chosen = [
        rng.choice(idx, size=min(q, len(idx)), replace=False)
        for q, idx in zip(quotas, per_class)
    ]
    return np.sort(np.concatenate(chosen))


def make_ood_pairing(
    d_in_test: ImageDataset,
    d_out: ImageDataset,
    target_total: int,
    rng: np.random.Generator,
) -> OodPairing:
    """About target_total/2 samples from each side, classes drawn uniformly."""
    if len(d_in_test) == 0 or len(d_out) == 0:
        raise ValidationError("both datasets must be non-empty")
    half = max(1, target_total // 2)
    in_idx = _stratified_indices(d_in_test, min(half, len(d_in_test)), rng)
    out_idx = _stratified_indices(d_out, min(half, len(d_out)), rng)
    return OodPairing(
        d_in_test.subset(in_idx),
        d_out.subset(out_idx),
        in_indices=in_idx,
        out_indices=out_idx,
    )


# --------------------------------------------------------------------------
# Synthetic generators

SYNTH_KINDS = ("bars-vs-blobs", "shapes-4", "triangles", "checkers")

_BACKGROUND = 0.1
_EDGE = 4.0  # soft-edge width in pixels; smooth profiles keep the task
# learnable by a small dense decoder within a desk-scale epoch budget


def _grid(size: int):
    coords = np.arange(size, dtype=np.float64)
    return np.meshgrid(coords, coords, indexing="ij")


def _soft(inside_distance: np.ndarray) -> np.ndarray:
    """Map a signed inside-distance field to [0, 1] coverage."""
    return np.clip((inside_distance + _EDGE) / (2.0 * _EDGE), 0.0, 1.0)


def _compose(alpha: np.ndarray, intensity: float) -> np.ndarray:
    return np.clip(_BACKGROUND + (intensity - _BACKGROUND) * alpha, 0.0, 1.0)


def _render_bar(size, rng):
    """Full-length oriented bar; random angle, perpendicular offset, width."""
    yy, xx = _grid(size)
    c = (size - 1) / 2.0
    theta = rng.uniform(0.0, np.pi)
    offset = rng.uniform(-0.06, 0.06) * size
    half_width = rng.uniform(0.11, 0.13) * size
    d = (xx - c) * np.cos(theta) + (yy - c) * np.sin(theta)
    return _compose(_soft(half_width - np.abs(d - offset)), 1.0)


def _render_blob(size, rng):
    """Near-centred disc; random radius and small centre jitter."""
    yy, xx = _grid(size)
    c = (size - 1) / 2.0
    cy = c + rng.uniform(-0.04, 0.04) * size
    cx = c + rng.uniform(-0.04, 0.04) * size
    radius = rng.uniform(0.22, 0.28) * size
    dist = np.hypot(yy - cy, xx - cx)
    return _compose(_soft(radius - dist), 1.0)


def _render_disc(size, rng, jitter=0.08):
    yy, xx = _grid(size)
    c = (size - 1) / 2.0
    cy = c + rng.uniform(-jitter, jitter) * size
    cx = c + rng.uniform(-jitter, jitter) * size
    radius = rng.uniform(0.12, 0.28) * size
    intensity = rng.uniform(0.75, 1.0)
    dist = np.hypot(yy - cy, xx - cx)
    return _compose(_soft(radius - dist), intensity)


def _render_square(size, rng):
    yy, xx = _grid(size)
    c = (size - 1) / 2.0
    cy = c + rng.uniform(-0.08, 0.08) * size
    cx = c + rng.uniform(-0.08, 0.08) * size
    half = rng.uniform(0.12, 0.26) * size
    intensity = rng.uniform(0.75, 1.0)
    inside = half - np.maximum(np.abs(yy - cy), np.abs(xx - cx))
    return _compose(_soft(inside), intensity)


def _render_cross(size, rng):
    yy, xx = _grid(size)
    c = (size - 1) / 2.0
    cy = c + rng.uniform(-0.08, 0.08) * size
    cx = c + rng.uniform(-0.08, 0.08) * size
    half_width = rng.uniform(0.05, 0.08) * size
    half_length = rng.uniform(0.2, 0.32) * size
    intensity = rng.uniform(0.75, 1.0)
    dy, dx = yy - cy, xx - cx
    arm_v = np.minimum(half_width - np.abs(dx), half_length - np.abs(dy))
    arm_h = np.minimum(half_width - np.abs(dy), half_length - np.abs(dx))
    return _compose(_soft(np.maximum(arm_v, arm_h)), intensity)


def _render_ring(size, rng):
    yy, xx = _grid(size)
    c = (size - 1) / 2.0
    cy = c + rng.uniform(-0.08, 0.08) * size
    cx = c + rng.uniform(-0.08, 0.08) * size
    outer = rng.uniform(0.18, 0.3) * size
    inner = outer * rng.uniform(0.5, 0.7)
    intensity = rng.uniform(0.75, 1.0)
    dist = np.hypot(yy - cy, xx - cx)
    return _compose(_soft(np.minimum(outer - dist, dist - inner)), intensity)


def _render_triangle(size, rng):
    yy, xx = _grid(size)
    c = (size - 1) / 2.0
    cy = c + rng.uniform(-0.08, 0.08) * size
    cx = c + rng.uniform(-0.08, 0.08) * size
    radius = rng.uniform(0.18, 0.32) * size
    phase = rng.uniform(0.0, 2.0 * np.pi)
    intensity = rng.uniform(0.75, 1.0)
    angles = phase + np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
    vy = cy + radius * np.sin(angles)
    vx = cx + radius * np.cos(angles)
    inside = np.full((size, size), np.inf)
    for i in range(3):
        y0, x0 = vy[i], vx[i]
        y1, x1 = vy[(i + 1) % 3], vx[(i + 1) % 3]
        ey, ex = y1 - y0, x1 - x0
        norm = np.hypot(ey, ex)
        # inward normal; vertex order is clockwise in (row, col) coordinates
        d = ((yy - y0) * ex - (xx - x0) * ey) / norm
        inside = np.minimum(inside, d)
    return _compose(_soft(inside), intensity)


def _render_checker(size, rng):
    yy, xx = _grid(size)
    cell = int(rng.integers(5, 10))
    py = int(rng.integers(0, cell))
    px = int(rng.integers(0, cell))
    intensity = rng.uniform(0.75, 1.0)
    pattern = (((yy + py) // cell + (xx + px) // cell) % 2).astype(np.float64)
    return _compose(pattern, intensity)


_KIND_RENDERERS = {
    "bars-vs-blobs": [("bar", _render_bar), ("blob", _render_blob)],
    "shapes-4": [
        ("disc", _render_disc),
        ("square", _render_square),
        ("cross", _render_cross),
        ("ring", _render_ring),
    ],
    "triangles": [("triangle", _render_triangle)],
    "checkers": [("checker", _render_checker)],
}


def synth_generate(
    kind: str, n_per_class: int, image_size: int, rng: np.random.Generator
) -> ImageDataset:
    """Deterministic synthetic shape dataset on a 0.1 background.

    Classes are balanced; per-sample shape parameters (position, width,
    orientation, intensity) are drawn from documented uniform ranges so
    held-out kinds can serve as out-of-distribution sets.
    """
    if kind not in _KIND_RENDERERS:
        raise ValidationError(f"unknown synthetic kind {kind!r}; options: {SYNTH_KINDS}")
    renderers = _KIND_RENDERERS[kind]
    images, labels = [], []
    for label, (_, render) in enumerate(renderers):
        for _ in range(n_per_class):
            images.append(render(image_size, rng))
            labels.append(label)
    if not images:
        images = np.zeros((0, image_size, image_size))
    else:
        images = np.stack(images)
    return ImageDataset(
        images,
        np.asarray(labels, dtype=np.int64),
        [name for name, _ in renderers],
        kind,
    )


def write_manifest(path, ds: ImageDataset) -> None:
    h, w = ds.image_shape if len(ds) else (0, 0)
    lines = [
        f"name = {ds.name}",
        f"num_images = {len(ds)}",
        f"image_height = {h}",
        f"image_width = {w}",
        f"classes = {','.join(ds.class_names)}",
    ]
    for label, cname in enumerate(ds.class_names):
        lines.append(f"count.{cname} = {int(np.sum(ds.labels == label))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
