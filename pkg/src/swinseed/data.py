"""Synthetic multi-object images with image-level labels and pixel masks.

Masks are only ever read by evaluation code; training consumes images and
label vectors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import GenerationError

CLASS_NAMES = ("circle", "square", "triangle", "cross")
BASE_COLORS = np.array(
    [
        [0.85, 0.20, 0.20],
        [0.20, 0.75, 0.25],
        [0.20, 0.30, 0.85],
        [0.90, 0.80, 0.15],
    ]
)
MANIFEST_NAME = "manifest.txt"
MAX_ATTEMPTS = 1000


@dataclass
class SampleConfig:
    image_size: int = 128
    min_size: int = 16
    max_size: int = 48
    max_objects: int = 3
    noise: float = 0.15
    color_jitter: float = 0.1
    background_level: float = 0.5

    @property
    def num_classes(self):
        return len(CLASS_NAMES)


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (C,) uint8
    gt_mask: np.ndarray  # (H, W) uint8, background = C
    id: int
    objects: list = field(default_factory=list)


def shape_mask(cls, size):
    """Boolean ``size`` x ``size`` footprint of shape class ``cls``."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    c = size / 2.0
    if cls == 0:
        return (yy - c) ** 2 + (xx - c) ** 2 <= c * c
    if cls == 1:
        return np.ones((size, size), dtype=bool)
    if cls == 2:
        # apex at top centre, base along the bottom row
        half_width = (yy / size) * c
        return np.abs(xx - c) <= half_width
    if cls == 3:
        arm = max(size // 6, 1)
        return (np.abs(yy - c) <= arm) | (np.abs(xx - c) <= arm)
    raise ValueError(f"unknown shape class {cls}")


def gen_sample(seed, cfg=None):
    """Deterministic sample for ``seed``: 1 to ``max_objects`` distinct shapes."""
    cfg = cfg or SampleConfig()
    rng = np.random.default_rng(seed)
    size_hw = cfg.image_size
    n_cls = cfg.num_classes
    noise = rng.uniform(-cfg.noise, cfg.noise, size=(3, size_hw, size_hw))
    image = cfg.background_level + noise
    mask = np.full((size_hw, size_hw), n_cls, dtype=np.uint8)
    n_obj = int(rng.integers(1, min(cfg.max_objects, n_cls) + 1))
    classes = rng.choice(n_cls, size=n_obj, replace=False)
    boxes, objects = [], []
    attempts = 0
    for cls in classes:
        while True:
            attempts += 1
            if attempts > MAX_ATTEMPTS:
                raise GenerationError(f"seed {seed}: could not place {n_obj} objects without overlap")
            s = int(rng.integers(cfg.min_size, min(cfg.max_size, size_hw) + 1))
            top = int(rng.integers(0, size_hw - s + 1))
            left = int(rng.integers(0, size_hw - s + 1))
            box = (top, left, top + s, left + s)
            if not any(_overlap(box, other) for other in boxes):
                break
        boxes.append(box)
        color = np.clip(BASE_COLORS[cls] + rng.uniform(-cfg.color_jitter, cfg.color_jitter, 3), 0, 1)
        foot = shape_mask(int(cls), s)
        region = (slice(top, top + s), slice(left, left + s))
        mask[region][foot] = cls
        patch = image[:, region[0], region[1]]
        patch[:, foot] = color[:, None] + 0.25 * noise[:, region[0], region[1]][:, foot]
        objects.append({"class": int(cls), "box": box})
    labels = np.zeros(n_cls, dtype=np.uint8)
    labels[np.unique(mask[mask < n_cls])] = 1
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Sample(image, labels, mask, int(seed), objects)


def _overlap(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def split_of(index, n):
    """Train/val convention: the first 80% (at least one) are ``train``."""
    return "train" if index < max(1, int(n * 0.8)) else "val"


def gen_dataset(n, base_seed=0, cfg=None):
    """Samples with seeds ``base_seed .. base_seed + n - 1``."""
    if n < 1:
        raise ValueError(f"dataset size must be positive, got {n}")
    return [gen_sample(base_seed + i, cfg) for i in range(n)]


def stack(samples):
    """(images, labels, masks) arrays from a list of samples."""
    images = np.stack([s.image for s in samples])
    labels = np.stack([s.labels for s in samples])
    masks = np.stack([s.gt_mask for s in samples])
    return images, labels, masks


# -- Netpbm I/O ------------------------------------------------------------
def quantize(image):
    """Floats in [0, 1] -> uint8; (3, H, W) becomes (H, W, 3), (H, W) stays."""
    out = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    return out.transpose(1, 2, 0) if out.ndim == 3 else out


def write_ppm(path, rgb):
    """Binary P6 from an (H, W, 3) uint8 array."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def write_pgm(path, gray):
    """Binary P5 from an (H, W) uint8 array."""
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def _read_header(buf):
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated Netpbm header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_netpbm(path):
    """Read a binary P5/P6 file as uint8, (H, W) or (H, W, 3)."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _read_header(buf)
    w, h = int(w), int(h)
    if int(maxval) != 255:
        raise ValueError(f"{path}: only 8-bit Netpbm files are supported")
    channels = {b"P6": 3, b"P5": 1}.get(magic)
    if channels is None:
        raise ValueError(f"{path}: unsupported magic {magic!r}")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * channels, offset=offset)
    return data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)


# -- dataset export/import -------------------------------------------------
def export_dataset(samples, out_dir):
    """Write images (P6), masks (P5) and ``manifest.txt``; returns the manifest lines.

    Manifest lines read ``<id> <label-bits> <image-file> <mask-file> <split>``.
    """
    out = Path(out_dir)
    lines = []
    if not samples:
        return lines
    try:
        out.mkdir(parents=True, exist_ok=True)
        n = len(samples)
        for i, s in enumerate(samples):
            image_file, mask_file = f"img_{s.id:08d}.ppm", f"mask_{s.id:08d}.pgm"
            write_ppm(out / image_file, quantize(s.image))
            write_pgm(out / mask_file, s.gt_mask)
            bits = "".join(str(int(b)) for b in s.labels)
            lines.append(f"{s.id} {bits} {image_file} {mask_file} {split_of(i, n)}")
        tmp = out / (MANIFEST_NAME + ".tmp")
        tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        os.replace(tmp, out / MANIFEST_NAME)
    except OSError as exc:
        raise OSError(f"cannot export dataset to {out}: {exc.strerror or exc}") from exc
    return lines


def read_manifest(data_dir):
    """Parsed manifest rows: dicts with id, labels, image, mask, split."""
    path = Path(data_dir) / MANIFEST_NAME
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        ident, bits, image_file, mask_file, split = line.split()
        rows.append(
            {
                "id": int(ident),
                "labels": np.array([int(b) for b in bits], dtype=np.uint8),
                "image": image_file,
                "mask": mask_file,
                "split": split,
            }
        )
    return rows


def load_dataset(data_dir, split="all"):
    """Load exported samples; ``split`` is ``train``, ``val`` or ``all``."""
    data_dir = Path(data_dir)
    samples = []
    for row in read_manifest(data_dir):
        if split != "all" and row["split"] != split:
            continue
        rgb = read_netpbm(data_dir / row["image"])
        image = (rgb.transpose(2, 0, 1).astype(np.float32)) / 255.0
        mask = read_netpbm(data_dir / row["mask"]).copy()
        samples.append(Sample(image, row["labels"], mask, row["id"]))
    return samples
