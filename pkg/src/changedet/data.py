"""Synthetic change pairs and the tiled loader for real dataset layouts.

Disk layout: ``A/``, ``B/``, ``label/`` directories with shared PNG
filenames and split manifests (one filename per line) under ``list/``.
Images are 8-bit RGB, labels 8-bit single-channel 0/255. The synthetic
generator quantizes to 8 bits before returning, so a written pair reloads
bit-identically.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from PIL import Image

from .autodiff import resize_array
from .config import ConfigError


class DatasetError(Exception):
    """Raised for malformed dataset layouts; carries the offending files."""

    def __init__(self, message: str, files: list[str] | None = None):
        super().__init__(message)
        self.files = files or []


@dataclass
class ChangePair:
    """Co-registered image pair with a binary change label."""

    image_t1: np.ndarray  # (3, H, W) float32 in [0, 1]
    image_t2: np.ndarray
    label: np.ndarray     # (H, W) uint8 in {0, 1}
    id: str

    def __post_init__(self):
        if self.image_t1.shape != self.image_t2.shape:
            raise DatasetError(f"pair {self.id}: image shapes disagree")
        if self.label.shape != self.image_t1.shape[1:]:
            raise DatasetError(f"pair {self.id}: label size disagrees with images")
        if not np.isin(self.label, (0, 1)).all():
            raise DatasetError(f"pair {self.id}: label must be strictly 0/1 valued")


@dataclass(frozen=True)
class PairHandle:
    id: str
    loader: Callable[[], ChangePair]

    def load(self) -> ChangePair:
        return self.loader()


@dataclass
class DatasetSplit:
    train: list[PairHandle] = field(default_factory=list)
    val: list[PairHandle] = field(default_factory=list)
    test: list[PairHandle] = field(default_factory=list)

    def __post_init__(self):
        ids = [h.id for split in (self.train, self.val, self.test) for h in split]
        if len(ids) != len(set(ids)):
            raise DatasetError("dataset splits are not disjoint")

    def get(self, name: str) -> list[PairHandle]:
        if name not in ("train", "val", "test"):
            raise DatasetError(f"unknown split {name!r}")
        return getattr(self, name)


def handles(pairs: list[ChangePair]) -> list[PairHandle]:
    return [PairHandle(p.id, (lambda q=p: q)) for p in pairs]


# -- 8-bit quantization helpers ---------------------------------------------


def u8_to_unit(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def unit_to_u8(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


# -- synthetic generator -----------------------------------------------------

DIFFICULTIES = ("none", "easy", "hard")


def _sample_shape(rng: np.random.Generator, size: int):
    """Mask + color for one object; half-extents span a 4x range."""
    r = rng.uniform(size / 16, size / 4)
    cy, cx = rng.uniform(r, size - r, size=2)
    color = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
    yy, xx = np.ogrid[:size, :size]
    if rng.random() < 0.5:
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    else:
        aspect = rng.uniform(0.6, 1.6)
        mask = (np.abs(yy - cy) <= r * aspect) & (np.abs(xx - cx) <= r / aspect)
    return mask, color


def _paint(canvas: np.ndarray, mask: np.ndarray, color: np.ndarray) -> None:
    canvas[:, mask] = color[:, None]


def generate_synthetic_pair(seed: int, size: int = 64, difficulty: str = "easy",
                            n_changes: int | None = None,
                            fraction_band: tuple[float, float] = (0.05, 0.30),
                            stride_multiple: int = 8,
                            pair_id: str | None = None) -> ChangePair:
    """Deterministic textured pair with structural changes and optional
    nuisance perturbations that never enter the label."""
    if difficulty not in DIFFICULTIES:
        raise ConfigError(f"difficulty must be one of {DIFFICULTIES}, got {difficulty!r}")
    if size % stride_multiple:
        raise ConfigError(f"size {size} is not divisible by {stride_multiple}")
    rng = np.random.default_rng(seed)
    pair_id = pair_id if pair_id is not None else f"syn{seed:08d}"

    grid = max(2, size // 8)
    background = resize_array(
        rng.uniform(0.25, 0.75, size=(3, grid, grid)).astype(np.float32), (size, size))

    persistent = [_sample_shape(rng, size) for _ in range(int(rng.integers(2, 5)))]

    t1 = background.copy()
    for mask, color in persistent:
        _paint(t1, mask, color)

    if difficulty == "none":
        img = u8_to_unit(unit_to_u8(t1))
        return ChangePair(img, img.copy(), np.zeros((size, size), dtype=np.uint8), pair_id)

    # nuisance perturbations affect only the second image
    nuisance = difficulty == "hard"
    t2 = background.copy()
    for mask, color in persistent:
        shifted = color
        if nuisance and rng.random() < 0.5:
            shifted = np.clip(color + rng.uniform(-0.12, 0.12, 3).astype(np.float32), 0, 1)
        _paint(t2, mask, shifted)

    count = int(rng.integers(1, 4)) if n_changes is None else int(n_changes)
    label = np.zeros((size, size), dtype=bool)
    if count > 0:
        lo, hi = fraction_band
        for _ in range(64):
            changes = [(_sample_shape(rng, size), rng.random() < 0.5) for _ in range(count)]
            union = np.zeros((size, size), dtype=bool)
            for (mask, _), _ in changes:
                union |= mask
            frac = union.mean()
            if lo <= frac <= hi:
                break
            count = max(1, count + (1 if frac < lo else -1))
        else:
            raise DatasetError(f"could not hit change fraction band {fraction_band} at size {size}")
        label = union
        for (mask, color), added in changes:
            _paint(t2 if added else t1, mask, color)

    if nuisance:
        t2 = t2 + np.float32(rng.uniform(-0.08, 0.08))
        t2 = t2 + rng.normal(0.0, 0.01, size=t2.shape).astype(np.float32)

    t1 = u8_to_unit(unit_to_u8(t1))
    t2 = u8_to_unit(unit_to_u8(t2))
    return ChangePair(t1, t2, label.astype(np.uint8), pair_id)


def generate_dataset(seed: int, count: int, size: int = 64, difficulty: str = "easy",
                     **kwargs) -> list[ChangePair]:
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [generate_synthetic_pair(int(s), size=size, difficulty=difficulty,
                                    pair_id=f"pair{i:04d}", **kwargs)
            for i, s in enumerate(seeds)]


def split_pairs(pairs: list[ChangePair], n_train: int, n_val: int,
                n_test: int | None = None) -> DatasetSplit:
    if n_test is None:
        n_test = len(pairs) - n_train - n_val
    if n_train + n_val + n_test > len(pairs):
        raise DatasetError("split sizes exceed the number of pairs")
    train = handles(pairs[:n_train])
    val = handles(pairs[n_train:n_train + n_val])
    test = handles(pairs[n_train + n_val:n_train + n_val + n_test])
    return DatasetSplit(train, val, test)


# -- PNG round-trips ----------------------------------------------------------


def save_pair(root: str, pair: ChangePair) -> None:
    for sub in ("A", "B", "label"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    name = pair.id + ".png"
    _write_rgb(os.path.join(root, "A", name), pair.image_t1)
    _write_rgb(os.path.join(root, "B", name), pair.image_t2)
    Image.fromarray(pair.label * np.uint8(255), mode="L").save(
        os.path.join(root, "label", name))


def load_pair(root: str, pair_id: str) -> ChangePair:
    name = pair_id + ".png"
    t1 = _read_rgb(os.path.join(root, "A", name))
    t2 = _read_rgb(os.path.join(root, "B", name))
    lab = np.asarray(Image.open(os.path.join(root, "label", name)).convert("L"))
    return ChangePair(t1, t2, (lab > 127).astype(np.uint8), pair_id)


def _write_rgb(path: str, img: np.ndarray) -> None:
    Image.fromarray(unit_to_u8(img).transpose(1, 2, 0), mode="RGB").save(path)


def _read_rgb(path: str) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"))
    return u8_to_unit(arr.transpose(2, 0, 1))


def write_dataset(root: str, pairs: list[ChangePair],
                  splits: dict[str, list[str]] | None = None) -> None:
    """Persist pairs plus split manifests (one filename per line)."""
    for pair in pairs:
        save_pair(root, pair)
    if splits is None:
        splits = {"train": [p.id for p in pairs]}
    os.makedirs(os.path.join(root, "list"), exist_ok=True)
    for name, ids in splits.items():
        with open(os.path.join(root, "list", name + ".txt"), "w", encoding="utf-8") as fh:
            fh.writelines(pid + ".png\n" for pid in ids)


# -- tiled loader --------------------------------------------------------------


@dataclass(frozen=True)
class PatchRef:
    image: str  # source filename
    row: int
    col: int
    patch: int

    @property
    def id(self) -> str:
        stem = os.path.splitext(self.image)[0]
        return f"{stem}_r{self.row}_c{self.col}"


class TiledDataset:
    """Non-overlapping patch grid over A/B/label images; partial edge
    patches are dropped."""

    def __init__(self, root: str, patch: int = 256):
        self.root = root
        self.patch = patch
        self.rejected: list[str] = []

        a_dir = os.path.join(root, "A")
        if not os.path.isdir(a_dir):
            raise DatasetError(f"{root}: missing A/ directory")
        names = sorted(n for n in os.listdir(a_dir) if n.lower().endswith(".png"))
        if not names:
            raise DatasetError(f"{root}: A/ holds no PNG images")

        missing = []
        for name in names:
            for sub in ("B", "label"):
                path = os.path.join(root, sub, name)
                if not os.path.isfile(path):
                    missing.append(path)
        if missing:
            raise DatasetError(
                "missing counterpart files: " + ", ".join(missing), files=missing)

        self.patches: dict[str, list[PatchRef]] = {}
        for name in names:
            sizes = []
            for sub in ("A", "B", "label"):
                with Image.open(os.path.join(root, sub, name)) as im:
                    sizes.append(im.size)
            if len(set(sizes)) != 1:
                self.rejected.append(name)
                continue
            w, h = sizes[0]
            refs = [PatchRef(name, r, c, patch)
                    for r in range(h // patch) for c in range(w // patch)]
            self.patches[name] = refs

    def n_patches(self, name: str) -> int:
        return len(self.patches[name])

    def load(self, ref: PatchRef) -> ChangePair:
        y0, x0 = ref.row * ref.patch, ref.col * ref.patch
        box = (x0, y0, x0 + ref.patch, y0 + ref.patch)
        arrs = []
        for sub in ("A", "B"):
            with Image.open(os.path.join(self.root, sub, ref.image)) as im:
                arrs.append(u8_to_unit(np.asarray(im.convert("RGB").crop(box)).transpose(2, 0, 1)))
        with Image.open(os.path.join(self.root, "label", ref.image)) as im:
            lab = np.asarray(im.convert("L").crop(box))
        return ChangePair(arrs[0], arrs[1], (lab > 127).astype(np.uint8), ref.id)

    def split(self) -> DatasetSplit:
        """Split assignment from list/ manifests."""
        list_dir = os.path.join(self.root, "list")
        if not os.path.isdir(list_dir):
            raise DatasetError(f"{self.root}: missing list/ manifest directory")
        out = {}
        for name in ("train", "val", "test"):
            path = os.path.join(list_dir, name + ".txt")
            refs: list[PairHandle] = []
            if os.path.isfile(path):
                with open(path, "r", encoding="utf-8") as fh:
                    for line in fh:
                        image = line.strip()
                        if not image:
                            continue
                        if image not in self.patches:
                            raise DatasetError(f"manifest {path} names unknown image {image!r}")
                        for ref in self.patches[image]:
                            refs.append(PairHandle(ref.id, (lambda r=ref: self.load(r))))
            out[name] = refs
        return DatasetSplit(out["train"], out["val"], out["test"])


def tile_dataset(root: str, patch: int = 256) -> DatasetSplit:
    """Scan a dataset root and return manifest-driven splits of patches."""
    return TiledDataset(root, patch=patch).split()
