"""Synthetic paired tasks standing in for image restoration benchmarks.

Each task draws a clean ``x0`` from a known distribution and derives ``x1``
through an explicit degradation of ``x0``, so the coupling is known exactly.

Dataset file layout (little-endian)::

    b"BRDS"            magic
    u32 version        currently 1
    u32 dim
    u64 count
    u32 n_fields       2 for (x0, x1); sample dumps add more fields
    f64 blocks         n_fields blocks of count * dim values, each row-major
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import FormatError

DATASET_MAGIC = b"BRDS"
DATASET_VERSION = 1
KERNELS = {
    "uniform3": np.full((3, 3), 1.0 / 9.0),
    "gaussian3": np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0,
}


@dataclass
class PairedSamples:
    x0: np.ndarray
    x1: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.x0)


@dataclass
class PairedDataset:
    name: str
    dim: int
    description: str
    _draw: Callable[[int, np.random.Generator], tuple]
    degrade: Callable[[np.ndarray], np.ndarray] | None = None
    posterior_mean: Callable[[np.ndarray], np.ndarray] | None = None

    def sample(self, n: int, rng: np.random.Generator) -> PairedSamples:
        x0, x1, labels = self._draw(n, rng)
        return PairedSamples(x0, x1, labels)


def make_gauss_channel(dim: int = 1, noise_sigma: float = 1.0) -> PairedDataset:
    """``x0 ~ N(0, I)``, ``x1 = x0 + noise_sigma * eta``."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")

    def draw(n, rng):
        x0 = rng.standard_normal((n, dim))
        x1 = x0 + noise_sigma * rng.standard_normal((n, dim)) if noise_sigma else x0.copy()
        return x0, x1, None

    return PairedDataset(
        name="gauss", dim=dim,
        description=f"additive Gaussian channel, sigma={noise_sigma}",
        _draw=draw,
        posterior_mean=lambda x1: np.asarray(x1) / (1.0 + noise_sigma**2),
    )


def random_patches(n: int, side: int, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-constant patches: a flat background overlaid with 2-4 rectangles."""
    x = np.repeat(rng.uniform(0.0, 1.0, size=(n, 1, 1)), side, axis=1).repeat(side, axis=2)
    n_rect = rng.integers(2, 5, size=n)
    idx = np.arange(side)
    for j in range(4):
        rows = np.sort(rng.integers(0, side + 1, size=(n, 2)), axis=1)
        cols = np.sort(rng.integers(0, side + 1, size=(n, 2)), axis=1)
        value = rng.uniform(0.0, 1.0, size=n)
        in_r = (idx[None, :] >= rows[:, :1]) & (idx[None, :] < rows[:, 1:])
        in_c = (idx[None, :] >= cols[:, :1]) & (idx[None, :] < cols[:, 1:])
        mask = in_r[:, :, None] & in_c[:, None, :] & (j < n_rect)[:, None, None]
        x = np.where(mask, value[:, None, None], x)
    return x.reshape(n, side * side)


def blur(x: np.ndarray, side: int, kernel: str = "uniform3") -> np.ndarray:
    """3x3 convolution with half-sample symmetric ("reflect") padding.

    With this padding a normalised symmetric kernel preserves the patch mean.
    """
    k = KERNELS[kernel]
    flat = np.asarray(x, dtype=np.float64)
    img = flat.reshape(-1, side, side)
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="symmetric")
    out = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            out += k[di, dj] * padded[:, di:di + side, dj:dj + side]
    return out.reshape(flat.shape)


def make_patch_blur(patch_side: int = 8, kernel: str = "uniform3") -> PairedDataset:
    if not 4 <= patch_side <= 32:
        raise ValueError("patch_side must lie in [4, 32]")
    if kernel not in KERNELS:
        raise ValueError(f"kernel must be one of {sorted(KERNELS)}")

    def degrade(x0):
        return blur(x0, patch_side, kernel)

    def draw(n, rng):
        x0 = random_patches(n, patch_side, rng)
        return x0, degrade(x0), None

    return PairedDataset(name="blur", dim=patch_side**2,
                         description=f"{patch_side}x{patch_side} patches, {kernel} blur",
                         _draw=draw, degrade=degrade)


def quantize(x: np.ndarray, levels: int) -> np.ndarray:
    return np.round(np.asarray(x) * (levels - 1)) / (levels - 1)


def make_patch_quantize(patch_side: int = 8, levels: int = 4) -> PairedDataset:
    if levels < 2:
        raise ValueError("levels must be at least 2")
    if not 4 <= patch_side <= 32:
        raise ValueError("patch_side must lie in [4, 32]")

    def degrade(x0):
        return quantize(x0, levels)

    def draw(n, rng):
        x0 = random_patches(n, patch_side, rng)
        return x0, degrade(x0), None

    return PairedDataset(name="quantize", dim=patch_side**2,
                         description=f"{patch_side}x{patch_side} patches, {levels}-level quantisation",
                         _draw=draw, degrade=degrade)


def cluster_centers(modes: int, radius: float) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(modes) / modes
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def make_2d_clusters(modes: int = 4, spread: float = 0.1) -> PairedDataset:
    """Mode ``m`` of the source ring (radius 2) pairs with mode ``m`` of a
    half-step-rotated target ring (radius 1). ``x1`` is a deterministic
    function of ``x0`` and its label: the offset from the target centre is
    rotated by 90 degrees and re-attached to the source centre.
    """
    if modes < 1:
        raise ValueError("modes must be at least 1")
    src = cluster_centers(modes, 2.0)
    tgt = cluster_centers(modes, 1.0) @ _rot(np.pi / modes).T
    quarter = _rot(np.pi / 2.0)

    def draw(n, rng):
        labels = rng.integers(0, modes, size=n)
        offset = spread * rng.standard_normal((n, 2))
        x0 = tgt[labels] + offset
        x1 = src[labels] + offset @ quarter.T
        return x0, x1, labels

    ds = PairedDataset(name="clusters", dim=2,
                       description=f"{modes}-mode paired 2-D mixture", _draw=draw)
    ds.source_centers = src  # type: ignore[attr-defined]
    ds.target_centers = tgt  # type: ignore[attr-defined]
    return ds


def _rot(a: float) -> np.ndarray:
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def make_task(name: str, **params) -> PairedDataset:
    factories = {
        "gauss": make_gauss_channel,
        "blur": make_patch_blur,
        "quantize": make_patch_quantize,
        "clusters": make_2d_clusters,
    }
    if name not in factories:
        raise ValueError(f"unknown task {name!r}; expected one of {sorted(factories)}")
    return factories[name](**params)


# -- dataset files -----------------------------------------------------------

def dump_fields(path, *fields: np.ndarray) -> Path:
    arrays = [np.atleast_2d(np.asarray(f, dtype=np.float64)) for f in fields]
    count, dim = arrays[0].shape
    if any(a.shape != (count, dim) for a in arrays):
        raise ValueError("all fields must share the same (count, dim) shape")
    header = DATASET_MAGIC + struct.pack("<IIQI", DATASET_VERSION, dim, count, len(arrays))
    path = Path(path)
    path.write_bytes(header + b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays))
    return path


def load_fields(path) -> list[np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file (bad magic)")
    try:
        version, dim, count, n_fields = struct.unpack_from("<IIQI", blob, 4)
    except struct.error:
        raise FormatError(f"{path}: truncated header") from None
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    off = 24
    if len(blob) != off + 8 * dim * count * n_fields:
        raise FormatError(f"{path}: body size does not match header")
    data = np.frombuffer(blob, dtype="<f8", offset=off).astype(np.float64)
    return list(data.reshape(n_fields, count, dim))


def dump_dataset(path, samples: PairedSamples) -> Path:
    return dump_fields(path, samples.x0, samples.x1)


def load_dataset(path) -> PairedSamples:
    fields = load_fields(path)
    if len(fields) < 2:
        raise FormatError(f"{path}: expected at least two fields")
    return PairedSamples(fields[0], fields[1])


def export_csv(path, names: list[str], *fields: np.ndarray) -> Path:
    arrays = [np.atleast_2d(f) for f in fields]
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"{n}_{j}" for n, a in zip(names, arrays) for j in range(a.shape[1])])
        for row in zip(*arrays):
            w.writerow([repr(float(v)) for part in row for v in part])
    return path
