"""Synthetic patch datasets with controllable label distributions.

A sample is a small square patch whose pixels are split into foreground
(values near 1) and background (values near 0); the regression target y is
the exact realised foreground fraction.  Rendering thresholds a smoothed
noise field by rank, so exactly round(y * S^2) pixels are foreground and
the stored target is round(y * S^2) / S^2.

Four label-distribution shapes are provided: bimodal (mass piled near both
extremes), negatively skewed, uniform, and truncated gaussian, plus an
optional point mass at the exact endpoints.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DISTRIBUTION_KINDS",
    "LabelDistribution",
    "Patch",
    "DatasetSplits",
    "DatasetFormatError",
    "DatasetVersionError",
    "sample_targets",
    "render_patch",
    "generate_patches",
    "make_dataset",
    "save_dataset",
    "load_dataset",
]

DISTRIBUTION_KINDS = ("bimodal", "negskew", "uniform", "gaussian")

_MAGIC = b"UGELDATA"
_VERSION = 1

_DEFAULT_PARAMS = {
    "bimodal": {
        "low_shape": (1.0, 20.0),
        "high_shape": (20.0, 1.0),
        "weights": (0.35, 0.35, 0.30),  # low lobe, high lobe, uniform fill
    },
    "negskew": {"shape": (5.0, 2.0)},
    "uniform": {},
    "gaussian": {"mean": 0.5, "std": 0.15},
}


class DatasetFormatError(Exception):
    """Raised when a dataset file is malformed or truncated."""


class DatasetVersionError(DatasetFormatError):
    """Raised when a dataset file has an unsupported version."""


@dataclass(frozen=True)
class LabelDistribution:
    kind: str
    params: dict = field(default_factory=dict)
    endpoint_mass: float = 0.0  # extra point mass split between exact 0 and 1

    def __post_init__(self):
        if self.kind not in DISTRIBUTION_KINDS:
            raise ValueError(f"unknown label distribution {self.kind!r}")
        if not 0.0 <= self.endpoint_mass < 1.0:
            raise ValueError("endpoint_mass must lie in [0, 1)")
        merged = dict(_DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray  # (S, S), values in [0, 1]
    y: float  # exact foreground fraction
    id: int = -1


@dataclass
class DatasetSplits:
    labelled: list
    pool: list
    test: list
    meta: dict = field(default_factory=dict)


def sample_targets(dist: LabelDistribution, n: int, rng: np.random.Generator):
    """Draw n targets from the distribution, clipped into [0, 1]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = dist.params
    if dist.kind == "uniform":
        y = rng.uniform(0.0, 1.0, size=n)
    elif dist.kind == "negskew":
        a, b = p["shape"]
        y = rng.beta(a, b, size=n)
    elif dist.kind == "bimodal":
        w_low, w_high, w_fill = p["weights"]
        total = w_low + w_high + w_fill
        if total <= 0:
            raise ValueError("bimodal weights must sum to a positive value")
        comp = rng.choice(3, size=n, p=[w_low / total, w_high / total, w_fill / total])
        y = np.empty(n)
        low = comp == 0
        high = comp == 1
        fill = comp == 2
        y[low] = rng.beta(*p["low_shape"], size=int(low.sum()))
        y[high] = rng.beta(*p["high_shape"], size=int(high.sum()))
        y[fill] = rng.uniform(0.0, 1.0, size=int(fill.sum()))
    else:  # gaussian, truncated by rejection
        mean, std = p["mean"], p["std"]
        if std <= 0:
            raise ValueError("gaussian std must be > 0")
        y = np.empty(n)
        remaining = np.arange(n)
        while remaining.size:
            draw = rng.normal(mean, std, size=remaining.size)
            ok = (draw >= 0.0) & (draw <= 1.0)
            y[remaining[ok]] = draw[ok]
            remaining = remaining[~ok]
    if dist.endpoint_mass > 0.0:
        hit = rng.random(n) < dist.endpoint_mass
        side = rng.random(n) < 0.5
        y = np.where(hit, np.where(side, 0.0, 1.0), y)
    return np.clip(y, 0.0, 1.0)


def _smooth_noise(size: int, rng: np.random.Generator) -> np.ndarray:
    """Separable box-smoothed uniform noise; only its ranks matter."""
    u = rng.random((size, size))
    kernel = np.ones(5) / 5.0
    pad = 2
    padded = np.pad(u, pad, mode="reflect")
    rows = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="valid"), 1, padded)
    cols = np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="valid"), 0, rows)
    return cols


def render_patch(y: float, size: int, rng: np.random.Generator, patch_id: int = -1) -> Patch:
    """Render a patch whose foreground count is exactly round(y * size^2).

    The stored target is the realised fraction, so the label is exact by
    construction.
    """
    if size < 4:
        raise ValueError("patch size must be >= 4")
    if not 0.0 <= y <= 1.0:
        raise ValueError("target must lie in [0, 1]")
    n_pix = size * size
    k = int(round(y * n_pix))
    noise = _smooth_noise(size, rng)
    order = np.argsort(noise.ravel(), kind="stable")[::-1]
    fg_mask = np.zeros(n_pix, dtype=bool)
    fg_mask[order[:k]] = True
    fg_mask = fg_mask.reshape(size, size)
    jitter = rng.random((size, size))
    pixels = np.where(fg_mask, 1.0 - 0.15 * jitter, 0.15 * jitter)
    return Patch(pixels=pixels, y=k / n_pix, id=patch_id)


def generate_patches(dist, n: int, size: int, rng: np.random.Generator, id_offset: int = 0):
    targets = sample_targets(dist, n, rng)
    return [
        render_patch(t, size, rng, patch_id=id_offset + i)
        for i, t in enumerate(targets)
    ]


def make_dataset(
    dist: LabelDistribution,
    n_pool: int,
    n_test: int,
    m_init: int,
    size: int,
    seed: int,
) -> DatasetSplits:
    """Disjoint labelled / unlabelled-pool / test splits.

    The first ``m_init`` pool patches form the initial labelled set; the
    rest keep their targets hidden behind the labelling oracle.
    """
    if m_init > n_pool:
        raise ValueError("m_init cannot exceed the pool size")
    if n_pool < 1 or n_test < 0:
        raise ValueError("need a nonempty pool and nonnegative test size")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    pool_patches = generate_patches(dist, n_pool, size, rng, id_offset=0)
    test_patches = generate_patches(dist, n_test, size, rng, id_offset=n_pool)
    meta = {
        "distribution": dist.kind,
        "params": {k: list(v) if isinstance(v, tuple) else v for k, v in dist.params.items()},
        "endpoint_mass": dist.endpoint_mass,
        "n_pool": n_pool,
        "n_test": n_test,
        "m_init": m_init,
        "patch_size": size,
        "seed": seed,
    }
    return DatasetSplits(
        labelled=pool_patches[:m_init],
        pool=pool_patches[m_init:],
        test=test_patches,
        meta=meta,
    )


def _write_split(buf, patches, size):
    ids = np.array([p.id for p in patches], dtype=np.int64)
    ys = np.array([p.y for p in patches], dtype=np.float64)
    if len(patches):
        pix = np.stack([p.pixels for p in patches]).astype(np.float64)
    else:
        pix = np.zeros((0, size, size))
    buf.write(struct.pack("<q", len(patches)))
    buf.write(ids.tobytes())
    buf.write(ys.tobytes())
    buf.write(pix.tobytes())


def save_dataset(splits: DatasetSplits, path) -> None:
    size = int(splits.meta.get("patch_size") or splits_patch_size(splits))
    header = json.dumps(
        {"patch_size": size, "meta": splits.meta}, sort_keys=True
    ).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    buf.write(struct.pack("<q", len(header)))
    buf.write(header)
    for patches in (splits.labelled, splits.pool, splits.test):
        _write_split(buf, patches, size)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def splits_patch_size(splits: DatasetSplits) -> int:
    for group in (splits.labelled, splits.pool, splits.test):
        if group:
            return group[0].pixels.shape[0]
    raise ValueError("cannot infer patch size of an empty dataset")


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DatasetFormatError(f"truncated dataset file while reading {what}")
    return data


def _read_split(fh, size: int):
    (count,) = struct.unpack("<q", _read_exact(fh, 8, "split count"))
    if count < 0:
        raise DatasetFormatError("negative split count")
    ids = np.frombuffer(_read_exact(fh, 8 * count, "ids"), dtype=np.int64)
    ys = np.frombuffer(_read_exact(fh, 8 * count, "targets"), dtype=np.float64)
    pix = np.frombuffer(
        _read_exact(fh, 8 * count * size * size, "pixels"), dtype=np.float64
    ).reshape(count, size, size)
    return [
        Patch(pixels=pix[i].copy(), y=float(ys[i]), id=int(ids[i]))
        for i in range(count)
    ]


def load_dataset(path) -> DatasetSplits:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(_MAGIC), "magic")
        if magic != _MAGIC:
            raise DatasetFormatError(f"not a dataset file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != _VERSION:
            raise DatasetVersionError(
                f"unsupported dataset version {version} (expected {_VERSION})"
            )
        (header_len,) = struct.unpack("<q", _read_exact(fh, 8, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header"))
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"corrupt header: {exc}") from exc
        size = int(header["patch_size"])
        labelled = _read_split(fh, size)
        pool = _read_split(fh, size)
        test = _read_split(fh, size)
        trailing = fh.read(1)
        if trailing:
            raise DatasetFormatError("trailing bytes after dataset payload")
    return DatasetSplits(labelled=labelled, pool=pool, test=test, meta=header["meta"])
