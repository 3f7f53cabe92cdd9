"""Reversible preprocessing: RIP removal, Haar reduction, cropping, log + min-max scaling.

The Haar step keeps only the approximation band.  With the orthonormal
analysis filter each level yields ``(a + b) / sqrt(2)``; renormalising by
``1 / sqrt(2)`` per level turns that into a plain pairwise mean, so constant
matrices are preserved and a 2x2 block reduces to its mean.  Odd lengths are
padded by repeating the last sample (symmetric half-sample extension).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .core import LOG_MINMAX, RAW, Dataset, Spectrum2D
from .errors import DataError, DegenerateScaleError, FormatError, SpecError


@dataclass(frozen=True)
class ScalingParams:
    lo: float
    hi: float
    clamp: bool = True
    shift: float = 0.0  # added to raw intensities before log1p

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DegenerateScaleError(f"scaling range is empty (lo={self.lo}, hi={self.hi})")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "ScalingParams":
        return cls(float(doc["lo"]), float(doc["hi"]), bool(doc.get("clamp", True)),
                   float(doc.get("shift", 0.0)))


@dataclass(frozen=True)
class CropSpec:
    row_range: tuple[int, int] | None = None
    col_range: tuple[int, int] | None = None
    rip_cols: tuple[int, int] | None = None


@dataclass(frozen=True)
class Profile:
    """Dataset profile: the per-dataset preprocessing configuration."""

    crop: CropSpec = CropSpec()
    wavelet_levels_rows: int = 0
    wavelet_levels_cols: int = 0
    clamp: bool = True
    val_fraction: float = 0.15
    seed: int = 0

    @classmethod
    def load(cls, path) -> "Profile":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_json(doc)

    @classmethod
    def from_json(cls, doc: dict) -> "Profile":
        def interval(v):
            return None if v is None else (int(v[0]), int(v[1]))

        crop = doc.get("crop") or {}
        levels = doc.get("wavelet_levels", {})
        if isinstance(levels, int):
            levels = {"rows": levels, "cols": levels}
        return cls(
            crop=CropSpec(interval(crop.get("rows")), interval(crop.get("cols")),
                          interval(doc.get("rip_cols"))),
            wavelet_levels_rows=int(levels.get("rows", 0)),
            wavelet_levels_cols=int(levels.get("cols", 0)),
            clamp=bool(doc.get("clamp", True)),
            val_fraction=float(doc.get("val_fraction", 0.15)),
            seed=int(doc.get("seed", 0)),
        )


def _check_interval(iv, size, what):
    a, b = iv
    if not (0 <= a < b <= size):
        raise SpecError(f"{what} interval [{a}, {b}) invalid for axis of length {size}")


def remove_rip(s: Spectrum2D, rip_cols: tuple[int, int]) -> Spectrum2D:
    """Delete the reactant-ion-peak columns ``[c0, c1)``."""
    n = s.shape[1]
    _check_interval(rip_cols, n, "rip_cols")
    a, b = rip_cols
    if b - a >= n:
        raise SpecError("removing the RIP interval would leave no columns")
    keep = np.r_[0:a, b:n]
    return s.with_data(s.data[:, keep])


def _haar_axis0(x: np.ndarray, levels: int) -> np.ndarray:
    for _ in range(levels):
        if x.shape[0] % 2:
            x = np.concatenate([x, x[-1:]], axis=0)
        x = (x[0::2] + x[1::2]) / np.sqrt(2.0)  # approximation band
        x = x / np.sqrt(2.0)
    return x


def reduced_length(length: int, levels: int) -> int:
    for _ in range(levels):
        length = math.ceil(length / 2)
    return length


def wavelet_reduce(s: Spectrum2D, levels_rows: int, levels_cols: int) -> Spectrum2D:
    """Keep the Haar approximation band after the given number of levels per axis."""
    if levels_rows < 0 or levels_cols < 0:
        raise SpecError("wavelet levels must be non-negative")
    m, n = s.shape
    # a length-1 axis cannot be halved again without padding to itself
    for length, lv, axis in ((m, levels_rows, "row"), (n, levels_cols, "column")):
        cur = length
        for _ in range(lv):
            if cur < 2:
                raise SpecError(f"{lv} {axis} levels exhaust an axis of length {length}")
            cur = math.ceil(cur / 2)
    x = _haar_axis0(s.data, levels_rows)
    x = _haar_axis0(x.T, levels_cols).T
    return s.with_data(np.ascontiguousarray(x))


def crop(s: Spectrum2D, spec: CropSpec) -> Spectrum2D:
    m, n = s.shape
    rows = spec.row_range or (0, m)
    cols = spec.col_range or (0, n)
    _check_interval(rows, m, "row")
    _check_interval(cols, n, "column")
    return s.with_data(s.data[rows[0]:rows[1], cols[0]:cols[1]].copy())


def fit_scaling(train: Dataset, clamp: bool = True) -> ScalingParams:
    """Fit log1p + min-max coefficients on training records only."""
    if len(train) == 0:
        raise SpecError("cannot fit scaling on an empty dataset")
    lo_raw = min(float(r.data.min()) for r in train.records)
    shift = -lo_raw if lo_raw < 0 else 0.0
    lo = min(float(np.log1p(r.data.min() + shift)) for r in train.records)
    hi = max(float(np.log1p(r.data.max() + shift)) for r in train.records)
    if hi == lo:
        raise DegenerateScaleError("training intensities are constant")
    return ScalingParams(lo, hi, clamp, shift)


def apply_scaling(s: Spectrum2D, p: ScalingParams) -> Spectrum2D:
    if s.scale_state != RAW:
        raise SpecError(f"{s.id}: apply_scaling expects a raw record")
    x = s.data + p.shift
    if np.any(x < -1.0):
        raise DataError(f"{s.id}: intensities below -1 after shift cannot be log1p-scaled")
    y = (np.log1p(x) - p.lo) / (p.hi - p.lo)
    if p.clamp:
        y = np.clip(y, 0.0, 1.0)
    return s.with_data(y, scale_state=LOG_MINMAX)


def invert_scaling(s: Spectrum2D, p: ScalingParams) -> Spectrum2D:
    if s.scale_state != LOG_MINMAX:
        raise SpecError(f"{s.id}: invert_scaling expects a log_minmax record")
    x = np.expm1(s.data * (p.hi - p.lo) + p.lo) - p.shift
    return s.with_data(x, scale_state=RAW)


def apply_profile(s: Spectrum2D, profile: Profile) -> Spectrum2D:
    """Structural steps in pipeline order: RIP removal, Haar reduction, crop."""
    if profile.crop.rip_cols is not None:
        s = remove_rip(s, profile.crop.rip_cols)
    if profile.wavelet_levels_rows or profile.wavelet_levels_cols:
        s = wavelet_reduce(s, profile.wavelet_levels_rows, profile.wavelet_levels_cols)
    if profile.crop.row_range or profile.crop.col_range:
        s = crop(s, replace(profile.crop, rip_cols=None))
    return s


def scale_dataset(ds: Dataset, p: ScalingParams) -> Dataset:
    return ds.subset(apply_scaling(r, p) for r in ds.records)


def unscale_dataset(ds: Dataset, p: ScalingParams) -> Dataset:
    return ds.subset(invert_scaling(r, p) for r in ds.records)
