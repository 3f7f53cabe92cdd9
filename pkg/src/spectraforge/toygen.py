"""Deterministic surrogate 2D spectra with class-specific Gaussian peak signatures.

Each record is a sum of anisotropic Gaussian peaks whose positions and
amplitudes are jittered per record, plus folded-normal (non-negative) noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import ORIGINAL, RAW, Dataset, Spectrum2D, make_rng, spawn_rngs
from .errors import FormatError, SpecError


@dataclass(frozen=True)
class Peak:
    row: float
    col: float
    sigma_row: float
    sigma_col: float
    amplitude: float


@dataclass(frozen=True)
class ToyClassSpec:
    label: str
    peaks: tuple[Peak, ...]
    jitter_pos: float = 1.0  # std of the per-record peak shift, in cells
    amp_range: tuple[float, float] = (0.8, 1.2)
    noise_sigma: float = 0.01


@dataclass(frozen=True)
class ToyDatasetSpec:
    classes: tuple[ToyClassSpec, ...]
    records_per_class: tuple[int, ...]
    m: int = 64
    n: int = 48
    seed: int = 0

    def validate(self):
        if len(self.classes) < 2:
            raise SpecError("need at least two classes")
        if len(self.records_per_class) != len(self.classes):
            raise SpecError("records_per_class must list one count per class")
        if min(self.records_per_class) < 4:
            raise SpecError("every class needs at least 4 records")
        if len({c.label for c in self.classes}) != len(self.classes):
            raise SpecError("class labels must be unique")
        for c in self.classes:
            if c.noise_sigma < 0 or c.jitter_pos < 0:
                raise SpecError(f"{c.label}: noise and jitter must be non-negative")
            lo, hi = c.amp_range
            if not 0 < lo <= hi:
                raise SpecError(f"{c.label}: amplitude factors must be positive")
            for p in c.peaks:
                if not (0 <= p.row < self.m and 0 <= p.col < self.n):
                    raise SpecError(f"{c.label}: peak outside the {self.m}x{self.n} grid")
                if p.amplitude <= 0 or p.sigma_row <= 0 or p.sigma_col <= 0:
                    raise SpecError(f"{c.label}: peak amplitude and widths must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "ToyDatasetSpec":
        try:
            classes = tuple(
                ToyClassSpec(c["label"], tuple(Peak(**p) for p in c["peaks"]),
                             float(c.get("jitter_pos", 1.0)),
                             tuple(c.get("amp_range", (0.8, 1.2))),
                             float(c.get("noise_sigma", 0.01)))
                for c in doc["classes"])
            return cls(classes, tuple(int(k) for k in doc["records_per_class"]),
                       int(doc.get("m", 64)), int(doc.get("n", 48)), int(doc.get("seed", 0)))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"invalid toy spec: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ToyDatasetSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


# Peak sets shared between pure classes and their mixtures.
_SIGNATURES = {
    "A": (Peak(14, 10, 2.5, 1.5, 1.0), Peak(40, 30, 3.0, 2.0, 0.5)),
    "B": (Peak(22, 18, 2.0, 1.5, 1.2), Peak(50, 12, 2.5, 1.5, 0.4)),
    "C": (Peak(30, 36, 3.0, 2.0, 0.9), Peak(12, 40, 2.0, 1.5, 0.6)),
    "D": (Peak(46, 24, 2.5, 2.0, 1.1), Peak(56, 40, 2.0, 1.5, 0.3)),
}


def default_spec(seed: int = 0, records_per_class=(24, 20, 18, 16, 4, 4),
                 noise_sigma: float = 0.02, jitter_pos: float = 1.5) -> ToyDatasetSpec:
    """Four pure classes plus two scarce two-component mixtures (64 x 48)."""
    names = ["A", "B", "C", "D", "A&B", "C&D"]
    classes = []
    for name in names:
        peaks = tuple(p for part in name.split("&") for p in _SIGNATURES[part])
        classes.append(ToyClassSpec(name, peaks, jitter_pos, (0.7, 1.3), noise_sigma))
    return ToyDatasetSpec(tuple(classes), tuple(records_per_class), 64, 48, seed)


def render(peaks, m: int, n: int, shifts=None, amps=None) -> np.ndarray:
    rows = np.arange(m, dtype=np.float64)[:, None]
    cols = np.arange(n, dtype=np.float64)[None, :]
    out = np.zeros((m, n))
    for i, p in enumerate(peaks):
        dr, dc = (0.0, 0.0) if shifts is None else shifts[i]
        a = p.amplitude * (1.0 if amps is None else amps[i])
        out += a * np.exp(-0.5 * (((rows - p.row - dr) / p.sigma_row) ** 2
                                  + ((cols - p.col - dc) / p.sigma_col) ** 2))
    return out


def generate(spec: ToyDatasetSpec) -> Dataset:
    """Render every record; one independent child stream per class."""
    spec.validate()
    streams = spawn_rngs(make_rng(spec.seed), len(spec.classes))
    records = []
    for cls, count, rng in zip(spec.classes, spec.records_per_class, streams):
        k = len(cls.peaks)
        for i in range(count):
            shifts = rng.normal(0.0, cls.jitter_pos, (k, 2)) if cls.jitter_pos else None
            lo, hi = cls.amp_range
            amps = rng.uniform(lo, hi, k)
            x = render(cls.peaks, spec.m, spec.n, shifts, amps)
            if cls.noise_sigma:
                x += np.abs(rng.normal(0.0, cls.noise_sigma, x.shape))
            safe = cls.label.replace("&", "+")
            records.append(Spectrum2D(f"{safe}_{i:03d}", x, label=cls.label,
                                      scale_state=RAW, provenance=ORIGINAL))
    return Dataset(tuple(records), tuple(c.label for c in spec.classes))


def nearest_centroid_accuracy(ds: Dataset) -> float:
    """Leave-one-out nearest-centroid accuracy on raw pixels."""
    X = ds.stack().reshape(len(ds), -1)
    y = ds.label_array()
    correct = 0
    for i in range(len(X)):
        mask = np.ones(len(X), dtype=bool)
        mask[i] = False
        cents = np.stack([X[mask & (y == c)].mean(axis=0) for c in range(len(ds.labels))])
        pred = np.argmin(((cents - X[i]) ** 2).sum(axis=1))
        correct += pred == y[i]
    return correct / len(X)
