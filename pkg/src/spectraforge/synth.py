"""Per-label latent statistics and multivariate Gaussian resampling.

Latent matrices are flattened row-major into vectors of length ``d**2``.
Groups are always far smaller than ``d**2``, so the sample covariance is
singular; a diagonal ridge makes it factorable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import SYNTHETIC, Dataset, make_rng, read_spb, spawn_rngs, write_spb
from .errors import NumericsError, SpecError, StatsError
from .seqae import SAMPLED, LatentMatrix, SeqAeBundle, decode_record

RIDGE_REL = 1e-6
MIN_EIGEN = 1e-9
MAX_DOUBLINGS = 60


@dataclass(frozen=True, eq=False)
class LabelStats:
    label: str | None
    mean: np.ndarray  # (d*d,)
    cov: np.ndarray  # (d*d, d*d), ridge already added
    n_samples: int
    ridge: float
    chol: np.ndarray | None = None

    @property
    def d(self) -> int:
        return math.isqrt(self.mean.size)


def group_by_label(latents) -> dict:
    groups: dict = {}
    for lat in latents:
        if lat.label is None:
            raise SpecError(f"latent {lat.source_id} has no label")
        groups.setdefault(lat.label, []).append(lat)
    return groups


def _flatten(group) -> np.ndarray:
    return np.stack([lat.E.reshape(-1) for lat in group])


def _cholesky_with_ridge(cov: np.ndarray, ridge: float):
    """Double ``ridge`` until ``cov + ridge*I`` factors; return ``(L, ridge)``."""
    eye = np.eye(len(cov))
    for _ in range(MAX_DOUBLINGS):
        try:
            return np.linalg.cholesky(cov + ridge * eye), ridge
        except np.linalg.LinAlgError:
            ridge *= 2.0
    raise NumericsError("covariance stayed non-factorable after ridge escalation")


def fit_stats(group, ridge: float | None = None, shrinkage: float = 0.0) -> LabelStats:
    """Mean and unbiased covariance of a label group, regularised for sampling.

    With ``ridge=None`` the starting ridge is ``1e-6 * trace(cov) / d**2``
    (floored at ``1e-9``) and is doubled until Cholesky succeeds.  A given
    ``ridge`` is used as the starting value.  ``shrinkage`` in ``[0, 1]`` blends
    the covariance toward its diagonal before the ridge is added.
    """
    group = list(group)
    if len(group) < 2:
        label = group[0].label if group else None
        raise StatsError(f"label {label!r}: need at least 2 latent matrices, got {len(group)}")
    X = _flatten(group)
    n, p = X.shape
    mean = X.mean(axis=0)
    C = X - mean
    cov = (C.T @ C) / (n - 1)
    cov = 0.5 * (cov + cov.T)
    if shrinkage:
        if not 0.0 <= shrinkage <= 1.0:
            raise SpecError("shrinkage must lie in [0, 1]")
        cov = (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))
    if ridge is None:
        ridge = max(RIDGE_REL * float(np.trace(cov)) / p, MIN_EIGEN)
    L, ridge = _cholesky_with_ridge(cov, ridge) if ridge > 0 else (None, 0.0)
    cov = cov + ridge * np.eye(p)
    return LabelStats(group[0].label, mean, cov, n, ridge, L)


def cholesky_factor(stats: LabelStats) -> np.ndarray:
    if stats.chol is not None:
        return stats.chol
    try:
        return np.linalg.cholesky(stats.cov)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"label {stats.label!r}: covariance is not positive definite") from exc


def sample_latent(stats: LabelStats, count: int, rng) -> list[LatentMatrix]:
    """Draw ``count`` matrices ``mean + L z`` with ``z ~ N(0, I)``."""
    rng = make_rng(rng)
    if count <= 0:
        return []
    L = cholesky_factor(stats)
    d = stats.d
    z = rng.standard_normal((count, stats.mean.size))
    draws = stats.mean + z @ L.T
    return [LatentMatrix(v.reshape(d, d), f"{stats.label}", stats.label, SAMPLED) for v in draws]


def synthesize(latents, b: SeqAeBundle, multiplier: float = 1.0, ridge: float | None = None,
               rng=0, labels=(), shrinkage: float = 0.0, prefix: str = "syn") -> Dataset:
    """Decode ``ceil(multiplier * N_l)`` sampled latents per label.

    Each label gets its own child stream, so results do not depend on how many
    other labels are present before it.
    """
    if multiplier < 0:
        raise SpecError("multiplier must be non-negative")
    rng = make_rng(rng)
    groups = group_by_label(latents)
    order = list(labels) or sorted(groups)
    order = [lab for lab in order if lab in groups]
    streams = spawn_rngs(rng, len(order))
    records = []
    for lab, stream in zip(order, streams):
        count = math.ceil(multiplier * len(groups[lab]) - 1e-12)
        if count == 0:
            continue
        stats = fit_stats(groups[lab], ridge, shrinkage)
        for i, lat in enumerate(sample_latent(stats, count, stream)):
            rec = decode_record(lat, b, record_id=f"{prefix}_{lab}_{i:04d}", provenance=SYNTHETIC)
            records.append(replace(rec, source_id=None))
    return Dataset(tuple(records), tuple(labels) or tuple(order))


def save_stats(stats: LabelStats, out_dir, stem: str | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"stats_{stats.label}"
    write_spb(out_dir / f"{stem}_mean.spb", stats.mean.reshape(1, -1))
    write_spb(out_dir / f"{stem}_cov.spb", stats.cov)
    meta = {"label": stats.label, "d": stats.d, "n_samples": stats.n_samples,
            "ridge": stats.ridge, "flatten": "row-major",
            "mean": f"{stem}_mean.spb", "cov": f"{stem}_cov.spb"}
    path = out_dir / f"{stem}.json"
    path.write_text(json.dumps(meta, indent=2))
    return path


def load_stats(path) -> LabelStats:
    path = Path(path)
    meta = json.loads(path.read_text())
    mean = read_spb(path.parent / meta["mean"]).reshape(-1)
    cov = read_spb(path.parent / meta["cov"])
    return LabelStats(meta["label"], mean, cov, int(meta["n_samples"]), float(meta["ridge"]))
