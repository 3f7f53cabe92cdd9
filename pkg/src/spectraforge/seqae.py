"""Sequential double autoencoder: columns -> Z (d x n), rows of Z -> E (d x d)."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .core import LOG_MINMAX, RECONSTRUCTED, Dataset, Spectrum2D, make_rng, read_spb, write_spb
from .errors import FormatError, ShapeError, SpecError

log = logging.getLogger(__name__)

ENCODED = "encoded"
SAMPLED = "sampled"


@dataclass(frozen=True, eq=False)
class LatentMatrix:
    E: np.ndarray
    source_id: str
    label: str | None = None
    provenance: str = ENCODED

    def __post_init__(self):
        E = np.array(self.E, dtype=np.float64)
        if E.ndim != 2 or E.shape[0] != E.shape[1]:
            raise ShapeError(f"latent matrix must be square, got {E.shape}")
        if not np.all(np.isfinite(E)):
            raise ShapeError("latent matrix has non-finite entries")
        E.setflags(write=False)
        object.__setattr__(self, "E", E)

    @property
    def d(self) -> int:
        return self.E.shape[0]


@dataclass
class SeqAeBundle:
    first: nn.AutoencoderModel  # columns: R^m <-> R^d
    second: nn.AutoencoderModel  # rows of Z: R^n <-> R^d
    history: dict | None = None

    def __post_init__(self):
        if self.first.latent_dim != self.second.latent_dim:
            raise ShapeError("both stages must share the latent width d")

    @property
    def d(self) -> int:
        return self.first.latent_dim

    @property
    def m(self) -> int:
        return self.first.input_dim

    @property
    def n(self) -> int:
        return self.second.input_dim


def identity_bundle(d: int) -> SeqAeBundle:
    return SeqAeBundle(nn.identity_autoencoder(d), nn.identity_autoencoder(d))


def column_series(ds: Dataset) -> np.ndarray:
    """All column time series of all records, shape ``(N * n, m)``."""
    if len(ds) == 0:
        return np.empty((0, ds.shape[0] if ds.shape else 0))
    X = ds.stack()  # (N, m, n)
    return np.ascontiguousarray(X.transpose(0, 2, 1).reshape(-1, X.shape[1]))


def column_keep_mask(series: np.ndarray, keep_prob: float, rng) -> np.ndarray:
    """Median-std undersampling mask over a pool of series (rows).

    Series whose standard deviation is at or above the pooled median are kept;
    the rest survive independently with probability ``keep_prob``.
    """
    if not 0.0 <= keep_prob <= 1.0:
        raise SpecError("keep_prob must lie in [0, 1]")
    rng = make_rng(rng)
    stds = series.std(axis=1)
    threshold = np.median(stds)
    low = stds < threshold
    draws = rng.random(len(series))
    return ~low | (draws < keep_prob)


def undersample_columns(records: Dataset, keep_prob: float = 0.25, rng=0) -> np.ndarray:
    series = column_series(records)
    if len(series) == 0:
        return series
    return series[column_keep_mask(series, keep_prob, rng)]


def _check_record(x: Spectrum2D, b: SeqAeBundle):
    if x.shape != (b.m, b.n):
        raise ShapeError(f"{x.id}: shape {x.shape} does not match bundle ({b.m}, {b.n})")


def encode_matrix(X: np.ndarray, b: SeqAeBundle) -> np.ndarray:
    Z = b.first.encode(X.T).T  # (d, n)
    return b.second.encode(Z)  # (d, d)


def decode_matrix(E: np.ndarray, b: SeqAeBundle) -> np.ndarray:
    Zhat = b.second.decode(E)  # (d, n)
    return b.first.decode(Zhat.T).T  # (m, n)


def stage1_latents(x: Spectrum2D, b: SeqAeBundle) -> np.ndarray:
    """Intermediate ``Z`` (d x n) of one record."""
    _check_record(x, b)
    return b.first.encode(x.data.T).T


def _warn_unscaled(records):
    raw = [r.id for r in records if r.scale_state != LOG_MINMAX]
    if raw:
        log.warning("encoding %d record(s) that are not log_minmax scaled (first: %s)",
                    len(raw), raw[0])


def encode_record(x: Spectrum2D, b: SeqAeBundle, _warn: bool = True) -> LatentMatrix:
    _check_record(x, b)
    if _warn:
        _warn_unscaled([x])
    return LatentMatrix(encode_matrix(x.data, b), x.id, x.label, ENCODED)


def decode_record(E: LatentMatrix, b: SeqAeBundle, record_id: str | None = None,
                  provenance: str = RECONSTRUCTED) -> Spectrum2D:
    if E.d != b.d:
        raise ShapeError(f"latent side {E.d} does not match bundle d={b.d}")
    X = decode_matrix(E.E, b)
    return Spectrum2D(record_id or E.source_id, X, label=E.label, scale_state=LOG_MINMAX,
                      provenance=provenance, source_id=E.source_id)


def encode_dataset(ds: Dataset, b: SeqAeBundle) -> list[LatentMatrix]:
    _warn_unscaled(ds.records)
    return [encode_record(r, b, _warn=False) for r in ds.records]


def reconstruct_dataset(ds: Dataset, b: SeqAeBundle, suffix: str = "__rec") -> Dataset:
    """Encode then decode each record unchanged; ids get ``suffix``."""
    _warn_unscaled(ds.records)
    out = [decode_record(encode_record(r, b, _warn=False), b, record_id=r.id + suffix)
           for r in ds.records]
    return ds.subset(out)


def z_row_series(ds: Dataset, first: nn.AutoencoderModel) -> np.ndarray:
    """Rows of every record's ``Z``, shape ``(N * d, n)``."""
    if len(ds) == 0:
        return np.empty((0, 0))
    cols = column_series(ds)  # (N*n, m)
    Z = first.encode(cols)  # (N*n, d)
    N, (_, n) = len(ds), ds.shape
    return np.ascontiguousarray(Z.reshape(N, n, -1).transpose(0, 2, 1).reshape(-1, n))


def train_first(train: Dataset, val: Dataset, d: int, cfg: nn.TrainConfig,
                keep_prob: float = 0.25):
    """Stage 1 on undersampled column series (length m)."""
    rng = make_rng(cfg.seed)
    init_rng, tr_rng, val_rng = (np.random.Generator(s) for s in rng.bit_generator.spawn(3))
    xtr = undersample_columns(train, keep_prob, tr_rng)
    xval = undersample_columns(val, keep_prob, val_rng) if len(val) else None
    log.info("stage 1: %d train / %d val series of length %d",
             len(xtr), 0 if xval is None else len(xval), train.shape[0])
    model = nn.build_autoencoder(train.shape[0], d, cfg.hidden, cfg.activation, init_rng)
    return nn.train(model, xtr, xval, cfg)


def train_second(train: Dataset, val: Dataset, first: nn.AutoencoderModel,
                 cfg: nn.TrainConfig):
    """Stage 2 on all rows of ``Z`` produced by the trained stage-1 encoder."""
    d = first.latent_dim
    rng = make_rng(cfg.seed + 1)
    xtr = z_row_series(train, first)
    xval = z_row_series(val, first) if len(val) else None
    log.info("stage 2: %d train / %d val series of length %d",
             len(xtr), 0 if xval is None else len(xval), train.shape[1])
    model = nn.build_autoencoder(train.shape[1], d, cfg.hidden, cfg.activation, rng)
    return nn.train(model, xtr, xval, cfg)


def train_bundle(train: Dataset, val: Dataset, d: int, cfg: nn.TrainConfig,
                 keep_prob: float = 0.25, cfg_second: nn.TrainConfig | None = None) -> SeqAeBundle:
    """Two-phase training: stage 1 to completion, then stage 2 on its ``Z`` rows."""
    if d < 1:
        raise SpecError("d must be positive")
    first, h1 = train_first(train, val, d, cfg, keep_prob)
    second, h2 = train_second(train, val, first, cfg_second or cfg)
    return SeqAeBundle(first, second, history={"first": h1, "second": h2})


def save_bundle(b: SeqAeBundle, out_dir) -> Path:
    out_dir = Path(out_dir)
    nn.save_model(b.first, out_dir / "first")
    nn.save_model(b.second, out_dir / "second")
    meta = {"d": b.d, "m": b.m, "n": b.n}
    (out_dir / "bundle.json").write_text(json.dumps(meta, indent=2))
    return out_dir


def load_bundle(bundle_dir) -> SeqAeBundle:
    bundle_dir = Path(bundle_dir)
    b = SeqAeBundle(nn.load_model(bundle_dir / "first"), nn.load_model(bundle_dir / "second"))
    meta_path = bundle_dir / "bundle.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if (meta["d"], meta["m"], meta["n"]) != (b.d, b.m, b.n):
            raise FormatError(f"{bundle_dir}: bundle.json disagrees with the checkpoints")
    return b


def save_latents(latents: list[LatentMatrix], out_dir, labels=()) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, lat in enumerate(latents):
        fname = f"{lat.source_id}.spb" if lat.provenance == ENCODED else f"sampled_{i:05d}.spb"
        write_spb(out_dir / fname, lat.E)
        entries.append({"source_id": lat.source_id, "label": lat.label,
                        "provenance": lat.provenance, "path": fname})
    doc = {"labels": list(labels), "latents": entries}
    path = out_dir / "latents.json"
    path.write_text(json.dumps(doc, indent=2))
    return path


def load_latents(latent_dir) -> tuple[list[LatentMatrix], list[str]]:
    latent_dir = Path(latent_dir)
    doc = json.loads((latent_dir / "latents.json").read_text())
    out = [LatentMatrix(read_spb(latent_dir / e["path"]), e["source_id"], e.get("label"),
                        e.get("provenance", ENCODED)) for e in doc["latents"]]
    return out, list(doc.get("labels", []))
