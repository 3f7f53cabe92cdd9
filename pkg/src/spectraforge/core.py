"""Domain types, seeded RNG helpers, SPB matrix files, manifests and splits."""

from __future__ import annotations

import json
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, FormatError, HoldoutError, IoError, SpecError, StratifyError

log = logging.getLogger(__name__)

RAW = "raw"
LOG_MINMAX = "log_minmax"
SCALE_STATES = (RAW, LOG_MINMAX)

ORIGINAL = "original"
RECONSTRUCTED = "reconstructed"
SYNTHETIC = "synthetic"
PROVENANCES = (ORIGINAL, RECONSTRUCTED, SYNTHETIC)

SPB_MAGIC = b"SPB1"
SPB_DTYPE_F64 = 0
# magic, dtype tag, rows, cols, 20 reserved bytes
_SPB_HEADER = struct.Struct("<4sBII20s")
SPB_HEADER_SIZE = _SPB_HEADER.size  # 33


# ---------------------------------------------------------------------------
# RNG
# ---------------------------------------------------------------------------

def make_rng(seed) -> np.random.Generator:
    """Return a PCG64 generator; pass generators through untouched.

    PCG64 streams are fully specified by the seed and identical on every
    platform numpy supports, which is all the reproducibility contract needs.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise SpecError("an explicit seed is required")
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_rngs(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """Independent child streams for parallelisable sub-tasks."""
    return [np.random.Generator(bg) for bg in rng.bit_generator.spawn(count)]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Spectrum2D:
    """An ``m x n`` intensity matrix (drift-time rows, retention-time columns)."""

    id: str
    data: np.ndarray
    label: str | None = None
    scale_state: str = RAW
    provenance: str = ORIGINAL
    source_id: str | None = None

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise SpecError(f"{self.id}: expected a non-empty 2D matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{self.id}: matrix contains non-finite values")
        if self.scale_state not in SCALE_STATES:
            raise SpecError(f"unknown scale_state {self.scale_state!r}")
        if self.provenance not in PROVENANCES:
            raise SpecError(f"unknown provenance {self.provenance!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data, **changes) -> "Spectrum2D":
        return replace(self, data=data, **changes)


@dataclass(frozen=True)
class Dataset:
    """Records sharing one ``(m, n)`` shape, plus the declared label set.

    ``labels`` is kept in canonical order; that order breaks classifier ties.
    """

    records: tuple[Spectrum2D, ...]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        records = tuple(self.records)
        labels = tuple(self.labels) if self.labels else tuple(
            sorted({r.label for r in records if r.label is not None}))
        shapes = {r.shape for r in records}
        if len(shapes) > 1:
            raise SpecError(f"records disagree on shape: {sorted(shapes)}")
        known = set(labels)
        for r in records:
            if r.label is not None and r.label not in known:
                raise SpecError(f"record {r.id} has undeclared label {r.label!r}")
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise SpecError("record ids must be unique")
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def shape(self) -> tuple[int, int] | None:
        return self.records[0].shape if self.records else None

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def provenance(self) -> list[str]:
        return [r.provenance for r in self.records]

    def by_label(self) -> dict[str, list[Spectrum2D]]:
        groups: dict[str, list[Spectrum2D]] = {lab: [] for lab in self.labels}
        for r in self.records:
            groups.setdefault(r.label, []).append(r)
        return groups

    def subset(self, records: Iterable[Spectrum2D]) -> "Dataset":
        return Dataset(tuple(records), self.labels)

    def stack(self) -> np.ndarray:
        """Records as an ``(N, m, n)`` array."""
        return np.stack([r.data for r in self.records])

    def label_array(self) -> np.ndarray:
        index = {lab: i for i, lab in enumerate(self.labels)}
        return np.array([index[r.label] for r in self.records], dtype=np.int64)


def merge(*datasets: Dataset) -> Dataset:
    labels: list[str] = []
    for ds in datasets:
        labels.extend(lab for lab in ds.labels if lab not in labels)
    return Dataset(tuple(r for ds in datasets for r in ds.records), tuple(labels))


def _canonical(records: Iterable[Spectrum2D]) -> list[Spectrum2D]:
    return sorted(records, key=lambda r: r.id)


# ---------------------------------------------------------------------------
# SPB / CSV matrix files
# ---------------------------------------------------------------------------

def write_spb(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype="<f8")
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.size == 0:
        raise SpecError(f"SPB holds non-empty 2D matrices, got shape {arr.shape}")
    header = _SPB_HEADER.pack(SPB_MAGIC, SPB_DTYPE_F64, arr.shape[0], arr.shape[1], bytes(20))
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_spb(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < SPB_HEADER_SIZE:
        raise FormatError(f"{path}: truncated SPB header")
    magic, tag, m, n, reserved = _SPB_HEADER.unpack_from(raw)
    if magic != SPB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if tag != SPB_DTYPE_F64:
        raise FormatError(f"{path}: unsupported dtype tag {tag}")
    if reserved != bytes(20):
        raise FormatError(f"{path}: reserved header bytes are not zero")
    if m < 1 or n < 1:
        raise FormatError(f"{path}: empty matrix {m}x{n}")
    if len(raw) != SPB_HEADER_SIZE + 8 * m * n:
        raise FormatError(f"{path}: payload size does not match {m}x{n}")
    return np.frombuffer(raw, dtype="<f8", offset=SPB_HEADER_SIZE).reshape(m, n).astype(np.float64)


def load_matrix(path, label: str | None = None, scale_state: str = RAW) -> Spectrum2D:
    """Load an SPB or CSV file (``.csv`` suffix) as a spectrum named after the file stem."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        try:
            data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        if data.size == 0:
            raise FormatError(f"{path}: empty CSV")
    else:
        data = read_spb(path)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite value")
    return Spectrum2D(path.stem, data, label=label, scale_state=scale_state)


def save_matrix(spectrum: Spectrum2D, path) -> None:
    write_spb(path, spectrum.data)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def load_manifest(path) -> Dataset:
    """Read a manifest JSON; record paths are relative to the manifest file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "records" not in doc:
        raise FormatError(f"{path}: manifest needs a 'records' list")
    records = []
    for entry in doc["records"]:
        try:
            rec_path = path.parent / entry["path"]
            spec = load_matrix(rec_path, label=entry.get("label"),
                               scale_state=entry.get("scale_state", RAW))
            records.append(replace(spec, id=entry["id"],
                                   provenance=entry.get("provenance", ORIGINAL),
                                   source_id=entry.get("source_id")))
        except KeyError as exc:
            raise FormatError(f"{path}: record entry missing {exc}") from exc
    return Dataset(tuple(records), tuple(doc.get("labels", ())))


def save_manifest(ds: Dataset, out_dir, name: str = "manifest.json",
                  extra: dict | None = None, record_fields: dict | None = None) -> Path:
    """Write every record as ``<id>.spb`` next to a manifest JSON.

    ``record_fields`` maps record id to extra per-record keys (e.g. split tags).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in ds.records:
        fname = f"{r.id}.spb"
        save_matrix(r, out_dir / fname)
        entry = {"id": r.id, "path": fname, "label": r.label,
                 "provenance": r.provenance, "scale_state": r.scale_state}
        if r.source_id is not None:
            entry["source_id"] = r.source_id
        if record_fields and r.id in record_fields:
            entry.update(record_fields[r.id])
        entries.append(entry)
    doc = {"labels": list(ds.labels), "records": entries}
    if extra:
        doc.update(extra)
    target = out_dir / name
    target.write_text(json.dumps(doc, indent=2))
    return target


def manifest_field(path, key: str) -> dict[str, object]:
    """Per-record extra field from a manifest, keyed by record id."""
    doc = json.loads(Path(path).read_text())
    return {e["id"]: e[key] for e in doc["records"] if key in e}


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _val_count(size: int, val_fraction: float) -> int:
    k = math.ceil(val_fraction * size - 1e-12)
    if size >= 2:
        k = min(max(k, 1), size - 1)
    return k


def split_dataset(ds: Dataset, val_fraction: float, rng, stratify: bool = True,
                  strict: bool = False) -> tuple[Dataset, Dataset]:
    """Record-level train/validation split.

    Validation takes ``ceil(val_fraction * class_size)`` records of each class.
    If a class has fewer than two records the split falls back to a global
    shuffle (with a warning), or raises :class:`StratifyError` when ``strict``.
    """
    if not 0.0 < val_fraction < 1.0:
        raise SpecError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    rng = make_rng(rng)
    records = _canonical(ds.records)
    if stratify:
        groups = {}
        for r in records:
            groups.setdefault(r.label, []).append(r)
        small = sorted(str(lab) for lab, g in groups.items() if len(g) < 2)
        if small:
            msg = f"classes too small to stratify: {small}"
            if strict:
                raise StratifyError(msg)
            warnings.warn(msg + "; using a global split", stacklevel=2)
            stratify = False
    val_ids: set[str] = set()
    if stratify:
        for lab in sorted(groups, key=str):
            g = groups[lab]
            order = rng.permutation(len(g))
            val_ids.update(g[i].id for i in order[:_val_count(len(g), val_fraction)])
    else:
        order = rng.permutation(len(records))
        val_ids.update(records[i].id for i in order[:_val_count(len(records), val_fraction)])
    train = [r for r in ds.records if r.id not in val_ids]
    val = [r for r in ds.records if r.id in val_ids]
    return ds.subset(train), ds.subset(val)


def holdout_per_class(ds: Dataset, k: int, rng) -> tuple[Dataset, Dataset]:
    """Hold out exactly ``k`` original-provenance records per class.

    Returns ``(train, validation)``; synthetic and reconstructed records always
    land in the training half.
    """
    if k < 0:
        raise SpecError("k must be non-negative")
    rng = make_rng(rng)
    if k == 0:
        return ds, ds.subset(())
    originals: dict[str, list[Spectrum2D]] = {}
    for r in _canonical(ds.records):
        if r.provenance == ORIGINAL:
            originals.setdefault(r.label, []).append(r)
    val_ids: set[str] = set()
    for lab in ds.labels:
        pool = originals.get(lab, [])
        if not pool:
            continue
        if len(pool) <= k:
            raise HoldoutError(f"class {lab!r} has {len(pool)} original records, need more than {k}")
        order = rng.permutation(len(pool))
        val_ids.update(pool[i].id for i in order[:k])
    train = [r for r in ds.records if r.id not in val_ids]
    val = [r for r in ds.records if r.id in val_ids]
    return ds.subset(train), ds.subset(val)


def as_dataset(records: Sequence[Spectrum2D], labels: Sequence[str] = ()) -> Dataset:
    return Dataset(tuple(records), tuple(labels))
