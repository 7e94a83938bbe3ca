"""
Dataset files, standardization and split bookkeeping.

A data directory holds:
  features.bin    GSMX binary: magic, version, n, d (little-endian uint32),
                  n int32 labels, then n*d float64 features row-major
  attributes.txt  one ``class_id,v1,...,va`` line per class
  split.txt       ``seen:``/``unseen:`` class ids and
                  ``train_seen:``/``test_seen:``/``test_unseen:`` row indices
  truth.json      optional benchmark ground truth
"""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.semantics import AttributeTable
from app.errors import ConfigError, IntegrityError, ParseError
from app.logging_config import logger
from app.models import BenchmarkTruth

FEATURES_FILE = "features.bin"
ATTRIBUTES_FILE = "attributes.txt"
SPLIT_FILE = "split.txt"
TRUTH_FILE = "truth.json"

FEATURE_MAGIC = b"GSMX"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIII")

_CLASS_KEYS = ("seen", "unseen")
_INDEX_KEYS = ("train_seen", "test_seen", "test_unseen")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Split:
    """Disjoint row-index lists."""
    train_seen: np.ndarray
    test_seen: np.ndarray
    test_unseen: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {key: getattr(self, key) for key in _INDEX_KEYS}


@dataclass(frozen=True)
class Standardization:
    """Per-dimension statistics of the train_seen rows; constant dims are dropped."""
    mean: np.ndarray
    std: np.ndarray
    kept_dims: np.ndarray
    original_dim: int

    @property
    def dropped_dims(self) -> List[int]:
        return sorted(set(range(self.original_dim)) - set(self.kept_dims.tolist()))

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return (raw[:, self.kept_dims] - self.mean) / self.std

    def invert(self, standardized: np.ndarray) -> np.ndarray:
        """Map back to raw units; only valid when no dimension was dropped."""
        return standardized * self.std + self.mean

    @classmethod
    def fit(cls, raw: np.ndarray) -> "Standardization":
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        kept = np.flatnonzero(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
        if len(kept) < raw.shape[1]:
            dropped = sorted(set(range(raw.shape[1])) - set(kept.tolist()))
            logger.warning(f"Dropping constant feature dimensions {dropped}")
        return cls(mean=mean[kept], std=std[kept], kept_dims=kept, original_dim=raw.shape[1])


@dataclass(frozen=True)
class Dataset:
    """Standardized labeled features with attribute linkage and splits."""
    features: np.ndarray
    labels: np.ndarray
    table: AttributeTable
    split: Split
    standardization: Standardization

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        index = np.asarray(index, dtype=np.int64)
        return self.features[index], self.labels[index]

    def raw_features(self) -> np.ndarray:
        if self.standardization.dropped_dims:
            raise IntegrityError("raw features unavailable: dimensions were dropped during standardization")
        return self.standardization.invert(self.features)


def build_dataset(raw: np.ndarray, labels: np.ndarray, table: AttributeTable, split: Split) -> Dataset:
    """Validate integrity and standardize with train_seen statistics only."""
    raw = np.asarray(raw, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_integrity(raw, labels, table, split)
    if len(split.train_seen) == 0:
        raise IntegrityError("split has no train_seen rows")
    standardization = Standardization.fit(raw[split.train_seen])
    features = standardization.apply(raw)
    features.flags.writeable = False
    labels.flags.writeable = False
    return Dataset(features=features, labels=labels, table=table, split=split, standardization=standardization)


def _check_integrity(raw: np.ndarray, labels: np.ndarray, table: AttributeTable, split: Split) -> None:
    n = len(labels)
    if raw.ndim != 2 or raw.shape[0] != n:
        raise IntegrityError(f"feature matrix {raw.shape} does not match {n} labels")
    known = set(table.class_ids)
    missing = sorted(set(labels.tolist()) - known)
    if missing:
        raise IntegrityError(f"labels without attribute rows: {missing}")
    seen, unseen = set(table.seen_ids), set(table.unseen_ids)
    taken: Dict[int, str] = {}
    for key, index in split.as_dict().items():
        if index.size and (index.min() < 0 or index.max() >= n):
            raise IntegrityError(f"{key} has indices outside [0, {n})")
        for i in index.tolist():
            if i in taken:
                raise IntegrityError(f"index {i} listed in both {taken[i]} and {key}")
            taken[i] = key
        allowed = unseen if key == "test_unseen" else seen
        wrong = sorted(set(labels[index].tolist()) - allowed)
        if wrong:
            kind = "unseen" if key == "test_unseen" else "seen"
            raise IntegrityError(f"{key} contains labels {wrong} that are not {kind} classes")


# --- features.bin ----------------------------------------------------

def write_features(path: PathLike, features: np.ndarray, labels: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f8")
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, d))
        fh.write(np.asarray(labels, dtype="<i4").tobytes())
        fh.write(features.tobytes())


def read_features(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _FEATURE_HEADER.size:
        raise ParseError(str(path), "file too short for GSMX header")
    magic, version, n, d = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise ParseError(str(path), f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise ParseError(str(path), f"unsupported GSMX version {version}")
    expected = _FEATURE_HEADER.size + 4 * n + 8 * n * d
    if len(data) != expected:
        raise ParseError(str(path), f"payload is {len(data)} bytes, header implies {expected}")
    offset = _FEATURE_HEADER.size
    labels = np.frombuffer(data, dtype="<i4", count=n, offset=offset).astype(np.int64)
    features = np.frombuffer(data, dtype="<f8", count=n * d, offset=offset + 4 * n).reshape(n, d)
    return features.astype(np.float64), labels


# --- attributes.txt / split.txt --------------------------------------

def _text_lines(path: PathLike) -> Iterator[Tuple[int, str]]:
    """Yield (line number, stripped text) for non-blank, non-comment lines."""
    with open(path, "rb") as fh:
        for line_no, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8").strip()
            except UnicodeDecodeError as e:
                raise ParseError(str(path), f"invalid UTF-8 at byte {e.start}", line_no)
            if line and not line.startswith("#"):
                yield line_no, line


def read_attributes(path: PathLike) -> Tuple[List[int], np.ndarray]:
    ids: List[int] = []
    rows: List[List[float]] = []
    for line_no, line in _text_lines(path):
        parts = line.split(",")
        try:
            ids.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        except ValueError as e:
            raise ParseError(str(path), f"malformed attribute row: {e}", line_no)
        if not rows[-1]:
            raise ParseError(str(path), "attribute row has no values", line_no)
        if len(rows[-1]) != len(rows[0]):
            raise ParseError(str(path), f"expected {len(rows[0])} values, got {len(rows[-1])}", line_no)
    if not ids:
        raise ParseError(str(path), "no attribute rows")
    return ids, np.array(rows, dtype=np.float64)


def write_attributes(path: PathLike, class_ids: Sequence[int], attributes: np.ndarray) -> None:
    lines = [",".join([str(c)] + [repr(float(v)) for v in row]) for c, row in zip(class_ids, attributes)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split(path: PathLike) -> Dict[str, List[int]]:
    entries: Dict[str, List[int]] = {}
    for line_no, line in _text_lines(path):
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep or key not in _CLASS_KEYS + _INDEX_KEYS:
            raise ParseError(str(path), f"expected one of {_CLASS_KEYS + _INDEX_KEYS}, got '{key}'", line_no)
        if key in entries:
            raise ParseError(str(path), f"duplicate '{key}' line", line_no)
        try:
            entries[key] = [int(tok) for tok in rest.split()]
        except ValueError as e:
            raise ParseError(str(path), f"malformed id list: {e}", line_no)
    absent = [k for k in _CLASS_KEYS + _INDEX_KEYS if k not in entries]
    if absent:
        raise ParseError(str(path), f"missing lines: {absent}")
    for key, values in entries.items():
        if len(set(values)) != len(values):
            raise IntegrityError(f"{path}: '{key}' lists an entry twice")
    return entries


def write_split(path: PathLike, table: AttributeTable, split: Split) -> None:
    lines = [
        "seen: " + " ".join(map(str, table.seen_ids)),
        "unseen: " + " ".join(map(str, table.unseen_ids)),
    ]
    lines += [f"{key}: " + " ".join(map(str, index.tolist())) for key, index in split.as_dict().items()]
    Path(path).write_text("\n".join(line.rstrip() for line in lines) + "\n", encoding="utf-8")


def _make_table(ids: List[int], attrs: np.ndarray, entries: Dict[str, List[int]]) -> AttributeTable:
    seen, unseen = set(entries["seen"]), set(entries["unseen"])
    both = sorted(seen & unseen)
    if both:
        raise IntegrityError(f"classes listed as both seen and unseen: {both}")
    unknown = sorted((seen | unseen) - set(ids))
    if unknown:
        raise IntegrityError(f"split names classes without attribute rows: {unknown}")
    unassigned = sorted(set(ids) - seen - unseen)
    if unassigned:
        raise IntegrityError(f"classes in neither seen nor unseen: {unassigned}")
    try:
        return AttributeTable(class_ids=tuple(ids), attributes=attrs, seen_mask=np.array([c in seen for c in ids]))
    except Exception as e:
        raise IntegrityError(f"invalid attribute table: {e}")


# --- directory level --------------------------------------------------

def load_dataset(features_path: PathLike, attributes_path: PathLike, split_path: PathLike) -> Dataset:
    for p in (features_path, attributes_path, split_path):
        if not Path(p).is_file():
            raise ConfigError(f"data file not found: {p}")
    raw, labels = read_features(features_path)
    ids, attrs = read_attributes(attributes_path)
    entries = read_split(split_path)
    table = _make_table(ids, attrs, entries)
    split = Split(**{k: np.array(entries[k], dtype=np.int64) for k in _INDEX_KEYS})
    dataset = build_dataset(raw, labels, table, split)
    logger.info(
        f"Loaded {len(labels)} samples, d={dataset.dim}, "
        f"{len(table.seen_ids)} seen / {len(table.unseen_ids)} unseen classes"
    )
    return dataset


def load_data_dir(data_dir: PathLike) -> Dataset:
    root = Path(data_dir)
    if not root.is_dir():
        raise ConfigError(f"data directory not found: {root}")
    return load_dataset(root / FEATURES_FILE, root / ATTRIBUTES_FILE, root / SPLIT_FILE)


def save_dataset(dataset: Dataset, data_dir: PathLike, truth: Optional[BenchmarkTruth] = None) -> None:
    """Write features (raw units), attributes, split and optional ground truth."""
    root = Path(data_dir)
    root.mkdir(parents=True, exist_ok=True)
    write_features(root / FEATURES_FILE, dataset.raw_features(), dataset.labels)
    write_attributes(root / ATTRIBUTES_FILE, dataset.table.class_ids, dataset.table.attributes)
    write_split(root / SPLIT_FILE, dataset.table, dataset.split)
    if truth is not None:
        save_truth(root / TRUTH_FILE, truth)
    logger.info(f"Wrote dataset to {root}")


def save_truth(path: PathLike, truth: BenchmarkTruth) -> None:
    Path(path).write_text(truth.model_dump_json(indent=2), encoding="utf-8")


def load_truth(path: PathLike) -> Optional[BenchmarkTruth]:
    path = Path(path)
    if not path.is_file():
        return None
    return BenchmarkTruth.model_validate_json(path.read_text(encoding="utf-8"))
