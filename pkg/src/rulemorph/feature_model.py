"""Feature schemas, dataset containers, and tabular ingestion.

A schema fixes the vector layout: feature order is significant and stable
across serialization. Numeric features may carry bin edges (see
:func:`discretize`) so downstream rule induction can form interval
conditions.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"

LABEL_COLUMN = "__label__"
ORIGIN_COLUMN = "__origin__"


class DataFormatError(ValueError):
    """Raised for malformed input files or rows."""


def canonical_json(obj) -> str:
    """Compact JSON with sorted keys; floats keep shortest round-trip repr."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = NUMERIC
    bin_edges: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.bin_edges is not None:
            edges = tuple(float(e) for e in self.bin_edges)
            if not edges:
                raise ValueError(f"feature {self.name!r}: bin_edges must be non-empty or None")
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError(f"feature {self.name!r}: bin_edges must be strictly ascending")
            object.__setattr__(self, "bin_edges", edges)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature layout shared by every vector of a dataset."""

    features: tuple[Feature, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index_of(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "features": [
                {
                    "name": f.name,
                    "kind": f.kind,
                    "bin_edges": list(f.bin_edges) if f.bin_edges is not None else None,
                }
                for f in self.features
            ]
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FeatureSchema":
        feats = []
        for entry in obj["features"]:
            edges = entry.get("bin_edges")
            feats.append(
                Feature(
                    name=entry["name"],
                    kind=entry.get("kind", NUMERIC),
                    bin_edges=tuple(edges) if edges else None,
                )
            )
        return cls(tuple(feats))

    def fingerprint(self) -> str:
        """12-hex digest binding rule sets and pools to one layout."""
        digest = hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()
        return digest[:12]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def all_numeric(cls, names: list[str]) -> "FeatureSchema":
        return cls(tuple(Feature(n) for n in names))

    def subset(self, indices: list[int]) -> "FeatureSchema":
        return FeatureSchema(tuple(self.features[i] for i in indices))


POSITIVE = 1
BENIGN = 0


@dataclass
class Dataset:
    """Sample matrix bound to a schema, one label per row."""

    schema: FeatureSchema
    samples: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int, POSITIVE or BENIGN
    family_name: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples.reshape(0, len(self.schema)) if self.samples.size == 0 else self.samples.reshape(1, -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.shape[0] != self.labels.shape[0]:
            raise ValueError("samples and labels must have the same length")
        if self.samples.shape[1] != len(self.schema):
            raise ValueError(
                f"vector arity {self.samples.shape[1]} does not match schema length {len(self.schema)}"
            )

    def __len__(self) -> int:
        return self.samples.shape[0]

    def positives(self) -> "Dataset":
        return self.filter(self.labels == POSITIVE)

    def negatives(self) -> "Dataset":
        return self.filter(self.labels == BENIGN)

    def filter(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.schema, self.samples[mask], self.labels[mask], self.family_name)

    def take(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.schema, self.samples[indices], self.labels[indices], self.family_name)

    def project(self, schema: FeatureSchema) -> "Dataset":
        """Restrict columns to the given sub-schema (matched by name)."""
        idx = [self.schema.index_of(f.name) for f in schema]
        return Dataset(schema, self.samples[:, idx], self.labels.copy(), self.family_name)

    def with_schema(self, schema: FeatureSchema) -> "Dataset":
        """Rebind to a schema with identical layout (e.g. after discretize)."""
        if schema.names != self.schema.names:
            raise ValueError("schema layout mismatch")
        return Dataset(schema, self.samples, self.labels, self.family_name)


def _parse_scalar(text: str, row_num: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"row {row_num}: unparsable scalar {text!r}") from None


def _load_csv(path: Path, schema: FeatureSchema | None, default_label: int) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    reader = csv.reader(lines)
    header = next(reader)
    label_idx = None
    names = []
    for i, col in enumerate(header):
        if col == LABEL_COLUMN:
            label_idx = i
        else:
            names.append(col)
    if schema is None:
        schema = FeatureSchema.all_numeric(names)
    elif schema.names != names:
        raise DataFormatError(f"{path}: header does not match provided schema")

    rows, labels = [], []
    arity = len(header)
    for row_num, row in enumerate(reader, start=2):
        if len(row) != arity:
            raise DataFormatError(f"row {row_num}: arity {len(row)} ≠ {arity}")
        values = []
        label = default_label
        for i, cell in enumerate(row):
            if i == label_idx:
                label = int(_parse_scalar(cell, row_num))
            else:
                values.append(_parse_scalar(cell, row_num))
        rows.append(values)
        labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return Dataset(schema, np.array(rows), np.array(labels), family_name=path.stem)


def _load_jsonl(path: Path, schema: FeatureSchema | None, default_label: int) -> Dataset:
    rows, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for row_num, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"row {row_num}: invalid JSON ({exc.msg})") from None
            rows.append([float(v) for v in obj["features"]])
            labels.append(int(obj.get("label", default_label)))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    arity = len(rows[0])
    for row_num, r in enumerate(rows, start=1):
        if len(r) != arity:
            raise DataFormatError(f"row {row_num}: arity {len(r)} ≠ {arity}")
    if schema is None:
        schema = FeatureSchema.all_numeric([f"f{i}" for i in range(arity)])
    elif len(schema) != arity:
        raise DataFormatError(f"{path}: arity {arity} does not match schema length {len(schema)}")
    return Dataset(schema, np.array(rows), np.array(labels), family_name=path.stem)


def load_dataset(
    path: str | Path,
    schema: FeatureSchema | None = None,
    default_label: int = POSITIVE,
) -> Dataset:
    """Load a CSV (header row) or JSONL sample file.

    Rows keep file order. A ``__label__`` column/key overrides
    ``default_label``. Lines starting with ``#`` are metadata and skipped.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: no such file")
    if path.suffix.lower() == ".jsonl":
        return _load_jsonl(path, schema, default_label)
    return _load_csv(path, schema, default_label)


def save_dataset(dataset: Dataset, path: str | Path, meta: str | None = None) -> None:
    """Write a dataset as CSV with a trailing ``__label__`` column."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset.schema.names + [LABEL_COLUMN])
        for row, label in zip(dataset.samples, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def _partition_entropy(labels: np.ndarray) -> float:
    n = labels.size
    if n == 0:
        return 0.0
    p = np.count_nonzero(labels) / n
    h = 0.0
    for q in (p, 1.0 - p):
        if q > 0.0:
            h -= q * math.log2(q)
    return h


def information_gain(values: np.ndarray, labels: np.ndarray, kind: str, bins: int = 10) -> float:
    """Gain of the class split over the partition induced by one feature.

    Numeric features are partitioned by quantile bins, categoricals by value.
    """
    n = values.size
    if kind == CATEGORICAL:
        parts = values
    else:
        edges = _quantile_edges(values, bins)
        if not edges:
            return 0.0
        parts = np.searchsorted(np.array(edges), values, side="left")
    base = _partition_entropy(labels)
    cond = 0.0
    for part in np.unique(parts):
        mask = parts == part
        cond += (np.count_nonzero(mask) / n) * _partition_entropy(labels[mask])
    return base - cond


def select_features(positives: Dataset, benign: Dataset, k: int) -> FeatureSchema:
    """Keep the k features most informative for the positive/benign split.

    Output preserves the original feature order; ranking ties break toward
    the lower original index, so the result is deterministic.
    """
    if positives.schema.names != benign.schema.names:
        raise ValueError("datasets must share one schema")
    d = len(positives.schema)
    if not 1 <= k <= d:
        raise ValueError(f"k={k} outside [1, {d}]")
    values = np.vstack([positives.samples, benign.samples])
    labels = np.concatenate([np.ones(len(positives), dtype=int), np.zeros(len(benign), dtype=int)])
    gains = [
        information_gain(values[:, i], labels, positives.schema.features[i].kind)
        for i in range(d)
    ]
    ranked = sorted(range(d), key=lambda i: (-gains[i], i))
    keep = sorted(ranked[:k])
    return positives.schema.subset(keep)


def split_half(dataset: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded random partition into halves of size ceil(n/2) and floor(n/2)."""
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cut = (n + 1) // 2
    return dataset.take(perm[:cut]), dataset.take(perm[cut:])


def _quantile_edges(values: np.ndarray, bins: int) -> list[float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        return []
    qs = np.arange(1, bins) / bins
    edges = np.unique(np.quantile(values, qs))
    return [float(e) for e in edges]


def discretize(dataset: Dataset, bins: int = 10) -> FeatureSchema:
    """Attach empirical quantile bin edges to every numeric feature.

    Duplicate quantiles collapse; a constant feature gets no edges and is
    never split. Categorical features pass through unchanged.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    feats = []
    for i, feat in enumerate(dataset.schema):
        if feat.kind == CATEGORICAL:
            feats.append(feat)
            continue
        edges = _quantile_edges(dataset.samples[:, i], bins)
        feats.append(replace(feat, bin_edges=tuple(edges) if edges else None))
    return FeatureSchema(tuple(feats))


def concat(datasets: list[Dataset]) -> Dataset:
    """Stack datasets sharing one schema, preserving order."""
    if not datasets:
        raise ValueError("nothing to concatenate")
    first = datasets[0].schema
    for ds in datasets[1:]:
        if ds.schema.names != first.names:
            raise ValueError("datasets must share one schema")
    return Dataset(
        first,
        np.vstack([ds.samples for ds in datasets]),
        np.concatenate([ds.labels for ds in datasets]),
        family_name=datasets[0].family_name,
    )
