"""Firing vectors over an evaluation pool and their normalized Hamming distance.

Two rule sets are compared by how often they disagree: each is evaluated
over one fixed, ordered pool of samples, and the score is the fraction of
positions where the binary detection outcomes differ.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .feature_model import Dataset, FeatureSchema
from .ripper import RuleSet, SchemaMismatchError

TAG_SET_A = "setA-positive"
TAG_SET_B = "setB-positive"
TAG_BENIGN = "benign"


@dataclass(frozen=True)
class EvaluationPool:
    """Fixed, ordered sample set over which firing vectors are computed."""

    schema: FeatureSchema
    samples: np.ndarray
    origins: tuple[str, ...]

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "origins", tuple(self.origins))
        if samples.shape[0] == 0:
            raise ValueError("evaluation pool must be non-empty")
        if samples.shape[0] != len(self.origins):
            raise ValueError("one origin tag per sample required")
        if samples.shape[1] != len(self.schema):
            raise ValueError("pool samples do not match schema arity")

    def __len__(self) -> int:
        return self.samples.shape[0]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.schema.fingerprint().encode())
        h.update(np.ascontiguousarray(self.samples).tobytes())
        h.update("\x1f".join(self.origins).encode())
        return h.hexdigest()[:12]


def build_pool(set_a: Dataset, set_b: Dataset | None, benign: Dataset | None) -> EvaluationPool:
    """Canonical pool: set A positives, then set B positives, then benign."""
    parts = [(set_a, TAG_SET_A)]
    if set_b is not None:
        parts.append((set_b, TAG_SET_B))
    if benign is not None:
        parts.append((benign, TAG_BENIGN))
    schema = set_a.schema
    for ds, _ in parts[1:]:
        if ds.schema.fingerprint() != schema.fingerprint():
            raise SchemaMismatchError("pool members must share one schema")
    samples = np.vstack([ds.samples for ds, _ in parts])
    origins = tuple(tag for ds, tag in parts for _ in range(len(ds)))
    return EvaluationPool(schema, samples, origins)


@dataclass(frozen=True)
class FiringVector:
    """Binary detections of one rule set over one pool, position-aligned."""

    bits: np.ndarray
    pool_fingerprint: str

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or bits.size < 1:
            raise ValueError("firing vector must be a non-empty 1-D bit array")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("firing vector entries must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return self.bits.size


def firing_vector(ruleset: RuleSet, pool: EvaluationPool) -> FiringVector:
    """bits[i] = 1 iff the rule set detects pool sample i."""
    if ruleset.schema_fingerprint != pool.schema.fingerprint():
        raise SchemaMismatchError(
            f"rule set schema {ruleset.schema_fingerprint} != pool schema {pool.schema.fingerprint()}"
        )
    return FiringVector(ruleset.fires(pool.samples).astype(np.uint8), pool.fingerprint())


def hamming_distance(x: FiringVector, y: FiringVector) -> float:
    """Fraction of positions where the two firing vectors differ."""
    if x.pool_fingerprint != y.pool_fingerprint:
        raise ValueError("vectors from different pools")
    if len(x) != len(y):
        raise ValueError("firing vectors differ in length")
    return float(np.count_nonzero(x.bits != y.bits)) / len(x)


def disagreements(x: FiringVector, y: FiringVector) -> int:
    if x.pool_fingerprint != y.pool_fingerprint:
        raise ValueError("vectors from different pools")
    return int(np.count_nonzero(x.bits != y.bits))


def ruleset_distance(a: RuleSet, b: RuleSet, pool: EvaluationPool) -> float:
    """Drift score: Hamming distance between the two firing vectors."""
    return hamming_distance(firing_vector(a, pool), firing_vector(b, pool))
