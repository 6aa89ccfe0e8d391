"""Drift calibration, detection, and the trials-by-dimensionality harness.

Calibration fits rule sets on random halves of the original family
(within-family distances, the no-drift null model) and on the evolved
family (cross distances), then places the decision threshold at the
arithmetic mean of the two mean distances. Deployment detection flags
drift when a new distance strictly exceeds that threshold; the distance
itself is the drift magnitude.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distance import EvaluationPool, build_pool, disagreements, firing_vector, ruleset_distance
from .feature_model import Dataset, concat, discretize, select_features, split_half
from .ripper import RuleSet, fit

THREADS_ENV = "RULEMORPH_THREADS"
DEFAULT_DIMS = (3, 5, 10, 15, 25, 50, 75, 100)
DEFAULT_TRIALS = 10


class DegenerateCalibrationError(RuntimeError):
    """Every calibration trial produced empty rule sets on both sides."""


@dataclass(frozen=True)
class DriftVerdict:
    distance: float
    threshold: float
    drifted: bool
    magnitude: float
    pool_size: int = 0
    disagreement_count: int = 0

    def __post_init__(self):
        if self.drifted != (self.distance > self.threshold):
            raise ValueError("drifted must equal (distance > threshold)")
        if self.magnitude != self.distance:
            raise ValueError("magnitude must equal the distance")

    def to_obj(self) -> dict:
        return {
            "distance": self.distance,
            "threshold": self.threshold,
            "drifted": self.drifted,
            "magnitude": self.magnitude,
            "pool_size": self.pool_size,
            "disagreements": self.disagreement_count,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "DriftVerdict":
        return cls(
            distance=obj["distance"],
            threshold=obj["threshold"],
            drifted=obj["drifted"],
            magnitude=obj["magnitude"],
            pool_size=obj.get("pool_size", 0),
            disagreement_count=obj.get("disagreements", 0),
        )


@dataclass
class Calibration:
    family: str
    dimensionality: int
    within_distances: list[float]
    cross_distances: list[float]
    threshold: float
    seeds: list[int]
    degenerate_trials: list[int] = field(default_factory=list)

    @property
    def mean_within(self) -> float:
        return float(np.mean(self.within_distances))

    @property
    def mean_cross(self) -> float:
        return float(np.mean(self.cross_distances))

    def to_obj(self) -> dict:
        return {
            "family": self.family,
            "dimensionality": self.dimensionality,
            "within_distances": self.within_distances,
            "cross_distances": self.cross_distances,
            "threshold": self.threshold,
            "seeds": self.seeds,
            "degenerate_trials": self.degenerate_trials,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "Calibration":
        return cls(**obj)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_obj(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Calibration":
        return cls.from_obj(json.loads(Path(path).read_text()))


def threshold_from(within: list[float], cross: list[float]) -> float:
    """Arithmetic mean of the two mean distances."""
    return (float(np.mean(within)) + float(np.mean(cross))) / 2.0


def calibrate(
    original: Dataset,
    evolved: Dataset,
    benign: Dataset,
    trials: int,
    base_seed: int,
) -> Calibration:
    """Per trial: split the original family, fit rules on each half and on
    a seeded half of the evolved family, and collect within/cross distances.

    The evolved side is fit on the complement half of its own seeded
    split: when evolved is an exact copy of the original, that half equals
    set2, so within and cross collapse to the same comparison and the
    threshold sits right on the no-drift distance distribution. A trial
    whose compared rule sets are both empty carries no signal and is
    excluded; if every trial degenerates, calibration fails.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    fp = original.schema.fingerprint()
    if evolved.schema.fingerprint() != fp or benign.schema.fingerprint() != fp:
        raise ValueError("all datasets must share one schema")
    if len(evolved) == 0:
        raise ValueError("evolved dataset is empty")
    within, cross, seeds, degenerate = [], [], [], []
    for t in range(trials):
        seed = base_seed + t
        set1, set2 = split_half(original, seed)
        evolved_half = split_half(evolved, seed)[1] if len(evolved) >= 2 else evolved
        rules1 = fit(set1, benign, seed)
        rules2 = fit(set2, benign, seed)
        rules_evolved = fit(evolved_half, benign, seed)
        if (not rules1.rules and not rules2.rules) or (not rules1.rules and not rules_evolved.rules):
            degenerate.append(t)
            continue
        within.append(ruleset_distance(rules1, rules2, build_pool(set1, set2, benign)))
        cross.append(
            ruleset_distance(rules1, rules_evolved, build_pool(set1, evolved_half, benign))
        )
        seeds.append(seed)
    if not within:
        raise DegenerateCalibrationError(
            f"all {trials} calibration trials degenerate for family {original.family_name!r}"
        )
    return Calibration(
        family=original.family_name,
        dimensionality=len(original.schema),
        within_distances=within,
        cross_distances=cross,
        threshold=threshold_from(within, cross),
        seeds=seeds,
        degenerate_trials=degenerate,
    )


def detect(
    new_rules: RuleSet,
    reference_rules: RuleSet,
    pool: EvaluationPool,
    threshold: float,
) -> DriftVerdict:
    """Three-step deployment rule: distance strictly above threshold = drift."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    x = firing_vector(new_rules, pool)
    y = firing_vector(reference_rules, pool)
    diff = disagreements(x, y)
    d = diff / len(pool)
    return DriftVerdict(
        distance=d,
        threshold=threshold,
        drifted=d > threshold,
        magnitude=d,
        pool_size=len(pool),
        disagreement_count=diff,
    )


@dataclass
class CellResult:
    family: str
    k: int
    mean_within: float
    mean_cross: float
    threshold: float
    errors: int
    missed: int
    false_alarms: int
    trials: int
    degenerate: bool = False

    def to_obj(self) -> dict:
        return {
            "family": self.family,
            "k": self.k,
            "mean_within": self.mean_within,
            "mean_cross": self.mean_cross,
            "threshold": self.threshold,
            "errors": self.errors,
            "missed": self.missed,
            "false_alarms": self.false_alarms,
            "trials": self.trials,
            "degenerate": self.degenerate,
        }


@dataclass
class ExperimentReport:
    cells: list[CellResult]
    overall_accuracy: float
    dims: list[int]
    trials: int
    base_seed: int

    def to_obj(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "dims": self.dims,
            "trials": self.trials,
            "base_seed": self.base_seed,
            "cells": [c.to_obj() for c in self.cells],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), indent=2, sort_keys=True) + "\n"

    def curves_csv(self) -> str:
        lines = ["family,k,mean_within,mean_cross,threshold"]
        for c in self.cells:
            lines.append(
                f"{c.family},{c.k},{c.mean_within!r},{c.mean_cross!r},{c.threshold!r}"
            )
        return "\n".join(lines) + "\n"

    def errors_csv(self) -> str:
        lines = ["family,k,errors,trials"]
        for c in self.cells:
            lines.append(f"{c.family},{c.k},{c.errors},{c.trials}")
        return "\n".join(lines) + "\n"


def _run_cell(
    original: Dataset,
    evolved: Dataset,
    benign: Dataset,
    k: int,
    trials: int,
    cell_seed: int,
    bins: int,
) -> CellResult:
    schema_k = select_features(original, benign, k)
    orig_k = original.project(schema_k)
    evo_k = evolved.project(schema_k)
    ben_k = benign.project(schema_k)
    binned = discretize(concat([orig_k, ben_k]), bins)
    orig_k = orig_k.with_schema(binned)
    evo_k = evo_k.with_schema(binned)
    ben_k = ben_k.with_schema(binned)

    name = original.family_name
    try:
        cal = calibrate(orig_k, evo_k, ben_k, trials, cell_seed)
    except DegenerateCalibrationError:
        return CellResult(name, k, 0.0, 0.0, 0.0, 0, 0, 0, trials, degenerate=True)

    errors = missed = false_alarms = 0
    for t in range(trials):
        seed = cell_seed + 5000 + t
        set1, set2 = split_half(orig_k, seed)
        evolved_half = split_half(evo_k, seed)[1] if len(evo_k) >= 2 else evo_k
        reference = fit(set1, ben_k, seed)
        fresh_evolved = fit(evolved_half, ben_k, seed)
        fresh_within = fit(set2, ben_k, seed)
        drift_verdict = detect(
            fresh_evolved, reference, build_pool(set1, evolved_half, ben_k), cal.threshold
        )
        null_verdict = detect(
            fresh_within, reference, build_pool(set1, set2, ben_k), cal.threshold
        )
        if not drift_verdict.drifted:
            missed += 1
        if null_verdict.drifted:
            false_alarms += 1
        if not drift_verdict.drifted or null_verdict.drifted:
            errors += 1
    return CellResult(
        family=name,
        k=k,
        mean_within=cal.mean_within,
        mean_cross=cal.mean_cross,
        threshold=cal.threshold,
        errors=errors,
        missed=missed,
        false_alarms=false_alarms,
        trials=trials,
    )


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        return 1
    if value == 0:
        return os.cpu_count() or 1
    return max(value, 1)


def run_experiment(
    families: list[tuple[Dataset, Dataset]],
    benign: Dataset,
    dims: list[int] | tuple[int, ...] = DEFAULT_DIMS,
    trials: int = DEFAULT_TRIALS,
    base_seed: int = 0,
    bins: int = 10,
) -> ExperimentReport:
    """Full harness: for every (family, dimensionality) cell, calibrate and
    score ``trials`` drift/no-drift decision pairs against ground truth.

    A trial errs when the evolved re-fit is not flagged or the within-family
    re-split is. Cells are independent given their derived seeds; the
    RULEMORPH_THREADS env var caps parallel cell execution (0 = auto).
    """
    if not dims:
        raise ValueError("dims must be non-empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    jobs = []
    for fi, (original, evolved) in enumerate(families):
        for ki, k in enumerate(dims):
            cell_seed = base_seed + 10_000 * fi + 100 * ki
            jobs.append((original, evolved, benign, k, trials, cell_seed, bins))
    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(lambda args: _run_cell(*args), jobs))
    else:
        cells = [_run_cell(*args) for args in jobs]
    scored = [c for c in cells if not c.degenerate]
    total_errors = sum(c.errors for c in scored)
    total_decisions = sum(c.trials for c in scored)
    accuracy = 1.0 - total_errors / total_decisions if total_decisions else 0.0
    return ExperimentReport(
        cells=cells,
        overall_accuracy=accuracy,
        dims=list(dims),
        trials=trials,
        base_seed=base_seed,
    )
