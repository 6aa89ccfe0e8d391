"""Feature-space evolution of a family against a target rule set.

Emulates the two-phase adversarial loop of bandit-driven binary
manipulation at desk scale: an attack phase Thompson-samples manipulation
operators and applies them to a feature vector until the target rule set
stops firing (or a budget runs out), then a minimization phase strips
every operator whose removal keeps the evasion intact.

Operators are archetypes of classic PE evasions (overlay append, section
add/rename, checksum/debug zeroing, histogram shifts, import perturbation)
bound to concrete schema features through their parameters, so the same
vocabulary drives both PE-derived and synthetic schemas. Every applied
operator records its seed, making traces exactly replayable.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .feature_model import Dataset, POSITIVE
from .ripper import RuleSet, predict

OP_APPEND_OVERLAY = "append_overlay"
OP_ADD_SECTION = "add_section"
OP_RENAME_SECTION = "rename_section"
OP_ZERO_CHECKSUM = "zero_checksum"
OP_ZERO_DEBUG = "zero_debug"
OP_SHIFT_HISTOGRAM = "shift_histogram"
OP_PERTURB_IMPORTS = "perturb_imports"

OP_IDS = frozenset(
    {
        OP_APPEND_OVERLAY,
        OP_ADD_SECTION,
        OP_RENAME_SECTION,
        OP_ZERO_CHECKSUM,
        OP_ZERO_DEBUG,
        OP_SHIFT_HISTOGRAM,
        OP_PERTURB_IMPORTS,
    }
)

DEFAULT_BUDGET = 60
DEFAULT_INTENSITY = 1.0


@dataclass(frozen=True)
class ManipulationOp:
    """One manipulation archetype bound to schema features via params."""

    id: str
    params: dict
    intensity: float = DEFAULT_INTENSITY
    seed: int | None = None  # recorded at application time for replay

    def __post_init__(self):
        if self.id not in OP_IDS:
            raise ValueError(f"unknown manipulation op {self.id!r}")
        if self.intensity < 0:
            raise ValueError("intensity must be >= 0")

    def to_obj(self) -> dict:
        return {"id": self.id, "params": self.params, "intensity": self.intensity, "seed": self.seed}

    @classmethod
    def from_obj(cls, obj: dict) -> "ManipulationOp":
        return cls(obj["id"], obj["params"], obj.get("intensity", DEFAULT_INTENSITY), obj.get("seed"))


@dataclass
class EvolutionTrace:
    sample_index: int
    applied_ops: list[ManipulationOp]
    evaded: bool
    ops_before_minimization: int

    def to_obj(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "evaded": self.evaded,
            "ops_before_minimization": self.ops_before_minimization,
            "applied_ops": [op.to_obj() for op in self.applied_ops],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True)

    @classmethod
    def from_obj(cls, obj: dict) -> "EvolutionTrace":
        return cls(
            sample_index=obj["sample_index"],
            applied_ops=[ManipulationOp.from_obj(o) for o in obj["applied_ops"]],
            evaded=obj["evaded"],
            ops_before_minimization=obj["ops_before_minimization"],
        )


@dataclass
class BanditState:
    """Beta posterior counters, one arm per manipulation op."""

    ops: tuple[ManipulationOp, ...]
    successes: np.ndarray = field(default=None)  # type: ignore[assignment]
    failures: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.ops = tuple(self.ops)
        if not self.ops:
            raise ValueError("bandit needs at least one op")
        if self.successes is None:
            self.successes = np.zeros(len(self.ops))
        if self.failures is None:
            self.failures = np.zeros(len(self.ops))

    def sample_arm(self, rng: np.random.Generator) -> int:
        theta = rng.beta(1.0 + self.successes, 1.0 + self.failures)
        return int(np.argmax(theta))

    def update(self, arm: int, success: bool) -> None:
        if success:
            self.successes[arm] += 1
        else:
            self.failures[arm] += 1


def _indices(params: dict, key: str) -> list[int]:
    return [int(i) for i in params.get(key, [])]


def _check_bounds(indices: list[int], dim: int) -> None:
    for i in indices:
        if not 0 <= i < dim:
            raise ValueError(f"op references feature {i} absent from schema of length {dim}")


def apply_op(vector: np.ndarray, op: ManipulationOp, seed: int) -> np.ndarray:
    """Return a perturbed copy of the vector; the input is never touched.

    Intensity 0 is the identity for every op id.
    """
    v = np.asarray(vector, dtype=np.float64).copy()
    eps = op.intensity
    rng = np.random.default_rng(seed)
    w = min(eps, 1.0)

    if op.id in (OP_ZERO_CHECKSUM, OP_ZERO_DEBUG):
        idx = _indices(op.params, "features")
        _check_bounds(idx, v.size)
        for i in idx:
            v[i] *= 1.0 - w
    elif op.id == OP_SHIFT_HISTOGRAM:
        idx = _indices(op.params, "features")
        deltas = op.params.get("deltas", [])
        if len(idx) != len(deltas):
            raise ValueError("shift op needs one delta per feature")
        _check_bounds(idx, v.size)
        for i, d in zip(idx, deltas):
            v[i] += eps * float(d)
    elif op.id == OP_APPEND_OVERLAY:
        grow = _indices(op.params, "grow")
        hist = _indices(op.params, "hist")
        _check_bounds(grow + hist, v.size)
        for i in grow:
            v[i] += eps * (abs(v[i]) + 1.0)
        if hist:
            mix = eps / (1.0 + eps)
            total = v[hist].sum()
            v[hist] = (1.0 - mix) * v[hist] + mix * total / len(hist)
    elif op.id == OP_ADD_SECTION:
        idx = _indices(op.params, "features")
        _check_bounds(idx, v.size)
        step = float(op.params.get("step", 1.0))
        for i in idx:
            v[i] += round(eps * step)
    elif op.id == OP_RENAME_SECTION:
        block = _indices(op.params, "block")
        _check_bounds(block, v.size)
        if len(block) >= 2 and w > 0.0:
            src, dst = rng.choice(len(block), size=2, replace=False)
            moved = w * v[block[src]]
            v[block[src]] -= moved
            v[block[dst]] += moved
    elif op.id == OP_PERTURB_IMPORTS:
        counts = _indices(op.params, "counts")
        block = _indices(op.params, "block")
        _check_bounds(counts + block, v.size)
        for i in counts:
            v[i] *= 1.0 + eps
        if len(block) >= 2 and w > 0.0:
            pairs = max(1, len(block) // 4)
            for _ in range(pairs):
                src, dst = rng.choice(len(block), size=2, replace=False)
                moved = 0.5 * w * v[block[src]]
                v[block[src]] -= moved
                v[block[dst]] += moved
    return v


def replay(original: np.ndarray, ops: list[ManipulationOp]) -> np.ndarray:
    """Re-apply recorded ops (with their recorded seeds) in order."""
    v = np.asarray(original, dtype=np.float64).copy()
    for op in ops:
        if op.seed is None:
            raise ValueError("cannot replay an op without a recorded seed")
        v = apply_op(v, op, op.seed)
    return v


def attack(
    vector: np.ndarray,
    target: RuleSet,
    budget: int,
    state: BanditState,
    seed: int,
    sample_index: int = 0,
) -> EvolutionTrace:
    """Thompson-sample ops until the target stops firing or budget runs out.

    The bandit state is shared across calls and mutated in place; a pull
    counts as a success only when it flips the detection off.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not predict(target, vector):
        raise ValueError("sample already evades")
    rng = np.random.default_rng(seed)
    v = np.asarray(vector, dtype=np.float64).copy()
    applied: list[ManipulationOp] = []
    evaded = False
    for _ in range(budget):
        arm = state.sample_arm(rng)
        app_seed = int(rng.integers(0, 2**31 - 1))
        op = replace(state.ops[arm], seed=app_seed)
        v = apply_op(v, op, app_seed)
        applied.append(op)
        evaded = not predict(target, v)
        state.update(arm, evaded)
        if evaded:
            break
    return EvolutionTrace(
        sample_index=sample_index,
        applied_ops=applied,
        evaded=evaded,
        ops_before_minimization=len(applied),
    )


def minimize(original: np.ndarray, trace: EvolutionTrace, target: RuleSet) -> EvolutionTrace:
    """Strip ops not needed for evasion until the trace is 1-minimal.

    Scans in application order and repeats until a full pass removes
    nothing, so removing any single surviving op restores detection.
    """
    if not trace.evaded:
        raise ValueError("trace does not evade; nothing to minimize")
    ops = list(trace.applied_ops)
    changed = True
    while changed:
        changed = False
        i = 0
        while i < len(ops):
            trial = ops[:i] + ops[i + 1 :]
            if not predict(target, replay(original, trial)):
                ops = trial
                changed = True
            else:
                i += 1
    return EvolutionTrace(
        sample_index=trace.sample_index,
        applied_ops=ops,
        evaded=True,
        ops_before_minimization=trace.ops_before_minimization,
    )


def build_default_ops(
    original: Dataset,
    benign: Dataset | None = None,
    intensity: float = DEFAULT_INTENSITY,
    n_shift_ops: int = 8,
    shift_features: int = 64,
) -> list[ManipulationOp]:
    """Bind the op vocabulary to a schema.

    PE-layout names get their archetypes (checksum zeroing, overlay append
    over the histogram block, import perturbation). Remaining numeric
    features are ranked by the family-vs-benign mean gap and the top
    ``shift_features`` become the drift surface, dealt round-robin into
    ``n_shift_ops`` blocks. Each shift op displaces the whole surface the
    way a heavy binary transformation perturbs the whole static profile:
    every surface feature travels -2 * gap * intensity (landing mirrored
    across the benign population at intensity 1) and the op's own block
    travels -5 * gap * intensity.
    """
    schema = original.schema
    names = schema.names
    mean_pos = original.samples.mean(axis=0)
    mean_ben = benign.samples.mean(axis=0) if benign is not None else np.zeros(len(names))
    gaps = mean_pos - mean_ben

    ops: list[ManipulationOp] = []
    claimed: set[int] = set()

    def named(name: str) -> int | None:
        return names.index(name) if name in names else None

    checksum = named("hdr_checksum")
    if checksum is not None:
        ops.append(ManipulationOp(OP_ZERO_CHECKSUM, {"features": [checksum]}, intensity))
        claimed.add(checksum)
    timestamp = named("hdr_timestamp")
    if timestamp is not None:
        ops.append(ManipulationOp(OP_ZERO_DEBUG, {"features": [timestamp]}, intensity))
        claimed.add(timestamp)
    hist_block = [i for i, n in enumerate(names) if n.startswith("hist_")]
    overlay = named("overlay_size")
    if overlay is not None:
        grow = [overlay]
        size_img = named("hdr_size_of_image")
        if size_img is not None:
            grow.append(size_img)
        ops.append(ManipulationOp(OP_APPEND_OVERLAY, {"grow": grow, "hist": hist_block}, intensity))
        claimed.update(grow + hist_block)
    sec_count = named("sec_count")
    if sec_count is not None:
        ops.append(ManipulationOp(OP_ADD_SECTION, {"features": [sec_count], "step": 1.0}, intensity))
        claimed.add(sec_count)
    imp_block = [i for i, n in enumerate(names) if n.startswith("imp_bucket_")]
    if imp_block:
        counts = [i for i in (named("imp_dll_count"), named("imp_func_count")) if i is not None]
        ops.append(
            ManipulationOp(OP_PERTURB_IMPORTS, {"counts": counts, "block": imp_block}, intensity)
        )
        claimed.update(counts + imp_block)

    free = [
        i
        for i, feat in enumerate(schema)
        if i not in claimed and feat.kind != "categorical"
    ]
    free.sort(key=lambda i: (-abs(gaps[i]), i))
    top = free[:shift_features]
    n_groups = min(n_shift_ops, len(top))
    for g in range(n_groups):
        block = set(top[g::n_groups])
        deltas = [
            -(5.0 if i in block else 2.0) * float(gaps[i]) for i in top
        ]
        ops.append(
            ManipulationOp(OP_SHIFT_HISTOGRAM, {"features": top, "deltas": deltas}, intensity)
        )
    return ops


def drift_inject(dataset: Dataset, ops: list[ManipulationOp], seed: int) -> Dataset:
    """Apply every op once to every sample (no target, no retention)."""
    rng = np.random.default_rng(seed)
    rows = []
    for row in dataset.samples:
        v = row
        for op in ops:
            v = apply_op(v, op, int(rng.integers(0, 2**31 - 1)))
        rows.append(v)
    return Dataset(
        dataset.schema,
        np.array(rows).reshape(len(rows), len(dataset.schema)),
        np.full(len(rows), POSITIVE),
        family_name=f"{dataset.family_name}-drifted",
    )


def evolve_family(
    original: Dataset,
    target: RuleSet,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    ops: list[ManipulationOp] | None = None,
) -> tuple[Dataset, list[EvolutionTrace]]:
    """Attack and minimize every detected sample; keep only the evaders.

    One bandit state is shared across samples (updates serialized in
    sample order), so later attacks exploit what earlier ones learned.
    """
    if not target.rules:
        raise ValueError("target rule set never fires; nothing to evolve against")
    if target.schema_fingerprint != original.schema.fingerprint():
        raise ValueError(
            "target rule set was fit against a different schema; "
            "load the dataset with the schema emitted at fit time"
        )
    if ops is None:
        ops = build_default_ops(original)
    state = BanditState(tuple(ops))
    rng = np.random.default_rng(seed)
    evolved_rows: list[np.ndarray] = []
    traces: list[EvolutionTrace] = []
    fired = target.fires(original.samples)
    for i in np.flatnonzero(fired):
        attack_seed = int(rng.integers(0, 2**31 - 1))
        trace = attack(original.samples[i], target, budget, state, attack_seed, sample_index=int(i))
        if trace.evaded:
            trace = minimize(original.samples[i], trace, target)
            evolved_rows.append(replay(original.samples[i], trace.applied_ops))
        traces.append(trace)
    if not evolved_rows:
        warnings.warn("no sample evaded the target rule set", RuntimeWarning, stacklevel=2)
    samples = (
        np.array(evolved_rows)
        if evolved_rows
        else np.empty((0, len(original.schema)))
    )
    evolved = Dataset(
        original.schema,
        samples,
        np.full(len(evolved_rows), POSITIVE),
        family_name=f"{original.family_name}-evolved",
    )
    return evolved, traces
