"""Rule induction separating family samples from benign ones.

The learner follows the classic grow/prune scheme: rules are grown
condition-by-condition to maximize FOIL gain on a grow split, pruned on a
held-out split, accumulated until positives are covered or the description
length stops paying off, then optimized by per-rule replacement/revision
passes. All randomness flows from a single seed, so identical inputs give
byte-identical serialized rule sets.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_model import CATEGORICAL, Dataset, FeatureSchema

OP_EQ = "eq"
OP_NEQ = "neq"
OP_LE = "le"
OP_GE = "ge"
OP_IN = "in"

# grow-time tie-break order; neq is never grown, only evaluated
_OP_RANK = {OP_EQ: 0, OP_LE: 1, OP_GE: 2, OP_IN: 3, OP_NEQ: 4}

GROW_FRACTION = 2 / 3
DL_BUDGET_BITS = 64.0
THEORY_REDUNDANCY = 0.5
OPTIMIZE_PASSES = 2


class SchemaMismatchError(ValueError):
    """Rule set and data were built against different schemas."""


class InseparableWarning(RuntimeWarning):
    """Fit could not find any rule separating the classes."""


@dataclass(frozen=True)
class Condition:
    feature: int
    op: str
    value: float | tuple[float, float]

    def __post_init__(self):
        if self.op not in _OP_RANK:
            raise ValueError(f"unknown operator {self.op!r}")
        if self.op == OP_IN:
            lo, hi = self.value  # type: ignore[misc]
            lo, hi = float(lo), float(hi)
            if lo > hi:
                raise ValueError(f"interval [{lo}, {hi}] has low > high")
            object.__setattr__(self, "value", (lo, hi))
        else:
            object.__setattr__(self, "value", float(self.value))  # type: ignore[arg-type]

    def matches(self, column: np.ndarray) -> np.ndarray:
        """Vectorized test of this condition over one feature column."""
        if self.op == OP_EQ:
            return column == self.value
        if self.op == OP_NEQ:
            return column != self.value
        if self.op == OP_LE:
            return column <= self.value
        if self.op == OP_GE:
            return column >= self.value
        lo, hi = self.value  # type: ignore[misc]
        return (column >= lo) & (column <= hi)

    def sort_key(self):
        v = self.value if isinstance(self.value, tuple) else (self.value, self.value)
        return (self.feature, _OP_RANK[self.op], v)

    def to_obj(self) -> dict:
        v = list(self.value) if isinstance(self.value, tuple) else self.value
        return {"f": self.feature, "op": self.op, "v": v}

    @classmethod
    def from_obj(cls, obj: dict) -> "Condition":
        v = obj["v"]
        return cls(int(obj["f"]), obj["op"], tuple(v) if isinstance(v, list) else v)

    def __str__(self) -> str:
        if self.op == OP_IN:
            lo, hi = self.value  # type: ignore[misc]
            return f"f{self.feature} in [{lo:g}, {hi:g}]"
        sym = {OP_EQ: "=", OP_NEQ: "!=", OP_LE: "<=", OP_GE: ">="}[self.op]
        return f"f{self.feature} {sym} {self.value:g}"


@dataclass(frozen=True)
class Rule:
    """Conjunction of conditions; fires only when all of them hold."""

    conditions: tuple[Condition, ...]

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        if not self.conditions:
            raise ValueError("a rule needs at least one condition")

    def __len__(self) -> int:
        return len(self.conditions)

    def covers(self, X: np.ndarray) -> np.ndarray:
        mask = np.ones(X.shape[0], dtype=bool)
        for cond in self.conditions:
            mask &= cond.matches(X[:, cond.feature])
        return mask

    def normalized(self) -> "Rule":
        """Merge per-feature numeric bounds into at most one condition.

        Contradictory bounds (empty intersection) are left untouched.
        """
        by_feature: dict[int, dict] = {}
        passthrough: list[Condition] = []
        for cond in self.conditions:
            if cond.op in (OP_EQ, OP_NEQ):
                passthrough.append(cond)
                continue
            box = by_feature.setdefault(cond.feature, {"lo": -math.inf, "hi": math.inf})
            if cond.op == OP_LE:
                box["hi"] = min(box["hi"], cond.value)  # type: ignore[arg-type]
            elif cond.op == OP_GE:
                box["lo"] = max(box["lo"], cond.value)  # type: ignore[arg-type]
            else:
                lo, hi = cond.value  # type: ignore[misc]
                box["lo"] = max(box["lo"], lo)
                box["hi"] = min(box["hi"], hi)
        merged: list[Condition] = []
        for feat, box in by_feature.items():
            lo, hi = box["lo"], box["hi"]
            if lo > hi:
                merged.extend(c for c in self.conditions if c.feature == feat and c.op in (OP_LE, OP_GE, OP_IN))
            elif lo == -math.inf:
                merged.append(Condition(feat, OP_LE, hi))
            elif hi == math.inf:
                merged.append(Condition(feat, OP_GE, lo))
            else:
                merged.append(Condition(feat, OP_IN, (lo, hi)))
        out = sorted(passthrough + merged, key=Condition.sort_key)
        return Rule(tuple(out))

    def __str__(self) -> str:
        return " AND ".join(str(c) for c in self.conditions)


@dataclass(frozen=True)
class RuleSet:
    """Disjunction of rules; an empty rule list never fires."""

    rules: tuple[Rule, ...]
    schema_fingerprint: str

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))

    def __len__(self) -> int:
        return len(self.rules)

    def fires(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        mask = np.zeros(X.shape[0], dtype=bool)
        for rule in self.rules:
            mask |= rule.covers(X)
        return mask

    def to_obj(self) -> dict:
        return {
            "schema_fingerprint": self.schema_fingerprint,
            "rules": [[c.to_obj() for c in rule.conditions] for rule in self.rules],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_obj(cls, obj: dict) -> "RuleSet":
        rules = tuple(
            Rule(tuple(Condition.from_obj(c) for c in conds)) for conds in obj["rules"]
        )
        return cls(rules, obj["schema_fingerprint"])

    @classmethod
    def from_json(cls, text: str) -> "RuleSet":
        return cls.from_obj(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "RuleSet":
        return cls.from_json(Path(path).read_text())

    def __str__(self) -> str:
        if not self.rules:
            return "[never fires]"
        return " OR ".join(f"[{r}]" for r in self.rules)


def make_ruleset(rules: list[Rule] | tuple[Rule, ...], schema: FeatureSchema) -> RuleSet:
    """Build a RuleSet bound to a schema, validating condition kinds."""
    for rule in rules:
        for cond in rule.conditions:
            if not 0 <= cond.feature < len(schema):
                raise ValueError(f"condition references feature {cond.feature} outside schema")
            feat = schema.features[cond.feature]
            if cond.op in (OP_EQ, OP_NEQ) and feat.kind != CATEGORICAL and feat.bin_edges is None:
                raise ValueError(
                    f"{cond}: eq/neq applies to categorical or binned features only"
                )
    return RuleSet(tuple(rules), schema.fingerprint())


def predict(ruleset: RuleSet, vector: np.ndarray, schema: FeatureSchema | None = None) -> bool:
    """True iff some rule's conditions are all satisfied by the vector."""
    if schema is not None and schema.fingerprint() != ruleset.schema_fingerprint:
        raise SchemaMismatchError(
            f"vector schema {schema.fingerprint()} != rule set schema {ruleset.schema_fingerprint}"
        )
    return bool(ruleset.fires(np.asarray(vector, dtype=np.float64).reshape(1, -1))[0])


def candidate_conditions(schema: FeatureSchema, X: np.ndarray) -> list[Condition]:
    """The grow-time condition vocabulary, in canonical tie-break order.

    Categorical features contribute eq per observed value; numeric features
    contribute le/ge per bin edge and in_interval per adjacent edge pair.
    """
    conds: list[Condition] = []
    for i, feat in enumerate(schema):
        if feat.kind == CATEGORICAL:
            for v in np.unique(X[:, i]):
                conds.append(Condition(i, OP_EQ, float(v)))
        elif feat.bin_edges:
            edges = feat.bin_edges
            for e in edges:
                conds.append(Condition(i, OP_LE, e))
            for e in edges:
                conds.append(Condition(i, OP_GE, e))
            for lo, hi in zip(edges, edges[1:]):
                conds.append(Condition(i, OP_IN, (lo, hi)))
    conds.sort(key=Condition.sort_key)
    return conds


def _log2_binom(n: int, k: int) -> float:
    if k < 0 or k > n:
        return 0.0
    return (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)) / math.log(2)


def _gamma_code_bits(m: int) -> float:
    # Elias gamma length for the rule-size prefix code
    return 2 * math.floor(math.log2(m)) + 1 if m >= 1 else 1.0


class _Engine:
    """Shared coverage machinery for one (positives, benign) fit problem."""

    def __init__(self, positives: Dataset, benign: Dataset):
        if positives.schema.fingerprint() != benign.schema.fingerprint():
            raise SchemaMismatchError("positives and benign must share one schema")
        self.schema = positives.schema
        self.X = np.vstack([positives.samples, benign.samples])
        self.n_pos = len(positives)
        self.n = self.X.shape[0]
        self.is_pos = np.zeros(self.n, dtype=bool)
        self.is_pos[: self.n_pos] = True
        self.pos_idx = np.arange(self.n_pos)
        self.neg_idx = np.arange(self.n_pos, self.n)
        self.conds = candidate_conditions(self.schema, self.X)
        if self.conds:
            self.C = np.empty((len(self.conds), self.n), dtype=bool)
            for row, cond in enumerate(self.conds):
                self.C[row] = cond.matches(self.X[:, cond.feature])
        else:
            self.C = np.zeros((0, self.n), dtype=bool)
        self.bits_per_cond = math.ceil(math.log2(max(len(self.conds), 2)))
        self._rule_masks: dict[tuple, np.ndarray] = {}

    def rule_mask(self, rule: Rule) -> np.ndarray:
        key = tuple(c.sort_key() for c in rule.conditions)
        mask = self._rule_masks.get(key)
        if mask is None:
            mask = rule.covers(self.X)
            self._rule_masks[key] = mask
        return mask

    def ruleset_mask(self, rules: list[Rule]) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        for rule in rules:
            mask |= self.rule_mask(rule)
        return mask

    # -- description length ----------------------------------------------

    def theory_bits(self, rule: Rule) -> float:
        m = len(rule)
        return THEORY_REDUNDANCY * (_gamma_code_bits(m) + m * self.bits_per_cond)

    def description_length(self, rules: list[Rule]) -> float:
        covered = self.ruleset_mask(rules)
        c = int(np.count_nonzero(covered))
        fp = int(np.count_nonzero(covered & ~self.is_pos))
        u = self.n - c
        fn = int(np.count_nonzero(~covered & self.is_pos))
        exceptions = _log2_binom(c, fp) + _log2_binom(u, fn)
        return sum(self.theory_bits(r) for r in rules) + exceptions

    # -- growing and pruning ----------------------------------------------

    def grow(
        self,
        grow_pos: np.ndarray,
        grow_neg: np.ndarray,
        start: tuple[Condition, ...] = (),
    ) -> Rule | None:
        """Greedy FOIL-gain growth until no negative is covered or gain dies.

        Returns None only when the schema yields no usable candidate that
        covers a positive (e.g. all features constant).
        """
        if len(self.conds) == 0 or grow_pos.size == 0:
            return None
        conditions = list(start)
        cov_pos, cov_neg = grow_pos, grow_neg
        for cond in conditions:
            cov_pos = cov_pos[cond.matches(self.X[cov_pos, cond.feature])]
            cov_neg = cov_neg[cond.matches(self.X[cov_neg, cond.feature])]
        if conditions and cov_pos.size == 0:
            return None
        while cov_neg.size or not conditions:
            p0, n0 = cov_pos.size, cov_neg.size
            p1 = self.C[:, cov_pos].sum(axis=1).astype(np.float64)
            n1 = self.C[:, cov_neg].sum(axis=1).astype(np.float64)
            base = math.log2(p0 / (p0 + n0))
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = p1 * (np.log2(p1 / (p1 + n1)) - base)
            gain[p1 == 0] = -np.inf
            best = int(np.argmax(gain))
            if not np.isfinite(gain[best]):
                if conditions:
                    break
                return None
            if conditions and gain[best] <= 0.0:
                break
            conditions.append(self.conds[best])
            cov_pos = cov_pos[self.C[best, cov_pos]]
            cov_neg = cov_neg[self.C[best, cov_neg]]
            if len(conditions) == 1 and gain[best] <= 0.0:
                break  # best-effort single condition on inseparable data
        return Rule(tuple(conditions)) if conditions else None

    def _prune_value(self, conditions: tuple[Condition, ...], pos: np.ndarray, neg: np.ndarray) -> float:
        p = self._prefix_count(conditions, pos)
        n = self._prefix_count(conditions, neg)
        return (p - n) / (p + n) if p + n else 0.0

    def _prefix_count(self, conditions: tuple[Condition, ...], idx: np.ndarray) -> int:
        keep = idx
        for cond in conditions:
            keep = keep[cond.matches(self.X[keep, cond.feature])]
        return keep.size

    def prune(self, rule: Rule, prune_pos: np.ndarray, prune_neg: np.ndarray) -> Rule:
        """Drop trailing conditions while (p-n)/(p+n) does not decrease."""
        if prune_pos.size == 0 and prune_neg.size == 0:
            return rule
        conds = rule.conditions
        value = self._prune_value(conds, prune_pos, prune_neg)
        while len(conds) > 1:
            shorter = conds[:-1]
            v = self._prune_value(shorter, prune_pos, prune_neg)
            if v >= value:
                conds, value = shorter, v
            else:
                break
        return Rule(conds)

    # -- cover loop ---------------------------------------------------------

    def _split(self, idx: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        perm = idx[rng.permutation(idx.size)] if idx.size else idx
        cut = int(round(idx.size * GROW_FRACTION))
        cut = max(cut, 1) if idx.size else 0
        return perm[:cut], perm[cut:]

    def cover(
        self,
        base_rules: list[Rule],
        remaining_pos: np.ndarray,
        rng: np.random.Generator,
    ) -> list[Rule]:
        """IREP*-style covering of the given positives against all negatives."""
        new_rules: list[Rule] = []
        best_dl = self.description_length(base_rules + new_rules)
        while remaining_pos.size:
            grow_pos, prune_pos = self._split(remaining_pos, rng)
            grow_neg, prune_neg = self._split(self.neg_idx, rng)
            grown = self.grow(grow_pos, grow_neg)
            if grown is None:
                break
            rule = self.prune(grown, prune_pos, prune_neg)
            p = self._prefix_count(rule.conditions, prune_pos)
            n = self._prefix_count(rule.conditions, prune_neg)
            error_rate = n / (p + n) if p + n else 0.0
            if error_rate > 0.5:
                break
            mask = self.rule_mask(rule)
            if not mask[remaining_pos].any():
                break
            dl = self.description_length(base_rules + new_rules + [rule])
            if dl > best_dl + DL_BUDGET_BITS:
                break
            best_dl = min(best_dl, dl)
            new_rules.append(rule)
            remaining_pos = remaining_pos[~mask[remaining_pos]]
        return new_rules

    # -- optimization -------------------------------------------------------

    def optimize_pass(self, rules: list[Rule], rng: np.random.Generator) -> list[Rule]:
        """Cohen-style pass: per rule keep the DL-best of original,
        regrown replacement, and greedily revised variant."""
        rules = list(rules)
        for i in range(len(rules)):
            others = rules[:i] + rules[i + 1 :]
            other_mask = self.ruleset_mask(others)
            resid_pos = self.pos_idx[~other_mask[self.pos_idx]]
            grow_pos, prune_pos = self._split(resid_pos, rng)
            grow_neg, prune_neg = self._split(self.neg_idx, rng)
            variants = [rules[i]]
            grown = self.grow(grow_pos, grow_neg)
            if grown is not None:
                variants.append(self.prune(grown, prune_pos, prune_neg))
            revised = self.grow(grow_pos, grow_neg, start=rules[i].conditions)
            if revised is not None:
                variants.append(self.prune(revised, prune_pos, prune_neg))
            scores = [self.description_length(rules[:i] + [v] + rules[i + 1 :]) for v in variants]
            rules[i] = variants[int(np.argmin(scores))]
        return self.delete_sweep(rules)

    def delete_sweep(self, rules: list[Rule]) -> list[Rule]:
        """Remove rules whose deletion strictly lowers description length."""
        rules = list(rules)
        changed = True
        while changed:
            changed = False
            i = 0
            while i < len(rules):
                with_dl = self.description_length(rules)
                without = rules[:i] + rules[i + 1 :]
                if self.description_length(without) < with_dl:
                    rules = without
                    changed = True
                else:
                    i += 1
        return rules

    def uncovered_positives(self, rules: list[Rule]) -> np.ndarray:
        mask = self.ruleset_mask(rules)
        return self.pos_idx[~mask[self.pos_idx]]

    def repair(self, rules: list[Rule]) -> list[Rule]:
        """Swap rules with training false positives for consistent extensions.

        Over-pruning on small prune splits can leave a rule covering
        negatives, which no later rule can undo. When growing the rule
        further reaches zero covered negatives on the full training data,
        take the extension; positives it sheds go back to mop_up.
        """
        out: list[Rule] = []
        for rule in rules:
            mask = self.rule_mask(rule)
            if mask[self.neg_idx].any():
                covered_pos = self.pos_idx[mask[self.pos_idx]]
                extended = self.grow(covered_pos, self.neg_idx, start=rule.conditions)
                if extended is not None:
                    ext_mask = self.rule_mask(extended)
                    if not ext_mask[self.neg_idx].any() and ext_mask[self.pos_idx].any():
                        out.append(extended)
                        continue
            out.append(rule)
        return out

    def precision_filter(self, rules: list[Rule]) -> list[Rule]:
        """Drop rules that are wrong more often than right on training data."""
        kept = []
        for rule in rules:
            mask = self.rule_mask(rule)
            p = int(np.count_nonzero(mask[self.pos_idx]))
            fp = int(np.count_nonzero(mask[self.neg_idx]))
            if p > fp:
                kept.append(rule)
        return kept

    def mop_up(self, remaining: np.ndarray) -> list[Rule]:
        """Cover residual positives with unpruned consistent rules.

        Tiny prune splits can veto every rule in the cover loop; this pass
        keeps a grown rule only when it covers no training negative, so
        inseparable residue still yields nothing.
        """
        extra: list[Rule] = []
        while remaining.size:
            rule = self.grow(remaining, self.neg_idx)
            if rule is None:
                break
            mask = self.rule_mask(rule)
            if mask[self.neg_idx].any():
                break
            covered = mask[remaining]
            if not covered.any():
                break
            extra.append(rule)
            remaining = remaining[~covered]
        return extra


def foil_gain(candidate: Condition, rule: Rule | None, pos: Dataset, neg: Dataset) -> float:
    """FOIL information gain of appending the candidate to the rule.

    ``rule=None`` stands for the empty rule covering everything. Returns
    -inf when the extended rule covers no positives.
    """
    cov_pos = np.ones(len(pos), dtype=bool)
    cov_neg = np.ones(len(neg), dtype=bool)
    if rule is not None:
        cov_pos = rule.covers(pos.samples)
        cov_neg = rule.covers(neg.samples)
    p0, n0 = int(cov_pos.sum()), int(cov_neg.sum())
    if p0 == 0:
        raise ValueError("rule covers no positives")
    cand_pos = cov_pos & candidate.matches(pos.samples[:, candidate.feature])
    cand_neg = cov_neg & candidate.matches(neg.samples[:, candidate.feature])
    p1, n1 = int(cand_pos.sum()), int(cand_neg.sum())
    if p1 == 0:
        return -math.inf
    return p1 * (math.log2(p1 / (p1 + n1)) - math.log2(p0 / (p0 + n0)))


def grow_rule(grow_pos: Dataset, grow_neg: Dataset) -> Rule | None:
    """Grow one rule on the given split; None if no usable candidate exists."""
    if len(grow_pos) == 0:
        raise ValueError("grow split needs at least one positive")
    eng = _Engine(grow_pos, grow_neg)
    return eng.grow(eng.pos_idx, eng.neg_idx)


def prune_rule(rule: Rule, prune_pos: Dataset, prune_neg: Dataset) -> Rule:
    """Reduced-error pruning of trailing conditions on the prune split."""
    if len(prune_pos) == 0 and len(prune_neg) == 0:
        return rule
    X = np.vstack([prune_pos.samples, prune_neg.samples])
    n_pos = len(prune_pos)

    def value(conds: tuple[Condition, ...]) -> float:
        mask = np.ones(X.shape[0], dtype=bool)
        for c in conds:
            mask &= c.matches(X[:, c.feature])
        p = int(mask[:n_pos].sum())
        n = int(mask[n_pos:].sum())
        return (p - n) / (p + n) if p + n else 0.0

    conds = rule.conditions
    current = value(conds)
    while len(conds) > 1:
        shorter = conds[:-1]
        v = value(shorter)
        if v >= current:
            conds, current = shorter, v
        else:
            break
    return Rule(conds)


def description_length(ruleset: RuleSet, pos: Dataset, neg: Dataset) -> float:
    """Total bits: rule encoding plus binomial coding of the errors."""
    eng = _Engine(pos, neg)
    return eng.description_length(list(ruleset.rules))


def fit(positives: Dataset, benign: Dataset, seed: int, optimize_passes: int = OPTIMIZE_PASSES) -> RuleSet:
    """Induce a rule set for the positives against the benign samples.

    Cover loop with grow/prune splits and MDL stopping, then
    ``optimize_passes`` rounds of per-rule optimization, each followed by
    covering any still-uncovered positives. Deterministic per seed.
    """
    if len(positives) == 0 or len(benign) == 0:
        raise ValueError("both datasets must be non-empty")
    rng = np.random.default_rng(seed)
    eng = _Engine(positives, benign)
    rules = eng.cover([], eng.pos_idx, rng)
    for _ in range(optimize_passes):
        if not rules:
            break
        rules = eng.optimize_pass(rules, rng)
        residual = eng.uncovered_positives(rules)
        if residual.size:
            rules = rules + eng.cover(rules, residual, rng)
    rules = eng.precision_filter(eng.repair(rules))
    rules = rules + eng.mop_up(eng.uncovered_positives(rules))
    if not rules:
        warnings.warn(
            "classes are inseparable under the condition vocabulary; rule set is empty",
            InseparableWarning,
            stacklevel=2,
        )
    return RuleSet(tuple(rules), positives.schema.fingerprint())


def optimize(ruleset: RuleSet, positives: Dataset, benign: Dataset, k: int, seed: int) -> RuleSet:
    """Run k optimization passes; description length never increases."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0 or not ruleset.rules:
        return ruleset
    if positives.schema.fingerprint() != ruleset.schema_fingerprint:
        raise SchemaMismatchError("rule set was fit against a different schema")
    rng = np.random.default_rng(seed)
    eng = _Engine(positives, benign)
    rules = list(ruleset.rules)
    for _ in range(k):
        rules = eng.optimize_pass(rules, rng)
    return RuleSet(tuple(rules), ruleset.schema_fingerprint)


def training_accuracy(ruleset: RuleSet, positives: Dataset, benign: Dataset) -> float:
    """Fraction of training samples classified correctly by the rule set."""
    fired_pos = ruleset.fires(positives.samples)
    fired_neg = ruleset.fires(benign.samples)
    correct = int(fired_pos.sum()) + int((~fired_neg).sum())
    return correct / (len(positives) + len(benign))
