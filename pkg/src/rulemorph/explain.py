"""Human-readable explanation of drift as a diff between two rule sets.

Rule order and rule count are unstable across induction runs, so the diff
works on per-feature condition profiles: for each feature referenced by a
rule set, the operators used and the union of tested values/intervals.
Features are then partitioned into added, removed, changed, and unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .drift import DriftVerdict
from .feature_model import FeatureSchema
from .ripper import OP_EQ, OP_GE, OP_IN, OP_LE, OP_NEQ, RuleSet


@dataclass(frozen=True)
class FeatureProfile:
    feature: int
    operators: tuple[str, ...]
    eq_values: tuple[float, ...]
    neq_values: tuple[float, ...]
    intervals: tuple[tuple[float, float], ...]
    rule_count: int

    def same_tests(self, other: "FeatureProfile") -> bool:
        """Equality of tested operators and value unions (rule count aside)."""
        return (
            self.operators == other.operators
            and self.eq_values == other.eq_values
            and self.neq_values == other.neq_values
            and self.intervals == other.intervals
        )

    def covers(self, value: float) -> bool:
        """Whether any tested point or interval admits the value."""
        if value in self.eq_values:
            return True
        return any(lo <= value <= hi for lo, hi in self.intervals)

    def describe(self) -> str:
        parts = []
        if self.eq_values:
            parts.append("= {" + ", ".join(f"{v:g}" for v in self.eq_values) + "}")
        if self.neq_values:
            parts.append("!= {" + ", ".join(f"{v:g}" for v in self.neq_values) + "}")
        if self.intervals:
            parts.append(" ∪ ".join(_interval_str(iv) for iv in self.intervals))
        return "; ".join(parts) if parts else "(no tests)"

    def to_obj(self) -> dict:
        return {
            "feature": self.feature,
            "operators": list(self.operators),
            "eq_values": list(self.eq_values),
            "neq_values": list(self.neq_values),
            "intervals": [[_json_bound(lo), _json_bound(hi)] for lo, hi in self.intervals],
            "rule_count": self.rule_count,
        }


def _interval_str(interval: tuple[float, float]) -> str:
    lo, hi = interval
    left = "(-inf" if lo == -math.inf else f"[{lo:g}"
    right = "inf)" if hi == math.inf else f"{hi:g}]"
    return f"{left}, {right}"


def _json_bound(v: float):
    if v == -math.inf:
        return "-inf"
    if v == math.inf:
        return "inf"
    return v


def _merge_intervals(intervals: list[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    if not intervals:
        return ()
    intervals = sorted(intervals)
    merged = [intervals[0]]
    for lo, hi in intervals[1:]:
        last_lo, last_hi = merged[-1]
        if lo <= last_hi:
            merged[-1] = (last_lo, max(last_hi, hi))
        else:
            merged.append((lo, hi))
    return tuple(merged)


def profile_ruleset(ruleset: RuleSet) -> list[FeatureProfile]:
    """One profile per referenced feature, ordered by feature index."""
    by_feature: dict[int, dict] = {}
    for rule in ruleset.rules:
        seen_in_rule = set()
        for cond in rule.conditions:
            acc = by_feature.setdefault(
                cond.feature,
                {"ops": set(), "eq": set(), "neq": set(), "intervals": [], "rules": 0},
            )
            acc["ops"].add(cond.op)
            if cond.op == OP_EQ:
                acc["eq"].add(cond.value)
            elif cond.op == OP_NEQ:
                acc["neq"].add(cond.value)
            elif cond.op == OP_LE:
                acc["intervals"].append((-math.inf, cond.value))
            elif cond.op == OP_GE:
                acc["intervals"].append((cond.value, math.inf))
            elif cond.op == OP_IN:
                acc["intervals"].append(tuple(cond.value))
            seen_in_rule.add(cond.feature)
        for feat in seen_in_rule:
            by_feature[feat]["rules"] += 1
    profiles = []
    for feat in sorted(by_feature):
        acc = by_feature[feat]
        profiles.append(
            FeatureProfile(
                feature=feat,
                operators=tuple(sorted(acc["ops"])),
                eq_values=tuple(sorted(acc["eq"])),
                neq_values=tuple(sorted(acc["neq"])),
                intervals=_merge_intervals(acc["intervals"]),
                rule_count=acc["rules"],
            )
        )
    return profiles


@dataclass
class RuleDiff:
    schema_fingerprint: str
    added_features: list[FeatureProfile]
    removed_features: list[FeatureProfile]
    changed_features: list[tuple[int, FeatureProfile, FeatureProfile]]
    unchanged_features: list[FeatureProfile]
    distance_context: DriftVerdict | None = None

    @property
    def is_empty(self) -> bool:
        return not (self.added_features or self.removed_features or self.changed_features)

    def to_obj(self) -> dict:
        return {
            "schema_fingerprint": self.schema_fingerprint,
            "added": [p.to_obj() for p in self.added_features],
            "removed": [p.to_obj() for p in self.removed_features],
            "changed": [
                {"feature": f, "reference": a.to_obj(), "new": b.to_obj()}
                for f, a, b in self.changed_features
            ],
            "unchanged": [p.to_obj() for p in self.unchanged_features],
            "drift": self.distance_context.to_obj() if self.distance_context else None,
        }


def diff_rulesets(
    reference: RuleSet,
    new: RuleSet,
    verdict: DriftVerdict | None = None,
) -> RuleDiff:
    """Partition referenced features into added/removed/changed/unchanged."""
    if reference.schema_fingerprint != new.schema_fingerprint:
        raise ValueError("rule sets were fit against different schemas")
    ref_profiles = {p.feature: p for p in profile_ruleset(reference)}
    new_profiles = {p.feature: p for p in profile_ruleset(new)}
    added = [new_profiles[f] for f in sorted(set(new_profiles) - set(ref_profiles))]
    removed = [ref_profiles[f] for f in sorted(set(ref_profiles) - set(new_profiles))]
    changed, unchanged = [], []
    for f in sorted(set(ref_profiles) & set(new_profiles)):
        a, b = ref_profiles[f], new_profiles[f]
        if a.same_tests(b):
            unchanged.append(a)
        else:
            changed.append((f, a, b))
    return RuleDiff(
        schema_fingerprint=reference.schema_fingerprint,
        added_features=added,
        removed_features=removed,
        changed_features=changed,
        unchanged_features=unchanged,
        distance_context=verdict,
    )


def render_report(diff: RuleDiff, schema: FeatureSchema) -> tuple[str, dict]:
    """Plain-text summary plus the same content as a JSON-able document."""
    if schema.fingerprint() != diff.schema_fingerprint:
        raise ValueError("schema does not match the diff's fingerprint")
    names = schema.names
    lines: list[str] = []
    verdict = diff.distance_context
    if verdict is not None:
        state = "DRIFT DETECTED" if verdict.drifted else "no drift"
        cmp = ">" if verdict.drifted else "<="
        lines.append(
            f"{state}: distance {verdict.distance:.4f} {cmp} threshold "
            f"{verdict.threshold:.4f} (magnitude {verdict.magnitude:.4f})"
        )
    if diff.is_empty:
        lines.append("No rule-level changes detected.")
    else:
        for p in diff.added_features:
            lines.append(f"ADDED {names[p.feature]}: {p.describe()}")
        for p in diff.removed_features:
            lines.append(f"REMOVED {names[p.feature]}: {p.describe()}")
        for f, a, b in diff.changed_features:
            lines.append(f"CHANGED {names[f]}: was {a.describe()} ; now {b.describe()}")
    if diff.unchanged_features:
        kept = ", ".join(names[p.feature] for p in diff.unchanged_features)
        lines.append(f"unchanged: {kept}")
    obj = diff.to_obj()
    obj["feature_names"] = {
        str(p.feature): names[p.feature]
        for group in (diff.added_features, diff.removed_features, diff.unchanged_features)
        for p in group
    }
    obj["feature_names"].update(
        {str(f): names[f] for f, _a, _b in diff.changed_features}
    )
    text = "\n".join(lines) + "\n"
    return text, obj


def render_json(diff: RuleDiff, schema: FeatureSchema) -> str:
    _text, obj = render_report(diff, schema)
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
