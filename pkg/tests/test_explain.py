import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rulemorph.drift import DriftVerdict
from rulemorph.explain import diff_rulesets, profile_ruleset, render_report
from rulemorph.feature_model import Dataset, Feature, FeatureSchema, POSITIVE, BENIGN
from rulemorph.ripper import Condition, Rule, RuleSet, fit, make_ruleset

from test_ripper import example_ruleset, example_schema


class TestProfileRuleset:
    def test_worked_example_profiles(self):
        profiles = {p.feature: p for p in profile_ruleset(example_ruleset())}
        assert set(profiles) == {0, 1, 2}

        f1 = profiles[0]
        assert set(f1.operators) == {"le", "ge", "in"}
        # merged tested region: (-inf, 6] u [7, 8] u [10, inf)
        assert f1.intervals == ((-math.inf, 6.0), (7.0, 8.0), (10.0, math.inf))
        for point, expected in [(5.0, True), (7.5, True), (20.0, True), (48.0, True), (60.0, True), (9.0, False)]:
            assert f1.covers(point) is expected

        f2 = profiles[1]
        assert f2.operators == ("eq",)
        assert f2.eq_values == (0.0, 1.0)

        f3 = profiles[2]
        assert f3.eq_values == (72.0,)
        assert f3.rule_count == len(example_ruleset())

    def test_empty_ruleset_empty_profiles(self):
        empty = RuleSet((), example_schema().fingerprint())
        assert profile_ruleset(empty) == []

    def test_single_le_rule(self):
        schema = FeatureSchema((Feature("f0", bin_edges=(3.0,)),))
        rules = make_ruleset([Rule((Condition(0, "le", 3.0),))], schema)
        (profile,) = profile_ruleset(rules)
        assert profile.operators == ("le",)
        assert profile.intervals == ((-math.inf, 3.0),)


def _schema4():
    return FeatureSchema(tuple(Feature(f"f{i}", bin_edges=(2.0, 5.0)) for i in range(4)))


def _ruleset(schema, *rules):
    return make_ruleset(list(rules), schema)


class TestDiffRulesets:
    def test_identical_rulesets_all_unchanged(self):
        rules = example_ruleset()
        diff = diff_rulesets(rules, rules)
        assert diff.added_features == []
        assert diff.removed_features == []
        assert diff.changed_features == []
        assert {p.feature for p in diff.unchanged_features} == {0, 1, 2}

    def test_changed_value_reported_with_both_sides(self):
        schema = FeatureSchema(
            (Feature("f1"), Feature("f2"), Feature("f3", kind="categorical"))
        )
        ref = _ruleset(schema, Rule((Condition(2, "eq", 72.0),)))
        new = _ruleset(schema, Rule((Condition(2, "eq", 80.0),)))
        diff = diff_rulesets(ref, new)
        assert len(diff.changed_features) == 1
        feature, a, b = diff.changed_features[0]
        assert feature == 2
        assert a.eq_values == (72.0,)
        assert b.eq_values == (80.0,)

    def test_added_and_removed(self):
        schema = _schema4()
        ref = _ruleset(schema, Rule((Condition(0, "le", 2.0),)))
        new = _ruleset(schema, Rule((Condition(3, "ge", 5.0),)))
        diff = diff_rulesets(ref, new)
        assert [p.feature for p in diff.added_features] == [3]
        assert [p.feature for p in diff.removed_features] == [0]

    def test_schema_mismatch_rejected(self):
        a = _ruleset(_schema4(), Rule((Condition(0, "le", 2.0),)))
        b = example_ruleset()
        with pytest.raises(ValueError, match="different schemas"):
            diff_rulesets(a, b)

    def test_role_symmetry(self):
        schema = _schema4()
        a = _ruleset(schema, Rule((Condition(0, "le", 2.0), Condition(1, "ge", 5.0))))
        b = _ruleset(schema, Rule((Condition(1, "ge", 5.0), Condition(2, "le", 2.0))))
        ab = diff_rulesets(a, b)
        ba = diff_rulesets(b, a)
        assert [p.feature for p in ab.added_features] == [p.feature for p in ba.removed_features]
        assert [p.feature for p in ab.removed_features] == [p.feature for p in ba.added_features]

    @given(st.data())
    @settings(max_examples=60, deadline=None)
    def test_partition_covers_every_referenced_feature(self, data):
        schema = _schema4()

        def random_ruleset():
            n_rules = data.draw(st.integers(0, 3))
            rules = []
            for _ in range(n_rules):
                n_conds = data.draw(st.integers(1, 3))
                conds = []
                for _ in range(n_conds):
                    f = data.draw(st.integers(0, 3))
                    op = data.draw(st.sampled_from(["le", "ge", "in"]))
                    value = (2.0, 5.0) if op == "in" else data.draw(st.sampled_from([2.0, 5.0]))
                    conds.append(Condition(f, op, value))
                rules.append(Rule(tuple(conds)))
            return RuleSet(tuple(rules), schema.fingerprint())

        a, b = random_ruleset(), random_ruleset()
        diff = diff_rulesets(a, b)
        referenced = {c.feature for r in a.rules for c in r.conditions} | {
            c.feature for r in b.rules for c in r.conditions
        }
        buckets = (
            [p.feature for p in diff.added_features]
            + [p.feature for p in diff.removed_features]
            + [f for f, _x, _y in diff.changed_features]
            + [p.feature for p in diff.unchanged_features]
        )
        assert sorted(buckets) == sorted(referenced)

    def test_diff_of_refit_after_injected_feature_flags_addition(self):
        # evolution pushes a fresh feature into the rules: it must be "added"
        rng = np.random.default_rng(8)
        n = 150
        X = np.column_stack([rng.normal(4, 0.5, n), rng.normal(0, 0.5, n), np.zeros(n)])
        B = np.column_stack([rng.normal(0, 0.5, n), rng.normal(0, 0.5, n), np.zeros(n)])
        schema = FeatureSchema(
            (
                Feature("f0", bin_edges=(2.0,)),
                Feature("f1", bin_edges=(1.0,)),
                Feature("overlay_size", bin_edges=(50.0,)),
            )
        )
        pos = Dataset(schema, X, np.full(n, POSITIVE))
        ben = Dataset(schema, B, np.full(n, BENIGN))
        reference = fit(pos, ben, seed=0)
        assert all(c.feature == 0 for r in reference.rules for c in r.conditions)
        # evolved: f0 collapses to benign range, overlay grows past 100
        evolved_X = X.copy()
        evolved_X[:, 0] = rng.normal(0, 0.5, n)
        evolved_X[:, 2] = 120.0
        evolved = Dataset(schema, evolved_X, np.full(n, POSITIVE))
        new = fit(evolved, ben, seed=0)
        diff = diff_rulesets(reference, new)
        assert 2 in [p.feature for p in diff.added_features]


class TestRenderReport:
    def test_empty_diff_message(self):
        rules = example_ruleset()
        text, obj = render_report(diff_rulesets(rules, rules), example_schema())
        assert "No rule-level changes detected." in text
        assert obj["added"] == [] and obj["changed"] == []

    def test_changed_block_names_feature_and_values(self):
        schema = FeatureSchema(
            (Feature("f1"), Feature("f2"), Feature("f3", kind="categorical"))
        )
        ref = _ruleset(schema, Rule((Condition(2, "eq", 72.0),)))
        new = _ruleset(schema, Rule((Condition(2, "eq", 80.0),)))
        text, _ = render_report(diff_rulesets(ref, new), schema)
        assert "CHANGED f3" in text
        assert "72" in text and "80" in text

    def test_verdict_header(self):
        rules = example_ruleset()
        verdict = DriftVerdict(distance=0.35, threshold=0.20, drifted=True, magnitude=0.35)
        text, obj = render_report(diff_rulesets(rules, rules, verdict), example_schema())
        assert text.startswith("DRIFT DETECTED")
        assert "0.3500" in text and "0.2000" in text
        assert obj["drift"]["drifted"] is True

    def test_schema_fingerprint_checked(self):
        rules = example_ruleset()
        with pytest.raises(ValueError, match="fingerprint"):
            render_report(diff_rulesets(rules, rules), _schema4())
