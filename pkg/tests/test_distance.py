import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rulemorph.distance import (
    EvaluationPool,
    FiringVector,
    TAG_BENIGN,
    TAG_SET_A,
    TAG_SET_B,
    build_pool,
    firing_vector,
    hamming_distance,
    ruleset_distance,
)
from rulemorph.feature_model import BENIGN, Feature, FeatureSchema, POSITIVE
from rulemorph.ripper import Condition, Rule, RuleSet, SchemaMismatchError, make_ruleset

from conftest import toy_dataset
from test_ripper import example_ruleset, example_schema


def _pool(rows, schema=None):
    schema = schema or FeatureSchema.all_numeric([f"f{i}" for i in range(len(rows[0]))])
    return EvaluationPool(schema, np.asarray(rows, dtype=float), tuple("benign" for _ in rows))


class TestPool:
    def test_empty_pool_rejected(self):
        schema = FeatureSchema.all_numeric(["f0"])
        with pytest.raises(ValueError, match="non-empty"):
            EvaluationPool(schema, np.empty((0, 1)), ())

    def test_build_pool_order_and_tags(self):
        a = toy_dataset([[1.0]], labels=[POSITIVE])
        b = toy_dataset([[2.0]], labels=[POSITIVE])
        ben = toy_dataset([[3.0]], labels=[BENIGN])
        pool = build_pool(a, b, ben)
        assert pool.samples[:, 0].tolist() == [1.0, 2.0, 3.0]
        assert pool.origins == (TAG_SET_A, TAG_SET_B, TAG_BENIGN)

    def test_fingerprint_binds_order(self):
        a = _pool([[1.0], [2.0]])
        b = _pool([[2.0], [1.0]])
        assert a.fingerprint() != b.fingerprint()


class TestFiringVector:
    def test_empty_ruleset_all_zero(self):
        pool = _pool([[1.0], [2.0], [3.0]])
        empty = RuleSet((), pool.schema.fingerprint())
        fv = firing_vector(empty, pool)
        assert fv.bits.tolist() == [0, 0, 0]
        assert fv.pool_fingerprint == pool.fingerprint()

    def test_always_firing_rule_all_one(self):
        schema = FeatureSchema((Feature("f0", bin_edges=(10.0,)),))
        pool = _pool([[1.0], [2.0]], schema)
        rules = make_ruleset([Rule((Condition(0, "le", 10.0),))], schema)
        assert firing_vector(rules, pool).bits.tolist() == [1, 1]

    def test_example_rules_over_two_sample_pool(self):
        pool = EvaluationPool(
            example_schema(),
            np.array([[20.0, 1.0, 72.0], [20.0, 1.0, 71.0]]),
            ("setA-positive", "setA-positive"),
        )
        fv = firing_vector(example_ruleset(), pool)
        assert fv.bits.tolist() == [1, 0]

    def test_schema_mismatch_rejected(self):
        pool = _pool([[1.0]])
        with pytest.raises(SchemaMismatchError):
            firing_vector(example_ruleset(), pool)

    def test_bits_must_be_binary(self):
        with pytest.raises(ValueError):
            FiringVector(np.array([0, 2]), "abc")


class TestHammingDistance:
    def _fv(self, bits, fp="pool"):
        return FiringVector(np.array(bits, dtype=np.uint8), fp)

    def test_half_disagreement(self):
        assert hamming_distance(self._fv([1, 0, 1, 0]), self._fv([0, 1, 1, 0])) == 0.5

    def test_identity(self):
        fv = self._fv([1, 0, 1])
        assert hamming_distance(fv, fv) == 0.0

    def test_maximal(self):
        assert hamming_distance(self._fv([1, 1, 1]), self._fv([0, 0, 0])) == 1.0

    def test_pool_mismatch_message(self):
        with pytest.raises(ValueError, match="vectors from different pools"):
            hamming_distance(self._fv([1], "a"), self._fv([1], "b"))

    @given(st.data())
    @settings(max_examples=120, deadline=None)
    def test_pseudometric_properties(self, data):
        n = data.draw(st.integers(1, 64))
        bits = st.lists(st.integers(0, 1), min_size=n, max_size=n)
        x = self._fv(data.draw(bits))
        y = self._fv(data.draw(bits))
        z = self._fv(data.draw(bits))
        dxy = hamming_distance(x, y)
        assert 0.0 <= dxy <= 1.0
        assert hamming_distance(x, x) == 0.0
        assert dxy == hamming_distance(y, x)
        assert dxy <= hamming_distance(x, z) + hamming_distance(z, y) + 1e-15


class TestRulesetDistance:
    def _schema(self):
        return FeatureSchema((Feature("f0", bin_edges=(2.5, 5.5, 7.5)),))

    def test_identical_rulesets_zero(self):
        schema = self._schema()
        pool = _pool([[float(i)] for i in range(10)], schema)
        rules = make_ruleset([Rule((Condition(0, "le", 5.5),))], schema)
        assert ruleset_distance(rules, rules, pool) == 0.0

    def test_everywhere_vs_nowhere_is_one(self):
        schema = self._schema()
        pool = _pool([[float(i)] for i in range(4)], schema)
        fires = make_ruleset([Rule((Condition(0, "ge", -1.0),))], schema)
        never = RuleSet((), schema.fingerprint())
        assert ruleset_distance(fires, never, pool) == 1.0

    def test_crafted_ten_sample_pool_scores_point_six(self):
        # a fires on values 0..5 (6 samples), b on 4..7 (4 samples), overlap {4,5}
        schema = FeatureSchema((Feature("f0", bin_edges=(4.0, 5.5, 7.0)),))
        pool = _pool([[float(i)] for i in range(10)], schema)
        a = make_ruleset([Rule((Condition(0, "le", 5.5),))], schema)
        b = make_ruleset([Rule((Condition(0, "in", (4.0, 7.0)),))], schema)
        a_bits = firing_vector(a, pool).bits
        b_bits = firing_vector(b, pool).bits
        assert a_bits.sum() == 6 and b_bits.sum() == 4
        assert int(np.count_nonzero(a_bits & b_bits)) == 2
        # direct count of disagreeing positions
        expected = float(np.count_nonzero(a_bits != b_bits)) / 10
        assert ruleset_distance(a, b, pool) == expected == 0.6

    def test_symmetry(self):
        schema = self._schema()
        pool = _pool([[float(i)] for i in range(10)], schema)
        a = make_ruleset([Rule((Condition(0, "le", 2.5),))], schema)
        b = make_ruleset([Rule((Condition(0, "ge", 7.5),))], schema)
        assert ruleset_distance(a, b, pool) == ruleset_distance(b, a, pool)

    def test_pool_order_invariance(self):
        schema = self._schema()
        rows = [[float(i)] for i in range(10)]
        perm = np.random.default_rng(0).permutation(10)
        pool = _pool(rows, schema)
        shuffled = EvaluationPool(schema, pool.samples[perm], tuple(pool.origins[i] for i in perm))
        a = make_ruleset([Rule((Condition(0, "le", 5.5),))], schema)
        b = make_ruleset([Rule((Condition(0, "ge", 2.5),))], schema)
        assert ruleset_distance(a, b, pool) == ruleset_distance(a, b, shuffled)
