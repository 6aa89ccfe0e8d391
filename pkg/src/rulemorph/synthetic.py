"""Desk-scale synthetic sample families for calibration and testing.

Generative recipe (all draws from one seeded generator, in fixed order):

* benign samples are standard normal on every feature;
* a seeded subset of features (``informative_fraction`` of the dimension,
  at least one) is informative for the family: each gets a signed offset
  of ``margin`` and family values are drawn from the two-component
  mixture 0.7 * N(margin * s, 0.6) + 0.3 * N(0.75 * margin * s, 0.9);
* the remaining family features are standard normal, like benign.

``margin = 0`` makes the two classes indistinguishable; large margins make
them cleanly separable.
"""

from __future__ import annotations

import numpy as np

from .feature_model import BENIGN, Dataset, FeatureSchema, POSITIVE, concat, discretize

DEFAULT_MARGINS = (3.0, 2.4, 2.0, 1.8, 1.6, 1.3)


def gen_synthetic(
    dim: int,
    n_pos: int,
    n_benign: int,
    margin: float,
    seed: int,
    informative_fraction: float = 0.5,
    family_name: str = "synthetic",
) -> tuple[Dataset, Dataset]:
    """Draw one family (positives) and one benign dataset sharing a schema."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if n_pos < 1 or n_benign < 1:
        raise ValueError("sample counts must be positive")
    rng = np.random.default_rng(seed)
    n_informative = max(1, round(dim * informative_fraction))
    informative = np.sort(rng.choice(dim, size=n_informative, replace=False))
    signs = rng.choice((-1.0, 1.0), size=n_informative)

    benign = rng.normal(0.0, 1.0, size=(n_benign, dim))
    family = rng.normal(0.0, 1.0, size=(n_pos, dim))
    for idx, sign in zip(informative, signs):
        component = rng.random(n_pos) < 0.7
        near = rng.normal(margin * sign, 0.6, size=n_pos)
        far = rng.normal(0.75 * margin * sign, 0.9, size=n_pos)
        family[:, idx] = np.where(component, near, far)

    schema = FeatureSchema.all_numeric([f"f{i}" for i in range(dim)])
    original = Dataset(schema, family, np.full(n_pos, POSITIVE), family_name=family_name)
    negatives = Dataset(schema, benign, np.full(n_benign, BENIGN), family_name="benign")
    return original, negatives


def build_synthetic_suite(
    families: int = 6,
    dim: int = 110,
    n_pos: int = 220,
    n_benign: int = 220,
    margins: tuple[float, ...] | list[float] = DEFAULT_MARGINS,
    budget: int = 60,
    intensity: float = 1.0,
    seed: int = 0,
    bins: int = 10,
) -> tuple[list[tuple[Dataset, Dataset]], Dataset]:
    """Generate families and evolve each against its own fitted rule set.

    One benign set is shared across families. Per family: fit a full-dim
    target rule set, build the default op kit from the family/benign gap,
    run the attack+minimize evolution, and keep the evaders as the evolved
    generation. Deterministic per seed.
    """
    from .ripper import fit
    from .synth_drift import build_default_ops, evolve_family

    out: list[tuple[Dataset, Dataset]] = []
    shared_benign: Dataset | None = None
    for i in range(families):
        fam_seed = seed + 7919 * (i + 1)
        margin = margins[i % len(margins)]
        original, benign_i = gen_synthetic(
            dim, n_pos, n_benign, margin, fam_seed, family_name=f"family_{i}"
        )
        if shared_benign is None:
            shared_benign = benign_i
        binned = discretize(concat([original, shared_benign]), bins)
        orig_b = original.with_schema(binned)
        ben_b = shared_benign.with_schema(binned)
        target = fit(orig_b, ben_b, fam_seed)
        ops = build_default_ops(original, shared_benign, intensity=intensity)
        evolved, _traces = evolve_family(orig_b, target, budget, fam_seed, ops)
        out.append((original, evolved.with_schema(original.schema)))
    assert shared_benign is not None
    return out, shared_benign
