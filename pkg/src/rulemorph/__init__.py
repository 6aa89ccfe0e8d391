"""Interpretable concept-drift detection for evolving sample families.

Rule sets induced on two generations of a family are compared by the
normalized Hamming distance of their firing vectors over a shared
evaluation pool; distances above the calibrated decision threshold signal
drift, and a structured rule-set diff explains which features moved.
"""

__version__ = "0.1.0"

from .distance import (
    EvaluationPool,
    FiringVector,
    build_pool,
    firing_vector,
    hamming_distance,
    ruleset_distance,
)
from .drift import (
    Calibration,
    DriftVerdict,
    ExperimentReport,
    calibrate,
    detect,
    run_experiment,
)
from .explain import FeatureProfile, RuleDiff, diff_rulesets, profile_ruleset, render_report
from .feature_model import (
    Dataset,
    Feature,
    FeatureSchema,
    discretize,
    load_dataset,
    save_dataset,
    select_features,
    split_half,
)
from .pe_features import ByteHistogram, PeSummary, byte_histogram, extract_features, parse_pe, pe_schema
from .ripper import (
    Condition,
    Rule,
    RuleSet,
    description_length,
    fit,
    foil_gain,
    grow_rule,
    optimize,
    predict,
    prune_rule,
)
from .synth_drift import (
    BanditState,
    EvolutionTrace,
    ManipulationOp,
    apply_op,
    attack,
    build_default_ops,
    evolve_family,
    minimize,
)
from .synthetic import gen_synthetic

__all__ = [
    "__version__",
    "BanditState",
    "ByteHistogram",
    "Calibration",
    "Condition",
    "Dataset",
    "DriftVerdict",
    "EvaluationPool",
    "EvolutionTrace",
    "ExperimentReport",
    "Feature",
    "FeatureProfile",
    "FeatureSchema",
    "FiringVector",
    "ManipulationOp",
    "PeSummary",
    "Rule",
    "RuleDiff",
    "RuleSet",
    "apply_op",
    "attack",
    "build_default_ops",
    "build_pool",
    "byte_histogram",
    "calibrate",
    "description_length",
    "detect",
    "diff_rulesets",
    "discretize",
    "evolve_family",
    "extract_features",
    "firing_vector",
    "fit",
    "foil_gain",
    "gen_synthetic",
    "grow_rule",
    "hamming_distance",
    "load_dataset",
    "minimize",
    "optimize",
    "parse_pe",
    "pe_schema",
    "predict",
    "profile_ruleset",
    "prune_rule",
    "render_report",
    "ruleset_distance",
    "run_experiment",
    "save_dataset",
    "select_features",
    "split_half",
]
