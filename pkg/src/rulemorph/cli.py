"""Command-line pipeline: extract, learn, compare, calibrate, detect, explain.

All randomness in a subcommand derives from its single --seed, so repeated
invocations with the same inputs produce byte-identical outputs. Every
output file records the tool version and seed in a header or metadata
field.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import __version__
from .distance import build_pool, disagreements, firing_vector
from .drift import (
    DEFAULT_DIMS,
    DEFAULT_TRIALS,
    Calibration,
    DegenerateCalibrationError,
    DriftVerdict,
    calibrate,
    detect,
    run_experiment,
)
from .explain import diff_rulesets, render_report
from .feature_model import (
    DataFormatError,
    Dataset,
    FeatureSchema,
    concat,
    discretize,
    load_dataset,
    save_dataset,
    select_features,
)
from .pe_features import PeFormatError, byte_histogram, extract_features, parse_pe, pe_schema
from .ripper import RuleSet, SchemaMismatchError, fit
from .synth_drift import DEFAULT_BUDGET, DEFAULT_INTENSITY, build_default_ops, evolve_family
from .synthetic import build_synthetic_suite, gen_synthetic

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


def _meta(seed: int) -> str:
    return f"rulemorph {__version__} seed={seed}"


def _meta_obj(seed: int) -> dict:
    return {"tool": "rulemorph", "version": __version__, "seed": seed}


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_rules(path: str) -> RuleSet:
    return RuleSet.from_json(Path(path).read_text())


def _load_with_schema(path: str, schema_path: str | None, default_label: int) -> Dataset:
    schema = FeatureSchema.load(schema_path) if schema_path else None
    return load_dataset(path, schema=schema, default_label=default_label)


def _cmd_extract_features(args) -> int:
    root = Path(args.path)
    if root.is_dir():
        files = sorted(p for p in root.rglob("*") if p.is_file())
    elif root.is_file():
        files = [root]
    else:
        raise DataFormatError(f"{root}: no such file or directory")
    schema = pe_schema()
    rows = []
    for path in files:
        data = path.read_bytes()
        try:
            vector = extract_features(parse_pe(data), byte_histogram(data))
        except PeFormatError as exc:
            print(f"skipping {path}: {exc}", file=sys.stderr)
            continue
        rows.append(vector)
        print(f"extracted {path}", file=sys.stderr)
    if not rows:
        raise DataFormatError("no PE file could be parsed")
    dataset = Dataset(schema, np.array(rows), np.ones(len(rows), dtype=int))
    save_dataset(dataset, args.out, meta=_meta(0))
    if args.schema_out:
        schema.save(args.schema_out)
    print(f"wrote {len(rows)} feature vectors to {args.out}")
    return EXIT_OK


def _cmd_learn_rules(args) -> int:
    positives = _load_with_schema(args.pos, args.schema, default_label=1).positives()
    benign = _load_with_schema(args.neg, args.schema, default_label=0).negatives()
    if args.schema is None:
        binned = discretize(concat([positives, benign]), args.bins)
        positives = positives.with_schema(binned)
        benign = benign.with_schema(binned)
    rules = fit(positives, benign, args.seed)
    obj = rules.to_obj()
    obj["meta"] = _meta_obj(args.seed)
    _write_json(Path(args.out), obj)
    if args.schema_out:
        positives.schema.save(args.schema_out)
    print(f"learned {len(rules)} rules -> {args.out}")
    return EXIT_OK


def _pool_from_args(args, fingerprint: str):
    pool_ds = _load_with_schema(args.pool, args.schema, default_label=1)
    if pool_ds.schema.fingerprint() != fingerprint:
        raise SchemaMismatchError(
            "pool schema does not match the rule sets; pass the --schema file "
            "emitted when the rules were learned"
        )
    return build_pool(pool_ds, None, None)


def _cmd_distance(args) -> int:
    rules_a = _load_rules(args.rules_a)
    rules_b = _load_rules(args.rules_b)
    if rules_a.schema_fingerprint != rules_b.schema_fingerprint:
        raise SchemaMismatchError("rule sets were fit against different schemas")
    pool = _pool_from_args(args, rules_a.schema_fingerprint)
    x = firing_vector(rules_a, pool)
    y = firing_vector(rules_b, pool)
    diff = disagreements(x, y)
    obj = {
        "distance": diff / len(pool),
        "n": len(pool),
        "disagreements": diff,
        "meta": _meta_obj(0),
    }
    _write_json(Path(args.out), obj)
    print(f"distance {obj['distance']!r} over {obj['n']} pool samples")
    return EXIT_OK


def _prepare_family(args) -> tuple[Dataset, Dataset, Dataset]:
    original = load_dataset(args.original, default_label=1).positives()
    evolved = load_dataset(args.evolved, default_label=1).positives()
    benign = load_dataset(args.benign, default_label=0).negatives()
    if args.k is not None:
        schema_k = select_features(original, benign, args.k)
        original = original.project(schema_k)
        evolved = evolved.project(schema_k)
        benign = benign.project(schema_k)
    binned = discretize(concat([original, benign]), args.bins)
    return (
        original.with_schema(binned),
        evolved.with_schema(binned),
        benign.with_schema(binned),
    )


def _cmd_calibrate(args) -> int:
    original, evolved, benign = _prepare_family(args)
    cal = calibrate(original, evolved, benign, args.trials, args.seed)
    obj = cal.to_obj()
    obj["meta"] = _meta_obj(args.seed)
    _write_json(Path(args.out), obj)
    print(
        f"threshold {cal.threshold!r} "
        f"(mean within {cal.mean_within!r}, mean cross {cal.mean_cross!r})"
    )
    return EXIT_OK


def _cmd_detect(args) -> int:
    new_rules = _load_rules(args.rules_new)
    ref_rules = _load_rules(args.rules_ref)
    if new_rules.schema_fingerprint != ref_rules.schema_fingerprint:
        raise SchemaMismatchError("rule sets were fit against different schemas")
    if args.threshold is not None:
        threshold = args.threshold
    elif args.calibration:
        threshold = Calibration.from_obj(
            {k: v for k, v in json.loads(Path(args.calibration).read_text()).items() if k != "meta"}
        ).threshold
    else:
        raise DataFormatError("detect needs --threshold or --calibration")
    pool = _pool_from_args(args, new_rules.schema_fingerprint)
    verdict = detect(new_rules, ref_rules, pool, threshold)
    obj = verdict.to_obj()
    obj["meta"] = _meta_obj(0)
    _write_json(Path(args.out), obj)
    state = "drift detected" if verdict.drifted else "no drift"
    print(f"{state}: distance {verdict.distance!r}, threshold {verdict.threshold!r}")
    return EXIT_OK


def _cmd_explain(args) -> int:
    reference = _load_rules(args.ref)
    new = _load_rules(args.new)
    schema = FeatureSchema.load(args.schema)
    verdict = None
    if args.verdict:
        obj = json.loads(Path(args.verdict).read_text())
        obj.pop("meta", None)
        verdict = DriftVerdict.from_obj(obj)
    diff = diff_rulesets(reference, new, verdict)
    text, obj = render_report(diff, schema)
    obj["meta"] = _meta_obj(0)
    base = Path(args.out)
    base.with_suffix(".txt").write_text(text)
    _write_json(base.with_suffix(".json"), obj)
    print(text, end="")
    return EXIT_OK


def _cmd_synth_evolve(args) -> int:
    positives = _load_with_schema(args.pos, args.schema, default_label=1).positives()
    rules = _load_rules(args.rules)
    benign = None
    if args.benign:
        benign = _load_with_schema(args.benign, args.schema, default_label=0).negatives()
    ops = build_default_ops(positives, benign, intensity=args.intensity)
    evolved, traces = evolve_family(positives, rules, args.budget, args.seed, ops)
    save_dataset(evolved, args.out, meta=_meta(args.seed))
    with open(args.traces, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": _meta_obj(args.seed)}, sort_keys=True) + "\n")
        for trace in traces:
            fh.write(trace.to_json() + "\n")
    evaded = sum(1 for t in traces if t.evaded)
    print(f"{evaded}/{len(traces)} attacked samples evaded -> {args.out}")
    return EXIT_OK


def _cmd_gen_synthetic(args) -> int:
    original, benign = gen_synthetic(
        args.dim, args.pos_count, args.benign_count, args.margin, args.seed,
        family_name=args.name,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(original, out_dir / f"{args.name}.csv", meta=_meta(args.seed))
    save_dataset(benign, out_dir / "benign.csv", meta=_meta(args.seed))
    original.schema.save(out_dir / "schema.json")
    print(f"wrote {len(original)} positives and {len(benign)} benign rows to {out_dir}")
    return EXIT_OK


def _experiment_config(args) -> dict:
    config: dict = {}
    if args.config:
        with open(args.config, "rb") as fh:
            config = tomllib.load(fh)
    exp = config.get("experiment", {})
    if args.seed is not None:
        exp["seed"] = args.seed
    if args.out_dir is not None:
        exp["out_dir"] = args.out_dir
    if args.trials is not None:
        exp["trials"] = args.trials
    exp.setdefault("seed", 0)
    exp.setdefault("out_dir", "./out")
    exp.setdefault("trials", DEFAULT_TRIALS)
    exp.setdefault("dims", list(DEFAULT_DIMS))
    exp.setdefault("bins", 10)
    config["experiment"] = exp
    return config


def _cmd_experiment(args) -> int:
    config = _experiment_config(args)
    exp = config["experiment"]
    seed = int(exp["seed"])
    if "synthetic" in config:
        families, benign = build_synthetic_suite(seed=seed, **config["synthetic"])
    elif config.get("family"):
        benign = load_dataset(exp["benign"], default_label=0).negatives()
        families = []
        for fam in config["family"]:
            original = load_dataset(fam["original"], default_label=1).positives()
            original.family_name = fam.get("name", original.family_name)
            evolved = load_dataset(fam["evolved"], default_label=1).positives()
            families.append((original, evolved))
    else:
        raise DataFormatError("config needs a [synthetic] table or [[family]] entries")
    report = run_experiment(
        families,
        benign,
        dims=exp["dims"],
        trials=int(exp["trials"]),
        base_seed=seed,
        bins=int(exp["bins"]),
    )
    out_dir = Path(exp["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    obj = report.to_obj()
    obj["meta"] = _meta_obj(seed)
    _write_json(out_dir / "report.json", obj)
    meta_line = f"# {_meta(seed)}\n"
    (out_dir / "curves.csv").write_text(meta_line + report.curves_csv())
    (out_dir / "errors.csv").write_text(meta_line + report.errors_csv())
    print(
        f"overall accuracy {report.overall_accuracy:.4f} over "
        f"{len(report.cells)} cells -> {out_dir}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rulemorph",
        description="Rule-based drift detection for evolving sample families.",
    )
    parser.add_argument("--version", action="version", version=f"rulemorph {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    p = sub.add_parser("extract-features", help="parse PE files into feature vectors")
    p.add_argument("path", help="PE file or directory")
    p.add_argument("--out", default="features.csv")
    p.add_argument("--schema-out", default=None)
    p.set_defaults(handler=_cmd_extract_features)

    p = sub.add_parser("learn-rules", help="induce a rule set from labeled CSVs")
    p.add_argument("--pos", required=True)
    p.add_argument("--neg", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--schema", default=None, help="pre-binned schema JSON (skips discretize)")
    p.add_argument("--schema-out", default=None, help="write the binned schema used for fitting")
    p.add_argument("--out", default="rules.json")
    p.set_defaults(handler=_cmd_learn_rules)

    p = sub.add_parser("distance", help="normalized Hamming distance of two rule sets")
    p.add_argument("--rules-a", required=True)
    p.add_argument("--rules-b", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--out", default="score.json")
    p.set_defaults(handler=_cmd_distance)

    p = sub.add_parser("calibrate", help="derive the drift decision threshold")
    p.add_argument("--original", required=True)
    p.add_argument("--evolved", required=True)
    p.add_argument("--benign", required=True)
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--k", type=int, default=None, help="select k features first")
    p.add_argument("--out", default="calibration.json")
    p.set_defaults(handler=_cmd_calibrate)

    p = sub.add_parser("detect", help="apply the decision rule to two rule sets")
    p.add_argument("--rules-new", required=True)
    p.add_argument("--rules-ref", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--calibration", default=None)
    p.add_argument("--out", default="verdict.json")
    p.set_defaults(handler=_cmd_detect)

    p = sub.add_parser("explain", help="diff two rule sets feature by feature")
    p.add_argument("--ref", required=True)
    p.add_argument("--new", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--verdict", default=None)
    p.add_argument("--out", default="report", help="basename for .txt and .json outputs")
    p.set_defaults(handler=_cmd_explain)

    p = sub.add_parser("synth-evolve", help="evolve a family against a rule set")
    p.add_argument("--pos", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--benign", default=None, help="benign CSV for gap-directed shifts")
    p.add_argument("--schema", default=None)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.add_argument("--intensity", type=float, default=DEFAULT_INTENSITY)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="evolved.csv")
    p.add_argument("--traces", default="traces.jsonl")
    p.set_defaults(handler=_cmd_synth_evolve)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic family plus benign set")
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--pos-count", type=int, default=200)
    p.add_argument("--benign-count", type=int, default=200)
    p.add_argument("--margin", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--out-dir", default="./out")
    p.set_defaults(handler=_cmd_gen_synthetic)

    p = sub.add_parser("experiment", help="families x dimensionalities x trials harness")
    p.add_argument("--config", default=None, help="TOML experiment configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(handler=_cmd_experiment)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if not hasattr(args, "handler"):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.handler(args)
    except (
        DataFormatError,
        PeFormatError,
        SchemaMismatchError,
        DegenerateCalibrationError,
        ValueError,
        TypeError,
        KeyError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    raise SystemExit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
