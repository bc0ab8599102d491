"""Command-line entry point.

Exit codes: 0 success, 1 verification failed, 2 bad flags or config,
3 I/O error, 4 data validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import attribution, harness
from .data import InvalidInputError, read_csv, read_table, write_csv
from .datagen import chip_pipeline, gen_simulated
from .gbt import STANDARD_PARAMS, ConfigError, TrainConfig, fit, load_model
from .gfa import FAMILIES, compute_gfa
from .metrics import normalize_l1, risk

EXIT_FAIL, EXIT_USAGE, EXIT_IO, EXIT_DATA = 1, 2, 3, 4
TOLERANCE = 1e-8
LOCAL_TOLERANCE = 1e-9


class UsageError(Exception):
    pass


def cmd_train(args) -> int:
    config = TrainConfig(
        eta=args.eta,
        reg_lambda=args.reg_lambda,
        max_depth=args.max_depth,
        min_child_weight=args.min_child_weight,
        num_boost_round=args.num_boost_round,
        loss="squared_error" if args.task == "regression" else "logistic",
        seed=args.seed,
    )
    data = read_csv(args.data, args.label_column, args.task)
    model = fit(data, config)
    model.save(args.model_out)
    print(f"train_risk\t{risk(model, data)!r}")
    return 0


def _load(args, data_attr="data"):
    model = load_model(args.model)
    data = read_csv(getattr(args, data_attr), args.label_column, model.task)
    return model, data


def cmd_verify(args) -> int:
    model, train = _load(args, "train_data")
    _per_tree, tg = attribution.total_gain(model)
    via = attribution.total_gain_via_inner(model, train).sum(axis=0)
    if np.any(tg) or np.any(via):
        diff = float(np.max(np.abs(normalize_l1(tg) - normalize_l1(via))))
    else:
        diff = 0.0
    ok = diff <= args.tolerance
    print(f"total_gain_max_abs_normalized_diff\t{diff:.3e}\t{'ok' if ok else 'FAIL'}")
    for ifa in attribution.IFA_KINDS:
        res = attribution.local_accuracy_residual(model, train.features, ifa)
        good = res <= LOCAL_TOLERANCE
        ok &= good
        print(f"local_accuracy_max_residual[{ifa}]\t{res:.3e}\t{'ok' if good else 'FAIL'}")
    if model.config_.reg_lambda == 0 and model.loss == "squared_error":
        sums = attribution.feature_sums(model, train.features)
        worst = float(np.abs(sums).max())
        bound = args.tolerance * train.n_samples
        good = worst <= bound
        ok &= good
        print(f"zero_sum_max_abs\t{worst:.3e}\t(bound {bound:.3e})\t{'ok' if good else 'FAIL'}")
    else:
        print("zero_sum_max_abs\tn/a (requires reg_lambda=0 and squared_error)")
    return 0 if ok else EXIT_FAIL


def cmd_gfa(args) -> int:
    model, data = _load(args)
    kwargs = {"n_repeats": args.n_repeats, "seed": args.seed} if args.family == "permutation" else {}
    result = compute_gfa(model, args.family, data, args.domain_tag, args.ifa, model_id=str(args.model), **kwargs)
    out = Path(args.out)
    if out.suffix.lower() == ".json":
        result.to_json(out)
    else:
        result.to_csv(out)
    for name, s in zip(result.names(), result.scores):
        print(f"{name}\t{s!r}")
    return 0


def cmd_attribute(args) -> int:
    model, data = _load(args)
    if args.ifa == "predecomp":
        attr = attribution.predecomp(model, data.features)
    else:
        attr = attribution.saabas_tilde_ifa(model, data.features)
    sidecar = attribution.export_attributions(attr, args.out, data.feature_names)
    print(f"wrote {args.out} and {sidecar}")
    if args.forest_out:
        attribution.export_forest(attr, args.forest_out, data.feature_names)
        print(f"wrote {args.forest_out}")
    return 0


def cmd_experiment(args) -> int:
    config = harness.ExperimentConfig.from_json(args.config)
    jobs = args.jobs if args.jobs is not None else (config.n_jobs if config.n_jobs is not None else os.cpu_count())
    report = harness.run_experiment(config, n_jobs=jobs)
    for path in harness.emit_report(report, args.out_dir):
        print(f"wrote {path}")
    return 0


def cmd_gen_data(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "simulated":
        train, valid, truth = gen_simulated(args.n_train, args.n_valid, args.task, args.seed)
    else:
        if not args.input:
            raise UsageError("--input is required for --kind chip")
        table, names = read_table(args.input)
        if args.drop_column:
            keep = [j for j, nm in enumerate(names) if nm not in args.drop_column]
            table, names = table[:, keep], [names[j] for j in keep]
        train, valid, truth = chip_pipeline(table, args.task, args.seed, args.n_train, names)
    write_csv(train, out / "train.csv", args.label_column)
    write_csv(valid, out / "valid.csv", args.label_column)
    truth.write(out / "truth.json")
    print(json.dumps(truth.to_dict()))
    return 0


def _add_data_flags(p, data_flag="--data"):
    p.add_argument(data_flag, required=True, help="CSV with a header row")
    p.add_argument("--label-column", default="y", help="label column name (default: y)")


def build_parser() -> argparse.ArgumentParser:
    names = ", ".join(STANDARD_PARAMS)
    parser = argparse.ArgumentParser(
        prog="treeinner",
        description="Boosted trees with PreDecomp attributions and TreeInner feature importance.",
        epilog=f"Training hyperparameters: {names}.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write its JSON dump")
    _add_data_flags(p)
    p.add_argument("--task", choices=("regression", "classification"), default="regression")
    p.add_argument("--eta", type=float, default=STANDARD_PARAMS["eta"], help="learning rate (default: %(default)s)")
    p.add_argument("--max_depth", type=int, default=STANDARD_PARAMS["max_depth"], help="default: %(default)s")
    p.add_argument(
        "--min_child_weight", type=float, default=STANDARD_PARAMS["min_child_weight"], help="default: %(default)s"
    )
    p.add_argument(
        "--num_boost_round", type=int, default=STANDARD_PARAMS["num_boost_round"], help="default: %(default)s"
    )
    p.add_argument("--reg_lambda", type=float, default=STANDARD_PARAMS["reg_lambda"], help="default: %(default)s")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="check the total-gain identity and local accuracy")
    p.add_argument("--model", required=True)
    _add_data_flags(p, "--train-data")
    p.add_argument("--tolerance", type=float, default=TOLERANCE)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gfa", help="compute a global feature attribution")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.add_argument("--family", choices=FAMILIES, default="tree_inner")
    p.add_argument("--ifa", choices=attribution.IFA_KINDS, default="predecomp")
    p.add_argument("--domain-tag", choices=("train", "valid"), default="valid")
    p.add_argument("--n-repeats", type=int, default=1, help="permutation repeats")
    p.add_argument("--seed", type=int, default=0, help="permutation seed")
    p.add_argument("--out", required=True, help="CSV, or JSON when the name ends in .json")
    p.set_defaults(func=cmd_gfa)

    p = sub.add_parser("attribute", help="export per-tree attributions")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.add_argument("--ifa", choices=attribution.IFA_KINDS, default="predecomp")
    p.add_argument("--out", required=True, help="long-form CSV; biases go to <out>.bias.json")
    p.add_argument("--forest-out", help="optional n x p forest-level CSV")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("experiment", help="run a replicated experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=None, help="parallel replications (default: logical CPUs)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gen-data", help="write a benchmark train/valid split and truth sidecar")
    p.add_argument("--kind", choices=("simulated", "chip"), default="simulated")
    p.add_argument("--task", choices=("regression", "classification"), default="regression")
    p.add_argument("--input", help="feature table CSV for --kind chip")
    p.add_argument("--drop-column", action="append", default=[], help="column to drop from --input")
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-valid", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-column", default="y")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "gen-data" and args.kind == "simulated" and args.n_train is None:
        args.n_train = 1000
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except harness.ExperimentError as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        cause = exc.__cause__
        return EXIT_DATA if isinstance(cause, InvalidInputError) else EXIT_IO if isinstance(cause, OSError) else EXIT_FAIL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
