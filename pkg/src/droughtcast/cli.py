"""Command-line entry point. Exit codes: 0 ok, 2 bad input, 3 stage failure, 4 no survivors."""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, DroughtcastError, NoSurvivorsError, SingularDesignError, StageError, TrainingError

EXIT_OK, EXIT_INVALID, EXIT_STAGE, EXIT_NO_SURVIVORS = 0, 2, 3, 4


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _dump(obj, path) -> None:
    if path:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1)
    else:
        json.dump(obj, sys.stdout, indent=1)
        sys.stdout.write("\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .data_ingest import SyntheticConfig, generate_synthetic_panel, write_panel_csv
    from .pipeline import tomllib

    values = {}
    if args.config:
        with open(args.config, "rb") as fh:
            data = tomllib.load(fh)
        # either a pipeline config with a [synthetic] table or bare generator settings
        if "synthetic" in data:
            values = {"seed": data.get("seed"), **data["synthetic"]}
        else:
            values = dict(data)
    for key in ("seed", "n_counties", "n_years"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if values.get("seed") is None:
        raise ConfigError("synth needs a seed (--seed or in --config)")
    config = SyntheticConfig.from_mapping(values)
    write_panel_csv(generate_synthetic_panel(config), args.out)
    return EXIT_OK


def cmd_ingest(args) -> int:
    from .data_ingest import parse_panel_csv, validate_panel

    report = validate_panel(parse_panel_csv(args.input))
    _dump(report.to_dict(), args.out)
    return EXIT_OK if report.accepted else EXIT_INVALID


def cmd_indices(args) -> int:
    from .data_ingest import parse_panel_csv
    from .indices import build_index_table, write_index_table

    table = build_index_table(parse_panel_csv(args.panel), args.baseline)
    write_index_table(table, args.out)
    return EXIT_OK


def cmd_features(args) -> int:
    from .features import build_feature_table, write_feature_table
    from .indices import read_index_table

    write_feature_table(build_feature_table(read_index_table(args.indices)), args.out)
    return EXIT_OK


def cmd_split(args) -> int:
    from .features import make_split_plan, read_feature_table, write_split_plan

    table = read_feature_table(args.features)
    write_split_plan(make_split_plan(table, args.holdout_months, args.k, args.seed), args.out)
    return EXIT_OK


def cmd_enumerate(args) -> int:
    from .model_space import enumerate_models, write_models

    write_models(enumerate_models(), args.out)
    return EXIT_OK


def cmd_gam(args) -> int:
    from .features import read_feature_table, read_split_plan
    from .gam import run_gam_stage
    from .model_space import enumerate_models, read_models

    models = read_models(args.models) if args.models else enumerate_models()
    report = run_gam_stage(models, read_feature_table(args.features), read_split_plan(args.plan),
                           args.threshold, args.smooth_all, jobs=args.jobs)
    report.write(args.out)
    if not report.selected:
        raise NoSurvivorsError(f"no model reached mean training R^2 >= {args.threshold}", stage="gam")
    return EXIT_OK


def cmd_ann(args) -> int:
    from .ann import TrainConfig, run_ann_stage
    from .features import read_feature_table, read_split_plan
    from .model_space import read_models

    config = TrainConfig(max_steps=args.max_steps, threshold=args.stop_threshold)
    report = run_ann_stage(read_models(args.models), read_feature_table(args.features),
                           read_split_plan(args.plan), args.arch, config, args.seed, jobs=args.jobs)
    report.write(args.out)
    report.champion.write(args.champion)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .ann import Champion
    from .evaluation import evaluate_champion, write_evaluation
    from .features import read_feature_table, read_split_plan

    report = evaluate_champion(Champion.read(args.champion), read_feature_table(args.features),
                               read_split_plan(args.plan))
    write_evaluation(report, args.out)
    return EXIT_OK


def _pipeline_config(args):
    from .pipeline import PipelineConfig

    overrides = {
        "seed": args.seed,
        "input": args.input,
        "baseline": args.baseline,
        "holdout_months": args.holdout_months,
        "k": args.k,
        "threshold": args.threshold,
        "arch": args.arch,
        "max_steps": args.max_steps,
        "stop_threshold": args.stop_threshold,
        "smooth_all": args.smooth_all,
        "validate_assumption": args.validate_assumption,
    }
    if args.config:
        return PipelineConfig.from_toml(args.config, overrides)
    return PipelineConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})


def cmd_pipeline(args) -> int:
    from .pipeline import run_pipeline

    bundle = run_pipeline(_pipeline_config(args), args.out, jobs=args.jobs)
    ev = bundle.evaluation
    print(f"champion {bundle.champion.model_id}: test R^2 {ev['metrics']['r2']:.3f}, "
          f"phase accuracy {ev['accuracy']:.3f}")
    return EXIT_OK


def cmd_validate_assumption(args) -> int:
    from .pipeline import run_assumption_validation

    report = run_assumption_validation(_pipeline_config(args), args.out, jobs=args.jobs)
    if report["best_model"]:
        print(f"{report['n_models']} non-selected models; best test R^2 {report['best_test_r2']:.3f} "
              f"({report['best_model']}), champion {report['champion_test_r2']:.3f}")
    else:
        print("no non-selected models")
    return EXIT_OK


def cmd_report(args) -> int:
    from .pipeline import emit_report

    for path in emit_report(args.run, args.format, args.out):
        print(path)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_pipeline_fields(p) -> None:
    p.add_argument("--config", help="TOML file with pipeline settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--input", help="panel CSV; omit to use the synthetic panel")
    p.add_argument("--baseline", type=_ints, help="first,last baseline year")
    p.add_argument("--holdout-months", dest="holdout_months", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--arch", type=_ints)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--stop-threshold", dest="stop_threshold", type=float)
    p.add_argument("--smooth-all", dest="smooth_all", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--validate-assumption", dest="validate_assumption",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="droughtcast", description="GAM/ANN drought forecasting")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for model fitting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dekadal panel")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-counties", dest="n_counties", type=int)
    p.add_argument("--n-years", dest="n_years", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse and validate a panel CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--report", "--out", dest="out", help="write the validation report here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("indices", help="compute the index table")
    p.add_argument("--input", "--panel", dest="panel", required=True)
    p.add_argument("--baseline", type=_ints)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_indices)

    p = sub.add_parser("features", help="build the lagged feature table")
    p.add_argument("--indices", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("split", help="test holdout and k random partitions")
    p.add_argument("--features", required=True)
    p.add_argument("--holdout", "--holdout-months", dest="holdout_months", type=int, default=24)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("enumerate", help="list the candidate models")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("gam", help="GAM screening stage")
    p.add_argument("--features", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--models", help="models.json (default: all candidates)")
    p.add_argument("--threshold", type=float, default=0.70)
    p.add_argument("--smooth-all", dest="smooth_all", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gam)

    p = sub.add_parser("ann", help="ANN stage and champion selection")
    p.add_argument("--features", required=True)
    p.add_argument("--models", required=True, help="gam_report.json or models.json")
    p.add_argument("--plan", required=True)
    p.add_argument("--arch", type=_ints, default=(5, 3))
    p.add_argument("--max-steps", dest="max_steps", type=int, default=1_000_000)
    p.add_argument("--stop-threshold", dest="stop_threshold", type=float, default=0.01)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--champion", default="champion.json")
    p.set_defaults(func=cmd_ann)

    p = sub.add_parser("evaluate", help="score the champion on the test months")
    p.add_argument("--champion", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run every stage")
    _add_pipeline_fields(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("validate-assumption", help="train ANNs for the models the GAM stage rejected")
    _add_pipeline_fields(p)
    p.set_defaults(func=cmd_validate_assumption)

    p = sub.add_parser("report", help="tables and summaries from a finished run")
    p.add_argument("--run", required=True, help="pipeline output directory")
    p.add_argument("--format", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoSurvivorsError as exc:
        print(f"no survivors: {exc}", file=sys.stderr)
        return EXIT_NO_SURVIVORS
    except (StageError, TrainingError, SingularDesignError) as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (DroughtcastError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
