"""Command-line interface: ``fuscale <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__, pipeline
from .exceptions import AnalysisError, ConfigError, DataQualityError, SchemaError
from .ingest import QualityPolicy, apply_quality_filters, parse_responses, write_responses
from .instruments import BUILTIN_INSTRUMENTS, get_instrument
from .pipeline import EXIT_ANALYSIS, EXIT_OK, EXIT_QUALITY, EXIT_USAGE, PipelineConfig, PipelineError
from .reliability import scores_to_csv
from .simgen import default_fixture_spec, generate_rating_fixture, load_fixture_spec


def _factors(text):
    if text == "auto":
        return "auto"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--factors must be an integer or 'auto'") from None
    if value < 1:
        raise argparse.ArgumentTypeError("--factors must be positive")
    return value


def _add_input(p, responses_only=False):
    p.add_argument("--responses", metavar="PATH", help="response CSV")
    if not responses_only:
        p.add_argument("--corr", metavar="PATH", help="correlation matrix CSV (needs --n)")
        p.add_argument("--n", type=int, help="sample size behind --corr")
    p.add_argument("--instrument", help="fus-numerical, fus-categorical, a draft id, or an instrument JSON path")
    p.add_argument("--seed", type=int, help="split seed (default: $FUS_SEED, else 0)")
    p.add_argument("--format", choices=("json", "text", "csv"), default="json")
    p.add_argument("--out", metavar="DIR", help="write output files here instead of stdout")


def _add_analysis(p):
    p.add_argument("--factors", type=_factors, default="auto", help="number of factors or 'auto'")
    p.add_argument("--rotation", choices=("none", "varimax", "promax"), default="promax")
    p.add_argument("--keep", nargs="+", default=[], metavar="ITEM", help="items never removed by reduction")
    p.add_argument("--drop", nargs="+", default=[], metavar="ITEM", help="items removed before the EFA")
    p.add_argument("--structure", metavar="PATH", help="CFA structure JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fuscale", description="Validate feature-understandability questionnaires.")
    parser.add_argument("--version", action="version", version=f"fuscale {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="parse responses and apply quality filters")
    _add_input(p, responses_only=True)
    p.add_argument("--drop-time-outliers", action="store_true")

    for name, text in (("factorability", "Bartlett test, KMO and item-total correlations"),
                       ("efa", "ML factor analysis with rotation and item reduction"),
                       ("cfa", "confirmatory factor analysis with a one-factor comparison"),
                       ("reliability", "omega, AVE and alpha per factor")):
        p = sub.add_parser(name, help=text)
        _add_input(p)
        _add_analysis(p)

    p = sub.add_parser("score", help="per-feature understandability scores and ranks")
    _add_input(p, responses_only=True)

    p = sub.add_parser("simulate", help="write a synthetic response fixture")
    p.add_argument("--model", metavar="PATH", help="fixture specification JSON (default: built-in)")
    p.add_argument("--n-per-feature", type=int, default=240)
    p.add_argument("--attention-fail-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="PATH", required=True, help="output CSV path")

    p = sub.add_parser("pipeline", help="run every stage and write the full report")
    _add_input(p)
    _add_analysis(p)
    p.add_argument("--drop-time-outliers", action="store_true")
    return parser


def resolve_seed(value):
    if value is not None:
        return value
    env = os.environ.get("FUS_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"FUS_SEED must be an integer, got {env!r}") from None


def _config(args) -> PipelineConfig:
    return PipelineConfig(
        responses=args.responses,
        corr=getattr(args, "corr", None),
        n=getattr(args, "n", None),
        instrument=args.instrument,
        n_factors=getattr(args, "factors", "auto"),
        rotation=getattr(args, "rotation", "promax"),
        structure=getattr(args, "structure", None),
        keep=list(getattr(args, "keep", [])),
        drop=list(getattr(args, "drop", [])),
        out=args.out,
        seed=resolve_seed(args.seed),
        quality=QualityPolicy(drop_time_outliers=getattr(args, "drop_time_outliers", False)),
    ).validate()


def _dump(obj) -> str:
    return json.dumps(pipeline._clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(args, name, text):
    if args.out:
        path = Path(args.out) / name
        path.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _text_block(title, block) -> str:
    report = {"tool": {"version": __version__}, "status": "complete", **{k: {"skipped": "not requested"} for k in
                                                                        pipeline.STAGES}}
    report.update({title: block})
    lines = pipeline.summary_text(report).splitlines()[1:]
    keep = [ln for ln in lines if "not requested" not in ln]
    return "\n".join(keep) + "\n"


def _emit(args, stage, block, csv_text=None):
    if args.format == "csv":
        if csv_text is None:
            raise ConfigError(f"--format csv is not available for {stage}")
        _write(args, f"{stage}.csv", csv_text)
    elif args.format == "text":
        _write(args, f"{stage}.txt", _text_block(stage, block))
    else:
        _write(args, f"{stage}.json", _dump(block))


def cmd_check(args):
    if not args.responses:
        raise ConfigError("check needs --responses")
    instruments = dict(BUILTIN_INSTRUMENTS)
    if args.instrument:
        ins = get_instrument(args.instrument)
        instruments[ins.id] = ins
    parsed = parse_responses(args.responses, instruments.values())
    kept, rep = apply_quality_filters(parsed.records, QualityPolicy(drop_time_outliers=args.drop_time_outliers),
                                      instruments.values())
    block = rep.to_dict()
    block["row_errors"] = [e._asdict() for e in parsed.errors]
    _emit(args, "quality", block)
    if not kept:
        raise DataQualityError("no records retained")
    return EXIT_OK


def cmd_stage(args):
    config = _config(args)
    inputs = pipeline.prepare_inputs(config)
    if args.command == "factorability":
        _emit(args, "factorability", pipeline.stage_factorability(inputs))
        return EXIT_OK
    reduction = pipeline.stage_efa(inputs, config)
    if args.command == "efa":
        block = {"scree": pipeline.eigenvalues(inputs.efa_R), **reduction.to_dict()}
        _emit(args, "efa", block, pipeline.scree_csv({"efa": pipeline._clean(block)}))
        return EXIT_OK
    cfa_block, target = pipeline.stage_cfa(inputs, config, reduction)
    if args.command == "cfa":
        _emit(args, "cfa", cfa_block)
    else:
        _emit(args, "reliability", pipeline.stage_reliability(inputs, reduction, target))
    return EXIT_OK


def cmd_score(args):
    if not args.responses:
        raise ConfigError("score needs --responses")
    config = _config(args)
    inputs = pipeline.prepare_inputs(config)
    rows, scores = pipeline.stage_scores(inputs)
    subs = [s.id for s in inputs.instrument.subscales]
    _emit(args, "scores", rows, scores_to_csv(scores, subs))
    return EXIT_OK


def cmd_simulate(args):
    spec = load_fixture_spec(args.model) if args.model else default_fixture_spec()
    if args.seed is not None or os.environ.get("FUS_SEED"):
        spec.seed = resolve_seed(args.seed)
    if args.attention_fail_rate is not None:
        spec.attention_fail_rate = args.attention_fail_rate
        spec.attention_failures = None
    records = generate_rating_fixture(spec, args.n_per_feature)
    n_items = max(m.p for m in spec.models.values())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_responses(records, args.out, n_items)
    return EXIT_OK


def cmd_pipeline(args):
    config = _config(args)
    try:
        report = pipeline.run_pipeline(config)
        code = EXIT_OK
    except PipelineError as exc:
        report, code = exc.report, exc.exit_code
        print(f"fuscale: stage {exc.stage} failed: {exc}", file=sys.stderr)
    if args.out:
        pipeline.emit_report(report, args.out)
    elif args.format == "text":
        sys.stdout.write(pipeline.summary_text(report))
    elif args.format == "csv":
        sys.stdout.write(pipeline.report_scores_csv(report))
    else:
        sys.stdout.write(pipeline.report_json(report))
    return code


COMMANDS = {"check": cmd_check, "factorability": cmd_stage, "efa": cmd_stage, "cfa": cmd_stage,
            "reliability": cmd_stage, "score": cmd_score, "simulate": cmd_simulate, "pipeline": cmd_pipeline}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "out", None) and args.command != "simulate":
            Path(args.out).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"fuscale: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataQualityError, SchemaError) as exc:
        print(f"fuscale: data error: {exc}", file=sys.stderr)
        return EXIT_QUALITY
    except (AnalysisError, ValueError) as exc:
        print(f"fuscale: analysis failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except OSError as exc:
        print(f"fuscale: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
