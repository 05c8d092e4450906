"""
End-to-end validation pipeline and report emission.

Stages run in a fixed order: quality, split, factorability, EFA with item
reduction, CFA (target and one-factor comparison), reliability, scoring.
Every block of the report is either filled or carries a ``skipped`` reason.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cfa import (build_cfa, estimate_gamma, fit_ml, load_structure, one_factor_model, satorra_bentler,
                  scaled_chisq_diff, ScaledDifferenceError)
from .corrstats import (CorrelationMatrix, factorability, item_total_correlations, load_correlation_csv,
                        pearson_matrix)
from .efa import EfaConfig, eigenvalues, reduce_items
from .exceptions import AnalysisError, ConfigError, DataQualityError, FusError, SchemaError
from .ingest import QualityPolicy, apply_quality_filters, parse_responses, split_sample, to_matrix
from .instruments import BUILTIN_INSTRUMENTS, InstrumentDefinition, InstrumentItem, Subscale, get_instrument
from .reliability import cfa_reliability, efa_reliability, rank_features, score_features, scores_to_csv

RAW_REQUIRED = "raw data required"
EXIT_OK, EXIT_ANALYSIS, EXIT_USAGE, EXIT_QUALITY = 0, 1, 2, 3


@dataclass
class PipelineConfig:
    """
    Inputs and settings of one pipeline run.

    Exactly one input mode is allowed: ``responses`` (a response CSV) or
    ``corr`` together with ``n``.
    """

    responses: str | None = None
    corr: str | None = None
    n: int | None = None
    instrument: str | None = None
    n_factors: int | str = "auto"
    rotation: str = "promax"
    structure: str | None = None
    keep: list = field(default_factory=list)
    drop: list = field(default_factory=list)
    out: str | None = None
    seed: int = 0
    split_fraction: float = 0.5
    quality: QualityPolicy = field(default_factory=QualityPolicy)

    def validate(self):
        if (self.responses is None) == (self.corr is None):
            raise ConfigError("supply exactly one of --responses or --corr")
        if self.corr is not None and self.n is None:
            raise ConfigError("--corr requires --n")
        if self.responses is not None and self.n is not None:
            raise ConfigError("--n applies only to correlation input")
        for path in (self.responses, self.corr, self.structure):
            if path is not None and not os.path.isfile(path):
                raise ConfigError(f"no such file: {path}")
        if self.out is not None:
            Path(self.out).mkdir(parents=True, exist_ok=True)
            if not os.access(self.out, os.W_OK):
                raise ConfigError(f"output directory is not writable: {self.out}")
        EfaConfig(n_factors=self.n_factors, rotation=self.rotation)
        return self

    def echo(self) -> dict:
        d = asdict(self)
        d["quality"] = asdict(self.quality)
        d.pop("out")
        return d


class PipelineError(FusError):
    """A stage failed; ``report`` holds everything computed before the failure."""

    def __init__(self, message, stage, exit_code, report):
        super().__init__(message)
        self.stage = stage
        self.exit_code = exit_code
        self.report = report


@dataclass
class Inputs:
    mode: str
    instrument: object
    efa_R: CorrelationMatrix
    cfa_R: CorrelationMatrix
    cfa_raw: object = None
    efa_raw: object = None
    records: list | None = None
    quality: dict | None = None
    split: dict | None = None


def _skipped(reason):
    return {"skipped": reason}


def _custom_instrument(item_ids):
    items = tuple(InstrumentItem(j + 1, f"Item {name}", "all", label=name) for j, name in enumerate(item_ids))
    return InstrumentDefinition("custom", "numerical", items, (Subscale("all", "All items"),), final=False)


def infer_instrument(item_ids) -> InstrumentDefinition:
    """Built-in instrument whose item ids equal ``item_ids``, else an ad-hoc one."""
    for ins in BUILTIN_INSTRUMENTS.values():
        if ins.item_ids == tuple(item_ids):
            return ins
    return _custom_instrument(item_ids)


def prepare_inputs(config: PipelineConfig) -> Inputs:
    """Load data, filter, split and build the matrices every stage works on."""
    if config.corr is not None:
        R = load_correlation_csv(config.corr, n=config.n)
        if config.instrument is None:
            instrument = infer_instrument(R.item_ids)
            return Inputs("correlation", instrument, R, R)
        instrument = get_instrument(config.instrument)
        if R.p != instrument.n_items:
            raise ConfigError(f"matrix has {R.p} items, {instrument.id} has {instrument.n_items}")
        R = CorrelationMatrix(R.values, instrument.item_ids, R.n)
        return Inputs("correlation", instrument, R, R)

    instruments = dict(BUILTIN_INSTRUMENTS)
    instrument = None
    if config.instrument is not None:
        instrument = get_instrument(config.instrument)
        instruments[instrument.id] = instrument
    parsed = parse_responses(config.responses, instruments.values())
    if parsed.errors:
        first = parsed.errors[0]
        raise DataQualityError(f"{len(parsed.errors)} malformed rows (first at line {first.line}: {first.message})")
    kept, qrep = apply_quality_filters(parsed.records, config.quality, instruments.values())
    if not kept:
        raise DataQualityError("no records retained after quality filtering")
    if instrument is None:
        used = sorted({r.instrument_id for r in kept})
        if len(used) != 1:
            raise ConfigError(f"the response file uses several instruments {used}; choose one with --instrument")
        instrument = instruments[used[0]]
    a, b = split_sample(kept, config.split_fraction, "instrument_id", config.seed, unit="respondent_id")
    a = [r for r in a if r.instrument_id == instrument.id]
    b = [r for r in b if r.instrument_id == instrument.id]
    if not a or not b:
        raise DataQualityError(f"no retained ratings for instrument {instrument.id!r} in one of the halves")
    efa_m = to_matrix(a, instrument, config.quality.missing)
    cfa_m = to_matrix(b, instrument, "listwise")
    efa_R = pearson_matrix(efa_m)
    cfa_R = pearson_matrix(cfa_m)
    split = {"efa_ratings": len(a), "cfa_ratings": len(b),
             "efa_respondents": len({r.respondent_id for r in a}),
             "cfa_respondents": len({r.respondent_id for r in b})}
    records = [r for r in kept if r.instrument_id == instrument.id]
    return Inputs("responses", instrument, efa_R, cfa_R, cfa_m, efa_m, records, qrep.to_dict(), split)


def stage_factorability(inputs: Inputs) -> dict:
    item_total = item_total_correlations(inputs.efa_raw) if inputs.efa_raw is not None else None
    return factorability(inputs.efa_R, inputs.efa_R.n, item_total).to_dict()


def stage_efa(inputs: Inputs, config: PipelineConfig):
    efa_config = EfaConfig(n_factors=config.n_factors, rotation=config.rotation)
    k = None if config.n_factors == "auto" else int(config.n_factors)
    return reduce_items(inputs.efa_R, efa_config, k, keep=config.keep, drop=config.drop)


def cfa_structure(inputs: Inputs, config: PipelineConfig, reduction) -> tuple:
    """Target structure: a structure file, the instrument's subscales, or the EFA assignment."""
    items = list(reduction.items)
    if config.structure is not None:
        spec = load_structure(config.structure)
        structure = {i: f for i, f in spec["structure"].items() if i in items}
        return structure, spec["markers"], spec["identification"], "file"
    ins = inputs.instrument
    if ins.final:
        structure = {i: f for i, f in ins.structure().items() if i in items}
        return structure, None, "marker", "instrument"
    structure = {}
    for name, members in reduction.solution.factor_items().items():
        for i in members:
            structure[i] = name
    return structure, None, "marker", "efa"


def stage_cfa(inputs: Inputs, config: PipelineConfig, reduction) -> dict:
    structure, markers, ident, source = cfa_structure(inputs, config, reduction)
    items = [i for i in inputs.instrument.item_ids if i in structure]
    model = build_cfa(items, structure, markers, ident)
    if inputs.mode == "responses":
        idx = [inputs.instrument.item_ids.index(i) for i in items]
        X = inputs.cfa_raw.values[:, idx]
        S = np.cov(X, rowvar=False)
        n = X.shape[0]
    else:
        S = inputs.cfa_R.subset(items).values
        n = inputs.cfa_R.n
    target = fit_ml(model, S, n)
    nested = fit_ml(one_factor_model(items), S, n) if model.k > 1 else None
    block = {"structure_source": source, "analyzed": target.analyzed, "target": target.to_dict()}
    if inputs.mode == "responses":
        gamma = estimate_gamma(X)
        satorra_bentler(target, gamma)
        if nested is not None:
            satorra_bentler(nested, gamma)
        block["target"] = target.to_dict()
    if nested is not None:
        block["one_factor"] = nested.to_dict()
        try:
            d = scaled_chisq_diff(nested, target)
            block["difference"] = {"chi2": d.T_d, "df": d.df_d, "p": d.p, "c_d": d.c_d, "unscaled": d.unscaled,
                                   "scaled": inputs.mode == "responses"}
        except ScaledDifferenceError as exc:
            block["difference"] = {"error": str(exc), "unscaled": exc.unscaled, "df": exc.df_d}
    else:
        block["one_factor"] = _skipped("target model has a single factor")
    if inputs.mode != "responses":
        block["robust"] = _skipped(RAW_REQUIRED)
    return block, target


def stage_reliability(inputs: Inputs, reduction, target) -> dict:
    R = inputs.efa_R.subset(list(reduction.items))
    out = {"efa": efa_reliability(reduction.solution, R).to_dict()}
    if target is not None and target.model.k:
        out["cfa"] = cfa_reliability(target, inputs.cfa_R.subset(list(target.model.items))).to_dict()
    return out


def stage_scores(inputs: Inputs) -> tuple:
    if inputs.mode != "responses":
        return _skipped(RAW_REQUIRED), []
    scores = rank_features(score_features(inputs.records, inputs.instrument))
    return [s.to_dict() for s in scores], scores


def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


STAGES = ("quality", "factorability", "efa", "cfa", "reliability", "scores")


def run_pipeline(config: PipelineConfig) -> dict:
    """
    Run every stage and return the report.

    Raises
    ------
    ConfigError
        Before any computation when the inputs conflict.
    PipelineError
        When a stage fails; carries the partial report and an exit code.
    """
    config.validate()
    report = {"tool": {"name": "fuscale", "version": __version__}, "config": config.echo(), "status": "incomplete"}
    for s in STAGES:
        report[s] = _skipped("not run")
    timing = {}
    stage = "input"
    try:
        t0 = time.perf_counter()
        inputs = prepare_inputs(config)
        report["input"] = {"mode": inputs.mode, "instrument": inputs.instrument.id, "split": inputs.split}
        report["quality"] = inputs.quality if inputs.quality is not None else _skipped("correlation input")
        timing["input"] = time.perf_counter() - t0

        stage = "factorability"
        t0 = time.perf_counter()
        report["factorability"] = stage_factorability(inputs)
        timing[stage] = time.perf_counter() - t0

        stage = "efa"
        t0 = time.perf_counter()
        reduction = stage_efa(inputs, config)
        report["efa"] = {"scree": eigenvalues(inputs.efa_R), **reduction.to_dict()}
        timing[stage] = time.perf_counter() - t0

        stage = "cfa"
        t0 = time.perf_counter()
        report["cfa"], target = stage_cfa(inputs, config, reduction)
        timing[stage] = time.perf_counter() - t0

        stage = "reliability"
        t0 = time.perf_counter()
        report["reliability"] = stage_reliability(inputs, reduction, target)
        timing[stage] = time.perf_counter() - t0

        stage = "scores"
        t0 = time.perf_counter()
        report["scores"], _ = stage_scores(inputs)
        timing[stage] = time.perf_counter() - t0
    except ConfigError:
        raise
    except (DataQualityError, SchemaError) as exc:
        report["error"] = {"stage": stage, "message": str(exc)}
        raise PipelineError(str(exc), stage, EXIT_QUALITY, _finish(report, timing)) from exc
    except (AnalysisError, ValueError, np.linalg.LinAlgError) as exc:
        report["error"] = {"stage": stage, "message": str(exc)}
        raise PipelineError(str(exc), stage, EXIT_ANALYSIS, _finish(report, timing)) from exc
    report["status"] = "complete"
    return _finish(report, timing)


def _finish(report, timing):
    report = _clean(report)
    report["_metadata"] = {"timing_seconds": timing, "created": datetime.now(timezone.utc).isoformat(),
                           "python": platform.python_version()}
    return report


def report_json(report: dict) -> str:
    """Deterministic JSON of a report; run metadata is excluded."""
    body = {k: v for k, v in report.items() if k != "_metadata"}
    return json.dumps(_clean(body), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _fmt(v, nd=3):
    return "NA" if v is None else f"{v:.{nd}f}"


def summary_text(report: dict) -> str:
    lines = [f"fuscale {report['tool']['version']} validation report ({report['status']})"]
    if "error" in report:
        lines.append(f"FAILED at stage {report['error']['stage']}: {report['error']['message']}")
    q = report.get("quality", {})
    if "skipped" in q:
        lines.append(f"Quality: SKIPPED: {q['skipped']}")
    else:
        lines.append(f"Quality: {q['n_input']} ratings, {q['n_removed_attention']} attention failures, "
                     f"{q['n_removed_missing']} incomplete, {q['n_retained']} retained")
    f = report.get("factorability", {})
    if "skipped" not in f:
        b = f["bartlett"]
        lines.append(f"Bartlett chi2({b['df']}) = {b['chi2']:.2f}, p {b['p_display']}; KMO = {f['kmo']['overall']:.3f}")
    e = report.get("efa", {})
    if "skipped" not in e:
        sol = e["solution"]
        lines.append(f"EFA: {sol['n_factors']} factors ({sol['rotation']}), {len(e['final_items'])} items retained, "
                     f"{len(e['trace'])} reduction steps")
        for step in e["trace"]:
            lines.append(f"  - {step['item'] or '(factor)'}: {step['criterion']}")
        lines.append(f"  SS loadings: {', '.join(_fmt(v) for v in sol['ss_loadings'])}")
    c = report.get("cfa", {})
    if "skipped" not in c:
        for key, label in (("target", "CFA target"), ("one_factor", "CFA one-factor")):
            blk = c.get(key, {})
            if "skipped" in blk or not blk:
                continue
            nv = blk["naive"]
            lines.append(f"{label}: chi2({blk['df']}) = {blk['chi2']:.2f}, CFI {_fmt(nv['cfi'])}, "
                         f"TLI {_fmt(nv['tli'])}, RMSEA {_fmt(nv['rmsea'])}, SRMR {_fmt(nv['srmr'])}")
            rb = blk.get("robust")
            if rb:
                lines.append(f"  robust: c = {rb['scaling_factor']:.3f}, chi2 = {rb['T_scaled']:.2f}, "
                             f"CFI {_fmt(rb['cfi'])}, TLI {_fmt(rb['tli'])}, RMSEA {_fmt(rb['rmsea'])}")
        if "robust" in c and "skipped" in c["robust"]:
            lines.append(f"Robust (Satorra-Bentler): SKIPPED: {c['robust']['skipped']}")
        d = c.get("difference")
        if d and "error" not in d:
            lines.append(f"Chi-square difference: {d['chi2']:.2f} on {d['df']} df, p = {d['p']:.3g}")
        elif d:
            lines.append(f"Chi-square difference: {d['error']}")
    r = report.get("reliability", {})
    if "skipped" not in r:
        for stage_name, blk in sorted(r.items()):
            for fac in blk["factors"]:
                lines.append(f"Reliability ({stage_name}) {fac['factor']}: omega {_fmt(fac['omega'])}, "
                             f"AVE {_fmt(fac['ave'])}, alpha {_fmt(fac['alpha'])}")
    s = report.get("scores")
    if isinstance(s, dict) and "skipped" in s:
        lines.append(f"Scores: SKIPPED: {s['skipped']}")
    elif s:
        for row in s:
            lines.append(f"  #{row['rank']} {row['feature_id']}: {row['overall']:.3f} (n = {row['n_ratings']})")
    return "\n".join(lines) + "\n"


def scree_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["factor", "eigenvalue"])
    e = report.get("efa", {})
    for i, v in enumerate(e.get("scree") or [], start=1):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()


def report_scores_csv(report: dict) -> str:
    from .reliability import UnderstandabilityScore

    rows = report.get("scores")
    scores = [UnderstandabilityScore(**r) for r in rows] if isinstance(rows, list) else []
    subs = None
    if not scores:
        ins = report.get("input", {}).get("instrument")
        subs = [s.id for s in BUILTIN_INSTRUMENTS[ins].subscales] if ins in BUILTIN_INSTRUMENTS else []
    return scores_to_csv(scores, subs)


def emit_report(report: dict, out_dir, formats=("json", "text", "csv")) -> list:
    """
    Write ``report.json``, ``summary.txt``, ``scree.csv`` and ``scores.csv``
    (by format) plus ``metadata.json`` with timing.  Returns the paths written.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    files = []
    payload = []
    if "json" in formats:
        payload.append(("report.json", report_json(report)))
    if "text" in formats:
        payload.append(("summary.txt", summary_text(report)))
    if "csv" in formats:
        payload.append(("scree.csv", scree_csv(report)))
        payload.append(("scores.csv", report_scores_csv(report)))
    if "_metadata" in report:
        payload.append(("metadata.json", json.dumps(report["_metadata"], indent=2, sort_keys=True) + "\n"))
    for name, text in payload:
        path = out / name
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot write {path}: {exc}") from exc
        files.append(path)
    return files
