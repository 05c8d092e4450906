"""
Response ingest, quality filtering, sample splitting and matrix assembly.

Response files are UTF-8 CSV with one row per (respondent, feature) rating::

    respondent_id,feature_id,instrument,i1,...,iN,attention,duration_s

``N`` is the largest item count among the instruments the file uses.  Cells
past an instrument's own item count must be empty.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from os import PathLike
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import DataQualityError, SchemaError
from .instruments import InstrumentDefinition, instrument_map

SPLITS = ("efa", "cfa", "unassigned")


@dataclass(frozen=True)
class RatingRecord:
    respondent_id: str
    feature_id: str
    instrument_id: str
    responses: dict  # item index (1-based) -> int or None
    attention_response: int | None
    duration_seconds: float
    split: str = "unassigned"

    @property
    def key(self) -> str:
        return f"{self.respondent_id}:{self.feature_id}"

    @property
    def complete(self) -> bool:
        return all(v is not None for v in self.responses.values())


class RowError(NamedTuple):
    line: int
    column: str | None
    message: str


class ParseResult(NamedTuple):
    records: list
    errors: list


def _open_text(source):
    if isinstance(source, (str, PathLike)) and not (isinstance(source, str) and "\n" in source):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def _item_columns(header):
    cols = []
    for name in header:
        if name.startswith("i") and name[1:].isdigit():
            cols.append(int(name[1:]))
    return cols


def parse_responses(source: str | PathLike | IO[str],
                    instrument: InstrumentDefinition | Iterable[InstrumentDefinition]) -> ParseResult:
    """
    Parse a response CSV into rating records.

    Parameters
    ----------
    source : path, CSV text or open text stream
    instrument : InstrumentDefinition or iterable of them
        Rows are matched to an instrument through the ``instrument`` column.

    Returns
    -------
    ParseResult
        ``(records, errors)``.  Rows with out-of-range or malformed values are
        reported in ``errors`` with their line number and are not returned as
        records; nothing is clamped.

    Raises
    ------
    SchemaError
        The header is not the documented schema or names an item column that
        no supplied instrument defines.
    """
    instruments = instrument_map(instrument)
    max_items = max(ins.n_items for ins in instruments.values())
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty response file (header required)") from None
        required = ["respondent_id", "feature_id", "instrument"]
        if header[:3] != required or header[-2:] != ["attention", "duration_s"]:
            raise SchemaError(
                "header must be respondent_id,feature_id,instrument,i1..iN,attention,duration_s; got " + ",".join(header)
            )
        middle = header[3:-2]
        item_cols = _item_columns(middle)
        if len(item_cols) != len(middle):
            bad = [c for c in middle if not (c.startswith("i") and c[1:].isdigit())]
            raise SchemaError(f"unknown column(s) {bad}")
        if item_cols != list(range(1, len(item_cols) + 1)):
            raise SchemaError("item columns must be i1..iN in order")
        if len(item_cols) > max_items:
            raise SchemaError(f"unknown item column i{max_items + 1}: no instrument defines it")

        records, errors = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                errors.append(RowError(line_no, None, f"expected {len(header)} fields, got {len(row)}"))
                continue
            rec, err = _parse_row(row, header, item_cols, instruments, line_no)
            if err is not None:
                errors.append(err)
            else:
                records.append(rec)
        return ParseResult(records, errors)
    finally:
        if fh is not source:
            fh.close()


def _parse_int(text):
    text = text.strip()
    if text == "" or text.upper() in ("NA", "N/A"):
        return None
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"non-integer response {text!r}")
    return int(value)


def _parse_row(row, header, item_cols, instruments, line_no):
    respondent_id, feature_id, instrument_id = (c.strip() for c in row[:3])
    ins = instruments.get(instrument_id)
    if ins is None:
        return None, RowError(line_no, "instrument", f"unknown instrument {instrument_id!r}")
    lo, hi = ins.likert_min, ins.likert_max
    responses = {}
    for pos, idx in enumerate(item_cols):
        col = header[3 + pos]
        cell = row[3 + pos]
        try:
            value = _parse_int(cell)
        except ValueError as exc:
            return None, RowError(line_no, col, str(exc))
        if idx > ins.n_items:
            if value is not None:
                return None, RowError(line_no, col, f"{col} is not an item of {ins.id}")
            continue
        if value is not None and not lo <= value <= hi:
            return None, RowError(line_no, col, f"{col}={value} outside [{lo}, {hi}]")
        responses[idx] = value
    try:
        attention = _parse_int(row[-2])
    except ValueError as exc:
        return None, RowError(line_no, "attention", str(exc))
    if attention is not None and not lo <= attention <= hi:
        return None, RowError(line_no, "attention", f"attention={attention} outside [{lo}, {hi}]")
    try:
        duration = float(row[-1])
    except ValueError:
        return None, RowError(line_no, "duration_s", f"bad duration {row[-1]!r}")
    if not duration >= 0 or math.isinf(duration):
        return None, RowError(line_no, "duration_s", "duration must be a nonnegative number")
    return RatingRecord(respondent_id, feature_id, instrument_id, responses, attention, duration), None


def write_responses(records: Sequence[RatingRecord], target: str | PathLike | IO[str], n_items: int | None = None):
    """Write records in the response CSV schema (inverse of :func:`parse_responses`)."""
    if n_items is None:
        n_items = max((max(r.responses, default=0) for r in records), default=0)
    own = isinstance(target, (str, PathLike))
    fh = open(target, "w", newline="", encoding="utf-8") if own else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["respondent_id", "feature_id", "instrument"] + [f"i{k}" for k in range(1, n_items + 1)]
                   + ["attention", "duration_s"])
        for r in records:
            cells = []
            for k in range(1, n_items + 1):
                v = r.responses.get(k)
                cells.append("" if v is None else str(v))
            att = "" if r.attention_response is None else str(r.attention_response)
            w.writerow([r.respondent_id, r.feature_id, r.instrument_id] + cells + [att, f"{r.duration_seconds:.1f}"])
    finally:
        if own:
            fh.close()


@dataclass(frozen=True)
class QualityPolicy:
    """
    Data-quality rules.

    ``attention_value=None`` uses each instrument's own neutral value when an
    instrument map is passed to the filter, otherwise 3.  Response-time
    outliers (outside the 1.5 IQR box-plot whiskers) are only flagged unless
    ``drop_time_outliers`` is set.  ``missing`` is ``"listwise"`` (drop the
    record) or ``"pairwise"`` (keep it; the correlation layer handles gaps).
    """

    attention_value: int | None = 3
    drop_time_outliers: bool = False
    whisker: float = 1.5
    missing: str = "listwise"

    def __post_init__(self):
        if self.missing not in ("listwise", "pairwise"):
            raise ValueError(f"missing policy must be 'listwise' or 'pairwise', not {self.missing!r}")


@dataclass
class QualityReport:
    n_input: int
    n_removed_attention: int
    n_flagged_time: int
    n_removed_time: int
    n_removed_missing: int
    n_retained: int
    removed_attention: list = field(default_factory=list)
    flagged_time: list = field(default_factory=list)
    removed_time: list = field(default_factory=list)
    removed_missing: list = field(default_factory=list)
    time_whiskers: tuple | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["time_whiskers"] = list(self.time_whiskers) if self.time_whiskers else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def time_whiskers(durations, whisker=1.5):
    q1, q3 = np.percentile(np.asarray(durations, dtype=float), [25, 75])
    iqr = q3 - q1
    return float(q1 - whisker * iqr), float(q3 + whisker * iqr)


def apply_quality_filters(records: Sequence[RatingRecord], policy: QualityPolicy = QualityPolicy(),
                          instruments=None):
    """
    Remove failed attention checks and incomplete records; flag slow/fast outliers.

    Returns
    -------
    retained : list of RatingRecord
    report : QualityReport
    """
    records = list(records)
    if not records:
        raise DataQualityError("no records")
    ins_map = instrument_map(instruments) if instruments is not None else {}

    def expected(rec):
        if policy.attention_value is not None:
            return policy.attention_value
        ins = ins_map.get(rec.instrument_id)
        return ins.attention_value if ins is not None else 3

    failed_attention = [r for r in records if r.attention_response != expected(r)]
    stage = [r for r in records if r.attention_response == expected(r)]

    removed_missing = []
    if policy.missing == "listwise":
        removed_missing = [r for r in stage if not r.complete]
        stage = [r for r in stage if r.complete]

    lo_hi = None
    flagged = []
    if stage:
        lo_hi = time_whiskers([r.duration_seconds for r in stage], policy.whisker)
        flagged = [r for r in stage if not lo_hi[0] <= r.duration_seconds <= lo_hi[1]]
    removed_time = []
    if policy.drop_time_outliers and flagged:
        removed_time = flagged
        drop = {r.key for r in flagged}
        stage = [r for r in stage if r.key not in drop]

    report = QualityReport(
        n_input=len(records),
        n_removed_attention=len(failed_attention),
        n_flagged_time=len(flagged),
        n_removed_time=len(removed_time),
        n_removed_missing=len(removed_missing),
        n_retained=len(stage),
        removed_attention=[r.key for r in failed_attention],
        flagged_time=[r.key for r in flagged],
        removed_time=[r.key for r in removed_time],
        removed_missing=[r.key for r in removed_missing],
        time_whiskers=lo_hi,
    )
    return stage, report


def _largest_remainder(sizes, fraction):
    """Per-stratum A sizes summing to round(fraction * total), each within one of its exact share."""
    exact = [fraction * n for n in sizes]
    base = [math.floor(x) for x in exact]
    target = math.floor(fraction * sum(sizes) + 0.5)
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[: max(target - sum(base), 0)]:
        base[i] += 1
    return base


def split_sample(records: Sequence[RatingRecord], fraction: float = 0.5, stratify_by: str = "instrument_id",
                 seed: int = 0, unit: str | None = None, labels=("efa", "cfa")):
    """
    Stratified random split into two disjoint sets.

    Parameters
    ----------
    records : sequence of RatingRecord
    fraction : float
        Share of units assigned to the first set, in (0, 1).
    stratify_by : str
        RatingRecord attribute defining the strata.
    seed : int
        Seed of the generator; equal seeds give identical splits.
    unit : str, optional
        Split whole groups (e.g. ``"respondent_id"``) instead of single
        records.  A group's stratum is the sorted tuple of its members'
        ``stratify_by`` values.
    labels : pair of str
        Values written to the ``split`` field of the two sets.

    Returns
    -------
    a, b : list of RatingRecord
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    records = list(records)
    if records and not hasattr(records[0], stratify_by):
        raise ValueError(f"RatingRecord has no field {stratify_by!r}")

    groups: dict = {}
    for pos, r in enumerate(records):
        gkey = getattr(r, unit) if unit else (r.key, pos)
        groups.setdefault(gkey, []).append(r)
    strata: dict = {}
    for gkey in sorted(groups, key=str):
        members = groups[gkey]
        skey = tuple(sorted(str(getattr(m, stratify_by)) for m in members)) if unit else str(
            getattr(members[0], stratify_by))
        strata.setdefault(skey, []).append(gkey)

    keys = sorted(strata)
    sizes = _largest_remainder([len(strata[k]) for k in keys], fraction)
    rng = np.random.default_rng(seed)
    in_a = set()
    for k, size in zip(keys, sizes):
        units = strata[k]
        perm = rng.permutation(len(units))
        in_a.update(units[i] for i in perm[:size])

    a, b = [], []
    for gkey, members in groups.items():
        if gkey in in_a:
            a.extend(replace(m, split=labels[0]) for m in members)
        else:
            b.extend(replace(m, split=labels[1]) for m in members)
    return a, b


@dataclass
class RatingMatrix:
    values: np.ndarray
    item_ids: tuple
    respondent_ids: tuple
    feature_ids: tuple
    instrument_id: str
    excluded: list = field(default_factory=list)

    @property
    def shape(self):
        return self.values.shape


def to_matrix(records: Sequence[RatingRecord], instrument: InstrumentDefinition,
              missing: str = "listwise") -> RatingMatrix:
    """
    Stack records into an n x p matrix ordered by (respondent_id, feature_id).

    Under ``missing="listwise"`` incomplete records are left out and listed in
    ``excluded``; under ``"pairwise"`` they are kept with NaN cells.
    """
    ids = {r.instrument_id for r in records}
    if len(ids) > 1:
        raise SchemaError(f"records mix instruments {sorted(ids)}")
    if ids and ids != {instrument.id}:
        raise SchemaError(f"records use {ids.pop()!r}, not {instrument.id!r}")
    rows = sorted(records, key=lambda r: (r.respondent_id, r.feature_id))
    keep, excluded = [], []
    for r in rows:
        if missing == "listwise" and not all(r.responses.get(k) is not None for k in range(1, instrument.n_items + 1)):
            excluded.append(r.key)
        else:
            keep.append(r)
    values = np.array(
        [[np.nan if r.responses.get(k) is None else r.responses[k] for k in range(1, instrument.n_items + 1)]
         for r in keep],
        dtype=float,
    ).reshape(len(keep), instrument.n_items)
    return RatingMatrix(
        values=values,
        item_ids=instrument.item_ids,
        respondent_ids=tuple(r.respondent_id for r in keep),
        feature_ids=tuple(r.feature_id for r in keep),
        instrument_id=instrument.id,
        excluded=excluded,
    )
