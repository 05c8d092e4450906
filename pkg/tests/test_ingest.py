import io
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuscale.exceptions import DataQualityError, SchemaError
from fuscale.ingest import (QualityPolicy, RatingRecord, apply_quality_filters, parse_responses, split_sample,
                            to_matrix, write_responses)
from fuscale.instruments import BUILTIN_INSTRUMENTS, FUS_CATEGORICAL, FUS_NUMERICAL
from fuscale.simgen import bundled_path

HEADER = "respondent_id,feature_id,instrument,i1,i2,i3,i4,i5,i6,i7,i8,attention,duration_s\n"


def _csv(*rows):
    return HEADER + "".join(r + "\n" for r in rows)


def _rec(rid, fid="bmi", values=(3,) * 8, attention=3, duration=100.0, instrument="fus-numerical"):
    resp = {k + 1: v for k, v in enumerate(values)}
    return RatingRecord(rid, fid, instrument, resp, attention, duration)


def test_all_neutral_row_is_valid():
    res = parse_responses(_csv("r1,bmi,fus-numerical,3,3,3,3,3,3,3,3,3,120"), FUS_NUMERICAL)
    assert res.errors == []
    (rec,) = res.records
    assert rec.complete and rec.responses == {k: 3 for k in range(1, 9)}
    assert rec.attention_response == 3 and rec.duration_seconds == 120.0


def test_out_of_range_value_names_column():
    res = parse_responses(_csv("r1,bmi,fus-numerical,3,3,6,3,3,3,3,3,3,120"), FUS_NUMERICAL)
    assert res.records == []
    (err,) = res.errors
    assert err.line == 2 and err.column == "i3"


def test_malformed_row_reports_line():
    text = _csv("r1,bmi,fus-numerical,3,3,3,3,3,3,3,3,3,120", "r2,bmi,fus-numerical,3,3,3")
    res = parse_responses(text, FUS_NUMERICAL)
    assert len(res.records) == 1 and res.errors[0].line == 3


def test_missing_cells_parse_as_none():
    res = parse_responses(_csv("r1,bmi,fus-numerical,3,,3,NA,3,3,3,3,3,120"), FUS_NUMERICAL)
    rec = res.records[0]
    assert rec.responses[2] is None and rec.responses[4] is None and not rec.complete


def test_unknown_item_column_is_fatal():
    header = HEADER.replace("i8,", "i8,i9,")
    with pytest.raises(SchemaError):
        parse_responses(header + "r1,bmi,fus-numerical,3,3,3,3,3,3,3,3,3,3,120\n", FUS_NUMERICAL)


def test_bad_header_is_fatal():
    with pytest.raises(SchemaError):
        parse_responses("respondent,feature\nr1,bmi\n", FUS_NUMERICAL)


def test_extra_cells_beyond_instrument_rejected():
    header = HEADER.replace("i8,", "i8,i9,")
    res = parse_responses(header + "r1,bmi,fus-numerical,3,3,3,3,3,3,3,3,4,3,120\n",
                          [FUS_NUMERICAL, FUS_CATEGORICAL])
    assert res.errors and res.errors[0].column == "i9"


def test_bundled_fixture_parses_2160_rows():
    res = parse_responses(bundled_path("efa_phase_fixture.csv"), BUILTIN_INSTRUMENTS.values())
    assert len(res.records) == 2160 and res.errors == []


def test_write_parse_round_trip():
    recs = [_rec("a", values=(1, 2, 3, 4, 5, 4, 3, 2)), _rec("b", attention=5, duration=12.5)]
    buf = io.StringIO()
    write_responses(recs, buf, 8)
    assert parse_responses(buf.getvalue(), FUS_NUMERICAL).records == recs


def test_attention_filter():
    kept, rep = apply_quality_filters([_rec("a"), _rec("b", attention=5)])
    assert [r.respondent_id for r in kept] == ["a"]
    assert rep.n_removed_attention == 1 and rep.removed_attention == ["b:bmi"]


def test_listwise_missing():
    kept, rep = apply_quality_filters([_rec("a"), _rec("b", values=(3, None, 3, 3, 3, 3, 3, 3))])
    assert len(kept) == 1 and rep.n_removed_missing == 1


def test_pairwise_keeps_incomplete():
    recs = [_rec("a"), _rec("b", values=(3, None, 3, 3, 3, 3, 3, 3))]
    kept, rep = apply_quality_filters(recs, QualityPolicy(missing="pairwise"))
    assert len(kept) == 2 and rep.n_removed_missing == 0


def test_time_outliers_flagged_not_removed():
    recs = [_rec(f"r{i}", duration=100.0 + i) for i in range(20)] + [_rec("slow", duration=5000.0)]
    kept, rep = apply_quality_filters(recs)
    assert len(kept) == 21 and rep.flagged_time == ["slow:bmi"] and rep.n_removed_time == 0
    kept, rep = apply_quality_filters(recs, QualityPolicy(drop_time_outliers=True))
    assert len(kept) == 20 and rep.n_removed_time == 1


def test_whiskers_match_box_plot_rule():
    d = np.arange(1, 101, dtype=float)
    q1, q3 = np.percentile(d, [25, 75])
    recs = [_rec(f"r{i}", duration=v) for i, v in enumerate(d)]
    _, rep = apply_quality_filters(recs)
    assert rep.time_whiskers == pytest.approx((q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1)))


def test_empty_input_errors():
    with pytest.raises(DataQualityError, match="no records"):
        apply_quality_filters([])


def test_bundled_fixture_quality_counts():
    res = parse_responses(bundled_path("efa_phase_fixture.csv"), BUILTIN_INSTRUMENTS.values())
    kept, rep = apply_quality_filters(res.records)
    assert (rep.n_input, rep.n_removed_attention, rep.n_retained) == (2160, 19, 2141)
    assert rep.n_removed_missing == 0 and rep.n_removed_time == 0
    assert Counter(r.instrument_id for r in kept) == {"fus-numerical-draft": 1199, "fus-categorical-draft": 942}


record_st = st.builds(
    lambda i, vals, att, dur: _rec(f"r{i}", values=tuple(vals), attention=att, duration=dur),
    st.integers(0, 10**6),
    st.lists(st.one_of(st.none(), st.integers(1, 5)), min_size=8, max_size=8),
    st.integers(1, 5),
    st.floats(0, 2000, allow_nan=False),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(record_st, min_size=1, max_size=40, unique_by=lambda r: r.respondent_id))
def test_filter_idempotent_and_accounted(records):
    kept, rep = apply_quality_filters(records)
    assert rep.n_retained + rep.n_removed_attention + rep.n_removed_missing + rep.n_removed_time == rep.n_input
    assert not set(rep.removed_attention) & set(rep.removed_missing)
    if kept:
        again, rep2 = apply_quality_filters(kept)
        assert again == kept and rep2.n_removed_attention == rep2.n_removed_missing == 0


def test_split_1440_respondents():
    recs = []
    for r in range(1440):
        kind = "fus-numerical" if r % 2 else "fus-categorical"
        recs.append(_rec(f"p{r:04d}", instrument=kind))
    a, b = split_sample(recs, 0.5, "instrument_id", seed=7, unit="respondent_id")
    assert len({x.respondent_id for x in a}) == 720 and len({x.respondent_id for x in b}) == 720
    assert Counter(x.instrument_id for x in a) == Counter(x.instrument_id for x in b)


def test_split_single_record_stratum():
    rec = [_rec("only")]
    a1, b1 = split_sample(rec, 0.5, seed=3)
    a2, b2 = split_sample(rec, 0.5, seed=3)
    assert (len(a1), len(b1)) in {(1, 0), (0, 1)} and (a1, b1) == (a2, b2)


def test_split_bad_fraction():
    with pytest.raises(ValueError):
        split_sample([_rec("a")], 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 120), st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
def test_split_partition_properties(n, fraction, seed):
    recs = [_rec(f"r{i}", fid=f"f{i % 3}", instrument=("fus-numerical", "fus-categorical")[i % 2]) for i in range(n)]
    a, b = split_sample(recs, fraction, "instrument_id", seed)
    a2, b2 = split_sample(recs, fraction, "instrument_id", seed)
    assert (a, b) == (a2, b2)
    keys_a, keys_b = {r.key for r in a}, {r.key for r in b}
    assert not keys_a & keys_b and keys_a | keys_b == {r.key for r in recs}
    for kind in ("fus-numerical", "fus-categorical"):
        size = sum(r.instrument_id == kind for r in recs)
        in_a = sum(r.instrument_id == kind for r in a)
        assert abs(in_a - fraction * size) <= 1
    assert {r.split for r in a} <= {"efa"} and {r.split for r in b} <= {"cfa"}


def test_to_matrix_shape_and_order():
    recs = [_rec("c"), _rec("a", values=(1,) * 8), _rec("b", values=(5,) * 8)]
    m = to_matrix(recs, FUS_NUMERICAL)
    assert m.shape == (3, 8) and m.respondent_ids == ("a", "b", "c")
    assert m.values[0, 0] == 1 and m.values[1, 0] == 5


def test_to_matrix_listwise_excludes():
    recs = [_rec("a"), _rec("b", values=(3, None, 3, 3, 3, 3, 3, 3))]
    m = to_matrix(recs, FUS_NUMERICAL)
    assert m.shape == (1, 8) and m.excluded == ["b:bmi"]


def test_to_matrix_mixed_instruments():
    recs = [_rec("a"), _rec("b", values=(3,) * 9, instrument="fus-categorical")]
    with pytest.raises(SchemaError):
        to_matrix(recs, FUS_NUMERICAL)


def test_efa_fixture_numerical_matrix():
    res = parse_responses(bundled_path("efa_phase_fixture.csv"), BUILTIN_INSTRUMENTS.values())
    kept, _ = apply_quality_filters(res.records)
    ins = BUILTIN_INSTRUMENTS["fus-numerical-draft"]
    m = to_matrix([r for r in kept if r.instrument_id == ins.id], ins)
    assert m.shape == (1199, 22)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(1, 5), min_size=8, max_size=8), min_size=1, max_size=30))
def test_column_means_match_responses(rows):
    recs = [_rec(f"r{i:03d}", values=tuple(v)) for i, v in enumerate(rows)]
    m = to_matrix(recs, FUS_NUMERICAL)
    expected = [sum(v[j] for v in rows) / len(rows) for j in range(8)]
    np.testing.assert_allclose(m.values.mean(axis=0), expected)
