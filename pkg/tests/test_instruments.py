import json

import pytest

from fuscale.exceptions import SchemaError
from fuscale.instruments import (BUILTIN_INSTRUMENTS, FEATURES, FUS_CATEGORICAL, FUS_NUMERICAL, GLOSSARY,
                                 FeatureDescriptor, InstrumentDefinition, InstrumentItem, Subscale, get_instrument)


def test_builtin_item_counts():
    assert FUS_NUMERICAL.n_items == 8
    assert FUS_CATEGORICAL.n_items == 9
    assert BUILTIN_INSTRUMENTS["fus-numerical-draft"].n_items == 22
    assert BUILTIN_INSTRUMENTS["fus-categorical-draft"].n_items == 20


def test_subscale_sizes():
    assert [i.index for i in FUS_NUMERICAL.subscale_items("um")] == [1, 2, 3, 4, 5]
    assert [i.index for i in FUS_NUMERICAL.subscale_items("for")] == [6, 7, 8]
    assert len(FUS_CATEGORICAL.subscale_items("um")) == 6
    assert len(FUS_CATEGORICAL.subscale_items("for")) == 3


def test_item_texts_verbatim():
    assert FUS_NUMERICAL.items[0].text == "I can understand the scale (units) of the feature."
    assert FUS_CATEGORICAL.items[5].text == "I require no support to understand the feature."
    assert FUS_NUMERICAL.items[7].text == FUS_CATEGORICAL.items[8].text


def test_likert_and_attention_defaults():
    for ins in (FUS_NUMERICAL, FUS_CATEGORICAL):
        assert (ins.likert_min, ins.attention_value, ins.likert_max) == (1, 3, 5)
        assert ins.glossary == GLOSSARY


def test_features_table():
    assert len(FEATURES) == 9
    assert sum(f.kind == "numerical" for f in FEATURES) == 5
    assert {f.instrument_id for f in FEATURES} == {"fus-numerical", "fus-categorical"}


def test_feature_validation():
    with pytest.raises(ValueError):
        FeatureDescriptor("x", "space", "X", "", "numerical")
    with pytest.raises(ValueError):
        FeatureDescriptor("x", "loan", "X", "", "ordinal")


def _items(indices, subscale="a"):
    return tuple(InstrumentItem(i, f"t{i}", subscale) for i in indices)


def test_noncontiguous_indices_rejected():
    with pytest.raises(ValueError):
        InstrumentDefinition("x", "numerical", _items([1, 2, 4]), (Subscale("a", "A"),), final=False)


def test_unknown_subscale_rejected():
    with pytest.raises(ValueError):
        InstrumentDefinition("x", "numerical", _items([1, 2, 3], "b"), (Subscale("a", "A"),), final=False)


def test_final_subscale_needs_three_items():
    with pytest.raises(ValueError):
        InstrumentDefinition("x", "numerical", _items([1, 2]), (Subscale("a", "A"),))


def test_attention_must_be_interior():
    with pytest.raises(ValueError):
        InstrumentDefinition("x", "numerical", _items([1, 2, 3]), (Subscale("a", "A"),), attention_value=5)


def test_json_round_trip(tmp_path):
    path = tmp_path / "ins.json"
    path.write_text(json.dumps(FUS_CATEGORICAL.to_dict()))
    assert get_instrument(str(path)) == FUS_CATEGORICAL
    assert get_instrument("fus-numerical") is FUS_NUMERICAL


def test_unknown_instrument():
    with pytest.raises(SchemaError):
        get_instrument("no-such-instrument")
