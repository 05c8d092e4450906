"""
Instrument and feature definitions.

Two final instruments ship with the package, one for numerical and one for
categorical features, each with an "Understanding & Measurement" and a
"Feature-Outcome Relation" subscale.  The pre-reduction item pools are also
available as ``fus-numerical-draft`` (22 items) and ``fus-categorical-draft``
(20 items); only their correlation structure is published, so their item
texts are placeholders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from os import PathLike
from typing import Iterable

from .exceptions import SchemaError

KINDS = ("numerical", "categorical")
DOMAINS = ("hiring", "medicine", "loan", "other")


@dataclass(frozen=True)
class InstrumentItem:
    index: int
    text: str
    subscale: str
    label: str | None = None

    @property
    def id(self) -> str:
        return self.label if self.label is not None else f"i{self.index}"


@dataclass(frozen=True)
class Subscale:
    id: str
    name: str


@dataclass(frozen=True)
class InstrumentDefinition:
    """
    A Likert questionnaire applied to one feature at a time.

    Parameters
    ----------
    id : str
        Instrument identifier, e.g. ``"fus-numerical"``.
    kind : {"numerical", "categorical"}
        Which feature kind the instrument rates.
    items : tuple of InstrumentItem
        Items in administration order; indices run 1..N.
    subscales : tuple of Subscale
    likert_min, likert_max : int
    attention_value : int
        The response an attention-check item instructs respondents to pick.
    glossary : tuple of (term, definition)
    final : bool
        Final instruments must have at least three items per subscale.
    """

    id: str
    kind: str
    items: tuple[InstrumentItem, ...]
    subscales: tuple[Subscale, ...]
    likert_min: int = 1
    likert_max: int = 5
    attention_value: int = 3
    glossary: tuple[tuple[str, str], ...] = ()
    final: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown instrument kind {self.kind!r}")
        indices = [it.index for it in self.items]
        if indices != list(range(1, len(indices) + 1)):
            raise SchemaError(f"{self.id}: item indices must run 1..{len(indices)}")
        known = {s.id for s in self.subscales}
        for it in self.items:
            if it.subscale not in known:
                raise SchemaError(f"{self.id}: item {it.index} maps to unknown subscale {it.subscale!r}")
        if self.final:
            for s in self.subscales:
                if len(self.subscale_items(s.id)) < 3:
                    raise SchemaError(f"{self.id}: subscale {s.id!r} has fewer than 3 items")
        if not self.likert_min < self.attention_value < self.likert_max:
            raise SchemaError(f"{self.id}: attention value must lie strictly inside the Likert range")

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(it.id for it in self.items)

    def subscale_items(self, subscale_id: str) -> tuple[InstrumentItem, ...]:
        return tuple(it for it in self.items if it.subscale == subscale_id)

    def structure(self) -> dict[str, str]:
        """Item id -> subscale id, in item order."""
        return {it.id: it.subscale for it in self.items}

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "likert_min": self.likert_min,
            "likert_max": self.likert_max,
            "attention_value": self.attention_value,
            "final": self.final,
            "subscales": [{"id": s.id, "name": s.name} for s in self.subscales],
            "items": [
                {"index": it.index, "text": it.text, "subscale": it.subscale, **({"label": it.label} if it.label else {})}
                for it in self.items
            ],
            "glossary": [{"term": t, "definition": d} for t, d in self.glossary],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstrumentDefinition":
        try:
            return cls(
                id=d["id"],
                kind=d["kind"],
                items=tuple(
                    InstrumentItem(int(it["index"]), it["text"], it["subscale"], it.get("label")) for it in d["items"]
                ),
                subscales=tuple(Subscale(s["id"], s["name"]) for s in d["subscales"]),
                likert_min=int(d.get("likert_min", 1)),
                likert_max=int(d.get("likert_max", 5)),
                attention_value=int(d.get("attention_value", 3)),
                glossary=tuple((g["term"], g["definition"]) for g in d.get("glossary", ())),
                final=bool(d.get("final", True)),
            )
        except KeyError as exc:
            raise SchemaError(f"instrument definition missing field {exc}") from None


@dataclass(frozen=True)
class FeatureDescriptor:
    id: str
    domain: str
    name: str
    intended_meaning: str
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.id}: unknown kind {self.kind!r}")
        if self.domain not in DOMAINS:
            raise SchemaError(f"feature {self.id}: unknown domain {self.domain!r}")

    @property
    def instrument_id(self) -> str:
        return f"fus-{self.kind}"


GLOSSARY = (
    ("Feature", "A column in a dataset; e.g. `Debt' to predict Mortgage"),
    ("Value", "a value that a feature can take; e.g. -€500 as a value of `debt'"),
    ("Categorical feature", "a feature with distinct categories; e.g. phone brands"),
    ("Measuring Scale", "a method used to assess a numerical feature; e.g. Celsius is a measuring scale for temperature"),
    (
        "End Points",
        "The minimum and maximum values a numerical feature can reasonably take; e.g. the age range of loan "
        "applicants may be expected to vary between 18 and 100 years.",
    ),
)

_SUBSCALES = (
    Subscale("um", "Understanding & Measurement"),
    Subscale("for", "Feature-Outcome Relation"),
)

_OUTCOME_ITEMS = (
    "In my opinion, the feature should be used to predict the outcome.",
    "I think that the feature is important for the outcome.",
    "I think it is fair that the feature influences the outcome.",
)

_NUMERICAL_UM = (
    "I can understand the scale (units) of the feature.",
    "I can easily understand if a given value of the feature is high or low.",
    "I know what this feature measures.",
    "I know what this feature represents.",
    "I think that I can easily access a definition of the feature.",
)

_CATEGORICAL_UM = (
    "I can easily understand how the categories were assessed.",
    "I can easily understand the order of categories.",
    "I think it is feasible for me to verify the specific category of the feature.",
    "I understand all possible values of the categorical feature.",
    "I know what this feature represents.",
    "I require no support to understand the feature.",
)


def _final(instrument_id, kind, um_texts):
    texts = [(t, "um") for t in um_texts] + [(t, "for") for t in _OUTCOME_ITEMS]
    items = tuple(InstrumentItem(i + 1, t, s) for i, (t, s) in enumerate(texts))
    return InstrumentDefinition(instrument_id, kind, items, _SUBSCALES, glossary=GLOSSARY)


def _draft(instrument_id, kind, n_items):
    items = tuple(
        InstrumentItem(i + 1, f"Draft item X{i} (wording not published)", "draft", label=f"X{i}") for i in range(n_items)
    )
    return InstrumentDefinition(
        instrument_id, kind, items, (Subscale("draft", "Unreduced item pool"),), glossary=GLOSSARY, final=False
    )


FUS_NUMERICAL = _final("fus-numerical", "numerical", _NUMERICAL_UM)
FUS_CATEGORICAL = _final("fus-categorical", "categorical", _CATEGORICAL_UM)
FUS_NUMERICAL_DRAFT = _draft("fus-numerical-draft", "numerical", 22)
FUS_CATEGORICAL_DRAFT = _draft("fus-categorical-draft", "categorical", 20)

BUILTIN_INSTRUMENTS = {
    ins.id: ins for ins in (FUS_NUMERICAL, FUS_CATEGORICAL, FUS_NUMERICAL_DRAFT, FUS_CATEGORICAL_DRAFT)
}

FEATURES = (
    FeatureDescriptor("recruitment_strategy", "hiring", "Recruitment Strategy",
                      "Strategy adopted by the hiring team for recruitment", "categorical"),
    FeatureDescriptor("personality_score", "hiring", "Personality Score",
                      "Score of candidate's personality traits", "numerical"),
    FeatureDescriptor("degree", "hiring", "Degree", "Highest educational degree held", "categorical"),
    FeatureDescriptor("bmi", "medicine", "BMI", "Body Mass Index", "numerical"),
    FeatureDescriptor("total_cholesterol", "medicine", "Total Cholesterol",
                      "Cholesterol in mg/dL or mmol/L", "numerical"),
    FeatureDescriptor("neoplasm_stage", "medicine", "Neoplasm Stage",
                      "Whether the tumour is regional or has spread", "categorical"),
    FeatureDescriptor("credit_score", "loan", "Credit Score", "Applicant's credit score", "numerical"),
    FeatureDescriptor("debt", "loan", "Debt", "Total amount of individual's debt", "numerical"),
    FeatureDescriptor("business_or_commercial", "loan", "Business or commercial",
                      "Type of loan applied for", "categorical"),
)


def get_instrument(spec: str | PathLike | InstrumentDefinition) -> InstrumentDefinition:
    """Resolve a built-in instrument id or load a JSON instrument file."""
    if isinstance(spec, InstrumentDefinition):
        return spec
    key = str(spec)
    if key in BUILTIN_INSTRUMENTS:
        return BUILTIN_INSTRUMENTS[key]
    try:
        with open(key, encoding="utf-8") as fh:
            return InstrumentDefinition.from_dict(json.load(fh))
    except FileNotFoundError:
        raise SchemaError(f"unknown instrument {key!r} (not built in, no such file)") from None


def instrument_map(instruments: Iterable[InstrumentDefinition] | InstrumentDefinition) -> dict[str, InstrumentDefinition]:
    if isinstance(instruments, InstrumentDefinition):
        return {instruments.id: instruments}
    if isinstance(instruments, dict):
        return dict(instruments)
    return {ins.id: ins for ins in instruments}
