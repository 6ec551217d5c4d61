"""Soft-biometric trait taxonomy and the profile matcher.

A profile holds one value per trait. Two profiles are compared trait by
trait (Hamming distance for nominal traits, Euclidean distance for the
ordinal age), the defined distances are averaged, and the average
dissimilarity is mapped to a similarity score.
"""
import bisect
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Literal, Mapping, Sequence

from pydantic import BaseModel, ConfigDict, Field

from .errors import (
    ConfigError,
    MissingTraitError,
    NoEvidenceError,
    TraitParseError,
    TraitRangeError,
    TraitTypeError,
)

LOG = logging.getLogger(__name__)


class TraitKind(Enum):
    GENDER = "gender"
    AGE = "age"
    ETHNICITY = "ethnicity"
    GLASSES = "glasses"
    BEARD = "beard"
    MOUSTACHE = "moustache"

    @property
    def label(self) -> str:
        return self.value.capitalize()

    @property
    def instances(self) -> tuple[str, ...]:
        return INSTANCES[self]

    @property
    def index(self) -> int:
        return _INDEX[self]

    @classmethod
    def parse(cls, text: str) -> "TraitKind":
        key = text.strip().lower()
        for kind in cls:
            if kind.value == key:
                return kind
        raise ConfigError(f"unknown trait {text!r}; expected one of {', '.join(k.value for k in cls)}")


TRAIT_ORDER: tuple[TraitKind, ...] = tuple(TraitKind)
_INDEX = {kind: i for i, kind in enumerate(TRAIT_ORDER)}

INSTANCES: dict[TraitKind, tuple[str, ...]] = {
    TraitKind.GENDER: ("Male", "Female"),
    TraitKind.AGE: ("Baby", "Child", "Youth", "Middle Aged", "Senior"),
    TraitKind.ETHNICITY: ("Caucasian", "Black", "Asian", "Indian", "Other"),
    TraitKind.GLASSES: ("No Glasses", "Eye Wear", "Sunglasses"),
    TraitKind.BEARD: ("Yes", "No"),
    TraitKind.MOUSTACHE: ("Yes", "No"),
}

# Spellings seen in COTS outputs and annotation tools
ALIASES: dict[TraitKind, dict[str, int]] = {
    TraitKind.ETHNICITY: {"white": 0},
    TraitKind.GLASSES: {
        "eyewear": 1, "eye-wear": 1, "readingglasses": 1, "normal": 1,
        "noglasses": 0, "none": 0, "dark": 2,
    },
    TraitKind.AGE: {"middle-aged": 3, "middleaged": 3},
}

SUNGLASSES = 2
MAX_YEARS = 120.0
DEFAULT_AGE_CUTS: tuple[float, float, float, float] = (3.0, 13.0, 40.0, 61.0)

PROFILE_SOURCES = ("manual", "cots-face++", "cots-microsoft", "cots-combined", "synthetic")


@dataclass(frozen=True, slots=True)
class Categorical:
    code: int


@dataclass(frozen=True, slots=True)
class Years:
    age: float


@dataclass(frozen=True, slots=True)
class Missing:
    pass


MISSING = Missing()

TraitValue = Categorical | Years | Missing


def validate_value(kind: TraitKind, value: TraitValue) -> None:
    if isinstance(value, Missing):
        return
    if isinstance(value, Categorical):
        if not isinstance(value.code, int) or isinstance(value.code, bool):
            raise TraitTypeError(f"{kind.label} code must be an integer, got {value.code!r}")
        if not 0 <= value.code < len(kind.instances):
            raise TraitRangeError(
                f"{kind.label} code {value.code} outside 0-{len(kind.instances) - 1}"
            )
        return
    if isinstance(value, Years):
        if kind is not TraitKind.AGE:
            raise TraitTypeError(f"{kind.label} cannot hold an age in years")
        if not 0.0 <= value.age <= MAX_YEARS:
            raise TraitRangeError(f"age {value.age} years outside [0, {MAX_YEARS:g}]")
        return
    raise TraitTypeError(f"{kind.label} value {value!r} is not a trait value")


@dataclass(frozen=True, slots=True)
class SoftProfile:
    """One image's six trait values, in TRAIT_ORDER."""

    values: tuple[TraitValue, ...]
    source: str = "manual"

    def __post_init__(self):
        if len(self.values) != len(TRAIT_ORDER):
            raise TraitTypeError(f"profile needs {len(TRAIT_ORDER)} values, got {len(self.values)}")
        if self.source not in PROFILE_SOURCES:
            raise ConfigError(f"unknown profile source {self.source!r}")
        for kind, value in zip(TRAIT_ORDER, self.values):
            validate_value(kind, value)

    @classmethod
    def from_mapping(cls, mapping: Mapping[TraitKind, TraitValue], source: str = "manual") -> "SoftProfile":
        return cls(tuple(mapping.get(kind, MISSING) for kind in TRAIT_ORDER), source)

    @classmethod
    def from_codes(cls, codes: Sequence[int | None], source: str = "manual") -> "SoftProfile":
        return cls(tuple(MISSING if c is None else Categorical(int(c)) for c in codes), source)

    @classmethod
    def empty(cls, source: str = "manual") -> "SoftProfile":
        return cls((MISSING,) * len(TRAIT_ORDER), source)

    def __getitem__(self, kind: TraitKind) -> TraitValue:
        return self.values[kind.index]

    def replace(self, kind: TraitKind, value: TraitValue) -> "SoftProfile":
        values = list(self.values)
        values[kind.index] = value
        return SoftProfile(tuple(values), self.source)

    @property
    def is_empty(self) -> bool:
        return all(isinstance(v, Missing) for v in self.values)


@dataclass(frozen=True)
class TraitSet:
    kinds: frozenset[TraitKind]

    def __post_init__(self):
        if not self.kinds:
            raise ConfigError("trait set must not be empty")

    @classmethod
    def of(cls, kinds: Iterable[TraitKind]) -> "TraitSet":
        kinds = list(kinds)
        if len(set(kinds)) != len(kinds):
            raise ConfigError(f"duplicate traits in {[k.value for k in kinds]}")
        return cls(frozenset(kinds))

    @classmethod
    def parse(cls, text: str) -> "TraitSet":
        return cls.of(TraitKind.parse(t) for t in text.split(",") if t.strip())

    @classmethod
    def all(cls) -> "TraitSet":
        return cls(frozenset(TRAIT_ORDER))

    def ordered(self) -> tuple[TraitKind, ...]:
        return tuple(k for k in TRAIT_ORDER if k in self.kinds)

    def with_trait(self, kind: TraitKind) -> "TraitSet":
        return TraitSet(self.kinds | {kind})

    def without(self, kind: TraitKind) -> "TraitSet":
        return TraitSet(self.kinds - {kind})

    def label(self) -> str:
        return ",".join(k.value for k in self.ordered())

    def __iter__(self) -> Iterator[TraitKind]:
        return iter(self.ordered())

    def __len__(self) -> int:
        return len(self.kinds)

    def __contains__(self, kind: object) -> bool:
        return kind in self.kinds


class MatchConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    age_normalization: Literal["normalized", "raw"] = "normalized"
    age_span_years: float = Field(default=80.0, gt=0)
    score_map: Literal["reciprocal-shifted", "negated"] = "reciprocal-shifted"
    glasses_variant: Literal["full", "no-sunglasses"] = "full"
    missing_policy: Literal["exclude-trait", "fail"] = "exclude-trait"


_CODE_RE = re.compile(r"^\d+$")


def _normalise_label(text: str) -> str:
    return re.sub(r"[\s_]+", " ", text.strip().lower())


def parse_trait_label(kind: TraitKind, text: str) -> TraitValue:
    """Instance name (any case), decimal code, or for Age a year count like "34y"."""
    norm = _normalise_label(text)
    for code, name in enumerate(kind.instances):
        if norm == name.lower():
            return Categorical(code)
    aliases = ALIASES.get(kind, {})
    alias = aliases.get(norm, aliases.get(norm.replace(" ", "")))
    if alias is not None:
        return Categorical(alias)
    if _CODE_RE.match(norm):
        value = Categorical(int(norm))
        validate_value(kind, value)
        return value
    if kind is TraitKind.AGE and norm.endswith("y"):
        try:
            years = float(norm[:-1])
        except ValueError:
            raise TraitParseError(kind.label, text) from None
        value = Years(years)
        validate_value(kind, value)
        return value
    raise TraitParseError(kind.label, text)


def _format_number(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def format_trait_value(kind: TraitKind, value: TraitValue) -> str:
    """Inverse of parse_trait_label; Missing formats as the empty string."""
    validate_value(kind, value)
    if isinstance(value, Categorical):
        return kind.instances[value.code]
    if isinstance(value, Years):
        return f"{_format_number(value.age)}y"
    return ""


def validate_age_cuts(thresholds: Sequence[float]) -> tuple[float, ...]:
    cuts = tuple(float(t) for t in thresholds)
    if len(cuts) != len(INSTANCES[TraitKind.AGE]) - 1:
        raise ConfigError(f"age cuts need {len(INSTANCES[TraitKind.AGE]) - 1} values, got {len(cuts)}")
    if any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise ConfigError(f"age cuts must be strictly ascending, got {cuts}")
    return cuts


def age_to_category(years: float, thresholds: Sequence[float] = DEFAULT_AGE_CUTS) -> Categorical:
    """Half-open bins: a year equal to a cut falls in the upper category."""
    cuts = validate_age_cuts(thresholds)
    if not 0.0 <= years <= MAX_YEARS:
        raise TraitRangeError(f"age {years} years outside [0, {MAX_YEARS:g}]")
    return Categorical(bisect.bisect_right(cuts, years))


def categorical_age(value: TraitValue, thresholds: Sequence[float] = DEFAULT_AGE_CUTS) -> TraitValue:
    if isinstance(value, Years):
        return age_to_category(value.age, thresholds)
    return value


def _distance(kind: TraitKind, a: TraitValue, b: TraitValue, cfg: MatchConfig) -> float | None:
    if isinstance(a, Missing) or isinstance(b, Missing):
        return None
    if kind is TraitKind.AGE:
        if isinstance(a, Categorical) and isinstance(b, Categorical):
            diff = abs(a.code - b.code)
            if cfg.age_normalization == "normalized":
                return diff / (len(kind.instances) - 1)
            return float(diff)
        if isinstance(a, Years) and isinstance(b, Years):
            diff = abs(a.age - b.age)
            if cfg.age_normalization == "normalized":
                return min(diff / cfg.age_span_years, 1.0)
            return diff
        raise TraitTypeError("cannot compare a categorical age with an age in years")
    return 0.0 if a.code == b.code else 1.0


def trait_distance(kind: TraitKind, a: TraitValue, b: TraitValue, cfg: MatchConfig) -> float | None:
    """Per-trait distance; None when either side is Missing."""
    validate_value(kind, a)
    validate_value(kind, b)
    return _distance(kind, a, b, cfg)


def _visible(kind: TraitKind, value: TraitValue, cfg: MatchConfig) -> TraitValue:
    if (
        kind is TraitKind.GLASSES
        and cfg.glasses_variant == "no-sunglasses"
        and isinstance(value, Categorical)
        and value.code == SUNGLASSES
    ):
        return MISSING
    return value


def profile_dissimilarity(p: SoftProfile, q: SoftProfile, traits: TraitSet, cfg: MatchConfig) -> float:
    """Mean of the defined trait distances over `traits`."""
    total = 0.0
    defined = 0
    undefined: list[str] = []
    for kind in traits.ordered():
        d = _distance(kind, _visible(kind, p[kind], cfg), _visible(kind, q[kind], cfg), cfg)
        if d is None:
            undefined.append(kind.value)
            continue
        total += d
        defined += 1
    if undefined and cfg.missing_policy == "fail":
        raise MissingTraitError(f"undefined traits on pair: {', '.join(undefined)}")
    if defined == 0:
        raise NoEvidenceError(f"no defined trait among {traits.label()}")
    return total / defined


def soft_score(d: float, cfg: MatchConfig) -> float:
    if d < 0:
        raise TraitRangeError(f"dissimilarity must be non-negative, got {d}")
    if cfg.score_map == "negated":
        return -d
    return 1.0 / (1.0 + d)


def soft_match(p: SoftProfile, q: SoftProfile, traits: TraitSet, cfg: MatchConfig) -> float | None:
    """Soft score of a pair, or None when the pair carries no trait evidence."""
    try:
        return soft_score(profile_dissimilarity(p, q, traits, cfg), cfg)
    except NoEvidenceError:
        return None
