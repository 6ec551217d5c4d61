import numpy as np
import pytest

from softbio.errors import (
    ConfigError,
    MissingTraitError,
    NoEvidenceError,
    TraitParseError,
    TraitRangeError,
    TraitTypeError,
)
from softbio.profiles import (
    MISSING,
    TRAIT_ORDER,
    Categorical,
    MatchConfig,
    SoftProfile,
    TraitKind,
    TraitSet,
    Years,
    age_to_category,
    format_trait_value,
    parse_trait_label,
    profile_dissimilarity,
    soft_match,
    soft_score,
    trait_distance,
)

CFG = MatchConfig()


def test_parse_trait_label_names_and_codes():
    assert parse_trait_label(TraitKind.GENDER, "Female") == Categorical(1)
    assert parse_trait_label(TraitKind.AGE, "Baby") == Categorical(0)
    assert parse_trait_label(TraitKind.AGE, "middle aged") == Categorical(3)
    assert parse_trait_label(TraitKind.ETHNICITY, "3") == Categorical(3)
    assert parse_trait_label(TraitKind.GLASSES, "ReadingGlasses") == Categorical(1)
    assert parse_trait_label(TraitKind.AGE, "34y") == Years(34.0)


def test_parse_trait_label_errors():
    with pytest.raises(TraitRangeError):
        parse_trait_label(TraitKind.GLASSES, "7")
    with pytest.raises(TraitParseError) as exc:
        parse_trait_label(TraitKind.AGE, "Elder")
    assert "Age" in str(exc.value) and "Elder" in str(exc.value)
    with pytest.raises(TraitParseError):
        parse_trait_label(TraitKind.GENDER, "34y")
    with pytest.raises(TraitRangeError):
        parse_trait_label(TraitKind.AGE, "130y")


def test_format_trait_value_inverts_parse():
    for kind in TRAIT_ORDER:
        for code in range(len(kind.instances)):
            text = format_trait_value(kind, Categorical(code))
            assert parse_trait_label(kind, text) == Categorical(code)
    assert format_trait_value(TraitKind.AGE, Years(34.5)) == "34.5y"
    assert format_trait_value(TraitKind.AGE, Years(34.0)) == "34y"
    assert format_trait_value(TraitKind.BEARD, MISSING) == ""


def test_age_to_category_half_open_bins():
    assert age_to_category(50) == Categorical(3)
    assert age_to_category(0) == Categorical(0)
    assert age_to_category(61) == Categorical(4)
    assert age_to_category(60.9) == Categorical(3)
    assert age_to_category(3) == Categorical(1)


def test_age_to_category_rejects_bad_cuts():
    with pytest.raises(ConfigError):
        age_to_category(30, (3, 13, 13, 61))
    with pytest.raises(ConfigError):
        age_to_category(30, (3, 13, 40))


def test_trait_distance():
    assert trait_distance(TraitKind.GENDER, Categorical(0), Categorical(1), CFG) == 1
    assert trait_distance(TraitKind.AGE, Categorical(2), Categorical(2), CFG) == 0
    assert trait_distance(TraitKind.AGE, Categorical(2), Categorical(4), CFG) == 0.5
    raw = MatchConfig(age_normalization="raw")
    assert trait_distance(TraitKind.AGE, Categorical(2), Categorical(4), raw) == 2
    assert trait_distance(TraitKind.AGE, Years(30), Years(50), CFG) == 0.25
    assert trait_distance(TraitKind.AGE, Years(0), Years(120), CFG) == 1.0
    assert trait_distance(TraitKind.AGE, Years(30), Years(50), raw) == 20
    assert trait_distance(TraitKind.BEARD, MISSING, Categorical(0), CFG) is None


def test_trait_distance_type_errors():
    with pytest.raises(TraitTypeError):
        trait_distance(TraitKind.AGE, Categorical(2), Years(30), CFG)
    with pytest.raises(TraitTypeError):
        trait_distance(TraitKind.GENDER, Years(30), Categorical(0), CFG)


def _profile(**codes) -> SoftProfile:
    return SoftProfile.from_mapping({TraitKind(k): v for k, v in codes.items()})


def test_profile_dissimilarity_examples():
    p = SoftProfile.from_codes([0, 3, 0, 0, 1, 1])
    q = SoftProfile.from_codes([1, 3, 0, 0, 1, 1])
    assert profile_dissimilarity(p, p, TraitSet.all(), CFG) == 0
    assert profile_dissimilarity(p, q, TraitSet.all(), CFG) == pytest.approx(1 / 6)

    a = _profile(gender=Categorical(0), age=MISSING)
    b = _profile(gender=Categorical(1), age=Categorical(2))
    assert profile_dissimilarity(a, b, TraitSet.parse("age,gender"), CFG) == 1


def test_profile_dissimilarity_sunglasses_discarded():
    p = _profile(gender=Categorical(0), glasses=Categorical(2))
    q = _profile(gender=Categorical(0), glasses=Categorical(0))
    traits = TraitSet.parse("gender,glasses")
    assert profile_dissimilarity(p, q, traits, CFG) == 0.5
    star = MatchConfig(glasses_variant="no-sunglasses")
    assert profile_dissimilarity(p, q, traits, star) == 0
    with pytest.raises(NoEvidenceError):
        profile_dissimilarity(p, q, TraitSet.parse("glasses"), star)
    with pytest.raises(ConfigError):
        TraitSet.parse("glasses*")


def test_profile_dissimilarity_missing_policies():
    a = _profile(gender=Categorical(0))
    b = _profile(gender=Categorical(0), age=Categorical(1))
    traits = TraitSet.parse("gender,age")
    assert profile_dissimilarity(a, b, traits, CFG) == 0
    with pytest.raises(MissingTraitError):
        profile_dissimilarity(a, b, traits, MatchConfig(missing_policy="fail"))
    with pytest.raises(NoEvidenceError):
        profile_dissimilarity(a, b, TraitSet.parse("beard"), CFG)


def test_soft_score_maps():
    assert soft_score(0, CFG) == 1.0
    assert soft_score(1, CFG) == 0.5
    assert soft_score(0.25, MatchConfig(score_map="negated")) == -0.25
    with pytest.raises(TraitRangeError):
        soft_score(-0.1, CFG)


def test_soft_match_without_evidence_is_none():
    empty = SoftProfile.empty()
    assert soft_match(empty, empty, TraitSet.all(), CFG) is None


def test_trait_set_rules():
    assert TraitSet.parse("moustache, age ,gender").label() == "gender,age,moustache"
    with pytest.raises(ConfigError):
        TraitSet.parse("age,age")
    with pytest.raises(ConfigError):
        TraitSet.parse("")
    with pytest.raises(ConfigError):
        TraitSet.parse("hair")


def test_profile_validation():
    with pytest.raises(TraitTypeError):
        SoftProfile((MISSING,) * 5)
    with pytest.raises(TraitRangeError):
        SoftProfile.from_codes([2, 0, 0, 0, 0, 0])
    with pytest.raises(TraitTypeError):
        _profile(gender=Years(30))


def _random_profile(rng: np.random.Generator, years: bool) -> SoftProfile:
    values = {}
    for kind in TRAIT_ORDER:
        if rng.random() < 0.2:
            continue
        if kind is TraitKind.AGE and years:
            values[kind] = Years(float(rng.uniform(0, 100)))
        else:
            values[kind] = Categorical(int(rng.integers(len(kind.instances))))
    return SoftProfile.from_mapping(values)


def test_dissimilarity_symmetric_and_bounded():
    rng = np.random.default_rng(17)
    normalized, raw = MatchConfig(), MatchConfig(age_normalization="raw")
    for _ in range(2000):
        years = bool(rng.random() < 0.5)
        p, q = _random_profile(rng, years), _random_profile(rng, years)
        traits = TraitSet.of([k for k in TRAIT_ORDER if rng.random() < 0.7] or [TraitKind.AGE])
        try:
            d = profile_dissimilarity(p, q, traits, normalized)
        except NoEvidenceError:
            continue
        assert d == profile_dissimilarity(q, p, traits, normalized)
        assert 0.0 <= d <= 1.0
        r = profile_dissimilarity(p, q, traits, raw)
        assert r == profile_dissimilarity(q, p, traits, raw)
        assert r >= d - 1e-12


def test_soft_score_monotone_and_maps_rank_alike():
    reciprocal = MatchConfig()
    negated = MatchConfig(score_map="negated")
    ds = np.sort(np.random.default_rng(23).uniform(0, 5, 500))
    for cfg in (reciprocal, negated):
        scores = [soft_score(float(d), cfg) for d in ds]
        assert all(a >= b for a, b in zip(scores, scores[1:]))
    a = [soft_score(float(d), reciprocal) for d in ds]
    b = [soft_score(float(d), negated) for d in ds]
    assert list(np.argsort(a, kind="stable")) == list(np.argsort(b, kind="stable"))
