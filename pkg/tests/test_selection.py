import pytest

from softbio.errors import ConfigError, MetricError, SelectionError
from softbio.profiles import TRAIT_ORDER, TraitKind, TraitSet
from softbio.selection import SelectionStep, exhaustive_best, replay, sffs

ALL = TraitSet.all()


def test_size_criterion_picks_first_trait():
    trace = sffs(ALL, len, max_n=1)
    assert trace.best[1][0].ordered() == (TraitKind.GENDER,)
    assert trace.best[1][1] == 1.0


def test_exhaustive_visits_every_subset():
    result = exhaustive_best(ALL, len)
    assert result.evaluations == 63
    assert sorted(result.best) == [1, 2, 3, 4, 5, 6]


def test_constant_criterion_ties_follow_trait_order():
    trace = sffs(ALL, lambda traits: 0.25)
    for n, (traits, value) in trace.best.items():
        assert traits.ordered() == TRAIT_ORDER[:n]
        assert value == 0.25
    assert all(step.action == "add" for step in trace.steps)


GAINS = {
    TraitKind.GENDER: -0.3,
    TraitKind.AGE: -0.1,
    TraitKind.ETHNICITY: -0.2,
    TraitKind.GLASSES: 0.05,
    TraitKind.BEARD: -0.05,
    TraitKind.MOUSTACHE: 0.1,
}


def additive(traits: TraitSet) -> float:
    return 0.5 + sum(GAINS[k] for k in traits)


def test_additive_criterion_matches_exhaustive():
    trace = sffs(ALL, additive)
    oracle = exhaustive_best(ALL, additive)
    for n in range(1, 7):
        assert trace.best[n][0] == oracle.best[n][0]
        assert trace.best[n][1] == pytest.approx(oracle.best[n][1])
    assert trace.best[3][0].label() == "gender,age,ethnicity"


def test_floating_removal_improves_smaller_sets():
    # gender and age are each good alone but bad together with ethnicity
    def criterion(traits: TraitSet) -> float:
        kinds = traits.kinds
        value = 1.0 - 0.1 * len(kinds)
        if TraitKind.GENDER in kinds and TraitKind.ETHNICITY in kinds:
            value += 0.05
        if kinds == {TraitKind.GENDER}:
            value = 0.5
        if kinds == {TraitKind.ETHNICITY, TraitKind.AGE}:
            value = 0.3
        return value

    trace = sffs(ALL, criterion)
    oracle = exhaustive_best(ALL, criterion)
    for n, (_, value) in trace.best.items():
        assert value >= oracle.best[n][1]
    replay(trace, criterion)


def test_replay_detects_tampering():
    trace = sffs(ALL, additive, max_n=3)
    replay(trace, additive)
    first = trace.steps[0]
    trace.steps[0] = SelectionStep(first.action, first.trait, first.traits, first.criterion + 1)
    with pytest.raises(SelectionError):
        replay(trace, additive)


def test_failing_criterion_names_subset():
    def criterion(traits: TraitSet) -> float:
        if TraitKind.AGE in traits:
            raise MetricError("no pairs left")
        return 0.5

    with pytest.raises(SelectionError) as exc:
        sffs(ALL, criterion)
    assert "age" in exc.value.subset
    with pytest.raises(SelectionError):
        sffs(ALL, lambda traits: float("nan"))


def test_max_n_bounds():
    assert max(sffs(ALL, additive, max_n=2).best) == 2
    with pytest.raises(ConfigError):
        sffs(ALL, additive, max_n=0)
    with pytest.raises(ConfigError):
        sffs(TraitSet.parse("gender,age"), additive, max_n=3)
