"""Sequential floating forward selection over traits, and the exhaustive oracle."""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

from .errors import ConfigError, SelectionError, SoftBioError
from .profiles import TraitKind, TraitSet

LOG = logging.getLogger(__name__)

Criterion = Callable[[TraitSet], float]

MAX_EXHAUSTIVE = 20


@dataclass(frozen=True)
class SelectionStep:
    action: Literal["add", "remove"]
    trait: TraitKind
    traits: TraitSet
    criterion: float

    def to_dict(self) -> dict:
        return {
            "action": self.action,
            "trait": self.trait.value,
            "traits": self.traits.label(),
            "criterion": self.criterion,
        }


@dataclass
class SelectionTrace:
    steps: list[SelectionStep] = field(default_factory=list)
    best: dict[int, tuple[TraitSet, float]] = field(default_factory=dict)
    evaluations: int = 0

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "best": [
                {"n": n, "traits": traits.label(), "criterion": value}
                for n, (traits, value) in sorted(self.best.items())
            ],
            "evaluations": self.evaluations,
        }


class _CachedCriterion:
    def __init__(self, criterion: Criterion):
        self.criterion = criterion
        self.cache: dict[frozenset[TraitKind], float] = {}

    def __call__(self, traits: TraitSet) -> float:
        if traits.kinds in self.cache:
            return self.cache[traits.kinds]
        names = [k.value for k in traits.ordered()]
        try:
            value = float(self.criterion(traits))
        except SoftBioError as exc:
            raise SelectionError(f"criterion failed: {exc.detail}", names) from exc
        if not math.isfinite(value):
            raise SelectionError(f"criterion returned {value}", names)
        self.cache[traits.kinds] = value
        LOG.debug("[selection] %s -> %.6f", traits.label(), value)
        return value


def _argmin(options: list[tuple[TraitKind, TraitSet]], evaluate: _CachedCriterion) -> tuple[TraitKind, TraitSet, float]:
    # options arrive in trait order; strict < keeps the earliest on ties
    values = {trait: evaluate(traits) for trait, traits in options}
    best_trait, best_set = options[0]
    for trait, traits in options[1:]:
        if values[trait] < values[best_trait]:
            best_trait, best_set = trait, traits
    return best_trait, best_set, values[best_trait]


def sffs(candidates: TraitSet, criterion: Criterion, max_n: int | None = None) -> SelectionTrace:
    """Minimize `criterion` by floating forward selection up to `max_n` traits.

    After every addition the trait whose removal gives a strictly better set
    than the best one known for the smaller size is dropped, repeatedly.
    """
    max_n = len(candidates) if max_n is None else max_n
    if not 1 <= max_n <= len(candidates):
        raise ConfigError(f"max_n must be within 1-{len(candidates)}, got {max_n}")

    evaluate = _CachedCriterion(criterion)
    trace = SelectionTrace()
    current: TraitSet | None = None

    while current is None or len(current) < max_n:
        remaining = [k for k in candidates.ordered() if current is None or k not in current]
        options = [(k, TraitSet.of([k]) if current is None else current.with_trait(k)) for k in remaining]
        added, current, value = _argmin(options, evaluate)
        trace.steps.append(SelectionStep("add", added, current, value))
        size = len(current)
        if size not in trace.best or value < trace.best[size][1]:
            trace.best[size] = (current, value)

        while len(current) > 2:
            options = [(k, current.without(k)) for k in current.ordered()]
            removed, smaller, value = _argmin(options, evaluate)
            if value >= trace.best[len(smaller)][1]:
                break
            current = smaller
            trace.steps.append(SelectionStep("remove", removed, current, value))
            trace.best[len(current)] = (current, value)

    trace.evaluations = len(evaluate.cache)
    LOG.info("[selection] sffs finished after %d subset evaluations", trace.evaluations)
    return trace


def replay(trace: SelectionTrace, criterion: Criterion) -> None:
    """Re-apply the trace's actions and check every recorded set and criterion value."""
    current: frozenset[TraitKind] = frozenset()
    for i, step in enumerate(trace.steps):
        current = current | {step.trait} if step.action == "add" else current - {step.trait}
        names = [k.value for k in step.traits.ordered()]
        if current != step.traits.kinds:
            raise SelectionError(f"step {i} records a set the actions do not produce", names)
        value = float(criterion(step.traits))
        if value != step.criterion:
            raise SelectionError(f"step {i} recorded {step.criterion!r}, criterion gives {value!r}", names)


@dataclass
class ExhaustiveResult:
    best: dict[int, tuple[TraitSet, float]]
    evaluations: int

    def to_dict(self) -> dict:
        return {
            "best": [
                {"n": n, "traits": traits.label(), "criterion": value}
                for n, (traits, value) in sorted(self.best.items())
            ],
            "evaluations": self.evaluations,
        }


def exhaustive_best(candidates: TraitSet, criterion: Criterion) -> ExhaustiveResult:
    if len(candidates) > MAX_EXHAUSTIVE:
        raise ConfigError(f"exhaustive search is limited to {MAX_EXHAUSTIVE} candidates, got {len(candidates)}")
    evaluate = _CachedCriterion(criterion)
    ordered = candidates.ordered()
    best: dict[int, tuple[TraitSet, float]] = {}
    for size in range(1, len(ordered) + 1):
        for combo in itertools.combinations(ordered, size):
            traits = TraitSet.of(combo)
            value = evaluate(traits)
            if size not in best or value < best[size][1]:
                best[size] = (traits, value)
    return ExhaustiveResult(best, len(evaluate.cache))
