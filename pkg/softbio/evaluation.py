"""Verification metrics (ROC, EER, accuracy) and the k-fold protocol."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import MetricError, ProtocolError
from .ingestion import JoinedPair, PairRecord

LOG = logging.getLogger(__name__)

PairScorer = Callable[[JoinedPair], float | None]


@runtime_checkable
class FoldFittedScorer(Protocol):
    """A scorer whose parameters are fit on the training folds before scoring a held-out fold."""

    def fit(self, train: Sequence[JoinedPair], held_out_fold: int | None) -> PairScorer: ...


@dataclass(frozen=True, eq=False)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    @classmethod
    def of(cls, genuine: Iterable[float], impostor: Iterable[float]) -> "ScoreSet":
        return cls(np.asarray(list(genuine), dtype=float), np.asarray(list(impostor), dtype=float))

    @classmethod
    def from_labels(cls, labels: Iterable[bool], scores: Iterable[float]) -> "ScoreSet":
        labels = np.asarray(list(labels), dtype=bool)
        scores = np.asarray(list(scores), dtype=float)
        return cls(scores[labels], scores[~labels])

    def __len__(self) -> int:
        return int(self.genuine.size + self.impostor.size)


def _check(scores: ScoreSet) -> None:
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise MetricError(
            f"need both classes, got {scores.genuine.size} genuine and {scores.impostor.size} impostor scores"
        )
    if not (np.isfinite(scores.genuine).all() and np.isfinite(scores.impostor).all()):
        raise MetricError("scores must be finite")


def _operating_points(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FAR/FRR at every unique score and at +inf.

    FAR(t) = share of impostors with score >= t, FRR(t) = share of genuines with score < t.
    """
    g = np.sort(scores.genuine)
    i = np.sort(scores.impostor)
    thresholds = np.unique(np.concatenate([g, i]))
    far = (i.size - np.searchsorted(i, thresholds, side="left")) / i.size
    frr = np.searchsorted(g, thresholds, side="left") / g.size
    return (
        np.append(thresholds, np.inf),
        np.append(far, 0.0),
        np.append(frr, 1.0),
    )


@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered by rising threshold; the last threshold is +inf."""

    thresholds: tuple[float, ...]
    far: tuple[float, ...]
    frr: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "points": [
                {"threshold": None if math.isinf(t) else t, "far": a, "frr": r}
                for t, a, r in zip(self.thresholds, self.far, self.frr)
            ]
        }


def roc_curve(scores: ScoreSet) -> RocCurve:
    _check(scores)
    thr, far, frr = _operating_points(scores)
    return RocCurve(tuple(float(t) for t in thr), tuple(float(a) for a in far), tuple(float(r) for r in frr))


def eer(scores: ScoreSet) -> float:
    """Equal error rate; higher scores are more genuine.

    Walks the operating points by rising threshold to the first one where
    FRR catches up with FAR and interpolates linearly between it and the
    previous point.
    """
    _check(scores)
    thr, far, frr = _operating_points(scores)
    if thr.size == 2:
        LOG.warning("[evaluation] all %d scores are identical; EER is 0.5 by convention", len(scores))
    diff = far - frr
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0:
        return float(far[k])
    alpha = diff[k - 1] / (diff[k - 1] - diff[k])
    return float(far[k - 1] + alpha * (far[k] - far[k - 1]))


def accuracy_at_threshold(scores: ScoreSet, t: float) -> float:
    if scores.genuine.size + scores.impostor.size == 0:
        raise MetricError("no scores to classify")
    if not math.isfinite(t):
        raise MetricError(f"threshold must be finite, got {t}")
    correct = int(np.count_nonzero(scores.genuine >= t)) + int(np.count_nonzero(scores.impostor < t))
    return correct / len(scores)


def hter_threshold(scores: ScoreSet) -> float:
    """Threshold minimizing (FAR + FRR) / 2.

    Ties go to the lowest operating point, so when accepting everything and
    rejecting everything tie, the lowest score is returned.
    """
    _check(scores)
    thr, far, frr = _operating_points(scores)
    k = int(np.argmin((far + frr) / 2.0))
    if k == 0:
        return float(thr[0])
    if k == thr.size - 1:
        return float(thr[-2] + 1.0)
    return float((thr[k - 1] + thr[k]) / 2.0)


@dataclass(frozen=True)
class PairDecision:
    pair: PairRecord
    score: float
    threshold: float

    @property
    def accepted(self) -> bool:
        return self.score >= self.threshold

    @property
    def correct(self) -> bool:
        return self.accepted == self.pair.genuine


@dataclass
class FoldReport:
    folds: list[int]
    eers: list[float]
    mean: float
    std: float
    accuracies: list[float] | None = None
    mean_accuracy: float | None = None
    thresholds: list[float] | None = None
    dropped: list[int] = field(default_factory=list)
    genuine_counts: list[int] = field(default_factory=list)
    impostor_counts: list[int] = field(default_factory=list)
    decisions: list[PairDecision] | None = None

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("decisions")
        return data


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise MetricError("nothing to summarize")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


@dataclass
class _FoldResult:
    eer: float
    accuracy: float | None
    threshold: float | None
    dropped: int
    genuine: int
    impostor: int
    decisions: list[PairDecision] | None


def _score_all(fn: PairScorer, pairs: Sequence[JoinedPair]) -> tuple[list[JoinedPair], list[float], int]:
    kept: list[JoinedPair] = []
    values: list[float] = []
    dropped = 0
    for pair in pairs:
        s = fn(pair)
        if s is None:
            dropped += 1
            continue
        kept.append(pair)
        values.append(float(s))
    return kept, values, dropped


def _run_fold(
    fold: int,
    test: Sequence[JoinedPair],
    train: Sequence[JoinedPair],
    scorer: PairScorer | FoldFittedScorer,
    train_threshold: bool,
    keep_decisions: bool,
) -> _FoldResult:
    fn = scorer.fit(train, fold) if isinstance(scorer, FoldFittedScorer) else scorer
    kept, values, dropped = _score_all(fn, test)
    test_set = ScoreSet.from_labels((p.genuine for p in kept), values)
    if test_set.genuine.size == 0 or test_set.impostor.size == 0:
        raise ProtocolError(
            f"needs both classes, has {test_set.genuine.size} genuine and {test_set.impostor.size} impostor scored pairs",
            fold=fold,
        )
    fold_eer = eer(test_set)

    accuracy = threshold = None
    if train_threshold:
        train_kept, train_values, _ = _score_all(fn, train)
        train_set = ScoreSet.from_labels((p.genuine for p in train_kept), train_values)
        threshold = hter_threshold(train_set)
        accuracy = accuracy_at_threshold(test_set, threshold)

    decisions = None
    if keep_decisions:
        cut = threshold if threshold is not None else math.inf
        decisions = [PairDecision(p.pair, s, cut) for p, s in zip(kept, values)]
    return _FoldResult(
        fold_eer, accuracy, threshold, dropped, int(test_set.genuine.size), int(test_set.impostor.size), decisions
    )


def cross_validate(
    pairs: Sequence[JoinedPair],
    scorer: PairScorer | FoldFittedScorer,
    train_threshold: bool = False,
    keep_decisions: bool = False,
    workers: int = 1,
) -> FoldReport:
    """Leave-one-fold-out evaluation.

    Each fold's EER is computed on its own scores. With `train_threshold`
    the decision threshold is fit on the other folds (minimum HTER) and the
    held-out accuracy is reported too. Pairs the scorer cannot score (None)
    are dropped and counted per fold.
    """
    by_fold: dict[int, list[JoinedPair]] = {}
    for pair in pairs:
        by_fold.setdefault(pair.fold, []).append(pair)
    folds = sorted(by_fold)
    if len(folds) < 2:
        raise ProtocolError(f"cross-validation needs at least 2 folds, got {len(folds)}")

    def run(fold: int) -> _FoldResult:
        train = [p for f in folds if f != fold for p in by_fold[f]]
        return _run_fold(fold, by_fold[fold], train, scorer, train_threshold, keep_decisions)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(zip(folds, pool.map(run, folds)))
    else:
        results = {f: run(f) for f in folds}

    ordered = [results[f] for f in folds]
    eers = [r.eer for r in ordered]
    mean, std = summarize(eers)
    report = FoldReport(
        folds=folds,
        eers=eers,
        mean=mean,
        std=std,
        dropped=[r.dropped for r in ordered],
        genuine_counts=[r.genuine for r in ordered],
        impostor_counts=[r.impostor for r in ordered],
    )
    if train_threshold:
        report.accuracies = [r.accuracy for r in ordered]
        report.mean_accuracy = summarize(report.accuracies)[0]
        report.thresholds = [r.threshold for r in ordered]
    if keep_decisions:
        report.decisions = [d for r in ordered for d in r.decisions]
    if sum(report.dropped):
        LOG.info("[evaluation] %d pairs had no score and were left out", sum(report.dropped))
    return report


@dataclass
class DecisionBreakdown:
    """Per class: how fusion changed the baseline's decisions."""

    counts: dict[str, dict[str, int]]

    def to_dict(self) -> dict:
        return {"counts": self.counts}


def decision_breakdown(baseline: Sequence[PairDecision], fused: Sequence[PairDecision]) -> DecisionBreakdown:
    base = {d.pair: d for d in baseline}
    counts = {
        label: {"both_correct": 0, "fixed": 0, "broken": 0, "both_wrong": 0}
        for label in ("genuine", "impostor")
    }
    for d in fused:
        b = base.get(d.pair)
        if b is None:
            continue
        bucket = counts[d.pair.label]
        if b.correct and d.correct:
            bucket["both_correct"] += 1
        elif d.correct:
            bucket["fixed"] += 1
        elif b.correct:
            bucket["broken"] += 1
        else:
            bucket["both_wrong"] += 1
    return DecisionBreakdown(counts)
