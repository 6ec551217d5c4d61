"""Pair scorers plugged into cross_validate and the SFFS criterion."""
import logging
import threading
from typing import Sequence

from .errors import LeakageError, MetricError
from .evaluation import FoldFittedScorer, PairScorer, ScoreSet, eer
from .fusion import DroppedPair, FusionConfig, NormMethod, fit_normalizer, fuse
from .ingestion import JoinedPair
from .profiles import MatchConfig, SoftProfile, TraitKind, TraitSet, categorical_age, soft_match

LOG = logging.getLogger(__name__)


class SoftScorer:
    """Soft score of a pair over `traits`; None when the pair has no trait evidence.

    With `age_cuts` set, ages in years are binned into categories before matching.
    """

    def __init__(self, traits: TraitSet, match_cfg: MatchConfig, age_cuts: Sequence[float] | None = None):
        self.traits = traits
        self.match_cfg = match_cfg
        self.age_cuts = tuple(age_cuts) if age_cuts is not None else None

    def _profile(self, profile: SoftProfile) -> SoftProfile:
        if self.age_cuts is None or TraitKind.AGE not in self.traits:
            return profile
        return profile.replace(TraitKind.AGE, categorical_age(profile[TraitKind.AGE], self.age_cuts))

    def __call__(self, pair: JoinedPair) -> float | None:
        return soft_match(self._profile(pair.left), self._profile(pair.right), self.traits, self.match_cfg)


class FaceScorer:
    def __call__(self, pair: JoinedPair) -> float | None:
        return pair.face_score


class FusionScorer:
    """Normalizers are fit per held-out fold on the training pairs only."""

    def __init__(
        self,
        traits: TraitSet,
        match_cfg: MatchConfig,
        fusion_cfg: FusionConfig,
        method: NormMethod = "minmax",
        age_cuts: Sequence[float] | None = None,
    ):
        self.soft = SoftScorer(traits, match_cfg, age_cuts)
        self.fusion_cfg = fusion_cfg
        self.method = method
        self.dropped: dict[str, int] = {}
        self._lock = threading.Lock()

    def fit(self, train: Sequence[JoinedPair], held_out_fold: int | None) -> PairScorer:
        if held_out_fold is not None:
            leaked = [p.pair for p in train if p.fold == held_out_fold]
            if leaked:
                raise LeakageError(
                    f"{len(leaked)} pairs of held-out fold {held_out_fold} reached normalizer fitting"
                )
        face_scores = [p.face_score for p in train if p.face_score is not None]
        soft_scores = [s for s in map(self.soft, train) if s is not None]
        if not face_scores:
            raise MetricError("no face scores to fit the face normalizer on")
        face_norm = fit_normalizer(face_scores, self.method)
        # a trait set with no evidence anywhere falls back to a degenerate normalizer
        soft_norm = fit_normalizer(soft_scores or [0.0], self.method)

        def score(pair: JoinedPair) -> float | None:
            fused = fuse(pair.face_score, self.soft(pair), (face_norm, soft_norm), self.fusion_cfg)
            if isinstance(fused, DroppedPair):
                with self._lock:
                    self.dropped[fused.reason] = self.dropped.get(fused.reason, 0) + 1
                return None
            return fused

        return score


def score_set(pairs: Sequence[JoinedPair], scorer: PairScorer) -> ScoreSet:
    labels: list[bool] = []
    values: list[float] = []
    for pair in pairs:
        s = scorer(pair)
        if s is not None:
            labels.append(pair.genuine)
            values.append(s)
    return ScoreSet.from_labels(labels, values)


def pooled_eer(pairs: Sequence[JoinedPair], scorer: PairScorer | FoldFittedScorer) -> float:
    """EER over a whole pair list, ignoring folds. Fold-fitted scorers are fit on the same list."""
    fn = scorer.fit(pairs, None) if isinstance(scorer, FoldFittedScorer) else scorer
    return eer(score_set(pairs, fn))
