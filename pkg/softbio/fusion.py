"""Score normalization and weighted score-level fusion of a face score with a soft score."""
import logging
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import MetricError

LOG = logging.getLogger(__name__)

NormMethod = Literal["minmax", "zscore"]
SoftMissingFallback = Literal["face-only", "drop-pair"]

WEIGHT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Normalizer:
    """Fitted on training scores; `loc`/`scale` are (min, max - min) or (mean, sample std)."""

    method: NormMethod
    loc: float
    scale: float
    degenerate: bool = False

    def apply(self, x: float) -> float:
        if self.degenerate:
            return 0.5 if self.method == "minmax" else 0.0
        return (x - self.loc) / self.scale


def fit_normalizer(scores: Iterable[float], method: NormMethod = "minmax") -> Normalizer:
    arr = np.asarray(list(scores), dtype=float)
    if arr.size == 0:
        raise MetricError("cannot fit a normalizer on no scores")
    if method == "minmax":
        lo, hi = float(arr.min()), float(arr.max())
        if hi <= lo:
            LOG.warning("[fusion] min-max fit on %d identical scores; normalized value fixed at 0.5", arr.size)
            return Normalizer(method, lo, 0.0, degenerate=True)
        return Normalizer(method, lo, hi - lo)
    if method == "zscore":
        mean = float(arr.mean())
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        if std <= 0.0:
            LOG.warning("[fusion] z-score fit on %d scores without spread; normalized value fixed at 0", arr.size)
            return Normalizer(method, mean, 0.0, degenerate=True)
        return Normalizer(method, mean, std)
    raise MetricError(f"unknown normalization {method!r}")


class FusionConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    weights: tuple[float, float] = (0.5, 0.5)  # face, soft
    soft_missing_fallback: SoftMissingFallback = "face-only"

    @model_validator(mode="after")
    def _check_weights(self):
        w_face, w_soft = self.weights
        if w_face < 0 or w_soft < 0:
            raise ValueError(f"weights must be non-negative, got {self.weights}")
        if abs(w_face + w_soft - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"weights must sum to 1, got {w_face + w_soft!r}")
        return self


@dataclass(frozen=True)
class DroppedPair:
    reason: str


def fuse(
    face: float | None,
    soft: float | None,
    norms: tuple[Normalizer, Normalizer],
    cfg: FusionConfig,
) -> float | DroppedPair:
    """Weighted sum of normalized scores. None stands for a missing score."""
    face_norm, soft_norm = norms
    if face is None:
        return DroppedPair("no soft or face score" if soft is None else "no face score")
    if soft is None:
        if cfg.soft_missing_fallback == "face-only":
            return face_norm.apply(face)
        return DroppedPair("no soft evidence")
    w_face, w_soft = cfg.weights
    return w_face * face_norm.apply(face) + w_soft * soft_norm.apply(soft)


def fused_matcher_id(face_matcher: str, traits_label: str) -> str:
    return f"fused:{face_matcher}:{traits_label}"
