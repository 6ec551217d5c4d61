"""Dataset statistics, trait correlations and COTS estimate quality."""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import AnalysisError, DisjointInputsError
from .ingestion import AnnotationRecord, CotsRecord
from .profiles import (
    DEFAULT_AGE_CUTS,
    TRAIT_ORDER,
    Categorical,
    Missing,
    SoftProfile,
    TraitKind,
    TraitValue,
    Years,
    categorical_age,
    validate_age_cuts,
)

LOG = logging.getLogger(__name__)

MORE_THAN_3 = "more than 3"


def pearson(a: Sequence[float], b: Sequence[float]) -> float | None:
    """Correlation with population moments; None when either vector is constant."""
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape:
        raise AnalysisError(f"vectors differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise AnalysisError(f"correlation needs at least 2 observations, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.mean(dx * dx))
    sy = np.sqrt(np.mean(dy * dy))
    if sx == 0.0 or sy == 0.0:
        return None
    r = float(np.mean(dx * dy) / (sx * sy))
    return min(1.0, max(-1.0, r))


def _numeric(value: TraitValue) -> float | None:
    if isinstance(value, Categorical):
        return float(value.code)
    if isinstance(value, Years):
        return value.age
    return None


def _quantized(profile: SoftProfile, age_cuts: Sequence[float] | None) -> SoftProfile:
    if age_cuts is None:
        return profile
    return profile.replace(TraitKind.AGE, categorical_age(profile[TraitKind.AGE], age_cuts))


@dataclass
class CorrelationMatrix:
    traits: tuple[TraitKind, ...]
    values: list[list[float | None]]
    counts: list[list[int]]

    def get(self, a: TraitKind, b: TraitKind) -> float | None:
        return self.values[self.traits.index(a)][self.traits.index(b)]

    def to_rows(self) -> list[list[str]]:
        header = [""] + [k.label for k in self.traits]
        rows = [header]
        for kind, row in zip(self.traits, self.values):
            rows.append([kind.label] + ["" if v is None else f"{v:.4f}" for v in row])
        return rows

    def to_dict(self) -> dict:
        return {
            "traits": [k.value for k in self.traits],
            "values": self.values,
            "counts": self.counts,
        }


def _code_frame(profiles: Sequence[SoftProfile]) -> pd.DataFrame:
    """One float column per trait; Missing becomes NaN."""
    return pd.DataFrame(
        {kind.value: [_numeric(p[kind]) for p in profiles] for kind in TRAIT_ORDER},
        dtype=float,
    )


def correlation_matrix(
    records: Iterable[AnnotationRecord],
    age_cuts: Sequence[float] | None = DEFAULT_AGE_CUTS,
) -> CorrelationMatrix:
    """Pairwise-deletion Pearson matrix over trait codes.

    Ages in years are binned with `age_cuts`; pass None to correlate raw years.
    Pairs of traits with a constant column or fewer than two common entries
    are undefined (None).
    """
    profiles = [_quantized(r.profile, age_cuts) for r in records]
    if not profiles:
        raise AnalysisError("no annotations to correlate")
    frame = _code_frame(profiles)
    present = frame.notna().astype(int)
    counts = present.T @ present
    corr = frame.corr(method="pearson").clip(-1.0, 1.0).to_numpy(copy=True)
    np.fill_diagonal(corr, 1.0)
    values = [[None if np.isnan(v) else float(v) for v in row] for row in corr]
    return CorrelationMatrix(TRAIT_ORDER, values, counts.to_numpy().astype(int).tolist())


@dataclass
class InstanceShare:
    instance: str
    count: int
    percent: float


@dataclass
class TraitDistribution:
    trait: TraitKind
    instances: list[InstanceShare]
    missing: int

    @property
    def total(self) -> int:
        return sum(s.count for s in self.instances)


@dataclass
class DemographicTable:
    images: int
    subjects: int
    traits: list[TraitDistribution]

    def share(self, kind: TraitKind, instance: str) -> float:
        for dist in self.traits:
            if dist.trait is kind:
                for s in dist.instances:
                    if s.instance == instance:
                        return s.percent
        raise KeyError(f"{kind.value}/{instance}")

    def to_rows(self) -> list[list[str]]:
        rows = [["trait", "instance", "count", "percent"]]
        for dist in self.traits:
            for s in dist.instances:
                rows.append([dist.trait.label, s.instance, str(s.count), f"{s.percent:.1f}"])
            rows.append([dist.trait.label, "Missing", str(dist.missing), ""])
        return rows

    def to_dict(self) -> dict:
        return {
            "images": self.images,
            "subjects": self.subjects,
            "traits": {
                d.trait.value: {
                    "instances": {s.instance: {"count": s.count, "percent": s.percent} for s in d.instances},
                    "missing": d.missing,
                }
                for d in self.traits
            },
        }


def demographic_stats(
    records: Sequence[AnnotationRecord],
    age_cuts: Sequence[float] = DEFAULT_AGE_CUTS,
) -> DemographicTable:
    """Percent of each instance over the non-Missing entries of its trait."""
    if not records:
        raise AnalysisError("no annotations")
    cuts = validate_age_cuts(age_cuts)
    profiles = [_quantized(r.profile, cuts) for r in records]
    frame = _code_frame(profiles).astype("Int64")
    traits: list[TraitDistribution] = []
    for kind in TRAIT_ORDER:
        column = frame[kind.value]
        codes = range(len(kind.instances))
        counts = column.value_counts().reindex(codes, fill_value=0)
        shares = column.value_counts(normalize=True).reindex(codes, fill_value=0.0)
        traits.append(TraitDistribution(
            kind,
            [InstanceShare(name, int(counts[c]), 100.0 * float(shares[c])) for c, name in zip(codes, kind.instances)],
            int(column.isna().sum()),
        ))
    subjects = len({r.subject_id for r in records})
    return DemographicTable(len(records), subjects, traits)


@dataclass
class InstanceAccuracy:
    instance: str
    support: int
    correct: int

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.support if self.support else None


@dataclass
class TraitAccuracy:
    trait: TraitKind
    available: bool
    instances: list[InstanceAccuracy] = field(default_factory=list)
    unanswered: int = 0

    @property
    def evaluated(self) -> int:
        return sum(i.support for i in self.instances)

    @property
    def overall(self) -> float | None:
        if not self.available or not self.evaluated:
            return None
        return sum(i.correct for i in self.instances) / self.evaluated


@dataclass
class AccuracyTable:
    images: int
    detected: int
    traits: list[TraitAccuracy]

    @property
    def detection_rate(self) -> float:
        return self.detected / self.images

    def trait(self, kind: TraitKind) -> TraitAccuracy:
        return next(t for t in self.traits if t.trait is kind)

    def to_rows(self) -> list[list[str]]:
        def pct(v: float | None) -> str:
            return "N/A" if v is None else f"{100.0 * v:.2f}"

        rows = [["trait", "instance", "support", "accuracy"]]
        for t in self.traits:
            if not t.available:
                rows.append([t.trait.label, "Overall", "0", "N/A"])
                continue
            for inst in t.instances:
                rows.append([t.trait.label, inst.instance, str(inst.support), pct(inst.accuracy)])
            rows.append([t.trait.label, "Overall", str(t.evaluated), pct(t.overall)])
        rows.append(["Detection", "Rate", str(self.images), pct(self.detection_rate)])
        return rows

    def to_dict(self) -> dict:
        return {
            "images": self.images,
            "detected": self.detected,
            "detection_rate": self.detection_rate,
            "traits": {
                t.trait.value: {
                    "available": t.available,
                    "overall": t.overall,
                    "evaluated": t.evaluated,
                    "unanswered": t.unanswered,
                    "instances": {
                        i.instance: {"support": i.support, "correct": i.correct, "accuracy": i.accuracy}
                        for i in t.instances
                    },
                }
                for t in self.traits
            },
        }


def cots_accuracy(
    groundtruth: Sequence[AnnotationRecord],
    cots: Sequence[CotsRecord],
    age_thresholds: Sequence[float] = DEFAULT_AGE_CUTS,
    restrict_to_outputs: Iterable[TraitKind] = (TraitKind.ETHNICITY,),
) -> AccuracyTable:
    """Agreement of COTS estimates with manual labels, per groundtruth instance.

    Undetected faces count against the detection rate only. For traits in
    `restrict_to_outputs` only groundtruth instances the COTS ever outputs
    are evaluated (a system that knows three ethnicities is not scored on
    the other two).
    """
    cuts = validate_age_cuts(age_thresholds)
    restrict = set(restrict_to_outputs)
    truth = {r.image_id: r.profile for r in groundtruth}
    estimates = {r.image_id: r for r in cots}
    common = sorted(truth.keys() & estimates.keys())
    if not common:
        raise DisjointInputsError("groundtruth and COTS files share no image ids")
    unmatched = len(estimates) - len(common)
    if unmatched:
        LOG.warning("[analysis] %d COTS images have no groundtruth and are ignored", unmatched)

    detected = [img for img in common if estimates[img].detected]
    traits: list[TraitAccuracy] = []
    for kind in TRAIT_ORDER:
        pairs: list[tuple[TraitValue, TraitValue]] = []
        for img in detected:
            gt = truth[img][kind]
            est = estimates[img].estimates[kind]
            if kind is TraitKind.AGE:
                gt = categorical_age(gt, cuts)
                est = categorical_age(est, cuts)
            pairs.append((gt, est))
        outputs = {est.code for _, est in pairs if isinstance(est, Categorical)}
        if not outputs:
            traits.append(TraitAccuracy(kind, available=False))
            continue
        support = [0] * len(kind.instances)
        correct = [0] * len(kind.instances)
        unanswered = 0
        for gt, est in pairs:
            if isinstance(gt, Missing):
                continue
            if kind in restrict and gt.code not in outputs:
                continue
            if isinstance(est, Missing):
                unanswered += 1
                continue
            support[gt.code] += 1
            correct[gt.code] += int(gt.code == est.code)
        instances = [
            InstanceAccuracy(name, s, c)
            for code, (name, s, c) in enumerate(zip(kind.instances, support, correct))
            if kind not in restrict or code in outputs
        ]
        traits.append(TraitAccuracy(kind, True, instances, unanswered))
    return AccuracyTable(len(common), len(detected), traits)


@dataclass
class AgeStabilityRow:
    label: str
    identities: int
    mean_std: float | None


@dataclass
class AgeStabilityTable:
    rows: list[AgeStabilityRow]
    ddof: int

    def row(self, label: str) -> AgeStabilityRow:
        return next(r for r in self.rows if r.label == label)

    def to_rows(self) -> list[list[str]]:
        out = [["images", "identities", "mean_std"]]
        for r in self.rows:
            out.append([r.label, str(r.identities), "" if r.mean_std is None else f"{r.mean_std:.2f}"])
        return out

    def to_dict(self) -> dict:
        return {
            "ddof": self.ddof,
            "rows": [{"images": r.label, "identities": r.identities, "mean_std": r.mean_std} for r in self.rows],
        }


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def age_stability(cots: Iterable[CotsRecord], ddof: int = 1, max_k: int = 15) -> AgeStabilityTable:
    """Spread of the estimated age across each identity's images, grouped by image count.

    Every image in the file counts toward its identity's row; the spread is
    taken over the detected ages only. Identities with fewer than two ages
    outside the k = 1 row are counted but add nothing to the mean.
    """
    if ddof not in (0, 1):
        raise AnalysisError(f"ddof must be 0 or 1, got {ddof}")
    images: dict[str, int] = defaultdict(int)
    ages: dict[str, list[float]] = defaultdict(list)
    for rec in cots:
        images[rec.subject_id] += 1
        value = rec.estimates[TraitKind.AGE]
        if rec.detected and isinstance(value, Years):
            ages[rec.subject_id].append(value.age)
    if not ages:
        raise AnalysisError("no age estimates in years")

    by_k: dict[int, list[float]] = defaultdict(list)
    identities: dict[int, int] = defaultdict(int)
    for subject in sorted(images):
        k = images[subject]
        identities[k] += 1
        values = np.asarray(ages.get(subject, []))
        if values.size > 1:
            by_k[k].append(float(values.std(ddof=ddof)))
        elif values.size == 1 and k == 1:
            by_k[k].append(0.0)

    if not any(k >= 2 for k in by_k):
        LOG.warning("[analysis] no identity has two or more age estimates; stability table is empty")

    rows = [AgeStabilityRow(str(k), identities.get(k, 0), _mean(by_k.get(k, []))) for k in range(1, max_k + 1)]
    rest = [s for k, stds in by_k.items() if k > max_k for s in stds]
    rows.append(AgeStabilityRow(f">{max_k}", sum(n for k, n in identities.items() if k > max_k), _mean(rest)))
    above_3 = [s for k, stds in by_k.items() if k > 3 for s in stds]
    rows.append(AgeStabilityRow(MORE_THAN_3, sum(n for k, n in identities.items() if k > 3), _mean(above_3)))
    return AgeStabilityTable(rows, ddof)
