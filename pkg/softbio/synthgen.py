"""Seeded synthetic identities, noisy per-image soft profiles, LFW-style pairs
and face scores calibrated to a target EER."""
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from scipy.stats import norm

from .config_loader import read_structured
from .errors import GenerationError, SpecError
from .ingestion import AnnotationRecord, PairRecord, PairsFile, ScoreRecord, image_id
from .profiles import (
    DEFAULT_AGE_CUTS,
    MAX_YEARS,
    TRAIT_ORDER,
    Categorical,
    SoftProfile,
    TraitKind,
    TraitValue,
    Years,
)

LOG = logging.getLogger(__name__)

PRIOR_TOLERANCE = 1e-9

# Population statistics of the LFW manual annotations
DEFAULT_PRIORS: dict[TraitKind, tuple[float, ...]] = {
    TraitKind.GENDER: (0.78, 0.22),
    TraitKind.AGE: (0.005, 0.005, 0.10, 0.67, 0.22),
    TraitKind.ETHNICITY: (0.815, 0.04, 0.055, 0.02, 0.07),
    TraitKind.GLASSES: (0.80, 0.186, 0.014),
    TraitKind.BEARD: (0.06, 0.94),
    TraitKind.MOUSTACHE: (0.10, 0.90),
}

# Year ranges the latent age is drawn from, one per age category
AGE_BIN_EDGES: tuple[float, ...] = (0.0,) + DEFAULT_AGE_CUTS + (90.0,)

SUBJECT_FORMAT = "Subject_{:05d}"


class SynthSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_subjects: int = Field(gt=0)
    # fixed count, or {count: probability}
    images_per_subject: int | dict[int, float] = 4
    trait_priors: dict[TraitKind, tuple[float, ...]] = Field(default_factory=lambda: dict(DEFAULT_PRIORS))
    label_noise: float | dict[TraitKind, float] = 0.0
    age_drift_years: float = Field(default=0.0, ge=0.0)
    age_mode: Literal["categorical", "years"] = "categorical"
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("images_per_subject")
    @classmethod
    def _check_images(cls, value):
        if isinstance(value, int):
            if value < 1:
                raise ValueError(f"images_per_subject must be at least 1, got {value}")
            return value
        if not value or any(k < 1 for k in value) or any(p < 0 for p in value.values()):
            raise ValueError("images_per_subject histogram needs counts >= 1 with non-negative probabilities")
        if abs(sum(value.values()) - 1.0) > PRIOR_TOLERANCE:
            raise ValueError(f"images_per_subject probabilities sum to {sum(value.values())}, not 1")
        return value

    @field_validator("trait_priors")
    @classmethod
    def _check_priors(cls, value):
        merged = dict(DEFAULT_PRIORS)
        merged.update(value)
        for kind, probs in merged.items():
            if len(probs) != len(kind.instances):
                raise ValueError(f"{kind.label} prior needs {len(kind.instances)} probabilities, got {len(probs)}")
            if any(p < 0 for p in probs):
                raise ValueError(f"{kind.label} prior has a negative probability")
            if abs(sum(probs) - 1.0) > PRIOR_TOLERANCE:
                raise ValueError(f"{kind.label} prior sums to {sum(probs)}, not 1")
        return merged

    @field_validator("label_noise")
    @classmethod
    def _check_noise(cls, value):
        rates = value.values() if isinstance(value, dict) else [value]
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError(f"label noise rates must be within [0, 1], got {value}")
        return value

    def noise(self, kind: TraitKind) -> float:
        if isinstance(self.label_noise, dict):
            return self.label_noise.get(kind, 0.0)
        return self.label_noise

    @classmethod
    def build(cls, **fields) -> "SynthSpec":
        try:
            return cls(**fields)
        except ValidationError as exc:
            raise SpecError(f"invalid synthetic spec: {exc}") from exc


RUN_KEYS = ("folds", "per_class", "face_scores")


def load_synth_spec(path: str | Path | None, **overrides) -> tuple[SynthSpec, dict]:
    """Population spec plus the run-level keys (folds, per_class, face_scores).

    Values come from an optional JSON/YAML file; non-None overrides win.
    """
    data: dict = {}
    if path is not None:
        try:
            data = read_structured(Path(path))
        except (OSError, ValueError) as exc:
            raise SpecError(f"cannot read spec {path}: {exc}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    run = {k: data.pop(k) for k in RUN_KEYS if k in data}
    return SynthSpec.build(**data), run


class FaceScoreModel(BaseModel):
    """Equal- or unequal-variance Gaussian face scores.

    With `target_eer` the impostor distribution is N(0, 1) and the genuine
    mean is d' = 2 z(1 - target_eer), which gives EER = Phi(-d'/2).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    genuine_mean: float | None = None
    genuine_std: float | None = Field(default=None, gt=0)
    impostor_mean: float | None = None
    impostor_std: float | None = Field(default=None, gt=0)
    target_eer: float | None = Field(default=None, gt=0.0, lt=0.5)

    @model_validator(mode="after")
    def _complete(self):
        explicit = (self.genuine_mean, self.genuine_std, self.impostor_mean, self.impostor_std)
        if self.target_eer is None and any(v is None for v in explicit):
            raise ValueError("give either target_eer or all of genuine/impostor mean and std")
        return self

    @classmethod
    def build(cls, **fields) -> "FaceScoreModel":
        try:
            return cls(**fields)
        except ValidationError as exc:
            raise SpecError(f"invalid face score model: {exc}") from exc

    def parameters(self) -> tuple[float, float, float, float]:
        """(genuine mean, genuine std, impostor mean, impostor std)."""
        if self.target_eer is not None:
            d_prime = 2.0 * float(norm.ppf(1.0 - self.target_eer))
            return d_prime, 1.0, 0.0, 1.0
        return self.genuine_mean, self.genuine_std, self.impostor_mean, self.impostor_std


@dataclass
class Population:
    subjects: list[str]
    latent: dict[str, SoftProfile]
    images: list[AnnotationRecord]


def child_seeds(seed: int, n: int) -> list[int]:
    """Independent seeds for the population, pairs and score streams of one run."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _image_counts(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    if isinstance(spec.images_per_subject, int):
        return np.full(spec.n_subjects, spec.images_per_subject, dtype=int)
    counts = sorted(spec.images_per_subject)
    probs = np.asarray([spec.images_per_subject[c] for c in counts])
    return rng.choice(np.asarray(counts), size=spec.n_subjects, p=probs / probs.sum())


def _observe_nominal(codes: np.ndarray, k: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    flip = rng.random(codes.size) < rate
    other = rng.integers(0, k - 1, size=codes.size)
    other = other + (other >= codes)
    return np.where(flip, other, codes)


def _observe_age_codes(codes: np.ndarray, k: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    shift = rng.random(codes.size) < rate
    step = rng.choice(np.array([-1, 1]), size=codes.size)
    return np.where(shift, np.clip(codes + step, 0, k - 1), codes)


def generate_population(spec: SynthSpec) -> Population:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_subjects
    latent_codes = {
        kind: rng.choice(len(kind.instances), size=n, p=np.asarray(spec.trait_priors[kind]))
        for kind in TRAIT_ORDER
    }
    latent_years = None
    if spec.age_mode == "years":
        codes = latent_codes[TraitKind.AGE]
        lo = np.asarray(AGE_BIN_EDGES[:-1])[codes]
        hi = np.asarray(AGE_BIN_EDGES[1:])[codes]
        latent_years = np.round(rng.uniform(lo, hi), 1)

    counts = _image_counts(spec, rng)
    owner = np.repeat(np.arange(n), counts)
    observed: dict[TraitKind, np.ndarray] = {}
    for kind in TRAIT_ORDER:
        codes = latent_codes[kind][owner]
        k = len(kind.instances)
        rate = spec.noise(kind)
        if kind is TraitKind.AGE:
            observed[kind] = _observe_age_codes(codes, k, rate, rng)
        else:
            observed[kind] = _observe_nominal(codes, k, rate, rng)
    observed_years = None
    if latent_years is not None:
        jitter = rng.normal(0.0, spec.age_drift_years, size=owner.size)
        observed_years = np.round(np.clip(latent_years[owner] + jitter, 0.0, MAX_YEARS), 1)

    def value(kind: TraitKind, codes: np.ndarray, years: np.ndarray | None, i: int) -> TraitValue:
        if kind is TraitKind.AGE and years is not None:
            return Years(float(years[i]))
        return Categorical(int(codes[i]))

    subjects = [SUBJECT_FORMAT.format(s + 1) for s in range(n)]
    latent = {
        name: SoftProfile(
            tuple(value(kind, latent_codes[kind], latent_years, s) for kind in TRAIT_ORDER), "synthetic"
        )
        for s, name in enumerate(subjects)
    }
    images: list[AnnotationRecord] = []
    seen = np.zeros(n, dtype=int)
    for i, s in enumerate(owner):
        seen[s] += 1
        profile = SoftProfile(
            tuple(value(kind, observed[kind], observed_years, i) for kind in TRAIT_ORDER), "synthetic"
        )
        images.append(AnnotationRecord(image_id(subjects[s], int(seen[s])), subjects[s], profile))
    LOG.info("[synthgen] %d subjects, %d images (seed %d)", n, len(images), spec.seed)
    return Population(subjects, latent, images)


def _genuine_candidates(subjects: list[str], images: dict[str, list[str]]) -> list[tuple[str, str]]:
    return [pair for s in subjects for pair in itertools.combinations(images[s], 2)]


def _impostors(
    subjects: list[str], images: dict[str, list[str]], wanted: int, rng: np.random.Generator
) -> list[tuple[str, str]]:
    sizes = np.asarray([len(images[s]) for s in subjects])
    available = (int(sizes.sum()) ** 2 - int((sizes**2).sum())) // 2
    wanted = min(wanted, available)
    chosen: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    while len(chosen) < wanted:
        a, b = rng.choice(len(subjects), size=2, replace=False)
        left = images[subjects[a]][rng.integers(sizes[a])]
        right = images[subjects[b]][rng.integers(sizes[b])]
        key = (left, right) if left < right else (right, left)
        if key in seen:
            continue
        seen.add(key)
        chosen.append((left, right))
    return chosen


def generate_pairs(population: Population, folds: int, per_class_per_fold: int, seed: int) -> PairsFile:
    """Subject-disjoint folds, each with `per_class_per_fold` genuine then impostor pairs."""
    if folds < 1 or per_class_per_fold < 1:
        raise SpecError(f"need at least one fold and one pair per class, got {folds} x {per_class_per_fold}")
    rng = np.random.default_rng(seed)
    images: dict[str, list[str]] = {s: [] for s in population.subjects}
    for rec in population.images:
        images[rec.subject_id].append(rec.image_id)

    order = rng.permutation(len(population.subjects))
    records: list[PairRecord] = []
    shortfall = 0
    for fold, part in enumerate(np.array_split(order, folds)):
        subjects = [population.subjects[i] for i in part]
        genuine = _genuine_candidates(subjects, images)
        if len(genuine) < per_class_per_fold:
            shortfall += per_class_per_fold - len(genuine)
        else:
            picks = rng.choice(len(genuine), size=per_class_per_fold, replace=False)
            records.extend(PairRecord(fold, *genuine[i], True) for i in picks)

        impostor = _impostors(subjects, images, per_class_per_fold, rng) if len(subjects) > 1 else []
        if len(impostor) < per_class_per_fold:
            shortfall += per_class_per_fold - len(impostor)
        else:
            records.extend(PairRecord(fold, left, right, False) for left, right in impostor)

    if shortfall:
        raise GenerationError(
            f"population too small for {folds} folds x {per_class_per_fold} pairs per class; {shortfall} pairs short",
            shortfall=shortfall,
        )
    return PairsFile(folds, per_class_per_fold, tuple(records))


def generate_face_scores(
    pairs: PairsFile | list[PairRecord],
    model: FaceScoreModel,
    seed: int,
    matcher_id: str = "synthetic-face",
) -> list[ScoreRecord]:
    records = list(pairs)
    mu_g, sd_g, mu_i, sd_i = model.parameters()
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(len(records))
    genuine = np.asarray([r.genuine for r in records], dtype=bool)
    scores = np.where(genuine, mu_g + sd_g * z, mu_i + sd_i * z)
    return [ScoreRecord(r.left_image, r.right_image, float(s), matcher_id) for r, s in zip(records, scores)]


@dataclass
class SyntheticDataset:
    population: Population
    pairs: PairsFile
    scores: list[ScoreRecord]


def generate_dataset(
    spec: SynthSpec,
    folds: int,
    per_class_per_fold: int,
    model: FaceScoreModel,
    matcher_id: str = "synthetic-face",
) -> SyntheticDataset:
    _, pair_seed, score_seed = child_seeds(spec.seed, 3)
    population = generate_population(spec)
    pairs = generate_pairs(population, folds, per_class_per_fold, pair_seed)
    scores = generate_face_scores(pairs, model, score_seed, matcher_id)
    return SyntheticDataset(population, pairs, scores)
