"""Readers and writers for annotation, pairs, score and COTS files, and the join
that turns them into evaluation-ready pairs."""
import csv
import io
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping, Sequence, TextIO

from .errors import JoinError, FormatError, SchemaError, SoftBioError
from .profiles import (
    MISSING,
    TRAIT_ORDER,
    SoftProfile,
    TraitKind,
    TraitValue,
    format_trait_value,
    parse_trait_label,
)

LOG = logging.getLogger(__name__)

ANNOTATION_COLUMNS = ("image_id", "subject_id") + tuple(k.value for k in TRAIT_ORDER)
SCORE_COLUMNS = ("left_image", "right_image", "score")
COTS_TRAIT_COLUMNS = {
    TraitKind.GENDER: "gender",
    TraitKind.AGE: "age_years",
    TraitKind.ETHNICITY: "ethnicity",
    TraitKind.GLASSES: "glasses",
    TraitKind.BEARD: "beard",
    TraitKind.MOUSTACHE: "moustache",
}

IMAGE_ID_RE = re.compile(r"^(?P<subject>.+)_(?P<index>\d{4,})$")

JoinPolicy = Literal["drop", "strict"]


def image_id(subject: str, index: int) -> str:
    return f"{subject}_{index:04d}"


def split_image_id(value: str) -> tuple[str, int]:
    match = IMAGE_ID_RE.match(value)
    if not match:
        raise FormatError(f"image id {value!r} is not <subject>_<4-digit index>")
    return match.group("subject"), int(match.group("index"))


def subject_of(value: str) -> str:
    return split_image_id(value)[0]


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    subject_id: str
    profile: SoftProfile


@dataclass(frozen=True)
class PairRecord:
    fold: int
    left_image: str
    right_image: str
    genuine: bool

    @property
    def label(self) -> str:
        return "genuine" if self.genuine else "impostor"


@dataclass(frozen=True)
class PairsFile:
    folds: int
    per_class: int
    records: tuple[PairRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class ScoreRecord:
    left_image: str
    right_image: str
    score: float
    matcher_id: str


def _pair_key(left: str, right: str) -> tuple[str, str]:
    return (left, right) if left <= right else (right, left)


class ScoreTable:
    """Scores of one matcher; lookups ignore pair orientation."""

    def __init__(self, matcher_id: str, records: Iterable[ScoreRecord]):
        self.matcher_id = matcher_id
        self.records = tuple(records)
        self._index = {_pair_key(r.left_image, r.right_image): r.score for r in self.records}

    def get(self, left: str, right: str) -> float | None:
        return self._index.get(_pair_key(left, right))

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class CotsRecord:
    image_id: str
    detected: bool
    estimates: SoftProfile
    confidences: tuple[float | None, ...] = (None,) * len(TRAIT_ORDER)

    @property
    def subject_id(self) -> str:
        return subject_of(self.image_id)


@dataclass(frozen=True)
class JoinedPair:
    pair: PairRecord
    left: SoftProfile
    right: SoftProfile
    face_score: float | None = None

    @property
    def fold(self) -> int:
        return self.pair.fold

    @property
    def genuine(self) -> bool:
        return self.pair.genuine


@dataclass
class JoinResult:
    records: list[JoinedPair]
    dropped: int = 0
    dropped_ids: list[str] = field(default_factory=list)


def _open_csv(path: str | Path) -> tuple[list[str], TextIO, Any]:
    handle = open(path, newline="", encoding="utf-8")
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        handle.close()
        raise SchemaError("file is empty, header row required", line=1, path=str(path)) from None
    return [h.strip().lower() for h in header], handle, reader


def _column_index(header: list[str], required: Sequence[str], path: str | Path) -> dict[str, int]:
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"missing columns {', '.join(missing)}", line=1, path=str(path))
    return {name: i for i, name in enumerate(header)}


def _parse_cell(kind: TraitKind, cell: str, line: int, path: str | Path) -> TraitValue:
    cell = cell.strip()
    if not cell:
        return MISSING
    try:
        return parse_trait_label(kind, cell)
    except SoftBioError as exc:
        raise SchemaError(exc.detail, line=line, path=str(path)) from exc


def load_annotations(path: str | Path, source: str = "manual") -> list[AnnotationRecord]:
    """Read an annotation CSV. Columns are located by header name, so any order works."""
    header, handle, reader = _open_csv(path)
    columns = _column_index(header, ANNOTATION_COLUMNS, path)
    records: list[AnnotationRecord] = []
    seen: set[str] = set()
    with handle:
        for row in reader:
            line = reader.line_num
            if not row or not any(c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(row)}", line=line, path=str(path))
            img = row[columns["image_id"]].strip()
            subject = row[columns["subject_id"]].strip()
            match = IMAGE_ID_RE.match(img)
            if not match or match.group("subject") != subject:
                raise SchemaError(
                    f"image id {img!r} does not belong to subject {subject!r}", line=line, path=str(path)
                )
            if img in seen:
                raise SchemaError(f"duplicate image id {img}", line=line, path=str(path))
            seen.add(img)
            values = {kind: _parse_cell(kind, row[columns[kind.value]], line, path) for kind in TRAIT_ORDER}
            records.append(AnnotationRecord(img, subject, SoftProfile.from_mapping(values, source)))
    LOG.debug("[ingestion] loaded %d annotations from %s", len(records), path)
    return records


def emit_annotations(records: Iterable[AnnotationRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ANNOTATION_COLUMNS)
    for rec in records:
        writer.writerow(
            [rec.image_id, rec.subject_id]
            + [format_trait_value(kind, rec.profile[kind]) for kind in TRAIT_ORDER]
        )
    return buf.getvalue()


def annotation_profiles(records: Iterable[AnnotationRecord]) -> dict[str, SoftProfile]:
    return {r.image_id: r.profile for r in records}


def _int_field(value: str, line: int, path: str | Path) -> int:
    try:
        return int(value)
    except ValueError:
        raise FormatError(f"{path}:{line}: {value!r} is not an image index") from None


def load_pairs(path: str | Path) -> PairsFile:
    """Read an LFW pairs file: `<folds>\\t<n>` header (or `<n>` for one fold),
    then per fold n genuine lines `name i j` and n impostor lines `a i b j`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: empty pairs file")
    head = lines[0].split()
    try:
        if len(head) == 2:
            folds, per_class = int(head[0]), int(head[1])
        elif len(head) == 1:
            folds, per_class = 1, int(head[0])
        else:
            raise ValueError(lines[0])
    except ValueError:
        raise FormatError(f"{path}:1: bad header {lines[0]!r}") from None
    if folds < 1 or per_class < 1:
        raise FormatError(f"{path}:1: header declares {folds} folds of {per_class} pairs per class")

    body = lines[1:]
    expected = folds * 2 * per_class
    if len(body) != expected:
        raise FormatError(
            f"{path}: header declares {folds} x ({per_class} + {per_class}) = {expected} pairs, found {len(body)}"
        )

    records: list[PairRecord] = []
    for offset, text in enumerate(body):
        line = offset + 2
        fold, pos = divmod(offset, 2 * per_class)
        fields = text.split()
        genuine = pos < per_class
        if genuine:
            if len(fields) != 3:
                raise FormatError(f"{path}:{line}: fold {fold} expects a 3-field genuine line, got {len(fields)}")
            name, i, j = fields
            records.append(
                PairRecord(fold, image_id(name, _int_field(i, line, path)), image_id(name, _int_field(j, line, path)), True)
            )
        else:
            if len(fields) != 4:
                raise FormatError(f"{path}:{line}: fold {fold} expects a 4-field impostor line, got {len(fields)}")
            a, i, b, j = fields
            records.append(
                PairRecord(fold, image_id(a, _int_field(i, line, path)), image_id(b, _int_field(j, line, path)), False)
            )
    return PairsFile(folds, per_class, tuple(records))


def emit_pairs(pairs: PairsFile) -> str:
    out = [f"{pairs.folds}\t{pairs.per_class}"]
    for rec in pairs.records:
        left, i = split_image_id(rec.left_image)
        right, j = split_image_id(rec.right_image)
        if rec.genuine:
            out.append(f"{left}\t{i}\t{j}")
        else:
            out.append(f"{left}\t{i}\t{right}\t{j}")
    return "\n".join(out) + "\n"


def check_pair_labels(pairs: Iterable[PairRecord]) -> None:
    """Genuine pairs must share a subject prefix; impostor pairs must not."""
    for rec in pairs:
        same = subject_of(rec.left_image) == subject_of(rec.right_image)
        if same != rec.genuine:
            raise FormatError(f"{rec.label} pair {rec.left_image} / {rec.right_image} has inconsistent subjects")


def load_scores(path: str | Path, matcher_id: str | None = None, invert: bool = False) -> ScoreTable:
    """Score CSV, higher = more similar. `invert` negates distance-like scores."""
    matcher = matcher_id or Path(path).stem
    header, handle, reader = _open_csv(path)
    columns = _column_index(header, SCORE_COLUMNS, path)
    records: list[ScoreRecord] = []
    seen: set[tuple[str, str]] = set()
    with handle:
        for row in reader:
            line = reader.line_num
            if not row or not any(c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(row)}", line=line, path=str(path))
            left = row[columns["left_image"]].strip()
            right = row[columns["right_image"]].strip()
            try:
                score = float(row[columns["score"]])
            except ValueError:
                raise SchemaError(f"score {row[columns['score']]!r} is not a number", line=line, path=str(path)) from None
            if not math.isfinite(score):
                raise SchemaError(f"score {score} is not finite", line=line, path=str(path))
            key = _pair_key(left, right)
            if key in seen:
                raise SchemaError(f"duplicate comparison {left} / {right} for matcher {matcher}", line=line, path=str(path))
            seen.add(key)
            records.append(ScoreRecord(left, right, -score if invert else score, matcher))
    return ScoreTable(matcher, records)


def emit_scores(records: Iterable[ScoreRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_COLUMNS)
    for rec in records:
        writer.writerow([rec.left_image, rec.right_image, repr(float(rec.score))])
    return buf.getvalue()


_TRUE = {"1", "true", "yes", "y"}
_FALSE = {"0", "false", "no", "n"}


def _parse_confidence(cell: str, line: int, path: str | Path) -> float | None:
    cell = cell.strip()
    if not cell:
        return None
    try:
        value = float(cell)
    except ValueError:
        raise SchemaError(f"confidence {cell!r} is not a number", line=line, path=str(path)) from None
    if not 0.0 <= value <= 1.0:
        raise SchemaError(f"confidence {value} outside [0, 1]", line=line, path=str(path))
    return value


def _parse_cots_age(cell: str, line: int, path: str | Path) -> TraitValue:
    cell = cell.strip()
    if not cell:
        return MISSING
    try:
        years = float(cell)
    except ValueError:
        return _parse_cell(TraitKind.AGE, cell, line, path)
    return _parse_cell(TraitKind.AGE, f"{years!r}y", line, path)


def load_cots(path: str | Path, source: str = "cots-face++") -> list[CotsRecord]:
    """COTS estimates: image_id, detected, per-trait estimates and optional conf_<trait> columns.

    Trait columns a COTS does not produce may be absent or empty.
    """
    header, handle, reader = _open_csv(path)
    columns = _column_index(header, ("image_id", "detected"), path)
    records: list[CotsRecord] = []
    seen: set[str] = set()
    with handle:
        for row in reader:
            line = reader.line_num
            if not row or not any(c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(row)}", line=line, path=str(path))
            img = row[columns["image_id"]].strip()
            if not IMAGE_ID_RE.match(img):
                raise SchemaError(f"image id {img!r} is not <subject>_<index>", line=line, path=str(path))
            if img in seen:
                raise SchemaError(f"duplicate image id {img}", line=line, path=str(path))
            seen.add(img)
            flag = row[columns["detected"]].strip().lower()
            if flag not in _TRUE | _FALSE:
                raise SchemaError(f"detected flag {flag!r} is not a boolean", line=line, path=str(path))
            detected = flag in _TRUE
            if not detected:
                records.append(CotsRecord(img, False, SoftProfile.empty(source)))
                continue

            values: dict[TraitKind, TraitValue] = {}
            confidences: list[float | None] = []
            for kind in TRAIT_ORDER:
                col = COTS_TRAIT_COLUMNS[kind]
                if kind is TraitKind.AGE and col not in columns and "age" in columns:
                    col = "age"
                cell = row[columns[col]] if col in columns else ""
                if kind is TraitKind.AGE:
                    values[kind] = _parse_cots_age(cell, line, path)
                else:
                    values[kind] = _parse_cell(kind, cell, line, path)
                conf_col = f"conf_{kind.value}"
                confidences.append(
                    _parse_confidence(row[columns[conf_col]], line, path) if conf_col in columns else None
                )
            records.append(CotsRecord(img, True, SoftProfile.from_mapping(values, source), tuple(confidences)))
    LOG.debug("[ingestion] loaded %d COTS records from %s", len(records), path)
    return records


def combine_cots(by_trait: Mapping[TraitKind, Sequence[CotsRecord]], source: str = "cots-combined") -> list[CotsRecord]:
    """Take each trait from its own COTS run (e.g. gender from one system, ethnicity from another)."""
    lookups = {kind: {r.image_id: r for r in recs} for kind, recs in by_trait.items()}
    order: list[str] = []
    seen: set[str] = set()
    for kind in TRAIT_ORDER:
        for rec in by_trait.get(kind, ()):
            if rec.image_id not in seen:
                seen.add(rec.image_id)
                order.append(rec.image_id)

    combined: list[CotsRecord] = []
    for img in order:
        values: dict[TraitKind, TraitValue] = {}
        confidences: list[float | None] = []
        detected = False
        for kind in TRAIT_ORDER:
            rec = lookups.get(kind, {}).get(img)
            if rec is None or not rec.detected:
                values[kind] = MISSING
                confidences.append(None)
                continue
            detected = True
            values[kind] = rec.estimates[kind]
            confidences.append(rec.confidences[kind.index])
        if not detected:
            combined.append(CotsRecord(img, False, SoftProfile.empty(source)))
        else:
            combined.append(CotsRecord(img, True, SoftProfile.from_mapping(values, source), tuple(confidences)))
    return combined


def cots_profiles(records: Iterable[CotsRecord]) -> dict[str, SoftProfile]:
    """Undetected faces map to all-Missing profiles rather than disappearing."""
    return {r.image_id: r.estimates for r in records}


def join(
    pairs: Iterable[PairRecord],
    profiles: Mapping[str, SoftProfile],
    scores: ScoreTable | None = None,
    policy: JoinPolicy = "drop",
) -> JoinResult:
    result = JoinResult(records=[])
    offenders: list[str] = []
    for pair in pairs:
        missing: list[str] = []
        left = profiles.get(pair.left_image)
        right = profiles.get(pair.right_image)
        if left is None:
            missing.append(pair.left_image)
        if right is None:
            missing.append(pair.right_image)
        face = None
        if scores is not None:
            face = scores.get(pair.left_image, pair.right_image)
            if face is None:
                missing.append(f"{pair.left_image}/{pair.right_image}")
        if missing:
            offenders.extend(missing)
            result.dropped += 1
            result.dropped_ids.extend(missing)
            continue
        result.records.append(JoinedPair(pair, left, right, face))

    if offenders and policy == "strict":
        raise JoinError("unresolvable pairs", offenders)
    if result.dropped:
        LOG.warning("[ingestion] dropped %d pairs with missing profiles or scores", result.dropped)
    return result
