import functools
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import click
from pydantic import ValidationError

from .analysis import age_stability, correlation_matrix, cots_accuracy, demographic_stats
from .config import Settings, build_settings, parse_float_list
from .errors import ConfigError, LeakageError, SelectionError, SoftBioError
from .evaluation import FoldReport, ScoreSet, cross_validate, decision_breakdown, roc_curve
from .fusion import FusionConfig, fused_matcher_id
from .ingestion import (
    ScoreRecord,
    annotation_profiles,
    check_pair_labels,
    combine_cots,
    cots_profiles,
    emit_annotations,
    emit_pairs,
    emit_scores,
    join,
    load_annotations,
    load_cots,
    load_pairs,
    load_scores,
)
from .profiles import MatchConfig, SoftProfile, TraitKind, TraitSet, validate_age_cuts
from .reports import RunManifest, fold_rows, percent, write_atomic, write_csv, write_json
from .scoring import FaceScorer, FusionScorer, SoftScorer, pooled_eer
from .selection import exhaustive_best, sffs
from .synthgen import FaceScoreModel, generate_dataset, load_synth_spec

LOG = logging.getLogger(__name__)

FORMATS = ("csv", "json", "both")
COTS_SOURCES = ("cots-face++", "cots-microsoft")

existing_file = click.Path(exists=True, dir_okay=False, path_type=Path)


def guarded(fn):
    """Turn package errors into a message on stderr and the error's exit code."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SoftBioError as exc:
            click.echo(f"error: {exc.detail}", err=True)
            sys.exit(exc.exit_code)
        except ValidationError as exc:
            click.echo(f"error: invalid configuration: {exc}", err=True)
            sys.exit(2)

    return wrapper


def match_options(fn):
    fn = click.option("--glasses-variant", type=click.Choice(["full", "no-sunglasses"]), default=None,
                      help="no-sunglasses treats Sunglasses as missing (Glasses*)")(fn)
    fn = click.option("--age-mode", type=click.Choice(["categorical", "years"]), default="categorical",
                      show_default=True, help="Bin ages in years into categories before matching")(fn)
    fn = click.option("--age-cuts", default=None, help="Four ascending year cuts, e.g. 3,13,40,61")(fn)
    fn = click.option("--age-normalization", type=click.Choice(["normalized", "raw"]), default=None)(fn)
    fn = click.option("--score-map", type=click.Choice(["reciprocal-shifted", "negated"]), default=None)(fn)
    fn = click.option("--missing-policy", type=click.Choice(["exclude-trait", "fail"]), default=None)(fn)
    return fn


def profile_options(fn):
    fn = click.option("--annotations", type=existing_file, default=None, help="Manual annotation CSV")(fn)
    fn = click.option("--cots", "cots_files", type=existing_file, multiple=True,
                      help="COTS estimate CSV (repeatable)")(fn)
    fn = click.option("--cots-map", multiple=True, metavar="TRAIT=INDEX",
                      help="Take TRAIT from the INDEX-th --cots file (0-based)")(fn)
    fn = click.option("--cots-source", type=click.Choice(COTS_SOURCES), default="cots-face++", show_default=True)(fn)
    return fn


def output_options(fn):
    fn = click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None)(fn)
    fn = click.option("--format", "fmt", type=click.Choice(FORMATS), default=None)(fn)
    return fn


def _settings(ctx: click.Context) -> Settings:
    return ctx.find_root().obj


def _age_cuts(settings: Settings, flag: str | None) -> tuple[float, ...]:
    return validate_age_cuts(parse_float_list(flag) if flag else settings.age_cut_list())


def _match_config(settings: Settings, opts: dict[str, Any]) -> MatchConfig:
    return MatchConfig(
        age_normalization=opts["age_normalization"] or settings.age_normalization,
        age_span_years=settings.age_span_years,
        score_map=opts["score_map"] or settings.score_map,
        glasses_variant=opts["glasses_variant"] or settings.glasses_variant,
        missing_policy=opts["missing_policy"] or settings.missing_policy,
    )


def _cots_map(entries: Sequence[str], n_files: int) -> dict[TraitKind, int]:
    mapping: dict[TraitKind, int] = {}
    for entry in entries:
        trait, sep, index = entry.partition("=")
        if not sep or not index.strip().isdigit():
            raise ConfigError(f"--cots-map expects TRAIT=INDEX, got {entry!r}")
        i = int(index)
        if i >= n_files:
            raise ConfigError(f"--cots-map {entry}: only {n_files} --cots files given")
        mapping[TraitKind.parse(trait)] = i
    return mapping


def _load_cots_records(files: Sequence[Path], cots_map: Sequence[str], source: str):
    runs = [load_cots(path, source) for path in files]
    if len(runs) == 1 and not cots_map:
        return runs[0]
    mapping = _cots_map(cots_map, len(runs))
    return combine_cots({kind: runs[mapping.get(kind, 0)] for kind in TraitKind})


def _load_profiles(annotations: Path | None, cots_files: Sequence[Path], cots_map: Sequence[str], source: str):
    if annotations is not None and cots_files:
        raise click.UsageError("give either --annotations or --cots, not both")
    if annotations is not None:
        return annotation_profiles(load_annotations(annotations))
    if cots_files:
        return cots_profiles(_load_cots_records(cots_files, cots_map, source))
    return None


def _inputs(**paths) -> dict[str, Path | None]:
    out: dict[str, Path | None] = {}
    for name, value in paths.items():
        if isinstance(value, (list, tuple)):
            out.update({f"{name}[{i}]": p for i, p in enumerate(value)})
        else:
            out[name] = value
    return out


def _emit(out_dir: Path, stem: str, fmt: str, rows: list[list[str]] | None, data: Any) -> None:
    if fmt in ("csv", "both") and rows is not None:
        write_csv(out_dir / f"{stem}.csv", rows)
    if fmt in ("json", "both"):
        write_json(out_dir / f"{stem}.json", data)


def _resolved(settings: Settings, **overrides) -> dict[str, Any]:
    config = settings.model_dump(exclude={"config_file"})
    for key, value in overrides.items():
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, tuple):
            value = [str(v) if isinstance(v, Path) else v for v in value]
        config[key] = value
    return config


@click.group()
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
@click.pass_context
@guarded
def cli(ctx: click.Context, log_level: str | None):
    """Soft-biometric verification experiments: statistics, evaluation, fusion and selection."""
    settings = build_settings()
    logging.basicConfig(
        level=(log_level or settings.log_level).upper(),
        stream=sys.stderr,
        format="%(levelname)s %(message)s",
        force=True,
    )
    ctx.obj = settings


@cli.command()
@click.option("--annotations", type=existing_file, required=True)
@click.option("--age-cuts", default=None)
@output_options
@click.pass_context
@guarded
def stats(ctx: click.Context, annotations: Path, age_cuts: str | None, out_dir: Path | None, fmt: str | None):
    """Trait distributions and the trait correlation matrix of an annotation file."""
    settings = _settings(ctx)
    out = out_dir or Path(settings.out_dir)
    fmt = fmt or settings.report_format
    cuts = _age_cuts(settings, age_cuts)
    records = load_annotations(annotations)

    demo = demographic_stats(records, cuts)
    corr = correlation_matrix(records, cuts)
    _emit(out, "demographics", fmt, demo.to_rows(), demo.to_dict())
    _emit(out, "correlation", fmt, corr.to_rows(), corr.to_dict())
    RunManifest.for_run(
        "stats", _resolved(settings, age_cuts=list(cuts), out_dir=out, report_format=fmt),
        _inputs(annotations=annotations), settings.seed,
    ).write(out)
    male = demo.share(TraitKind.GENDER, "Male")
    click.echo(f"{demo.images} images, {demo.subjects} subjects, {male:.1f}% male")


def _report_entry(name: str, system: str, report: FoldReport) -> dict:
    entry = {"traits": name, "system": system, "report": report.to_dict()}
    if report.decisions:
        scores = ScoreSet.from_labels((d.pair.genuine for d in report.decisions), (d.score for d in report.decisions))
        if scores.genuine.size and scores.impostor.size:
            entry["roc"] = roc_curve(scores).to_dict()
    return entry


def _table_row(name: str, system: str, report: FoldReport, with_accuracy: bool) -> list[str]:
    row = [name, system, percent(report.mean), percent(report.std)]
    if with_accuracy:
        row.append(percent(report.mean_accuracy))
    return row


@cli.command(name="eval")
@click.option("--pairs", type=existing_file, required=True, help="LFW-format pairs file")
@profile_options
@click.option("--scores", type=existing_file, default=None, help="Face matcher score CSV")
@click.option("--matcher-id", default=None, help="Name of the face matcher (default: score file stem)")
@click.option("--invert", is_flag=True, help="Scores are distances; negate them")
@click.option("--traits", "trait_sets", multiple=True, help="Comma-separated trait set (repeatable)")
@click.option("--fuse", is_flag=True, help="Fuse each trait set with the face scores")
@click.option("--norm", type=click.Choice(["minmax", "zscore"]), default=None)
@click.option("--weights", default=None, help="face,soft weights summing to 1")
@click.option("--soft-missing-fallback", type=click.Choice(["face-only", "drop-pair"]), default=None)
@click.option("--accuracy", is_flag=True, help="Also report accuracy at thresholds trained on the other folds")
@click.option("--join-policy", type=click.Choice(["drop", "strict"]), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@match_options
@click.option("--seed", type=int, default=None)
@output_options
@click.pass_context
@guarded
def eval_cmd(ctx: click.Context, pairs: Path, annotations: Path | None, cots_files: tuple[Path, ...],
             cots_map: tuple[str, ...], cots_source: str, scores: Path | None, matcher_id: str | None,
             invert: bool, trait_sets: tuple[str, ...], fuse: bool, norm: str | None, weights: str | None,
             soft_missing_fallback: str | None, accuracy: bool, join_policy: str | None, workers: int,
             seed: int | None, out_dir: Path | None, fmt: str | None, **match_opts):
    """Cross-validated EER of soft-only, face-only or fused verification."""
    settings = _settings(ctx)
    if not trait_sets and scores is None:
        raise click.UsageError("nothing to evaluate: give --traits and/or --scores")
    if fuse and (scores is None or not trait_sets):
        raise click.UsageError("--fuse needs both --scores and --traits")
    out = out_dir or Path(settings.out_dir)
    fmt = fmt or settings.report_format
    seed = settings.seed if seed is None else seed
    cuts = _age_cuts(settings, match_opts["age_cuts"])
    match_cfg = _match_config(settings, match_opts)
    sets = [TraitSet.parse(t) for t in trait_sets]

    pairs_file = load_pairs(pairs)
    check_pair_labels(pairs_file)
    profiles = _load_profiles(annotations, cots_files, cots_map, cots_source)
    if sets and profiles is None:
        raise click.UsageError("--traits needs --annotations or --cots")
    table = load_scores(scores, matcher_id, invert) if scores is not None else None
    if profiles is None:
        empty = SoftProfile.empty()
        profiles = {img: empty for rec in pairs_file for img in (rec.left_image, rec.right_image)}
    joined = join(pairs_file, profiles, table, join_policy or settings.join_policy).records

    age_cuts = cuts if match_opts["age_mode"] == "categorical" else None
    fusion_cfg = FusionConfig(
        weights=tuple(parse_float_list(weights)) if weights else settings.weight_pair(),
        soft_missing_fallback=soft_missing_fallback or settings.soft_missing_fallback,
    )
    method = norm or settings.norm
    if method not in ("minmax", "zscore"):
        raise ConfigError(f"unknown normalization {method!r}")

    header = ["traits", "system", "eer_mean", "eer_std"] + (["accuracy"] if accuracy else [])
    rows = [header]
    entries: list[dict] = []
    face_report = None
    if table is not None:
        face_report = cross_validate(joined, FaceScorer(), accuracy, True, workers)
        rows.append(_table_row("face", table.matcher_id, face_report, accuracy))
        entries.append(_report_entry("face", table.matcher_id, face_report))
        if fmt in ("csv", "both"):
            write_csv(out / "folds_face.csv", fold_rows(face_report))

    for traits in sets:
        if fuse:
            scorer = FusionScorer(traits, match_cfg, fusion_cfg, method, age_cuts)
            system = fused_matcher_id(table.matcher_id, traits.label())
        else:
            scorer = SoftScorer(traits, match_cfg, age_cuts)
            system = "soft"
        report = cross_validate(joined, scorer, accuracy, True, workers)
        slug = traits.label().replace(",", "-")
        rows.append(_table_row(traits.label(), system, report, accuracy))
        entry = _report_entry(traits.label(), system, report)
        if fuse:
            if scorer.dropped:
                LOG.info("[eval] %s dropped pairs: %s", system, scorer.dropped)
            if accuracy:
                entry["breakdown"] = decision_breakdown(face_report.decisions, report.decisions).to_dict()
            fused = [ScoreRecord(d.pair.left_image, d.pair.right_image, d.score, system) for d in report.decisions]
            write_atomic(out / f"scores_{slug}.csv", emit_scores(fused))
        if fmt in ("csv", "both"):
            write_csv(out / f"folds_{slug}.csv", fold_rows(report))
        entries.append(entry)

    _emit(out, "eval", fmt, rows, {"rows": entries})
    RunManifest.for_run(
        "eval",
        _resolved(settings, traits=[s.label() for s in sets], fuse=fuse, norm=method,
                  weights=list(fusion_cfg.weights), soft_missing_fallback=fusion_cfg.soft_missing_fallback,
                  accuracy=accuracy, match=match_cfg.model_dump(), age_mode=match_opts["age_mode"],
                  age_cuts=list(cuts), invert=invert, cots_map=cots_map, out_dir=out, report_format=fmt,
                  seed=seed),
        _inputs(pairs=pairs, annotations=annotations, cots=cots_files, scores=scores), seed,
    ).write(out)
    for row in rows[1:]:
        click.echo(f"{row[0]:<45} {row[1]:<30} {row[2]:>5} ± {row[3]}")


@cli.command(name="sffs")
@click.option("--dev-pairs", type=existing_file, required=True, help="Pairs the selection is run on")
@click.option("--test-pairs", type=existing_file, default=None, help="Pairs each selected set is evaluated on")
@profile_options
@click.option("--scores", type=existing_file, default=None)
@click.option("--matcher-id", default=None)
@click.option("--invert", is_flag=True)
@click.option("--fuse", is_flag=True, help="Select traits for fusion with the face scores")
@click.option("--norm", type=click.Choice(["minmax", "zscore"]), default=None)
@click.option("--max-n", type=click.IntRange(1, len(TraitKind)), default=len(TraitKind), show_default=True)
@click.option("--oracle", is_flag=True, help="Also run exhaustive search and check SFFS against it")
@click.option("--join-policy", type=click.Choice(["drop", "strict"]), default=None)
@match_options
@output_options
@click.pass_context
@guarded
def sffs_cmd(ctx: click.Context, dev_pairs: Path, test_pairs: Path | None, annotations: Path | None,
             cots_files: tuple[Path, ...], cots_map: tuple[str, ...], cots_source: str, scores: Path | None,
             matcher_id: str | None, invert: bool, fuse: bool, norm: str | None, max_n: int, oracle: bool,
             join_policy: str | None, out_dir: Path | None, fmt: str | None, **match_opts):
    """Floating forward selection of the trait set on development pairs."""
    settings = _settings(ctx)
    if test_pairs is not None and dev_pairs.resolve() == test_pairs.resolve():
        raise LeakageError(f"development and test pairs are the same file ({dev_pairs}); selection would see the test set")
    if fuse and scores is None:
        raise click.UsageError("--fuse needs --scores")
    out = out_dir or Path(settings.out_dir)
    fmt = fmt or settings.report_format
    cuts = _age_cuts(settings, match_opts["age_cuts"])
    match_cfg = _match_config(settings, match_opts)
    age_cuts = cuts if match_opts["age_mode"] == "categorical" else None
    method = norm or settings.norm
    fusion_cfg = FusionConfig(weights=settings.weight_pair(), soft_missing_fallback=settings.soft_missing_fallback)

    profiles = _load_profiles(annotations, cots_files, cots_map, cots_source)
    if profiles is None:
        raise click.UsageError("sffs needs --annotations or --cots")
    table = load_scores(scores, matcher_id, invert) if fuse else None
    policy = join_policy or settings.join_policy

    def scorer_for(traits: TraitSet):
        if fuse:
            return FusionScorer(traits, match_cfg, fusion_cfg, method, age_cuts)
        return SoftScorer(traits, match_cfg, age_cuts)

    dev = join(load_pairs(dev_pairs), profiles, table, policy).records

    def criterion(traits: TraitSet) -> float:
        return pooled_eer(dev, scorer_for(traits))

    candidates = TraitSet.all()
    trace = sffs(candidates, criterion, max_n)
    data: dict[str, Any] = {"trace": trace.to_dict()}

    test_reports: dict[int, FoldReport] = {}
    if test_pairs is not None:
        test = join(load_pairs(test_pairs), profiles, table, policy).records
        for n, (traits, _) in sorted(trace.best.items()):
            test_reports[n] = cross_validate(test, scorer_for(traits))
        data["test"] = {str(n): r.to_dict() for n, r in test_reports.items()}

    exhaustive = None
    if oracle:
        exhaustive = exhaustive_best(candidates, criterion)
        for n, (traits, value) in trace.best.items():
            best_set, best_value = exhaustive.best[n]
            if best_value > value:
                raise SelectionError(
                    f"exhaustive search found {best_value} for size {n}, above the SFFS value {value}",
                    [k.value for k in best_set.ordered()],
                )
        data["oracle"] = exhaustive.to_dict()

    header = ["n", "traits", "dev_eer", "test_eer_mean", "test_eer_std"] + (["oracle_dev_eer"] if oracle else [])
    rows = [header]
    for n, (traits, value) in sorted(trace.best.items()):
        report = test_reports.get(n)
        row = [str(n), traits.label(), percent(value),
               percent(report.mean) if report else "", percent(report.std) if report else ""]
        if exhaustive is not None:
            row.append(percent(exhaustive.best[n][1]))
        rows.append(row)

    _emit(out, "sffs", fmt, rows, data)
    RunManifest.for_run(
        "sffs",
        _resolved(settings, fuse=fuse, norm=method, max_n=max_n, oracle=oracle, match=match_cfg.model_dump(),
                  age_mode=match_opts["age_mode"], age_cuts=list(cuts), invert=invert, cots_map=cots_map,
                  out_dir=out, report_format=fmt),
        _inputs(dev_pairs=dev_pairs, test_pairs=test_pairs, annotations=annotations, cots=cots_files,
                scores=scores),
        settings.seed,
    ).write(out)
    for row in rows[1:]:
        click.echo(" ".join(row))


@cli.command(name="cots")
@click.option("--annotations", type=existing_file, required=True, help="Manual groundtruth CSV")
@click.option("--cots", "cots_files", type=existing_file, multiple=True, required=True)
@click.option("--cots-map", multiple=True, metavar="TRAIT=INDEX")
@click.option("--cots-source", type=click.Choice(COTS_SOURCES), default="cots-face++", show_default=True)
@click.option("--age-cuts", default=None)
@click.option("--ddof", type=click.Choice(["0", "1"]), default="1", show_default=True,
              help="Standard deviation denominator for age stability")
@click.option("--restrict", "restrict_traits", multiple=True, default=("ethnicity",), show_default=True,
              help="Traits scored only on instances the COTS outputs")
@output_options
@click.pass_context
@guarded
def cots_cmd(ctx: click.Context, annotations: Path, cots_files: tuple[Path, ...], cots_map: tuple[str, ...],
             cots_source: str, age_cuts: str | None, ddof: str, restrict_traits: tuple[str, ...],
             out_dir: Path | None, fmt: str | None):
    """Accuracy of COTS trait estimates against manual labels, and age stability."""
    settings = _settings(ctx)
    out = out_dir or Path(settings.out_dir)
    fmt = fmt or settings.report_format
    cuts = _age_cuts(settings, age_cuts)
    truth = load_annotations(annotations)
    records = _load_cots_records(cots_files, cots_map, cots_source)

    table = cots_accuracy(truth, records, cuts, [TraitKind.parse(t) for t in restrict_traits])
    _emit(out, "accuracy", fmt, table.to_rows(), table.to_dict())
    stability = None
    try:
        stability = age_stability(records, int(ddof))
    except SoftBioError as exc:
        LOG.warning("[cots] no age stability table: %s", exc.detail)
    if stability is not None:
        _emit(out, "age_stability", fmt, stability.to_rows(), stability.to_dict())
    RunManifest.for_run(
        "cots",
        _resolved(settings, age_cuts=list(cuts), ddof=int(ddof), restrict=list(restrict_traits),
                  cots_map=cots_map, cots_source=cots_source, out_dir=out, report_format=fmt),
        _inputs(annotations=annotations, cots=cots_files), settings.seed,
    ).write(out)
    click.echo(f"detection rate {percent(table.detection_rate, 2)}% over {table.images} images")


@cli.command(name="synth")
@click.option("--spec", "spec_file", type=existing_file, default=None, help="JSON/YAML synthetic spec")
@click.option("--subjects", type=int, default=None)
@click.option("--images-per-subject", type=int, default=None)
@click.option("--label-noise", type=float, default=None)
@click.option("--age-drift", type=float, default=None)
@click.option("--age-mode", type=click.Choice(["categorical", "years"]), default=None)
@click.option("--folds", type=int, default=None, help="[default: 10]")
@click.option("--per-class", type=int, default=None, help="[default: 300]")
@click.option("--target-eer", type=float, default=None, help="[default: 0.12]")
@click.option("--matcher-id", default="synthetic-face", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_context
@guarded
def synth_cmd(ctx: click.Context, spec_file: Path | None, subjects: int | None, images_per_subject: int | None,
              label_noise: float | None, age_drift: float | None, age_mode: str | None, folds: int | None,
              per_class: int | None, target_eer: float | None, matcher_id: str, seed: int | None,
              out_dir: Path | None):
    """Generate a synthetic annotation file, pairs file and face score file."""
    settings = _settings(ctx)
    out = out_dir or Path(settings.out_dir)
    if spec_file is None and subjects is None:
        raise click.UsageError("give --subjects or --spec")
    spec, run = load_synth_spec(
        spec_file,
        n_subjects=subjects,
        images_per_subject=images_per_subject,
        label_noise=label_noise,
        age_drift_years=age_drift,
        age_mode=age_mode,
        seed=seed,
        folds=folds,
        per_class=per_class,
    )
    if seed is None and "seed" not in spec.model_fields_set:
        spec = spec.model_copy(update={"seed": settings.seed})
    face = dict(run.get("face_scores") or {})
    if target_eer is not None or not face:
        face = {"target_eer": 0.12 if target_eer is None else target_eer}
    model = FaceScoreModel.build(**face)
    n_folds = int(run.get("folds", 10))
    n_per_class = int(run.get("per_class", 300))

    data = generate_dataset(spec, n_folds, n_per_class, model, matcher_id)
    write_atomic(out / "annotations.csv", emit_annotations(data.population.images))
    write_atomic(out / "pairs.txt", emit_pairs(data.pairs))
    write_atomic(out / "scores.csv", emit_scores(data.scores))
    RunManifest.for_run(
        "synth",
        _resolved(settings, spec=spec.model_dump(mode="json"), face_scores=model.model_dump(),
                  folds=n_folds, per_class=n_per_class, matcher_id=matcher_id, out_dir=out, seed=spec.seed),
        _inputs(spec=spec_file), spec.seed,
    ).write(out)
    click.echo(f"{len(data.population.images)} images, {len(data.pairs)} pairs written to {out}")


if __name__ == "__main__":
    cli()
