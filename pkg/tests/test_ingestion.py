import numpy as np
import pytest

from softbio.errors import FormatError, JoinError, SchemaError
from softbio.ingestion import (
    PairRecord,
    ScoreRecord,
    ScoreTable,
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
from softbio.profiles import MISSING, Categorical, SoftProfile, TraitKind, Years

ANNOTATIONS = (
    "image_id,subject_id,gender,age,ethnicity,glasses,beard,moustache\n"
    "George_W_Bush_0001,George_W_Bush,Male,Middle Aged,Caucasian,No Glasses,No,No\n"
    "George_W_Bush_0002,George_W_Bush,Male,Senior,Caucasian,Eye Wear,No,Yes\n"
    "Serena_Williams_0001,Serena_Williams,Female,Youth,Black,Sunglasses,No,No\n"
)

PAIRS = (
    "2\t1\n"
    "Abel_Pacheco\t1\t4\n"
    "AJ_Cook\t1\tMarsha_Thomason\t1\n"
    "George_W_Bush\t1\t2\n"
    "George_W_Bush\t1\tSerena_Williams\t1\n"
)


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_annotations_codes(tmp_path):
    records = load_annotations(_write(tmp_path, "a.csv", ANNOTATIONS))
    assert [r.image_id for r in records] == ["George_W_Bush_0001", "George_W_Bush_0002", "Serena_Williams_0001"]
    first = records[0].profile
    assert first.values == (
        Categorical(0), Categorical(3), Categorical(0), Categorical(0), Categorical(1), Categorical(1)
    )


def test_load_annotations_any_column_order(tmp_path):
    text = "subject_id,image_id,moustache,beard,glasses,ethnicity,age,gender\nA_B,A_B_0001,Yes,,0,Asian,34y,Female\n"
    rec = load_annotations(_write(tmp_path, "a.csv", text))[0]
    assert rec.profile[TraitKind.GENDER] == Categorical(1)
    assert rec.profile[TraitKind.AGE] == Years(34.0)
    assert rec.profile[TraitKind.BEARD] is MISSING
    assert rec.profile[TraitKind.MOUSTACHE] == Categorical(0)


def test_load_annotations_reports_line(tmp_path):
    bad = ANNOTATIONS + "X_Y_0001,X_Y,Male,Elder,Caucasian,No Glasses,No,No\n"
    with pytest.raises(SchemaError) as exc:
        load_annotations(_write(tmp_path, "a.csv", bad))
    assert exc.value.line == 5
    assert "Elder" in str(exc.value)


def test_load_annotations_duplicate_and_prefix(tmp_path):
    dup = ANNOTATIONS + "George_W_Bush_0001,George_W_Bush,Male,,,,,\n"
    with pytest.raises(SchemaError, match="George_W_Bush_0001"):
        load_annotations(_write(tmp_path, "a.csv", dup))
    wrong = ANNOTATIONS + "George_W_Bush_0003,Laura_Bush,Male,,,,,\n"
    with pytest.raises(SchemaError):
        load_annotations(_write(tmp_path, "b.csv", wrong))


def test_annotations_round_trip_bytes(tmp_path):
    path = _write(tmp_path, "a.csv", ANNOTATIONS)
    assert emit_annotations(load_annotations(path)) == ANNOTATIONS


def test_load_pairs_folds_and_labels(tmp_path):
    pairs = load_pairs(_write(tmp_path, "pairs.txt", PAIRS))
    assert (pairs.folds, pairs.per_class, len(pairs)) == (2, 1, 4)
    assert pairs.records[0] == PairRecord(0, "Abel_Pacheco_0001", "Abel_Pacheco_0004", True)
    assert pairs.records[1] == PairRecord(0, "AJ_Cook_0001", "Marsha_Thomason_0001", False)
    assert [r.fold for r in pairs] == [0, 0, 1, 1]
    assert load_pairs(_write(tmp_path, "again.txt", emit_pairs(pairs))) == pairs


def test_load_pairs_single_fold_header(tmp_path):
    pairs = load_pairs(_write(tmp_path, "dev.txt", "1\nAbel_Pacheco\t1\t4\nAJ_Cook\t1\tMarsha_Thomason\t1\n"))
    assert (pairs.folds, pairs.per_class) == (1, 1)


def test_load_pairs_count_mismatch(tmp_path):
    with pytest.raises(FormatError, match="found 3"):
        load_pairs(_write(tmp_path, "p.txt", PAIRS.rsplit("George_W_Bush\t1\tSerena", 1)[0]))
    swapped = "1\t1\nAJ_Cook\t1\tMarsha_Thomason\t1\nAbel_Pacheco\t1\t4\n"
    with pytest.raises(FormatError):
        load_pairs(_write(tmp_path, "q.txt", swapped))


def test_check_pair_labels():
    check_pair_labels([PairRecord(0, "A_0001", "A_0002", True), PairRecord(0, "A_0001", "B_0001", False)])
    with pytest.raises(FormatError):
        check_pair_labels([PairRecord(0, "A_0001", "B_0001", True)])


def test_scores_round_trip_and_orientation(tmp_path):
    text = "left_image,right_image,score\nA_0001,A_0002,0.75\nA_0001,B_0001,-1.5\n"
    table = load_scores(_write(tmp_path, "vgg.csv", text))
    assert table.matcher_id == "vgg"
    assert table.get("A_0002", "A_0001") == 0.75
    assert emit_scores(table.records) == text
    inverted = load_scores(tmp_path / "vgg.csv", matcher_id="dist", invert=True)
    assert inverted.get("A_0001", "B_0001") == 1.5


def test_scores_reject_duplicates_and_nan(tmp_path):
    dup = "left_image,right_image,score\nA_0001,A_0002,1\nA_0002,A_0001,2\n"
    with pytest.raises(SchemaError, match="duplicate"):
        load_scores(_write(tmp_path, "s.csv", dup))
    with pytest.raises(SchemaError):
        load_scores(_write(tmp_path, "n.csv", "left_image,right_image,score\nA_0001,A_0002,nan\n"))


COTS = (
    "image_id,detected,gender,age_years,ethnicity,conf_gender\n"
    "George_W_Bush_0001,1,male,56.3,White,0.99\n"
    "George_W_Bush_0002,0,,,,\n"
)


def test_load_cots(tmp_path):
    records = load_cots(_write(tmp_path, "ms.csv", COTS), source="cots-microsoft")
    first, second = records
    assert first.detected and first.estimates[TraitKind.AGE] == Years(56.3)
    assert first.estimates[TraitKind.ETHNICITY] == Categorical(0)
    assert first.estimates[TraitKind.GLASSES] is MISSING
    assert first.confidences[TraitKind.GENDER.index] == 0.99
    assert not second.detected and second.estimates.is_empty
    assert first.subject_id == "George_W_Bush"


def test_combine_cots_takes_each_trait_from_its_run(tmp_path):
    ms = load_cots(_write(tmp_path, "ms.csv", COTS), source="cots-microsoft")
    fpp = load_cots(
        _write(tmp_path, "fpp.csv", "image_id,detected,ethnicity\nGeorge_W_Bush_0001,1,Asian\nGeorge_W_Bush_0002,1,Black\n")
    )
    combined = combine_cots({TraitKind.GENDER: ms, TraitKind.AGE: ms, TraitKind.ETHNICITY: fpp})
    by_id = {r.image_id: r for r in combined}
    assert by_id["George_W_Bush_0001"].estimates[TraitKind.GENDER] == Categorical(0)
    assert by_id["George_W_Bush_0001"].estimates[TraitKind.ETHNICITY] == Categorical(2)
    assert by_id["George_W_Bush_0002"].detected
    assert by_id["George_W_Bush_0002"].estimates[TraitKind.GENDER] is MISSING


def test_join_drop_and_strict(tmp_path):
    records = load_annotations(_write(tmp_path, "a.csv", ANNOTATIONS))
    profiles = annotation_profiles(records)
    pairs = [
        PairRecord(0, "George_W_Bush_0001", "George_W_Bush_0002", True),
        PairRecord(0, "George_W_Bush_0001", "Serena_Williams_0001", False),
        PairRecord(0, "George_W_Bush_0001", "Nobody_0001", False),
    ]
    scores = ScoreTable("m", [
        ScoreRecord("George_W_Bush_0001", "George_W_Bush_0002", 1.0, "m"),
        ScoreRecord("George_W_Bush_0001", "Nobody_0001", 0.0, "m"),
    ])
    result = join(pairs, profiles, scores)
    assert len(result.records) == 1
    assert result.dropped == 2
    assert len(result.records) + result.dropped == len(pairs)
    with pytest.raises(JoinError) as exc:
        join(pairs, profiles, scores, policy="strict")
    assert "Nobody_0001" in exc.value.ids


def test_join_keeps_undetected_cots_faces(tmp_path):
    profiles = cots_profiles(load_cots(_write(tmp_path, "ms.csv", COTS)))
    pairs = [PairRecord(0, "George_W_Bush_0001", "George_W_Bush_0002", True)]
    joined = join(pairs, profiles).records
    assert len(joined) == 1
    assert joined[0].right.is_empty


def test_join_accounts_for_every_pair():
    rng = np.random.default_rng(31)
    images = [f"S{s}_{i:04d}" for s in range(20) for i in range(1, 4)]
    for _ in range(50):
        known = [img for img in images if rng.random() < 0.8]
        profiles = {img: SoftProfile.from_codes([int(rng.integers(2))] + [None] * 5) for img in known}
        pairs = []
        for _ in range(40):
            a, b = rng.choice(len(images), size=2, replace=False)
            pairs.append(PairRecord(0, images[a], images[b], images[a].rsplit("_", 1)[0] == images[b].rsplit("_", 1)[0]))
        scored = [ScoreRecord(p.left_image, p.right_image, float(rng.random()), "m") for p in pairs if rng.random() < 0.7]
        for table in (None, ScoreTable("m", scored)):
            result = join(pairs, profiles, table)
            assert len(result.records) + result.dropped == len(pairs)
