import math

import numpy as np
import pytest

from softbio.analysis import (
    MORE_THAN_3,
    age_stability,
    correlation_matrix,
    cots_accuracy,
    demographic_stats,
    pearson,
)
from softbio.errors import AnalysisError, DisjointInputsError
from softbio.ingestion import AnnotationRecord, CotsRecord
from softbio.profiles import TRAIT_ORDER, Categorical, SoftProfile, TraitKind, Years


def _annotation(image_id: str, **values) -> AnnotationRecord:
    profile = SoftProfile.from_mapping({TraitKind(k): v for k, v in values.items()})
    return AnnotationRecord(image_id, image_id.rsplit("_", 1)[0], profile)


def _cots(image_id: str, detected: bool = True, **values) -> CotsRecord:
    profile = SoftProfile.from_mapping({TraitKind(k): v for k, v in values.items()}, source="cots-microsoft")
    return CotsRecord(image_id, detected, profile)


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson([1, 1, 1], [1, 2, 3]) is None
    with pytest.raises(AnalysisError):
        pearson([1, 2], [1, 2, 3])
    with pytest.raises(AnalysisError):
        pearson([1], [1])


def test_correlation_matrix_symmetric_unit_diagonal():
    records = [
        _annotation("A_0001", gender=Categorical(0), beard=Categorical(0), age=Years(50)),
        _annotation("B_0001", gender=Categorical(1), beard=Categorical(1), age=Years(20)),
        _annotation("C_0001", gender=Categorical(0), beard=Categorical(0), age=Years(70)),
        _annotation("D_0001", gender=Categorical(1), age=Years(8)),
    ]
    matrix = correlation_matrix(records)
    for i in range(len(TRAIT_ORDER)):
        assert matrix.values[i][i] == 1.0
        for j in range(len(TRAIT_ORDER)):
            assert matrix.values[i][j] == matrix.values[j][i]
    assert matrix.get(TraitKind.GENDER, TraitKind.BEARD) == pytest.approx(1.0)
    assert matrix.counts[TraitKind.GENDER.index][TraitKind.BEARD.index] == 3
    assert matrix.get(TraitKind.GENDER, TraitKind.GLASSES) is None


def test_demographics_single_record():
    table = demographic_stats([_annotation("A_0001", gender=Categorical(0), age=Years(34))])
    assert (table.images, table.subjects) == (1, 1)
    assert table.share(TraitKind.GENDER, "Male") == 100.0
    assert table.share(TraitKind.AGE, "Youth") == 100.0
    assert table.share(TraitKind.BEARD, "Yes") == 0.0
    assert ["Beard", "Missing", "1", ""] in table.to_rows()
    with pytest.raises(AnalysisError):
        demographic_stats([])


GENDERS = [0, 0, 1, 1]


def _groundtruth() -> list[AnnotationRecord]:
    return [_annotation(f"S{i}_0001", gender=Categorical(g), ethnicity=Categorical(i % 2 * 3)) for i, g in enumerate(GENDERS)]


def test_cots_accuracy_counts_per_instance():
    cots = [
        _cots(f"S{i}_0001", gender=Categorical(g), ethnicity=Categorical(0))
        for i, g in enumerate([0, 0, 1, 0])
    ]
    table = cots_accuracy(_groundtruth(), cots)
    gender = table.trait(TraitKind.GENDER)
    assert gender.overall == 0.75
    assert [i.accuracy for i in gender.instances] == [1.0, 0.5]
    # the COTS never outputs Indian, so those images are not scored
    ethnicity = table.trait(TraitKind.ETHNICITY)
    assert [i.instance for i in ethnicity.instances] == ["Caucasian"]
    assert ethnicity.overall == 1.0
    assert not table.trait(TraitKind.BEARD).available
    assert ["Beard", "Overall", "0", "N/A"] in table.to_rows()


def test_cots_identity_is_perfect_and_detection_counted():
    truth = _groundtruth()
    cots = [CotsRecord(r.image_id, True, r.profile) for r in truth[:3]]
    cots.append(_cots(truth[3].image_id, detected=False))
    table = cots_accuracy(truth, cots)
    assert table.detection_rate == 0.75
    assert table.trait(TraitKind.GENDER).overall == 1.0


def test_cots_disjoint_inputs():
    with pytest.raises(DisjointInputsError):
        cots_accuracy(_groundtruth(), [_cots("Other_0001", gender=Categorical(0))])


def test_age_stability_groups_by_image_count():
    cots = [
        _cots("A_0001", age=Years(30)),
        _cots("A_0002", age=Years(34)),
        _cots("B_0001", age=Years(50)),
        _cots("C_0001", detected=False),
    ] + [_cots(f"D_{i:04d}", age=Years(20 + i)) for i in range(1, 6)]
    table = age_stability(cots)
    assert table.row("2").mean_std == pytest.approx(math.sqrt(8))
    assert table.row("1").mean_std == 0.0
    assert table.row("1").identities == 2
    assert table.row("3").mean_std is None
    assert table.row(MORE_THAN_3).identities == 1
    assert age_stability(cots, ddof=0).row("2").mean_std == pytest.approx(2.0)


def test_age_stability_counts_undetected_images():
    cots = [_cots(f"A_{i:04d}", age=Years(30 + 2 * i)) for i in range(1, 4)] + [_cots("A_0004", detected=False)]
    table = age_stability(cots, ddof=0)
    assert table.row("3").identities == 0
    assert table.row("4").identities == 1
    assert table.row("4").mean_std == pytest.approx(np.std([32.0, 34.0, 36.0]))
    assert table.row(MORE_THAN_3).identities == 1


def test_age_stability_identity_counts_partition_population():
    rng = np.random.default_rng(21)
    for _ in range(50):
        cots = []
        for s in range(int(rng.integers(1, 30))):
            for i in range(int(rng.integers(1, 20))):
                detected = bool(rng.random() < 0.8)
                age = Years(float(rng.uniform(10, 80))) if detected else None
                cots.append(_cots(f"S{s}_{i + 1:04d}", detected, **({"age": age} if age else {})))
        if not any(r.detected for r in cots):
            continue
        table = age_stability(cots)
        counted = sum(table.row(str(k)).identities for k in range(1, 16)) + table.row(">15").identities
        assert counted == len({r.subject_id for r in cots})
        k1 = table.row("1")
        assert k1.mean_std in (0.0, None)


def test_age_stability_errors():
    with pytest.raises(AnalysisError):
        age_stability([_cots("A_0001", age=Years(30))], ddof=2)
    with pytest.raises(AnalysisError):
        age_stability([_cots("A_0001", gender=Categorical(0))])


def test_pearson_affine_invariance_and_sign_flip():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a = rng.normal(size=30)
        b = a + rng.normal(size=30)
        r = pearson(a, b)
        assert pearson(2.5 * a + 7.0, 0.1 * b - 3.0) == pytest.approx(r, abs=1e-12)
        assert pearson(a, -b) == pytest.approx(-r, abs=1e-12)
        assert -1.0 <= r <= 1.0


def _random_annotations(rng: np.random.Generator, n: int) -> list[AnnotationRecord]:
    records = []
    for i in range(n):
        values = {}
        for kind in TRAIT_ORDER:
            if rng.random() < 0.2:
                continue
            if kind is TraitKind.AGE and rng.random() < 0.5:
                values[kind.value] = Years(float(rng.uniform(1, 90)))
            else:
                values[kind.value] = Categorical(int(rng.integers(len(kind.instances))))
        records.append(_annotation(f"S{i % 7}_{i + 1:04d}", **values))
    return records


def test_correlation_matrix_random_annotations():
    rng = np.random.default_rng(9)
    for _ in range(30):
        records = _random_annotations(rng, int(rng.integers(2, 60)))
        for cuts in ((3, 13, 40, 61), None):
            matrix = correlation_matrix(records, cuts)
            n = len(TRAIT_ORDER)
            for i in range(n):
                assert matrix.values[i][i] == 1.0
                for j in range(n):
                    assert matrix.values[i][j] == matrix.values[j][i]
                    assert matrix.counts[i][j] == matrix.counts[j][i]
                    v = matrix.values[i][j]
                    assert v is None or -1.0 <= v <= 1.0


def test_demographics_counts_and_shares_add_up():
    rng = np.random.default_rng(12)
    records = _random_annotations(rng, 200)
    table = demographic_stats(records)
    for dist in table.traits:
        assert dist.total + dist.missing == len(records)
        if dist.total:
            assert sum(s.percent for s in dist.instances) == pytest.approx(100.0)


def test_cots_accuracy_supports_and_overall_are_consistent():
    rng = np.random.default_rng(14)
    for _ in range(20):
        truth, cots = [], []
        for i in range(int(rng.integers(5, 80))):
            image = f"S{i}_0001"
            gt = {} if rng.random() < 0.1 else {"gender": Categorical(int(rng.integers(2)))}
            truth.append(_annotation(image, **gt))
            detected = bool(rng.random() < 0.9)
            est = {"gender": Categorical(int(rng.integers(2)))} if detected and rng.random() < 0.95 else {}
            cots.append(_cots(image, detected, **est))
        if not any(r.detected and isinstance(r.estimates[TraitKind.GENDER], Categorical) for r in cots):
            continue
        gender = cots_accuracy(truth, cots).trait(TraitKind.GENDER)
        assert sum(i.support for i in gender.instances) == gender.evaluated
        if gender.evaluated:
            weighted = sum(i.accuracy * i.support for i in gender.instances if i.support) / gender.evaluated
            assert gender.overall == pytest.approx(weighted, abs=1e-12)
