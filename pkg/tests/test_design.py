import numpy as np
import pytest

from factorial_inference.design import (
    ModelMatrix,
    build_model_matrix,
    cached_model_matrix,
    check_orthogonality,
    design_frame,
    effect_labels,
    effect_subsets,
    treatment_combinations,
)
from factorial_inference.module_common import DomainError


def test_k2_rows():
    m = build_model_matrix(2)
    expected = [[1, -1, -1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, 1, 1, 1]]
    assert m.entries.tolist() == expected
    assert m.labels == ("null", "F1", "F2", "F1:F2")


def test_k1_rows():
    assert build_model_matrix(1).entries.tolist() == [[1, -1], [1, 1]]


def test_k3_three_way_interaction_column():
    m = build_model_matrix(3)
    assert m.labels[7] == "F1:F2:F3"
    assert m.entries[:, 7].tolist() == [-1, 1, 1, -1, 1, -1, -1, 1]
    assert np.array_equal(m.entries[:, 7], m.entries[:, 1] * m.entries[:, 2] * m.entries[:, 3])


def test_entries_are_read_only():
    m = build_model_matrix(2)
    with pytest.raises(ValueError):
        m.entries[0, 0] = -1


@pytest.mark.parametrize("k", [0, 17, -1])
def test_k_out_of_bounds(k):
    with pytest.raises(DomainError, match="1..16"):
        build_model_matrix(k)


def test_effect_subsets():
    assert effect_subsets(1) == [(), (1,)]
    assert effect_subsets(2) == [(), (1,), (2,), (1, 2)]
    assert effect_subsets(3) == [(), (1,), (2,), (3,), (1, 2), (1, 3), (2, 3), (1, 2, 3)]


def test_effect_labels_with_factor_names():
    assert effect_labels(2, ["dose", "diet"]) == ["null", "dose", "diet", "dose:diet"]
    with pytest.raises(DomainError):
        effect_labels(2, ["dose"])


def test_treatment_combinations():
    assert [c.levels for c in treatment_combinations(2)] == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    assert [c.levels for c in treatment_combinations(1)] == [(-1,), (1,)]
    assert treatment_combinations(3)[4].levels == (1, -1, -1)
    assert treatment_combinations(3)[4].label == "z5"


def test_main_effect_columns_match_levels():
    for k in (1, 2, 3, 4):
        m = build_model_matrix(k)
        for combination in treatment_combinations(k):
            row = m.row(combination.index)
            assert tuple(int(v) for v in row[1:k + 1]) == combination.levels


@pytest.mark.parametrize("k", range(1, 11))
def test_orthogonality(k):
    m = build_model_matrix(k)
    assert check_orthogonality(m)


@pytest.mark.parametrize("k", range(1, 7))
def test_orthogonality_in_integer_arithmetic(k):
    h = build_model_matrix(k).entries.astype(np.int64)
    identity = (1 << k) * np.eye(1 << k, dtype=np.int64)
    assert np.array_equal(h.T @ h, identity)
    assert np.array_equal(h @ h.T, identity)


def test_orthogonality_detects_flipped_entry():
    m = build_model_matrix(2)
    flipped = m.entries.copy()
    flipped[1, 2] = -flipped[1, 2]
    assert not check_orthogonality(ModelMatrix(k=2, entries=flipped, labels=m.labels, subsets=m.subsets))


def test_orthogonality_never_raises_on_malformed_input():
    m = build_model_matrix(2)
    assert not check_orthogonality(ModelMatrix(k=2, entries=np.ones((3, 4)), labels=m.labels, subsets=m.subsets))
    assert not check_orthogonality(ModelMatrix(k=2, entries=2 * m.entries, labels=m.labels, subsets=m.subsets))


def test_cached_model_matrix_is_shared():
    assert cached_model_matrix(3) is cached_model_matrix(3)


def test_row_bounds():
    with pytest.raises(DomainError):
        build_model_matrix(2).row(5)


def test_design_frame():
    frame = design_frame(build_model_matrix(2))
    assert list(frame.columns) == ["null", "F1", "F2", "F1:F2"]
    assert list(frame.index) == ["z1", "z2", "z3", "z4"]
    assert frame.loc["z3", "F1:F2"] == -1
