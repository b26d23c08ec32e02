import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ivselect.data import (
    BlockStructure,
    Dataset,
    TruthInfo,
    annihilate,
    load_blocks,
    load_csv,
    lstsq,
    partial_out_covariates,
    qr_basis,
)
from ivselect.errors import RankError, ValidationError

ROLES = {"y": "outcome", "x1": "exposure", "x2": "exposure", "z1": "instrument", "z2": "instrument", "z3": "instrument"}


def write_csv(path, header, rows):
    path.write_text(",".join(header) + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")
    return path


def random_rows(n, k, seed=0):
    return np.random.default_rng(seed).standard_normal((n, k)).round(6).tolist()


# -- load_csv ---------------------------------------------------------------


def test_load_csv_parses_roles(tmp_path):
    # n must exceed k_x + k_z, hence six rows
    p = write_csv(tmp_path / "d.csv", list(ROLES), random_rows(6, 6))
    d = load_csv(p, ROLES)
    assert (d.n, d.k_x, d.k_z, d.k_w) == (6, 2, 3, 0)
    assert d.exposure_labels == ("x1", "x2") or list(d.exposure_labels) == ["x1", "x2"]
    raw = np.array(random_rows(6, 6))
    np.testing.assert_array_equal(d.y, raw[:, 0])
    np.testing.assert_array_equal(d.Z, raw[:, 3:])


def test_load_csv_four_rows_too_small(tmp_path):
    p = write_csv(tmp_path / "d.csv", list(ROLES), random_rows(4, 6))
    with pytest.raises(ValidationError, match="must exceed"):
        load_csv(p, ROLES)


def test_load_csv_non_numeric(tmp_path):
    rows = random_rows(8, 6)
    rows[2][4] = "NA"
    p = write_csv(tmp_path / "d.csv", list(ROLES), rows)
    with pytest.raises(ValidationError, match=r"non-numeric cell at \(3, z2\)"):
        load_csv(p, ROLES)


def test_load_csv_non_finite(tmp_path):
    rows = random_rows(8, 6)
    rows[0][1] = "inf"
    p = write_csv(tmp_path / "d.csv", list(ROLES), rows)
    with pytest.raises(ValidationError, match="non-finite"):
        load_csv(p, ROLES)


def test_load_csv_outcome_required(tmp_path):
    p = write_csv(tmp_path / "d.csv", list(ROLES), random_rows(8, 6))
    roles = {k: v for k, v in ROLES.items() if v != "outcome"}
    with pytest.raises(ValidationError, match="outcome column required"):
        load_csv(p, roles)


def test_load_csv_missing_column(tmp_path):
    p = write_csv(tmp_path / "d.csv", list(ROLES), random_rows(8, 6))
    with pytest.raises(ValidationError, match="zz"):
        load_csv(p, {**ROLES, "zz": "instrument"})


def test_load_csv_duplicate_outcome(tmp_path):
    p = write_csv(tmp_path / "d.csv", list(ROLES), random_rows(8, 6))
    with pytest.raises(ValidationError, match="duplicate role for outcome"):
        load_csv(p, {**ROLES, "z3": "outcome"})


# -- Dataset validation -----------------------------------------------------


def test_dataset_rejects_bad_shapes():
    rng = np.random.default_rng(1)
    with pytest.raises(ValidationError):
        Dataset(rng.standard_normal(10), rng.standard_normal((9, 1)), rng.standard_normal((10, 2)))
    with pytest.raises(ValidationError, match="non-finite"):
        y = rng.standard_normal(10)
        y[3] = np.nan
        Dataset(y, rng.standard_normal((10, 1)), rng.standard_normal((10, 2)))
    with pytest.raises(ValidationError, match="at least as many instruments"):
        Dataset(rng.standard_normal(10), rng.standard_normal((10, 3)), rng.standard_normal((10, 2)))


def test_dataset_arrays_read_only(small_data):
    d = small_data[0]
    with pytest.raises(ValueError):
        d.y[0] = 1.0


# -- linear algebra helpers -------------------------------------------------


def test_lstsq_trivial():
    np.testing.assert_allclose(lstsq(np.eye(3), np.array([1.0, 2, 3])).ravel(), [1, 2, 3])
    assert float(np.ravel(lstsq(np.ones((4, 1)), np.array([1.0, 2, 3, 4])))[0]) == pytest.approx(2.5)


def test_lstsq_matches_normal_equations():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((30, 4))
    b = rng.standard_normal(30)
    oracle = np.linalg.solve(A.T @ A, A.T @ b)
    np.testing.assert_allclose(np.ravel(lstsq(A, b)), oracle, atol=1e-9)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_lstsq_residual_orthogonal(seed, k):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((20 + k, k))
    b = rng.standard_normal(20 + k)
    r = b - A @ np.ravel(lstsq(A, b))
    assert np.max(np.abs(A.T @ r)) < 1e-9 * max(1.0, np.linalg.norm(b) * np.linalg.norm(A))


def test_annihilate_cases():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((5, 2))
    np.testing.assert_allclose(annihilate(M, np.eye(5)), 0.0, atol=1e-12)
    B = np.zeros((6, 1))
    B[0] = 1.0
    M2 = rng.standard_normal((6, 2))
    M2[0] = 0.0
    np.testing.assert_allclose(annihilate(M2, B), M2, atol=1e-12)
    M3, B3 = rng.standard_normal((40, 3)), rng.standard_normal((40, 2))
    assert np.max(np.abs(B3.T @ annihilate(M3, B3))) < 1e-9


@given(st.integers(0, 10_000))
def test_annihilate_reparameterisation_invariant(seed):
    rng = np.random.default_rng(seed)
    M, B = rng.standard_normal((30, 3)), rng.standard_normal((30, 3))
    C = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    np.testing.assert_allclose(annihilate(M, B), annihilate(M, B @ C), atol=1e-8)


def test_rank_error_names_columns():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((20, 3))
    A = np.column_stack([A, A[:, 0] + A[:, 1]])
    with pytest.raises(RankError) as info:
        qr_basis(A, names=["a", "b", "c", "d"])
    assert info.value.columns
    assert info.value.ratio < 1e-10


# -- covariates -------------------------------------------------------------


def test_partial_out_demeans_without_covariates():
    rng = np.random.default_rng(5)
    n = 40
    d = Dataset(3 + rng.standard_normal(n), rng.standard_normal((n, 1)), rng.standard_normal((n, 3)))
    out = partial_out_covariates(d)
    assert abs(out.y.mean()) < 1e-12


def test_partial_out_perfect_fit():
    rng = np.random.default_rng(6)
    n = 40
    y = rng.standard_normal(n)
    d = Dataset(y, rng.standard_normal((n, 1)), rng.standard_normal((n, 3)), y[:, None])
    np.testing.assert_allclose(partial_out_covariates(d).y, 0.0, atol=1e-10)


def test_partial_out_matches_normal_equations():
    rng = np.random.default_rng(7)
    n = 50
    W = rng.standard_normal((n, 2))
    d = Dataset(rng.standard_normal(n), rng.standard_normal((n, 1)), rng.standard_normal((n, 3)), W)
    out = partial_out_covariates(d)
    C = np.column_stack([W, np.ones(n)])
    coef = np.linalg.solve(C.T @ C, C.T @ d.Z)
    np.testing.assert_allclose(out.Z, d.Z - C @ coef, atol=1e-10)
    assert np.max(np.abs(W.T @ out.y)) < 1e-10
    assert out.k_w == 0


def test_partial_out_idempotent():
    rng = np.random.default_rng(8)
    n = 50
    d = Dataset(rng.standard_normal(n), rng.standard_normal((n, 2)), rng.standard_normal((n, 3)), rng.standard_normal((n, 2)))
    once = partial_out_covariates(d)
    twice = partial_out_covariates(once)
    for a, b in ((once.y, twice.y), (once.X, twice.X), (once.Z, twice.Z)):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_partial_out_collinear_covariates():
    rng = np.random.default_rng(9)
    n = 30
    w = rng.standard_normal(n)
    d = Dataset(
        rng.standard_normal(n),
        rng.standard_normal((n, 1)),
        rng.standard_normal((n, 2)),
        np.column_stack([w, 2 * w]),
        covariate_labels=["age", "age2"],
    )
    with pytest.raises(RankError, match="age"):
        partial_out_covariates(d)


# -- blocks and truth -------------------------------------------------------


def test_block_structure_mapping_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    n = 30
    d = Dataset(
        rng.standard_normal(n),
        rng.standard_normal((n, 2)),
        rng.standard_normal((n, 3)),
        instrument_labels=["a", "b", "c"],
        exposure_labels=["edu", "iq"],
    )
    mapping = {"a": ["edu"], "b": ["edu", "iq"], "c": ["iq"]}
    p = tmp_path / "b.json"
    p.write_text(json.dumps(mapping))
    blocks = load_blocks(p, d)
    assert blocks.members(0) == (0, 1) or set(blocks.members(0)) == {0, 1}
    assert blocks.to_mapping(d.instrument_labels, d.exposure_labels) == mapping


def test_block_structure_rejects_uncovered_exposure():
    with pytest.raises(ValidationError):
        BlockStructure.from_sets([range(3), []], 3)


def test_truth_info_sets():
    t = TruthInfo(np.array([0.3, 0.6]), 0.4 * np.r_[np.ones(9), np.zeros(12)])
    assert t.k_invalid == 9 and t.k_valid == 12
    assert t.invalid_set == frozenset(range(9))
