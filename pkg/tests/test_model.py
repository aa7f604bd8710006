import numpy as np
import pytest

from mvfh import (
    AreaRecord,
    DimensionMismatch,
    ModelParams,
    NonPositiveDefiniteD,
    RankDeficientX,
    ValidationError,
    marginal_covariance,
    validate_dataset,
)
from mvfh.model import check_symmetric, is_positive_definite, symmetrize

from conftest import random_dataset


def _plain_areas(m=5, k=2, s=3, seed=7):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(m):
        a = rng.normal(size=(k, k))
        out.append(
            AreaRecord(
                f"a{i}",
                rng.normal(size=k),
                rng.normal(size=(k, s)),
                a @ a.T + 0.5 * np.eye(k),
            )
        )
    return out


def test_validate_accepts_and_freezes():
    data = validate_dataset(_plain_areas())
    assert data.m == 5 and data.k == 2 and data.s == 3
    assert data.y_mat.shape == (5, 2)
    assert data.x_arr.shape == (5, 2, 3)
    assert data.d_arr.shape == (5, 2, 2)
    # records are immutable after validation
    assert not data.areas[0].y.flags.writeable
    assert not data.areas[0].D.flags.writeable
    with pytest.raises(ValueError):
        data.areas[0].y[0] = 99.0


def test_validate_rejects_too_few_areas():
    with pytest.raises(ValidationError):
        validate_dataset(_plain_areas(m=1))


def test_validate_rejects_dimension_mismatch():
    areas = _plain_areas()
    bad = AreaRecord("bad", np.zeros(3), areas[0].X, areas[0].D)
    with pytest.raises(DimensionMismatch):
        validate_dataset(areas[:-1] + [bad])
    bad = AreaRecord("bad", areas[0].y, np.zeros((2, 4)), areas[0].D)
    with pytest.raises(DimensionMismatch):
        validate_dataset(areas[:-1] + [bad])


def test_validate_rejects_duplicate_ids():
    areas = _plain_areas()
    dup = AreaRecord(areas[0].area_id, areas[1].y, areas[1].X, areas[1].D)
    with pytest.raises(ValidationError, match="duplicate"):
        validate_dataset([areas[0], dup])


def test_validate_rejects_nonfinite():
    areas = _plain_areas()
    bad = AreaRecord("bad", np.array([np.nan, 0.0]), areas[0].X, areas[0].D)
    with pytest.raises(ValidationError, match="finite"):
        validate_dataset(areas[:-1] + [bad])


def test_validate_rejects_indefinite_d():
    areas = _plain_areas()
    bad = AreaRecord("badpd", areas[0].y, areas[0].X, np.diag([1.0, -0.1]))
    with pytest.raises(NonPositiveDefiniteD) as exc:
        validate_dataset(areas[:-1] + [bad])
    assert exc.value.area_id == "badpd"


def test_validate_symmetry_tolerance():
    areas = _plain_areas()
    D = areas[0].D.copy()
    # asymmetry below the relative tolerance is repaired silently
    D_ok = D.copy()
    D_ok[0, 1] += 1e-12
    ok = validate_dataset([AreaRecord("x", areas[0].y, areas[0].X, D_ok)] + areas[1:])
    rec = ok.areas[0]
    assert np.array_equal(rec.D, rec.D.T)
    # asymmetry above it is an error attributed to the area
    D_bad = D.copy()
    D_bad[0, 1] += 1e-3 * max(1.0, np.abs(D).max())
    with pytest.raises(NonPositiveDefiniteD):
        validate_dataset([AreaRecord("x", areas[0].y, areas[0].X, D_bad)] + areas[1:])


def test_validate_rejects_rank_deficient_x():
    rng = np.random.default_rng(3)
    areas = []
    for i in range(4):
        X = np.zeros((2, 3))
        X[:, 0] = rng.normal(size=2)
        X[:, 1] = 2.0 * X[:, 0]  # collinear
        X[:, 2] = rng.normal(size=2)
        areas.append(AreaRecord(f"a{i}", rng.normal(size=2), X, np.eye(2)))
    with pytest.raises(RankDeficientX):
        validate_dataset(areas)


def test_validate_allows_no_covariates():
    rng = np.random.default_rng(4)
    areas = [
        AreaRecord(f"a{i}", rng.normal(size=2), np.zeros((2, 0)), np.eye(2)) for i in range(3)
    ]
    data = validate_dataset(areas)
    assert data.s == 0
    assert data.x_arr.shape == (3, 2, 0)


def test_area_index_lookup():
    data = random_dataset(11, m=6, k=2, s=2)
    assert data.area_index("area_003") == 2
    with pytest.raises(ValidationError):
        data.area_index("nope")


def test_marginal_covariance():
    data = random_dataset(12, m=4, k=3, s=2)
    Psi = np.diag([1.0, 2.0, 3.0])
    params = ModelParams(beta=np.zeros(2), Psi=Psi)
    got = marginal_covariance(params, data.areas[1])
    assert np.allclose(got, Psi + data.areas[1].D)
    with pytest.raises(DimensionMismatch):
        marginal_covariance(ModelParams(beta=np.zeros(2), Psi=np.eye(2)), data.areas[1])


def test_symmetrize_and_checks():
    a = np.array([[1.0, 2.0], [0.0, 1.0]])
    assert np.allclose(symmetrize(a), [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ValidationError):
        check_symmetric(a)
    assert is_positive_definite(np.eye(2))
    assert not is_positive_definite(np.diag([1.0, 0.0]))
