import numpy as np
import pytest

from mvfh import (
    AreaRecord,
    blup,
    estimate_covariance,
    g1,
    g2,
    g3,
    g4,
    gls_beta,
    msem_estimate,
    msem_estimate_all,
    msem_second_order,
    psi0_bias,
    psi_pr0,
    validate_dataset,
)

from conftest import random_dataset, random_psd, random_spd
from oracles import dense_gls, scalar_blup, scalar_g1, scalar_g2, scalar_g3, scalar_psi0

# Frozen oracle values for the 4-area intercept-only scalar model with
# y = (4, -2, 5, 1) and d = (1, 2, 3, 4); psi0 is exactly 5.
SCALAR_SPOT = {
    "psi0": 5.0,
    "bias": -1.875,
    "blup0": 3.6745454545454543,
    "g1": 0.8333333333333334,
    "g2": 0.050909090909090904,
    "g3": 0.13310185185185183,
}


def _scalar_spot_dataset():
    y = [4.0, -2.0, 5.0, 1.0]
    d = [1.0, 2.0, 3.0, 4.0]
    areas = [
        AreaRecord(f"a{i}", np.array([y[i]]), np.ones((1, 1)), np.array([[d[i]]]))
        for i in range(4)
    ]
    return validate_dataset(areas)


def test_scalar_spot_values():
    data = _scalar_spot_dataset()
    psi = psi_pr0(data)
    assert psi[0, 0] == pytest.approx(SCALAR_SPOT["psi0"], abs=1e-12)
    assert psi0_bias(psi, data)[0, 0] == pytest.approx(SCALAR_SPOT["bias"], abs=1e-12)
    pred = blup(0, psi, data)
    assert pred.theta_hat[0] == pytest.approx(SCALAR_SPOT["blup0"], abs=1e-12)
    assert g1(0, psi, data)[0, 0] == pytest.approx(SCALAR_SPOT["g1"], abs=1e-12)
    assert g2(0, psi, data)[0, 0] == pytest.approx(SCALAR_SPOT["g2"], abs=1e-12)
    assert g3(0, psi, data)[0, 0] == pytest.approx(SCALAR_SPOT["g3"], abs=1e-12)


def test_scalar_pipeline_equivalence():
    # k=1 multivariate code against the classic univariate formulas
    rng = np.random.default_rng(50)
    for seed in range(5):
        m = int(rng.integers(5, 14))
        areas = [
            AreaRecord(
                f"a{i}",
                rng.normal(size=1) * 2.0,
                rng.normal(size=(1, 2)),
                np.array([[float(rng.uniform(0.3, 2.0))]]),
            )
            for i in range(m)
        ]
        data = validate_dataset(areas)
        y = data.y_mat[:, 0]
        X = data.x_arr[:, 0, :]
        d = data.d_arr[:, 0, 0]

        psi = scalar_psi0(y, X, d)
        assert psi_pr0(data)[0, 0] == pytest.approx(psi, abs=1e-12)
        psi_m = np.array([[max(psi, 0.05)]])  # keep V well away from singular
        psi_s = float(psi_m[0, 0])
        for a in (0, m - 1):
            assert blup(a, psi_m, data).theta_hat[0] == pytest.approx(
                scalar_blup(a, psi_s, y, X, d), abs=1e-12
            )
            assert g1(a, psi_m, data)[0, 0] == pytest.approx(scalar_g1(a, psi_s, d), abs=1e-12)
            assert g2(a, psi_m, data)[0, 0] == pytest.approx(scalar_g2(a, psi_s, X, d), abs=1e-12)
            assert g3(a, psi_m, data)[0, 0] == pytest.approx(scalar_g3(a, psi_s, d), abs=1e-12)


def test_g1_alternative_route_and_singular_psi():
    data = random_dataset(51, m=6, k=3, s=2)
    rng = np.random.default_rng(51)
    for rank in (3, 2, 1):
        Psi = random_psd(rng, 3, rank=rank)
        D = data.areas[2].D
        got = g1(2, Psi, data)
        # identity Psi V^{-1} D = D - D V^{-1} D gives an independent route
        alt = D - D @ np.linalg.solve(Psi + D, D)
        assert np.allclose(got, alt, atol=1e-11)
        assert np.linalg.eigvalsh(got)[0] >= -1e-10


def test_g2_matches_dense_information():
    data = random_dataset(52, m=7, k=2, s=3)
    Psi = random_psd(np.random.default_rng(52), 2)
    _, info_o = dense_gls(data.y_mat, data.x_arr, Psi[None] + data.d_arr)
    rec = data.areas[3]
    T = rec.D @ np.linalg.solve(Psi + rec.D, rec.X)
    want = T @ np.linalg.inv(info_o) @ T.T
    assert np.allclose(g2(3, Psi, data), want, atol=1e-11)


def test_g2_no_covariates_is_zero():
    rng = np.random.default_rng(53)
    areas = [
        AreaRecord(f"a{i}", rng.normal(size=2), np.zeros((2, 0)), random_spd(rng, 2))
        for i in range(5)
    ]
    data = validate_dataset(areas)
    assert np.array_equal(g2(0, np.eye(2), data), np.zeros((2, 2)))


def test_g_terms_are_symmetric_psd():
    data = random_dataset(54, m=8, k=2, s=2)
    rng = np.random.default_rng(54)
    Psi = random_psd(rng, 2)
    for term in (g1, g2, g3):
        M = term(1, Psi, data)
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M)[0] >= -1e-10


def test_g4_variants():
    data = random_dataset(55, m=8, k=2, s=2)
    Psi = random_psd(np.random.default_rng(55), 2)
    assert np.array_equal(g4(0, Psi, data, "PR1"), np.zeros((2, 2)))
    rec = data.areas[0]
    DA = rec.D @ np.linalg.inv(Psi + rec.D)
    want = -DA @ psi0_bias(Psi, data) @ DA.T
    got = g4(0, Psi, data, "PR0")
    assert np.allclose(got, 0.5 * (want + want.T), atol=1e-12)


def test_g4_positive_with_identity_covariates():
    # identity covariates give a negative-definite bias, so g4 adds risk
    rng = np.random.default_rng(56)
    eye = np.eye(2)
    areas = [
        AreaRecord(f"a{i}", rng.normal(size=2), eye.copy(), float(rng.uniform(0.3, 1.0)) * eye)
        for i in range(10)
    ]
    data = validate_dataset(areas)
    M = g4(0, random_psd(rng, 2), data, "PR0")
    assert np.linalg.eigvalsh(M)[0] > 0


def test_msem_second_order_is_sum_of_terms():
    data = random_dataset(57, m=9, k=2, s=3)
    Psi = random_psd(np.random.default_rng(57), 2)
    fit = gls_beta(Psi, data)
    want = g1(2, Psi, data) + g2(2, Psi, data, fit=fit) + g3(2, Psi, data)
    assert np.allclose(msem_second_order(2, Psi, data), want, atol=1e-13)


def test_msem_estimate_report():
    data = random_dataset(58, m=12, k=2, s=2)
    rep = msem_estimate(3, data, "PR0")
    est = estimate_covariance(data, "PR0")
    fit = gls_beta(est.projected, data)
    assert np.allclose(rep.g1, g1(3, est.projected, data), atol=1e-13)
    assert np.allclose(rep.g2, g2(3, est.projected, data, fit=fit), atol=1e-13)
    assert np.allclose(rep.approx, rep.g1 + rep.g2 + rep.g3, atol=1e-13)
    assert np.allclose(rep.estimate, rep.g1 + rep.g2 + 2.0 * rep.g3 + rep.g4, atol=1e-13)
    w = np.linalg.eigvalsh(rep.estimate)
    assert rep.estimate_psd == bool(w[0] >= -1e-12 * max(1.0, w[-1]))
    # PR1 variant zeroes the bias term
    rep1 = msem_estimate(3, data, "PR1")
    assert np.array_equal(rep1.g4, np.zeros((2, 2)))
    assert rep1.psi_variant == "PR1"


def test_msem_estimate_all_shares_fit():
    data = random_dataset(59, m=10, k=2, s=2)
    batch = msem_estimate_all(data, "PR0")
    single = msem_estimate(4, data, "PR0")
    assert np.allclose(batch[4].estimate, single.estimate, atol=1e-13)
    assert [r.area_id for r in batch] == [rec.area_id for rec in data.areas]


def test_blup_msem_matches_g1_plus_g2():
    # At the true Psi the BLUP risk is exactly G1 + G2; Monte Carlo check.
    rng = np.random.default_rng(60)
    m, k, s, reps = 12, 2, 2, 6000
    x_arr = rng.normal(size=(m, k, s))
    d_arr = np.stack([random_spd(rng, k, scale=0.5) for _ in range(m)])
    Psi = np.array([[0.9, 0.25], [0.25, 0.6]])
    beta = rng.normal(size=s)
    areas = [AreaRecord(f"a{i}", np.zeros(k), x_arr[i], d_arr[i]) for i in range(m)]
    data = validate_dataset(areas)

    V = Psi[None] + d_arr
    Vi_x = np.linalg.solve(V, x_arr)
    info = np.einsum("iks,ikt->st", x_arr, Vi_x)
    beta_map = np.linalg.solve(info, Vi_x.transpose(0, 2, 1))  # (m, s, k)
    a = 0
    S = np.linalg.solve(V[a], d_arr[a]).T

    L_psi = np.linalg.cholesky(Psi)
    L_d = np.linalg.cholesky(d_arr)
    acc = np.zeros((k, k))
    for r in range(reps):
        v = rng.normal(size=(m, k)) @ L_psi.T
        y = x_arr @ beta + v + np.einsum("mij,mj->mi", L_d, rng.normal(size=(m, k)))
        bh = np.einsum("isk,ik->s", beta_map, y)
        th = y[a] - S @ (y[a] - x_arr[a] @ bh)
        err = th - (x_arr[a] @ beta + v[a])
        acc += np.outer(err, err)
    emp = acc / reps
    want = g1(a, Psi, data) + g2(a, Psi, data)
    # entries have MC standard error around |want|*sqrt(2/reps) ~ 0.008
    assert np.max(np.abs(emp - want)) < 4.5 * np.max(np.abs(want)) * np.sqrt(2.0 / reps)
