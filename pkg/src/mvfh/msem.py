"""Second-order mean squared error matrices for the empirical BLUP.

The MSEM of the EBLUP decomposes into a leading shrinkage term G1 of order
one plus three order-1/m corrections: G2 for estimating the regression
coefficients, G3 for estimating Psi, and a bias term G4 tied to the moment
estimator in use. The approximation G1 + G2 + G3 at the true Psi is accurate
to o(1/m); the estimator G1 + G2 + 2*G3 + G4 at the projected estimate is
second-order unbiased.
"""

from dataclasses import dataclass

import numpy as np

from .covariance import estimate_covariance, psi0_bias
from .errors import SingularInformation
from .model import Dataset, symmetrize
from .prediction import GlsFit, gls_beta

# Scale-relative eigenvalue slack when flagging a non-PSD estimate.
_PSD_FLAG_RTOL = 1e-12


@dataclass(frozen=True)
class MsemReport:
    """MSEM components for one area, all symmetric k x k matrices.

    approx = g1 + g2 + g3 is the second-order MSEM approximation; estimate =
    g1 + g2 + 2*g3 + g4 is its second-order unbiased estimator. estimate_psd
    records whether the estimate happens to be PSD; no truncation is applied.
    """

    area_id: str
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    g4: np.ndarray
    approx: np.ndarray
    estimate: np.ndarray
    psi_variant: str
    estimate_psd: bool


def g1(a: int, Psi: np.ndarray, data: Dataset) -> np.ndarray:
    """Leading term: Psi (Psi + D_a)^{-1} D_a.

    This form stays exact when Psi is singular, where it correctly loses
    rank; it must not be rewritten as D - D V^{-1} D plus remainder.
    """
    Psi = np.asarray(Psi, dtype=float)
    D_a = data.areas[a].D
    out = Psi @ np.linalg.solve(Psi + D_a, D_a)
    return symmetrize(out)


def g2(a: int, Psi: np.ndarray, data: Dataset, fit: GlsFit | None = None) -> np.ndarray:
    """Regression-estimation term of order 1/m.

    D_a V_a^{-1} X_a info^{-1} X_a' V_a^{-1} D_a with V_a = Psi + D_a and
    info the GLS information matrix at Psi. Zero when there are no
    covariates.
    """
    if data.s == 0:
        return np.zeros((data.k, data.k))
    Psi = np.asarray(Psi, dtype=float)
    if fit is None:
        fit = gls_beta(Psi, data)
    rec = data.areas[a]
    T = rec.D @ np.linalg.solve(Psi + rec.D, rec.X)  # (k, s)
    try:
        out = T @ np.linalg.solve(fit.info_matrix, T.T)
    except np.linalg.LinAlgError as exc:
        raise SingularInformation(str(exc)) from exc
    return symmetrize(out)


def g3(a: int, Psi: np.ndarray, data: Dataset) -> np.ndarray:
    """Psi-estimation term of order 1/m for the moment estimator.

    (1/m^2) D_a V_a^{-1} [ sum_i ( V_i V_a^{-1} V_i + tr(V_i V_a^{-1}) V_i ) ]
    V_a^{-1} D_a, with V_i = Psi + D_i.
    """
    Psi = np.asarray(Psi, dtype=float)
    rec = data.areas[a]
    A = np.linalg.inv(Psi + rec.D)
    V = Psi[None] + data.d_arr  # (m, k, k)
    VA = V @ A
    S = np.sum(VA @ V + np.trace(VA, axis1=1, axis2=2)[:, None, None] * V, axis=0)
    DA = rec.D @ A
    out = (DA @ S @ DA.T) / data.m**2
    return symmetrize(out)


def g4(a: int, Psi: np.ndarray, data: Dataset, variant: str = "PR0") -> np.ndarray:
    """Bias term: -D_a V_a^{-1} Bias(Psi) V_a^{-1} D_a.

    The bias-corrected estimator has no order-1/m bias left, so this term
    vanishes for the PR1 variant.
    """
    if variant == "PR1":
        return np.zeros((data.k, data.k))
    Psi = np.asarray(Psi, dtype=float)
    rec = data.areas[a]
    DA = rec.D @ np.linalg.inv(Psi + rec.D)
    out = -DA @ psi0_bias(Psi, data) @ DA.T
    return symmetrize(out)


def msem_second_order(a: int, Psi: np.ndarray, data: Dataset) -> np.ndarray:
    """Second-order MSEM approximation g1 + g2 + g3 at a known Psi."""
    fit = gls_beta(np.asarray(Psi, dtype=float), data)
    return g1(a, Psi, data) + g2(a, Psi, data, fit=fit) + g3(a, Psi, data)


def _report(a: int, data: Dataset, variant: str, Psi: np.ndarray, fit: GlsFit, bias: np.ndarray | None) -> MsemReport:
    rec = data.areas[a]
    t1 = g1(a, Psi, data)
    t2 = g2(a, Psi, data, fit=fit)
    t3 = g3(a, Psi, data)
    if bias is None:
        t4 = np.zeros((data.k, data.k))
    else:
        DA = rec.D @ np.linalg.inv(Psi + rec.D)
        t4 = symmetrize(-DA @ bias @ DA.T)
    estimate = t1 + t2 + 2.0 * t3 + t4
    w = np.linalg.eigvalsh(estimate)
    psd = bool(w[0] >= -_PSD_FLAG_RTOL * max(1.0, float(w[-1])))
    return MsemReport(
        area_id=rec.area_id,
        g1=t1,
        g2=t2,
        g3=t3,
        g4=t4,
        approx=t1 + t2 + t3,
        estimate=estimate,
        psi_variant=variant,
        estimate_psd=psd,
    )


def msem_estimate(a: int, data: Dataset, variant: str = "PR0") -> MsemReport:
    """Second-order unbiased MSEM estimate for one area.

    All terms are evaluated at the projected covariance estimate of the
    requested variant; doubling g3 compensates the downward bias of plugging
    the estimate into g1. The result is reported without PSD truncation.
    """
    est = estimate_covariance(data, variant)
    fit = gls_beta(est.projected, data)
    bias = psi0_bias(est.projected, data) if variant == "PR0" else None
    return _report(a, data, variant, est.projected, fit, bias)


def msem_estimate_all(data: Dataset, variant: str = "PR0") -> list[MsemReport]:
    """MSEM estimates for every area, sharing one covariance estimate and fit."""
    est = estimate_covariance(data, variant)
    fit = gls_beta(est.projected, data)
    bias = psi0_bias(est.projected, data) if variant == "PR0" else None
    return [_report(a, data, variant, est.projected, fit, bias) for a in range(data.m)]
