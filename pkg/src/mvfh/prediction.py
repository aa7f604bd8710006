"""GLS regression and (empirical) best linear unbiased prediction.

All solvers work area by area with k x k systems; the stacked (m*k) x (m*k)
marginal covariance is never formed. The GLS information matrix is the only
s x s system solved.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .covariance import component_submodel, estimate_covariance, univariate_psi
from .errors import NumericError, SingularInformation
from .model import Dataset, symmetrize

# Slack for the shrinkage eigenvalue range check; the exact range is [0, 1].
_SHRINK_TOL = 1e-8


@dataclass(frozen=True)
class GlsFit:
    """Generalized least squares fit at a fixed Psi.

    info_matrix is sum_i X_i' (Psi + D_i)^{-1} X_i; its inverse is the
    coefficient covariance.
    """

    beta_hat: np.ndarray  # (s,)
    info_matrix: np.ndarray  # (s, s)
    psi_used: np.ndarray  # (k, k)


@dataclass(frozen=True)
class Prediction:
    """Point prediction for one area with its shrinkage decomposition.

    Satisfies theta_hat = y - shrinkage @ (y - fitted) exactly, where fitted
    is the regression part X_a beta_hat (stored because the univariate
    predictor fits each coordinate separately).
    """

    area_id: str
    theta_hat: np.ndarray  # (k,)
    shrinkage: np.ndarray  # (k, k), D_a (Psi + D_a)^{-1}
    fitted: np.ndarray  # (k,)
    psi_variant: str
    psi_used: np.ndarray  # (k, k)


def gls_beta(Psi: np.ndarray, data: Dataset) -> GlsFit:
    """GLS coefficients at a fixed Psi via per-area k x k solves.

    beta_hat = info^{-1} sum_i X_i' (Psi + D_i)^{-1} y_i. Raises
    SingularInformation if the information matrix cannot be solved and
    NumericError if some marginal covariance Psi + D_i is singular.
    """
    Psi = symmetrize(np.asarray(Psi, dtype=float))
    if data.s == 0:
        return GlsFit(beta_hat=np.zeros(0), info_matrix=np.zeros((0, 0)), psi_used=Psi)
    V = Psi[None] + data.d_arr  # (m, k, k)
    rhs = np.concatenate([data.x_arr, data.y_mat[:, :, None]], axis=2)  # (m, k, s+1)
    try:
        sol = np.linalg.solve(V, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular marginal covariance Psi + D_i: {exc}") from exc
    wx, wy = sol[:, :, :-1], sol[:, :, -1]
    info = np.einsum("iks,ikt->st", data.x_arr, wx)
    info = symmetrize(info)
    target = np.einsum("iks,ik->s", data.x_arr, wy)
    try:
        beta_hat = np.linalg.solve(info, target)
    except np.linalg.LinAlgError as exc:
        raise SingularInformation(str(exc)) from exc
    return GlsFit(beta_hat=beta_hat, info_matrix=info, psi_used=Psi)


def _shrinkage_matrix(Psi: np.ndarray, D_a: np.ndarray) -> np.ndarray:
    """D_a (Psi + D_a)^{-1}, with a range check on its eigenvalues.

    The matrix is similar to a symmetric PSD contraction, so its spectrum
    must be real and inside [0, 1]; anything else signals a broken Psi.
    """
    try:
        S = np.linalg.solve(Psi + D_a, D_a).T  # D_a and V_a symmetric
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular marginal covariance: {exc}") from exc
    eig = np.linalg.eigvals(S)
    if np.max(np.abs(eig.imag)) > _SHRINK_TOL or np.min(eig.real) < -_SHRINK_TOL or np.max(
        eig.real
    ) > 1.0 + _SHRINK_TOL:
        raise NumericError(f"shrinkage eigenvalues outside [0, 1]: {eig}")
    return S


def blup(
    a: int,
    Psi: np.ndarray,
    data: Dataset,
    fit: GlsFit | None = None,
    psi_variant: str = "known",
) -> Prediction:
    """Best linear unbiased predictor of theta_a at a known Psi.

    theta_hat = y_a - D_a (Psi + D_a)^{-1} (y_a - X_a beta_hat) with beta_hat
    the GLS coefficients at the same Psi. Pass a precomputed fit to share the
    regression across areas.
    """
    Psi = symmetrize(np.asarray(Psi, dtype=float))
    if fit is None:
        fit = gls_beta(Psi, data)
    rec = data.areas[a]
    fitted = rec.X @ fit.beta_hat if data.s > 0 else np.zeros(data.k)
    S = _shrinkage_matrix(Psi, rec.D)
    theta = rec.y - S @ (rec.y - fitted)
    return Prediction(
        area_id=rec.area_id,
        theta_hat=theta,
        shrinkage=S,
        fitted=fitted,
        psi_variant=psi_variant,
        psi_used=Psi,
    )


def eblup(a: int, data: Dataset, variant: str = "PR0") -> Prediction:
    """Empirical BLUP: the BLUP evaluated at the projected moment estimate of Psi."""
    est = estimate_covariance(data, variant)
    return blup(a, est.projected, data, psi_variant=variant)


def eblup_all(data: Dataset, variant: str = "PR0") -> list[Prediction]:
    """Empirical BLUPs for every area, sharing one covariance estimate and GLS fit."""
    est = estimate_covariance(data, variant)
    fit = gls_beta(est.projected, data)
    return [blup(a, est.projected, data, fit=fit, psi_variant=variant) for a in range(data.m)]


def _univariate_fits(data: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coordinate-wise scalar Fay-Herriot fits for all areas at once.

    Returns (psi_diag, fitted, shrink) with shapes (k,), (m, k), (m, k):
    the scalar variance estimates, regression parts, and shrinkage factors
    d_aj / (psi_j + d_aj).
    """
    m, k = data.m, data.k
    psi_diag = np.empty(k)
    fitted = np.zeros((m, k))
    shrink = np.empty((m, k))
    for j in range(k):
        psi_j = univariate_psi(data, j)
        y, X, d = component_submodel(data, j)
        if X.shape[1] > 0:
            w = 1.0 / (psi_j + d)
            info = (X * w[:, None]).T @ X
            try:
                beta_j = np.linalg.solve(info, (X * w[:, None]).T @ y)
            except np.linalg.LinAlgError as exc:
                raise SingularInformation(f"component {j}: {exc}") from exc
            fitted[:, j] = X @ beta_j
        psi_diag[j] = psi_j
        shrink[:, j] = d / (psi_j + d)
    return psi_diag, fitted, shrink


def univariate_eblup(a: int, data: Dataset) -> Prediction:
    """Coordinate-wise EBLUP baseline that ignores all cross-component structure.

    Each coordinate is fit as a scalar Fay-Herriot model on its component
    submodel, so the shrinkage matrix is diagonal.
    """
    psi_diag, fitted, shrink = _univariate_fits(data)
    rec = data.areas[a]
    S = np.diag(shrink[a])
    theta = rec.y - shrink[a] * (rec.y - fitted[a])
    return Prediction(
        area_id=rec.area_id,
        theta_hat=theta,
        shrinkage=S,
        fitted=fitted[a],
        psi_variant="univariate",
        psi_used=np.diag(psi_diag),
    )


def univariate_eblup_all(data: Dataset) -> list[Prediction]:
    """Coordinate-wise EBLUPs for every area, sharing the scalar fits."""
    psi_diag, fitted, shrink = _univariate_fits(data)
    out = []
    for a, rec in enumerate(data.areas):
        theta = rec.y - shrink[a] * (rec.y - fitted[a])
        out.append(
            Prediction(
                area_id=rec.area_id,
                theta_hat=theta,
                shrinkage=np.diag(shrink[a]),
                fitted=fitted[a],
                psi_variant="univariate",
                psi_used=np.diag(psi_diag),
            )
        )
    return out


def beta_inference(fit: GlsFit) -> list[dict]:
    """Normal-theory coefficient table for a GLS fit.

    Standard errors come from the inverse information matrix; p-values are
    two-sided normal. Returns one row per coefficient.
    """
    if fit.beta_hat.size == 0:
        return []
    try:
        cov = np.linalg.inv(fit.info_matrix)
    except np.linalg.LinAlgError as exc:
        raise SingularInformation(str(exc)) from exc
    se = np.sqrt(np.diag(cov))
    rows = []
    for j, (b, s_j) in enumerate(zip(fit.beta_hat, se)):
        z = b / s_j
        rows.append(
            {
                "index": j,
                "coefficient": float(b),
                "std_error": float(s_j),
                "z_value": float(z),
                "p_value": float(2.0 * stats.norm.sf(abs(z))),
            }
        )
    return rows
