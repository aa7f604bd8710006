"""Moment estimation of the random-effect covariance matrix Psi.

Two estimators are provided. The basic one (PR0) averages OLS residual outer
products minus the sampling covariances; it is consistent but biased at order
1/m because OLS residuals understate the true disturbances. The corrected one
(PR1) subtracts the exact finite-sample bias evaluated at the PR0 estimate.
Neither is positive semidefinite by construction, so both are paired with an
eigenvalue truncation step before use in prediction.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EigenFailure, RankDeficientX, ValidationError
from .model import Dataset, symmetrize

VARIANTS = ("PR0", "PR1")


@dataclass(frozen=True)
class CovarianceEstimate:
    """A raw moment estimate of Psi together with its PSD projection.

    eigenvalues_raw holds the spectrum of the raw estimate in ascending
    order; truncated marks the eigenvalues that were clipped to zero.
    """

    variant: str
    raw: np.ndarray
    projected: np.ndarray
    eigenvalues_raw: np.ndarray
    truncated: np.ndarray

    @property
    def was_truncated(self) -> bool:
        return bool(self.truncated.any())


def ols_beta(data: Dataset) -> np.ndarray:
    """Ordinary least squares coefficients from the stacked (m*k) x s system."""
    if data.s == 0:
        return np.zeros(0)
    stacked_x = data.x_arr.reshape(data.m * data.k, data.s)
    stacked_y = data.y_mat.reshape(data.m * data.k)
    beta, _, rank, _ = np.linalg.lstsq(stacked_x, stacked_y, rcond=None)
    if rank < data.s:
        raise RankDeficientX(f"stacked covariate matrix has rank {rank} < {data.s}")
    return beta


def psi_pr0(data: Dataset, beta: np.ndarray | None = None) -> np.ndarray:
    """Basic moment estimator: mean of residual outer products minus mean D_i.

    Returns a symmetric k x k matrix that need not be positive semidefinite.
    """
    if beta is None:
        beta = ols_beta(data)
    resid = data.y_mat - data.x_arr @ beta  # (m, k)
    outer = resid[:, :, None] * resid[:, None, :]  # (m, k, k)
    est = np.sum(outer, axis=0) / data.m - np.sum(data.d_arr, axis=0) / data.m
    return symmetrize(est)


def psi0_bias(Psi: np.ndarray, data: Dataset) -> np.ndarray:
    """Exact finite-sample bias of the basic moment estimator at a given Psi.

    E[psi_pr0] = Psi + psi0_bias(Psi, data). The three terms come from the
    covariance of the OLS coefficient error with itself and with the
    disturbances; with no covariates the estimator is exactly unbiased.
    """
    if data.s == 0:
        return np.zeros((data.k, data.k))
    Psi = np.asarray(Psi, dtype=float)
    x = data.x_arr  # (m, k, s)
    gram_inv = np.linalg.inv(np.einsum("iks,ikt->st", x, x))  # (X'X)^{-1}
    V = Psi[None] + data.d_arr  # (m, k, k)
    # middle = sum_j X_j' (Psi + D_j) X_j
    middle = np.einsum("jks,jkl,jlt->st", x, V, x)
    core = gram_inv @ middle @ gram_inv
    P = np.einsum("iks,st,ilt->ikl", x, gram_inv, x)  # X_i (X'X)^{-1} X_i'
    term1 = np.einsum("iks,st,ilt->kl", x, core, x)
    term2 = np.sum(V @ P, axis=0)
    bias = (term1 - term2 - np.transpose(term2)) / data.m
    return symmetrize(bias)


def psi_pr1(data: Dataset, beta: np.ndarray | None = None) -> np.ndarray:
    """Bias-corrected moment estimator: PR0 minus its own bias evaluated at PR0.

    The plug-in uses the raw (unprojected) PR0 estimate. Still not PSD in
    general.
    """
    raw0 = psi_pr0(data, beta=beta)
    return symmetrize(raw0 - psi0_bias(raw0, data))


def psd_project(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Clip negative eigenvalues of a symmetric matrix to zero.

    Returns (projected, eigenvalues, truncated) where eigenvalues is the raw
    ascending spectrum and truncated flags the clipped entries. A matrix that
    is already PSD is returned unchanged, so the projection is an exact
    fixed point there.
    """
    raw = symmetrize(np.asarray(raw, dtype=float))
    try:
        w, H = np.linalg.eigh(raw)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(f"eigendecomposition failed: {exc}") from exc
    truncated = w < 0.0
    if not truncated.any():
        return raw, w, truncated
    projected = symmetrize((H * np.maximum(w, 0.0)) @ H.T)
    return projected, w, truncated


def estimate_covariance(data: Dataset, variant: str = "PR0") -> CovarianceEstimate:
    """Estimate Psi by the requested variant and project onto the PSD cone."""
    if variant not in VARIANTS:
        raise ValidationError(f"unknown covariance variant {variant!r}, expected one of {VARIANTS}")
    beta = ols_beta(data)
    raw = psi_pr0(data, beta=beta) if variant == "PR0" else psi_pr1(data, beta=beta)
    projected, w, truncated = psd_project(raw)
    return CovarianceEstimate(
        variant=variant,
        raw=raw,
        projected=projected,
        eigenvalues_raw=w,
        truncated=truncated,
    )


def component_submodel(data: Dataset, component: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scalar working model for one coordinate of the response.

    Takes row `component` of every X_i and keeps only the columns that are
    nonzero in at least one area; columns that never touch this coordinate
    are dropped so the scalar design keeps full rank. Returns (y, X, d) with
    shapes (m,), (m, p), (m,) where d holds the matching diagonal entries
    of the D_i.
    """
    if not 0 <= component < data.k:
        raise ValidationError(f"component {component} out of range for k={data.k}")
    y = data.y_mat[:, component]
    rows = data.x_arr[:, component, :]  # (m, s)
    active = np.any(rows != 0.0, axis=0)
    X = rows[:, active]
    d = data.d_arr[:, component, component]
    return y, X, d


def univariate_psi(data: Dataset, component: int) -> float:
    """Scalar moment estimate of Psi[j, j] ignoring the other coordinates.

    This is the exact k=1 specialization of psi_pr0 applied to the component
    submodel, truncated at zero as is standard for scalar variance
    components.
    """
    y, X, d = component_submodel(data, component)
    if X.shape[1] > 0:
        beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        if rank < X.shape[1]:
            raise RankDeficientX(
                f"component {component}: scalar design has rank {rank} < {X.shape[1]}"
            )
        resid = y - X @ beta
    else:
        resid = y
    est = float(np.mean(resid**2) - np.mean(d))
    return max(0.0, est)
