"""Core data structures for the multivariate Fay-Herriot area-level model.

Observation model, for areas i = 1..m:

    y_i = X_i beta + v_i + e_i,   v_i ~ N_k(0, Psi),   e_i ~ N_k(0, D_i),

with y_i a k-vector of direct estimates, X_i a known k x s covariate matrix,
D_i a known k x k sampling covariance, and Psi the fully unknown k x k
covariance of the area random effect. The prediction target for area a is
theta_a = X_a beta + v_a.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonPositiveDefiniteD, RankDeficientX, ValidationError

# Relative tolerance for accepting a matrix as symmetric, and the relative
# eigenvalue floor below which a "positive definite" input is rejected.
SYMMETRY_RTOL = 1e-10
PD_EIGEN_RTOL = 1e-12


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the symmetric part (a + a.T) / 2."""
    return 0.5 * (a + a.T)


def check_symmetric(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate symmetry up to SYMMETRY_RTOL and return the symmetrized copy.

    The asymmetry is measured as max|A - A.T| relative to max(1, max|A|), so
    the test is scale-aware but does not blow up for near-zero matrices.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    gap = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if gap > SYMMETRY_RTOL * scale:
        raise ValidationError(f"{name} is not symmetric (relative asymmetry {gap / scale:.3e})")
    return symmetrize(a)


def is_positive_definite(a: np.ndarray) -> bool:
    """Scale-relative positive definiteness: lambda_min > PD_EIGEN_RTOL * max(1, lambda_max)."""
    w = np.linalg.eigvalsh(a)
    return bool(w[0] > PD_EIGEN_RTOL * max(1.0, float(w[-1])))


@dataclass(frozen=True)
class AreaRecord:
    """Observed data for a single area: direct estimate, covariates, sampling covariance."""

    area_id: str
    y: np.ndarray  # (k,)
    X: np.ndarray  # (k, s)
    D: np.ndarray  # (k, k), symmetric positive definite

    @property
    def k(self) -> int:
        return self.y.shape[0]

    @property
    def s(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class Dataset:
    """A validated collection of areas with common dimensions k and s.

    Construct through validate_dataset; the stacked-array views used by the
    estimation routines are cached on first access.
    """

    areas: tuple[AreaRecord, ...]
    k: int
    s: int

    @property
    def m(self) -> int:
        return len(self.areas)

    @cached_property
    def y_mat(self) -> np.ndarray:
        """(m, k) matrix of direct estimates."""
        return np.array([rec.y for rec in self.areas])

    @cached_property
    def x_arr(self) -> np.ndarray:
        """(m, k, s) array of covariate matrices."""
        return np.array([rec.X for rec in self.areas])

    @cached_property
    def d_arr(self) -> np.ndarray:
        """(m, k, k) array of sampling covariances."""
        return np.array([rec.D for rec in self.areas])

    @cached_property
    def _index(self) -> dict[str, int]:
        return {rec.area_id: i for i, rec in enumerate(self.areas)}

    def area_index(self, area_id: str) -> int:
        try:
            return self._index[area_id]
        except KeyError:
            raise ValidationError(f"unknown area {area_id!r}") from None


@dataclass(frozen=True)
class ModelParams:
    """True or hypothesised model parameters: regression coefficients and effect covariance."""

    beta: np.ndarray  # (s,)
    Psi: np.ndarray  # (k, k), symmetric positive semidefinite


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


def validate_dataset(areas: Sequence[AreaRecord]) -> Dataset:
    """Check a collection of area records and assemble an immutable Dataset.

    Requirements: at least two areas; identical k and s across areas; finite
    values; each D_i symmetric positive definite (scale-relative eigenvalue
    test); the stacked (m*k) x s covariate matrix has full column rank s.
    Raises DimensionMismatch, NonPositiveDefiniteD, or RankDeficientX.
    """
    if len(areas) < 2:
        raise ValidationError(f"need at least 2 areas, got {len(areas)}")

    first = areas[0]
    y0 = np.asarray(first.y, dtype=float)
    if y0.ndim != 1 or y0.shape[0] < 1:
        raise DimensionMismatch(f"area {first.area_id!r}: y must be a nonempty vector")
    k = y0.shape[0]
    X0 = np.asarray(first.X, dtype=float)
    if X0.ndim != 2 or X0.shape[0] != k:
        raise DimensionMismatch(f"area {first.area_id!r}: X must have shape (k, s)")
    s = X0.shape[1]

    seen: set[str] = set()
    checked: list[AreaRecord] = []
    for rec in areas:
        if rec.area_id in seen:
            raise ValidationError(f"duplicate area id {rec.area_id!r}")
        seen.add(rec.area_id)

        y = np.asarray(rec.y, dtype=float)
        X = np.asarray(rec.X, dtype=float)
        D = np.asarray(rec.D, dtype=float)
        if y.shape != (k,):
            raise DimensionMismatch(f"area {rec.area_id!r}: y has shape {y.shape}, expected ({k},)")
        if X.shape != (k, s):
            raise DimensionMismatch(
                f"area {rec.area_id!r}: X has shape {X.shape}, expected ({k}, {s})"
            )
        if D.shape != (k, k):
            raise DimensionMismatch(f"area {rec.area_id!r}: D has shape {D.shape}, expected ({k}, {k})")
        if not (np.isfinite(y).all() and np.isfinite(X).all() and np.isfinite(D).all()):
            raise ValidationError(f"area {rec.area_id!r}: non-finite values in inputs")
        try:
            D = check_symmetric(D, name=f"D[{rec.area_id}]")
        except ValidationError as exc:
            raise NonPositiveDefiniteD(rec.area_id, detail=str(exc)) from None
        if not is_positive_definite(D):
            raise NonPositiveDefiniteD(rec.area_id)
        checked.append(AreaRecord(str(rec.area_id), _frozen(y), _frozen(X), _frozen(D)))

    if s > 0:
        stacked = np.vstack([rec.X for rec in checked])  # (m*k, s)
        if np.linalg.matrix_rank(stacked) < s:
            raise RankDeficientX(
                f"stacked covariate matrix ({stacked.shape[0]} x {s}) has rank "
                f"{np.linalg.matrix_rank(stacked)} < {s}"
            )

    return Dataset(areas=tuple(checked), k=k, s=s)


def marginal_covariance(params: ModelParams, record: AreaRecord) -> np.ndarray:
    """Marginal covariance of y_i under the model: Psi + D_i."""
    Psi = np.asarray(params.Psi, dtype=float)
    if Psi.shape != record.D.shape:
        raise DimensionMismatch(f"Psi has shape {Psi.shape}, expected {record.D.shape}")
    return Psi + record.D
