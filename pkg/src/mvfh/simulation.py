"""Monte Carlo harness for the grouped simulation designs.

Areas come in five equal groups sharing a scalar sampling variance, the
covariates are identity matrices, and the true coefficients are zero, so
the target reduces to the random effect itself. All replication math is
vectorized over fixed-size blocks of replications; a block is the unit of
parallel work, and every replication draws from its own counter-based
stream, so results are bit-identical for any worker count.

The closed forms used here (OLS as the area mean, the moment-estimator
bias as -(Psi + mean D)/m, grouped GLS sums) are exact consequences of the
identity covariates; a cross-check against the general per-dataset code
path lives in the test suite.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import AreaRecord, Dataset, symmetrize, validate_dataset

N_GROUPS = 5
GROUP_LABELS = tuple(f"G{t + 1}" for t in range(N_GROUPS))

# Scalar sampling variances by group, smallest areas first.
D_PATTERNS = {
    "a": (0.7, 0.6, 0.5, 0.4, 0.3),
    "b": (2.0, 0.6, 0.5, 0.4, 0.2),
}

# Default scale vectors psi for the effect covariance; see psi_matrix.
DEFAULT_PSI_SCALE = {
    2: (math.sqrt(1.5), math.sqrt(0.5)),
    3: (math.sqrt(1.5), 1.0, math.sqrt(0.5)),
}

PREDICTORS = ("direct", "eblup_pr0", "eblup_pr1", "univariate")

# Replications per work unit. Fixed: partial sums are reduced in block
# order, so changing the worker count cannot change the result.
BLOCK_SIZE = 1000

# Entries of the true MSEM smaller than this are reported as not
# applicable in relative-bias tables instead of being divided by.
NEAR_ZERO_MSEM = 1e-6


def psi_matrix(rho: float, scale: tuple[float, ...]) -> np.ndarray:
    """Effect covariance with common correlation rho and variances scale**2.

    rho * psi psi' + (1 - rho) * diag(psi psi') for psi = scale. Raises if
    the result is not PSD (possible for negative rho and k > 2).
    """
    psi = np.asarray(scale, dtype=float)
    P = rho * np.outer(psi, psi) + (1.0 - rho) * np.diag(psi**2)
    w = np.linalg.eigvalsh(P)
    if w[0] < -1e-12 * max(1.0, float(w[-1])):
        raise ValidationError(f"effect covariance not PSD for rho={rho} (min eigenvalue {w[0]:.3e})")
    return P


@dataclass(frozen=True)
class SimulationDesign:
    """A grouped design: m areas in 5 equal groups, identity covariates, beta = 0."""

    k: int
    m: int
    rho: float
    d_pattern: str
    reps: int
    seed: int
    psi_scale: tuple[float, ...] | None = None

    def validate(self) -> None:
        if self.d_pattern not in D_PATTERNS:
            raise ValidationError(f"unknown D pattern {self.d_pattern!r}, expected one of ('a', 'b')")
        if self.m < N_GROUPS or self.m % N_GROUPS != 0:
            raise ValidationError(f"m must be a positive multiple of {N_GROUPS}, got {self.m}")
        if self.reps < 1:
            raise ValidationError(f"reps must be positive, got {self.reps}")
        scale = self.scale
        if len(scale) != self.k:
            raise ValidationError(f"psi_scale has length {len(scale)}, expected k={self.k}")
        self.psi_true  # PSD check happens inside psi_matrix

    @property
    def scale(self) -> tuple[float, ...]:
        if self.psi_scale is not None:
            return self.psi_scale
        try:
            return DEFAULT_PSI_SCALE[self.k]
        except KeyError:
            raise ValidationError(f"no default psi scale for k={self.k}; pass psi_scale") from None

    @property
    def psi_true(self) -> np.ndarray:
        return psi_matrix(self.rho, self.scale)

    @property
    def group_size(self) -> int:
        return self.m // N_GROUPS

    @property
    def d_values(self) -> np.ndarray:
        """(m,) scalar sampling variances, group by group."""
        return np.repeat(D_PATTERNS[self.d_pattern], self.group_size).astype(float)


def _psi_factor(Psi: np.ndarray) -> np.ndarray:
    """A square root L with L L' = Psi that tolerates singular Psi."""
    w, H = np.linalg.eigh(Psi)
    return H * np.sqrt(np.clip(w, 0.0, None))


def replication_rng(seed: int, r: int) -> np.random.Generator:
    """Counter-based stream for replication r; independent of execution order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(r,))))


def _draw(design: SimulationDesign, r: int, L: np.ndarray, sqrt_d: np.ndarray):
    """One replication's effects and observations. Draw order is fixed."""
    z = replication_rng(design.seed, r).standard_normal((2, design.m, design.k))
    v = z[0] @ L.T
    y = v + z[1] * sqrt_d[:, None]
    return v, y


def generate_replication(design: SimulationDesign, r: int) -> tuple[Dataset, np.ndarray]:
    """Materialize replication r as a validated Dataset plus its true targets.

    Identity covariates and D_i = d_i I; the returned theta is the (m, k)
    matrix of true area parameters (equal to the effects since beta = 0).
    """
    design.validate()
    L = _psi_factor(design.psi_true)
    d = design.d_values
    v, y = _draw(design, r, L, np.sqrt(d))
    eye = np.eye(design.k)
    areas = [
        AreaRecord(f"area_{i + 1:03d}", y[i], eye.copy(), d[i] * eye)
        for i in range(design.m)
    ]
    return validate_dataset(areas), v


def _run_block(design: SimulationDesign, lo: int, hi: int, estimate_variant: str | None) -> dict:
    """Accumulators for replications lo..hi-1. Pure function of its arguments."""
    m, k = design.m, design.k
    n = design.group_size
    d = design.d_values
    d5 = np.asarray(D_PATTERNS[design.d_pattern], dtype=float)
    dbar = float(np.mean(d))
    Psi = design.psi_true
    L = _psi_factor(Psi)
    sqrt_d = np.sqrt(d)
    eye = np.eye(k)
    B = hi - lo

    z = np.empty((B, 2, m, k))
    for r in range(lo, hi):
        z[r - lo] = replication_rng(design.seed, r).standard_normal((2, m, k))
    theta = z[:, 0] @ L.T
    y = theta + z[:, 1] * sqrt_d[None, :, None]

    # OLS with identity covariates is the across-area mean.
    ybar = y.mean(axis=1)
    resid = y - ybar[:, None, :]
    psi0 = np.einsum("bmi,bmj->bij", resid, resid) / m - dbar * eye
    # Exact bias of psi0 here is -(psi0 + dbar I)/m, so the correction is affine.
    psi1 = (1.0 + 1.0 / m) * psi0 + (dbar / m) * eye

    def project(raw):
        w, H = np.linalg.eigh(raw)
        proj = np.einsum("bik,bk,bjk->bij", H, np.clip(w, 0.0, None), H)
        return 0.5 * (proj + proj.transpose(0, 2, 1)), int(np.count_nonzero((w < 0.0).any(axis=1)))

    psi0p, trunc0 = project(psi0)
    psi1p, trunc1 = project(psi1)

    def grouped_eblup(P):
        """theta_hat for the EBLUP at per-rep covariance P, plus GLS pieces."""
        Vg = P[:, None, :, :] + d5[None, :, None, None] * eye  # (B, 5, k, k)
        iVg = np.linalg.inv(Vg)
        info = n * iVg.sum(axis=1)
        sy = y.reshape(B, N_GROUPS, n, k).sum(axis=2)
        rhs = np.einsum("btij,btj->bi", iVg, sy)
        beta = np.linalg.solve(info, rhs[:, :, None])[:, :, 0]
        shrink = np.repeat(d5[None, :, None, None] * iVg, n, axis=1)  # (B, m, k, k)
        th = y - np.einsum("bmij,bmj->bmi", shrink, y - beta[:, None, :])
        return th, Vg, iVg, info

    out: dict = {"count": B, "trunc0": trunc0, "trunc1": trunc1}

    th0, Vg0, iVg0, info0 = grouped_eblup(psi0p)
    th1, _, iVg1, info1 = grouped_eblup(psi1p)

    # Coordinate-wise scalar predictor on the same draws.
    psiu = np.clip(np.mean(resid**2, axis=1) - dbar, 0.0, None)  # (B, k)
    wu = 1.0 / (psiu[:, None, :] + d[None, :, None])
    betau = (wu * y).sum(axis=1) / wu.sum(axis=1)
    thu = y - (d[None, :, None] * wu) * (y - betau[:, None, :])

    errors = {
        "direct": y - theta,
        "eblup_pr0": th0 - theta,
        "eblup_pr1": th1 - theta,
        "univariate": thu - theta,
    }
    for name, err in errors.items():
        out[f"err2_{name}"] = np.einsum("bmi,bmj->mij", err, err)

    out["psi0_sum"] = psi0.sum(axis=0)
    out["psi1_sum"] = psi1.sum(axis=0)
    out["frob0"] = np.sqrt(((psi0 - Psi) ** 2).sum(axis=(1, 2)))

    if estimate_variant is not None:
        if estimate_variant == "PR0":
            P, Vg, iVg, info = psi0p, Vg0, iVg0, info0
        else:
            P, iVg, info = psi1p, iVg1, info1
            Vg = P[:, None, :, :] + d5[None, :, None, None] * eye
        info_inv = np.linalg.inv(info)
        est_sum = np.empty((N_GROUPS, k, k))
        for t in range(N_GROUPS):
            iV = iVg[:, t]
            dt = d5[t]
            G1 = P @ iV * dt
            G2 = dt * dt * iV @ info_inv @ iV
            S = np.zeros((B, k, k))
            for tp in range(N_GROUPS):
                VA = Vg[:, tp] @ iV
                S += n * (VA @ Vg[:, tp] + np.trace(VA, axis1=1, axis2=2)[:, None, None] * Vg[:, tp])
            G3 = (dt * dt / m**2) * (iV @ S @ iV)
            total = G1 + G2 + 2.0 * G3
            if estimate_variant == "PR0":
                # Bias at identity covariates is -(P + dbar I)/m, so G4 adds back.
                total = total + (dt * dt / m) * (iV @ (P + dbar * eye) @ iV)
            est_sum[t] = total.sum(axis=0)
        out["est_sum"] = est_sum

    return out


@dataclass(frozen=True)
class SimulationResult:
    """Reduced accumulators of one design run.

    per_area_msem maps predictor name to the (m, k, k) empirical MSEM;
    group_msem averages it within each of the 5 groups. estimate_group_mean
    is the mean second-order MSEM estimate per group (None when estimate
    collection was off). psi0_mean/psi1_mean average the raw moment
    estimates, psi0_frob holds per-replication Frobenius errors of the raw
    basic estimate, and truncation counts say in how many replications the
    PSD projection actually clipped something.
    """

    design: SimulationDesign
    per_area_msem: dict[str, np.ndarray]
    group_msem: dict[str, np.ndarray]
    estimate_group_mean: np.ndarray | None
    estimate_variant: str | None
    psi0_mean: np.ndarray
    psi1_mean: np.ndarray
    psi0_frob: np.ndarray
    truncated_pr0: int
    truncated_pr1: int


def _group_average(per_area: np.ndarray, n: int) -> np.ndarray:
    return per_area.reshape(N_GROUPS, n, *per_area.shape[1:]).mean(axis=1)


def run_design(
    design: SimulationDesign,
    workers: int = 1,
    estimate_variant: str | None = "PR0",
) -> SimulationResult:
    """Run all replications of a design and reduce the accumulators.

    Blocks of BLOCK_SIZE replications are computed independently (optionally
    in worker processes) and combined in block order, so the result depends
    only on the design, not on scheduling.
    """
    design.validate()
    if estimate_variant not in (None, "PR0", "PR1"):
        raise ValidationError(f"unknown estimate variant {estimate_variant!r}")
    R = design.reps
    bounds = [(lo, min(lo + BLOCK_SIZE, R)) for lo in range(0, R, BLOCK_SIZE)]

    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(bounds))) as pool:
            futures = [pool.submit(_run_block, design, lo, hi, estimate_variant) for lo, hi in bounds]
            partials = [f.result() for f in futures]
    else:
        partials = [_run_block(design, lo, hi, estimate_variant) for lo, hi in bounds]

    total: dict = {}
    frob = []
    for part in partials:  # futures list preserves block order
        frob.append(part.pop("frob0"))
        for key, val in part.items():
            total[key] = total.get(key, 0) + val

    n = design.group_size
    per_area = {
        name: np.stack([symmetrize(a) for a in total[f"err2_{name}"] / R])
        for name in PREDICTORS
    }
    group = {name: _group_average(arr, n) for name, arr in per_area.items()}
    est_mean = None
    if estimate_variant is not None:
        est_mean = np.stack([symmetrize(a) for a in total["est_sum"] / R])
    return SimulationResult(
        design=design,
        per_area_msem=per_area,
        group_msem=group,
        estimate_group_mean=est_mean,
        estimate_variant=estimate_variant,
        psi0_mean=symmetrize(total["psi0_sum"] / R),
        psi1_mean=symmetrize(total["psi1_sum"] / R),
        psi0_frob=np.concatenate(frob),
        truncated_pr0=int(total["trunc0"]),
        truncated_pr1=int(total["trunc1"]),
    )


@dataclass(frozen=True)
class PrialReport:
    """Percentage improvement in average (trace) loss per group.

    PRIAL of predictor p over baseline q in group g is
    100 * (1 - sum trace MSEM_p / sum trace MSEM_q) over the areas of g.
    """

    vs_direct: np.ndarray  # (5,)
    vs_univariate: np.ndarray  # (5,)
    predictor: str


def prial_from_result(result: SimulationResult, predictor: str = "eblup_pr0") -> PrialReport:
    """PRIAL tables computed from a finished run; all predictors share draws."""
    n = result.design.group_size
    traces = {
        name: _group_average(np.trace(arr, axis1=1, axis2=2), n)
        for name, arr in result.per_area_msem.items()
    }

    def against(base):
        return 100.0 * (1.0 - traces[predictor] / traces[base])

    return PrialReport(
        vs_direct=against("direct"),
        vs_univariate=against("univariate"),
        predictor=predictor,
    )


@dataclass(frozen=True)
class RelativeBiasReport:
    """Entrywise percent bias of the MSEM estimator against the simulated truth.

    Entries whose true MSEM magnitude falls below NEAR_ZERO_MSEM are NaN
    with not_applicable set; the normalization is meaningless there.
    """

    percent: np.ndarray  # (5, k, k)
    not_applicable: np.ndarray  # (5, k, k) bool
    variant: str


def relative_bias_from_result(result: SimulationResult) -> RelativeBiasReport:
    if result.estimate_group_mean is None:
        raise ValidationError("run did not collect MSEM estimates")
    predictor = "eblup_pr0" if result.estimate_variant == "PR0" else "eblup_pr1"
    truth = result.group_msem[predictor]
    na = np.abs(truth) < NEAR_ZERO_MSEM
    with np.errstate(divide="ignore", invalid="ignore"):
        percent = 100.0 * (result.estimate_group_mean - truth) / truth
    percent = np.where(na, np.nan, percent)
    return RelativeBiasReport(percent=percent, not_applicable=na, variant=result.estimate_variant)


def simulate_msem(design: SimulationDesign, predictor: str = "eblup_pr0", workers: int = 1):
    """Empirical MSEM of one predictor: (per_area, per_group) arrays."""
    if predictor not in PREDICTORS:
        raise ValidationError(f"unknown predictor {predictor!r}, expected one of {PREDICTORS}")
    result = run_design(design, workers=workers, estimate_variant=None)
    return result.per_area_msem[predictor], result.group_msem[predictor]


def prial(design: SimulationDesign, workers: int = 1) -> PrialReport:
    """PRIAL of the multivariate EBLUP over the direct and coordinate-wise baselines."""
    result = run_design(design, workers=workers, estimate_variant=None)
    return prial_from_result(result)


def msem_estimator_bias(design: SimulationDesign, variant: str = "PR0", workers: int = 1) -> RelativeBiasReport:
    """Relative bias of the second-order MSEM estimator under a design."""
    result = run_design(design, workers=workers, estimate_variant=variant)
    return relative_bias_from_result(result)
