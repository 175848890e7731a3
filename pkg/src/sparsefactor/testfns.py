"""Frobenius quadratic-form test, operator-norm projection test and an error-rate harness."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .distributions import RngHandle, sample_factor_mvn
from .matlin import LowRankPlusScalar, SpdMatrix, as_spd, lowrank_opnorm_diff, whitened_discrepancy

CSV_COLUMNS = ("n", "p", "k", "j", "regime", "type1", "type1_se", "type2", "type2_se", "seed")


@dataclass(frozen=True)
class FrobTestSpec:
    """Null Sigma0 against alternative Sigma1.

    The eigenvalue bounds are read off the matrices themselves:
    rho_lo = 1 / s_min and rho_hi = s_max, so s_min >= 1/rho_lo and
    s_max <= rho_hi hold with equality. The rejection slack defaults to
    alpha_n = beta_n / 2 with beta_n = 1 / (rho_lo0 * rho_hi1)^2.
    """

    sigma0: SpdMatrix
    sigma1: SpdMatrix
    alpha_n: float | None = None
    d_n: float = field(init=False)
    D_n: float = field(init=False)
    rho_hi0: float = field(init=False)
    rho_lo0: float = field(init=False)
    rho_hi1: float = field(init=False)
    rho_lo1: float = field(init=False)
    beta_n: float = field(init=False)
    contrast: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s0, s1 = as_spd(self.sigma0), as_spd(self.sigma1)
        if s0.dim != s1.dim:
            raise ValueError(f"dimension mismatch: {s0.dim} vs {s1.dim}")
        e0, e1 = s0.eigvalsh(), s1.eigvalsh()
        if e0[0] <= 0 or e1[0] <= 0:
            raise ValueError("covariances must be positive definite")
        d, big_d = whitened_discrepancy(s0, s1)
        beta = (e0[0] / e1[-1]) ** 2
        alpha = beta / 2.0 if self.alpha_n is None else float(self.alpha_n)
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha_n must lie in (0, 1), got {alpha}")
        contrast = s0.inverse() - s1.inverse()
        for name, val in (
            ("sigma0", s0), ("sigma1", s1), ("alpha_n", alpha), ("d_n", d), ("D_n", big_d),
            ("rho_hi0", float(e0[-1])), ("rho_lo0", float(1.0 / e0[0])),
            ("rho_hi1", float(e1[-1])), ("rho_lo1", float(1.0 / e1[0])),
            ("beta_n", float(beta)), ("contrast", 0.5 * (contrast + contrast.T)),
        ):
            object.__setattr__(self, name, val)

    @property
    def p(self):
        return self.sigma0.dim

    @property
    def cutoff(self):
        return -self.alpha_n * self.d_n**2


def frob_statistic(data, spec):
    """mean_i y_i'(S0^-1 - S1^-1)y_i - log|S1 S0^-1|."""
    y = np.asarray(data, dtype=float)
    if y.ndim != 2 or y.shape[1] != spec.p:
        raise ValueError(f"data must be n x {spec.p}")
    q = np.einsum("ij,ij->i", y @ spec.contrast, y)
    return float(np.mean(q) - spec.D_n)


def frob_test(data, spec):
    """Return (reject, statistic); reject iff statistic >= -alpha_n d_n^2."""
    stat = frob_statistic(data, spec)
    return stat >= spec.cutoff, stat


@dataclass(frozen=True)
class ProjTestSpec:
    """Projection test of Sigma0 = L0 L0' + s0 I.

    Data are projected to x_i = L0' y_i / c_n. The threshold j * eps / 2 uses
    eps = sqrt((log p)^2 / n_ref) at a reference sample size, so one spec
    can be held fixed while n varies.
    """

    loadings: np.ndarray
    c_n: float
    sigma2: float
    j: float = 8.0
    n_ref: int = 500

    def __post_init__(self):
        lam = np.asarray(self.loadings, dtype=float)
        if lam.ndim != 2 or lam.shape[1] > lam.shape[0]:
            raise ValueError("loadings must be p x k with k <= p")
        if not self.c_n > 0:
            raise ValueError("c_n must be > 0")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be > 0")
        if not (self.j > 0 and self.n_ref >= 2):
            raise ValueError("need j > 0 and n_ref >= 2")
        object.__setattr__(self, "loadings", lam)

    @property
    def p(self):
        return self.loadings.shape[0]

    @property
    def k(self):
        return self.loadings.shape[1]

    @property
    def eps_lower(self):
        return math.log(self.p) / math.sqrt(self.n_ref)

    @property
    def threshold(self):
        return self.j * self.eps_lower / 2.0

    @property
    def null(self):
        return LowRankPlusScalar(self.loadings, self.sigma2)


def projected_covariance(data, spec):
    """(1/c^2) L0' S_y L0 from the n x k projection; S_y is the uncentered sample covariance."""
    y = np.asarray(data, dtype=float)
    if y.ndim != 2 or y.shape[1] != spec.p:
        raise ValueError(f"data must be n x {spec.p}")
    x = y @ spec.loadings / spec.c_n
    return x.T @ x / y.shape[0]


def projection_statistic(data, spec):
    """||L0 Sx L0' - Sigma0||_2 through the low-rank kernel."""
    sx = projected_covariance(data, spec)
    w, v = np.linalg.eigh(0.5 * (sx + sx.T))
    root = spec.loadings @ (v * np.sqrt(np.maximum(w, 0.0)))
    return lowrank_opnorm_diff(LowRankPlusScalar(root, 0.0), spec.null)


def projection_test(data, spec):
    """Return (reject, statistic); reject iff statistic > threshold."""
    stat = projection_statistic(data, spec)
    return stat > spec.threshold, stat


@dataclass(frozen=True)
class ErrorRateCase:
    """One test with the covariances its data are simulated under.

    ``null`` and ``alternative`` are LowRankPlusScalar covariances, so data
    are drawn in O(npk) whichever test is applied.
    """

    regime: str  # "frobenius" or "projection"
    spec: object
    null: LowRankPlusScalar
    alternative: LowRankPlusScalar
    j: float

    def test(self, data):
        if self.regime == "frobenius":
            return frob_test(data, self.spec)[0]
        if self.regime == "projection":
            return projection_test(data, self.spec)[0]
        raise ValueError(f"unknown test regime {self.regime!r}")


def error_rate_curve(cases, n_grid, replicates, rng):
    """Monte Carlo type I and type II frequencies with binomial SEs per (case, n).

    ``rng`` is an RngHandle; case i at grid index g under hypothesis h uses
    stream (i, g, h). Rows follow CSV_COLUMNS.
    """
    if replicates < 100:
        raise ValueError("replicates must be >= 100")
    if not isinstance(rng, RngHandle):
        raise TypeError("rng must be an RngHandle so replicate streams can be split")
    rows = []
    for ci, case in enumerate(cases):
        for gi, n in enumerate(n_grid):
            counts = []
            for h, cov in enumerate((case.null, case.alternative)):
                gen = rng.split(ci, gi, h).generator
                rej = sum(bool(case.test(sample_factor_mvn(cov, n, gen))) for _ in range(replicates))
                counts.append(rej if h == 0 else replicates - rej)
            t1, t2 = (c / replicates for c in counts)
            rows.append({
                "n": int(n), "p": case.null.p, "k": case.null.k, "j": case.j, "regime": case.regime,
                "type1": t1, "type1_se": math.sqrt(t1 * (1 - t1) / replicates),
                "type2": t2, "type2_se": math.sqrt(t2 * (1 - t2) / replicates),
                "seed": rng.seed,
            })
    return rows


def log_error(row, replicates):
    """log of the pooled error frequency (type I + type II), continuity-corrected."""
    errors = round((row["type1"] + row["type2"]) * replicates)
    return math.log((errors + 0.5) / (2 * replicates + 1))


def log_error_trend(rows, replicates):
    """Least-squares slope of log pooled error against n, with its t statistic."""
    n = np.array([r["n"] for r in rows], dtype=float)
    y = np.array([log_error(r, replicates) for r in rows])
    fit = stats.linregress(n, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.float64(fit.slope) / fit.stderr
    return float(fit.slope), float(t)


def spiked_alternative(null, size):
    """Null plus size * u u' along the leading left singular vector of the null loadings.

    The perturbation stays inside the loadings' column span and has operator norm ``size``.
    """
    u = np.linalg.svd(null.loadings, full_matrices=False)[0][:, :1]
    return LowRankPlusScalar(np.hstack([null.loadings, math.sqrt(size) * u]), null.scalar)


def shifted_alternative(null, frob_size):
    """Null with the scalar part raised so that ||Sigma1 - Sigma0||_F = frob_size."""
    return LowRankPlusScalar(null.loadings, null.scalar + frob_size / math.sqrt(null.p))
