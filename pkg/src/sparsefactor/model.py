"""Factor-model parameters, synthetic truths and assumption checks."""
import math
from dataclasses import dataclass

import numpy as np

from .distributions import RngHandle, as_generator, sample_factor_mvn
from .matlin import LowRankPlusScalar


@dataclass(frozen=True)
class FactorModelParams:
    loadings: np.ndarray
    sigma2: float

    def __post_init__(self):
        lam = np.asarray(self.loadings, dtype=float)
        if lam.ndim != 2:
            raise ValueError("loadings must be a p x k matrix")
        p, k = lam.shape
        if not (p >= k >= 1):
            raise ValueError(f"need p >= k >= 1, got p={p}, k={k}")
        if not np.all(np.isfinite(lam)):
            raise ValueError("loadings must be finite")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError("sigma2 must be finite and > 0")
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def p(self):
        return self.loadings.shape[0]

    @property
    def k(self):
        return self.loadings.shape[1]


@dataclass(frozen=True)
class TruthSpec:
    """Sparse spike-and-normal truth: each loading is N(0,1) w.p. s/p, else exactly 0.

    Draws are retried until ||L'L/s - I|| <= a3_constant * sqrt(k/p).
    """

    p: int
    k: int
    s: int
    sigma2_true: float = 1.0
    seed: int = 0
    sigma2_bounds: tuple = (0.01, 10.0)
    a3_constant: float = 3.0
    max_retries: int = 20

    def __post_init__(self):
        if not (self.p >= self.k >= 1):
            raise ValueError(f"need p >= k >= 1, got p={self.p}, k={self.k}")
        if not (1 <= self.s <= self.p):
            raise ValueError(f"need 1 <= s <= p, got s={self.s}")
        lo, hi = self.sigma2_bounds
        if not (0 < lo <= self.sigma2_true <= hi):
            raise ValueError(f"sigma2_true={self.sigma2_true} outside [{lo}, {hi}]")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


def check_a3(loadings, c):
    """||L'L / c - I_k||_2."""
    if not c > 0:
        raise ValueError("c must be > 0")
    lam = np.asarray(loadings, dtype=float)
    dev = lam.T @ lam / c - np.eye(lam.shape[1])
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (dev + dev.T)))))


def draw_sparse_loadings(p, k, s, rng):
    """One unconditioned draw from the spike-and-normal mixture with inclusion rate s/p."""
    gen = as_generator(rng)
    mask = gen.random((p, k)) < s / p
    return np.where(mask, gen.standard_normal((p, k)), 0.0)


def generate_truth(spec):
    """Return (FactorModelParams, c_n) with c_n = s, retrying until the A3 deviation bound holds."""
    gen = RngHandle(spec.seed).generator
    bound = spec.a3_constant * math.sqrt(spec.k / spec.p)
    best = np.inf
    for _ in range(spec.max_retries):
        lam = draw_sparse_loadings(spec.p, spec.k, spec.s, gen)
        dev = check_a3(lam, spec.s)
        best = min(best, dev)
        if dev <= bound:
            return FactorModelParams(lam, spec.sigma2_true), float(spec.s)
    raise RuntimeError(
        f"A3 deviation bound {bound:.4g} not met after {spec.max_retries} draws "
        f"(best achieved {best:.4g})"
    )


def frobenius_truth(p, k, sigma2, n, seed, sigma2_upper=10.0):
    """Dense N(0,1) truth for the Frobenius regime; sigma2 must lie in [1/log n, sigma2_upper]."""
    if n < 3:
        raise ValueError("n must be >= 3 so that 1/log n is a usable lower bound")
    lo = 1.0 / math.log(n)
    if not (lo <= sigma2 <= sigma2_upper):
        raise ValueError(f"sigma2={sigma2} outside [{lo:.4g}, {sigma2_upper}]")
    gen = RngHandle(seed).generator
    return FactorModelParams(gen.standard_normal((p, k)), sigma2)


def assemble_cov(params):
    return LowRankPlusScalar(params.loadings, params.sigma2)


def simulate_dataset(params, n, rng):
    return sample_factor_mvn(params, n, rng)


def orthogonal_sparse_loadings(p, k, s, c, rng):
    """Sparse p x k loadings with disjoint column supports of size s and L'L = c I exactly."""
    if s * k > p:
        raise ValueError("need s * k <= p for disjoint supports")
    if not c > 0:
        raise ValueError("c must be > 0")
    gen = as_generator(rng)
    rows = gen.permutation(p)[: s * k].reshape(k, s)
    lam = np.zeros((p, k))
    for col in range(k):
        vals = gen.standard_normal(s)
        lam[rows[col], col] = vals * math.sqrt(c) / np.linalg.norm(vals)
    return lam
