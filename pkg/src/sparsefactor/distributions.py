"""Seeded samplers for the laws used by the priors and the Gibbs conditionals.

All samplers take a ``numpy.random.Generator`` (or an :class:`RngHandle`)
and never touch global RNG state.
"""
import numpy as np
from scipy import special as sp


class RngHandle:
    """A (seed, stream) pair that deterministically names a PCG64 stream.

    ``split(*keys)`` appends keys to the stream path, so children are
    reproducible regardless of the order in which they are created.
    """

    def __init__(self, seed, stream=()):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self.stream = tuple(int(s) for s in stream)
        self._gen = None

    def split(self, *keys):
        return RngHandle(self.seed, self.stream + tuple(keys))

    def derive_int(self):
        """A 63-bit integer seed determined by (seed, stream), for APIs that take plain ints."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))

    @property
    def generator(self):
        if self._gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def __repr__(self):
        return f"RngHandle(seed={self.seed}, stream={self.stream})"


def as_generator(rng):
    if isinstance(rng, RngHandle):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected a Generator or RngHandle, got {type(rng).__name__}")


def _positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{name} must be finite and > 0")
    return arr


def sample_de(scale, rng, size=None):
    """Laplace (double-exponential) draws, density exp(-|x|/scale) / (2 scale)."""
    scale = _positive("scale", scale)
    return as_generator(rng).laplace(0.0, scale, size=size)


def sample_gamma(shape, rate, rng, size=None):
    shape = _positive("shape", shape)
    rate = _positive("rate", rate)
    return as_generator(rng).gamma(shape, 1.0 / rate, size=size)


def sample_beta(a, b, rng, size=None):
    a = _positive("a", a)
    b = _positive("b", b)
    return as_generator(rng).beta(a, b, size=size)


def log_gamma_small_shape(shape, rng, size=None):
    """log of Gamma(shape, 1) draws; stays finite for shapes far below 1.

    Uses G(a) = G(a+1) * U^(1/a), evaluated on the log scale.
    """
    gen = as_generator(rng)
    shape = _positive("shape", shape)
    out_shape = np.broadcast(shape, np.empty(size if size is not None else ())).shape
    g = gen.standard_gamma(shape + 1.0, size=out_shape)
    u = gen.random(size=out_shape)
    return np.log(g) + np.log1p(-u) / shape


def sample_dirichlet(alphas, rng, size=None, log=False):
    """Dirichlet draws along the last axis.

    With ``log=True`` the log-coordinates are returned; they remain finite
    when tiny concentrations push coordinates below the double range.
    """
    alphas = _positive("alphas", alphas)
    if alphas.ndim != 1 or alphas.size < 1:
        raise ValueError("alphas must be a non-empty 1-d sequence")
    shape = (alphas.size,) if size is None else tuple(np.atleast_1d(size)) + (alphas.size,)
    lg = log_gamma_small_shape(alphas, rng, size=shape)
    lg = lg - sp.logsumexp(lg, axis=-1, keepdims=True)
    if log:
        return lg
    x = np.exp(lg)
    return x / np.sum(x, axis=-1, keepdims=True)


def sample_invgamma(a, b, rng, size=None, truncation=None):
    """Inverse-gamma draws with shape ``a`` and scale ``b``, optionally truncated to [lo, hi].

    Truncation uses rejection when the interval carries more than 10% of the
    mass and inverse-CDF on the reciprocal's regularized incomplete gamma
    otherwise.
    """
    a = float(_positive("a", a))
    b = float(_positive("b", b))
    gen = as_generator(rng)
    if truncation is None:
        return b / gen.standard_gamma(a, size=size)
    lo, hi = float(truncation[0]), float(truncation[1])
    if not (lo >= 0 and hi > lo):
        raise ValueError(f"invalid truncation interval [{lo}, {hi}]")
    # tau in [lo, hi]  <=>  b / tau in [b / hi, b / lo] for the Gamma(a, 1) reciprocal
    zlo = b / hi if np.isfinite(hi) else 0.0
    zhi = b / lo if lo > 0 else np.inf
    cdf_lo, cdf_hi = sp.gammainc(a, zlo), sp.gammainc(a, zhi)
    sf_lo, sf_hi = sp.gammaincc(a, zlo), sp.gammaincc(a, zhi)
    mass = max(cdf_hi - cdf_lo, sf_lo - sf_hi)
    if not mass >= 1e-300:
        raise ValueError(f"truncation [{lo}, {hi}] carries no mass under IG({a}, {b})")
    n = 1 if size is None else int(np.prod(size))
    if mass > 0.1:
        out = np.empty(0)
        while out.size < n:
            draw = b / gen.standard_gamma(a, size=max(2 * (n - out.size), 16))
            out = np.concatenate([out, draw[(draw >= lo) & (draw <= hi)]])
        out = out[:n]
    else:
        u = gen.random(n)
        if cdf_hi < 0.5:
            z = sp.gammaincinv(a, cdf_lo + u * (cdf_hi - cdf_lo))
        else:
            z = sp.gammainccinv(a, sf_hi + u * (sf_lo - sf_hi))
        z = np.clip(z, zlo, zhi)
        with np.errstate(divide="ignore"):
            out = np.clip(b / z, lo, hi)
    return float(out[0]) if size is None else out.reshape(size)


def _gig_standard_log(lam, omega, gen):
    """log of draws with density prop. to x^(lam-1) exp(-omega (x + 1/x) / 2), lam >= 0, omega > 0.

    Rejection from a three-piece envelope (flat center, exponential tails)
    on the log scale around the mode, following Devroye's construction.
    """
    lam = np.asarray(lam, dtype=float)
    omega = np.asarray(omega, dtype=float)
    alpha = omega**2 / (np.sqrt(lam**2 + omega**2) + lam)

    def psi(x):
        return -alpha * (np.cosh(x) - 1.0) - lam * np.expm1(x) + lam * x

    def dpsi(x):
        return -alpha * np.sinh(x) - lam * np.expm1(x)

    m1 = -psi(1.0)
    t = np.where(
        m1 > 2.0,
        np.sqrt(2.0 / (alpha + lam)),
        np.where(m1 < 0.5, np.log(4.0 / (alpha + 2.0 * lam)), 1.0),
    )
    m2 = -psi(-1.0)
    with np.errstate(divide="ignore"):
        inv_lam = np.where(lam > 0, 1.0 / np.where(lam > 0, lam, 1.0), np.inf)
        left_small = np.minimum(inv_lam, np.log1p(1.0 / alpha + np.sqrt(1.0 / alpha**2 + 2.0 / alpha)))
    s = np.where(
        m2 > 2.0,
        np.sqrt(4.0 / (alpha * np.cosh(1.0) + lam)),
        np.where(m2 < 0.5, left_small, 1.0),
    )
    eta, zeta = -psi(t), -dpsi(t)
    theta, xi = -psi(-s), dpsi(-s)
    p, r = 1.0 / xi, 1.0 / zeta
    td = t - r * eta
    sd = s - p * theta
    q = td + sd

    out = np.empty(lam.shape)
    todo = np.arange(lam.size)
    flat = [a.ravel() for a in (p, q, r, td, sd, t, s, eta, zeta, theta, xi, alpha, lam)]
    while todo.size:
        p_, q_, r_, td_, sd_, t_, s_, eta_, zeta_, th_, xi_, al_, lam_ = (a[todo] for a in flat)
        u, v, w = gen.random((3, todo.size))
        tot = p_ + q_ + r_
        mid = u < q_ / tot
        right = (~mid) & (u < (q_ + r_) / tot)
        with np.errstate(divide="ignore"):
            x = np.where(mid, -sd_ + q_ * v, np.where(right, td_ - r_ * np.log(v), -sd_ + p_ * np.log(v)))
        env = np.where(
            x > td_, -eta_ - zeta_ * (x - t_), np.where(x < -sd_, -th_ + xi_ * (x + s_), 0.0)
        )
        with np.errstate(over="ignore", invalid="ignore"):
            target = -al_ * (np.cosh(x) - 1.0) - lam_ * (np.expm1(x) - x)
            accept = np.log(w) + env <= target
        accept &= np.isfinite(x)
        out.flat[todo[accept]] = x[accept]
        todo = todo[~accept]
    # shift back by the log-mode asinh(lam / omega), written to survive tiny omega
    with np.errstate(divide="ignore"):
        ratio = omega / np.where(lam > 0, lam, 1.0)
        log_mode = np.where(lam > 0, np.log(lam) - np.log(omega) + np.log1p(np.sqrt(1.0 + ratio**2)), 0.0)
    return out + log_mode


def sample_gig(index, chi, psi, rng, size=None, log=False):
    """Generalized inverse-Gaussian draws, density prop. to x^(index-1) exp(-(chi/x + psi x)/2).

    Parameters broadcast against each other and ``size``. The boundary cases
    chi = 0 (gamma) and psi = 0 (inverse gamma) are sampled directly.
    """
    gen = as_generator(rng)
    index, chi, psi = (np.asarray(v, dtype=float) for v in (index, chi, psi))
    shape = np.broadcast_shapes(index.shape, chi.shape, psi.shape, () if size is None else tuple(np.atleast_1d(size)))
    index, chi, psi = (np.broadcast_to(v, shape).ravel() for v in (index, chi, psi))
    if not (np.all(np.isfinite(index)) and np.all(np.isfinite(chi)) and np.all(np.isfinite(psi))):
        raise ValueError("giG parameters must be finite")
    if np.any(chi < 0) or np.any(psi < 0):
        raise ValueError("giG needs chi >= 0 and psi >= 0")
    if np.any((chi == 0) & (index <= 0)) or np.any((psi == 0) & (index >= 0)):
        raise ValueError("giG parameters define an improper law")
    out = np.empty(index.size)
    gam = chi == 0
    if np.any(gam):
        out[gam] = np.log(gen.standard_gamma(index[gam])) - np.log(psi[gam] / 2.0)
    ig = psi == 0
    if np.any(ig):
        out[ig] = np.log(chi[ig] / 2.0) - np.log(gen.standard_gamma(-index[ig]))
    gen_case = ~(gam | ig)
    if np.any(gen_case):
        lam, c, s = index[gen_case], chi[gen_case], psi[gen_case]
        omega = np.sqrt(c * s)
        logx = _gig_standard_log(np.abs(lam), omega, gen)
        logx = np.where(lam < 0, -logx, logx)
        out[gen_case] = logx + 0.5 * (np.log(c) - np.log(s))
    out = out.reshape(shape)
    if not log:
        out = np.exp(out)
    return out if out.ndim else float(out)


def sample_invgauss(mean, shape, rng, size=None):
    """Inverse-Gaussian (Wald) draws with the given mean and shape."""
    mean = _positive("mean", mean)
    shape = _positive("shape", shape)
    return as_generator(rng).wald(mean, shape, size=size)


def sample_factor_mvn(params, n, rng):
    """n rows of y = L eta + sigma z, eta ~ N(0, I_k), z ~ N(0, I_p); O(npk), no p x p storage.

    ``params`` needs ``loadings`` and either ``sigma2`` or ``scalar``.
    """
    n = int(n)
    if n < 0:
        raise ValueError("n must be >= 0")
    gen = as_generator(rng)
    lam = np.asarray(params.loadings, dtype=float)
    sigma2 = float(getattr(params, "sigma2", getattr(params, "scalar", None)))
    p, k = lam.shape
    eta = gen.standard_normal((n, k))
    z = gen.standard_normal((n, p))
    return eta @ lam.T + np.sqrt(sigma2) * z
