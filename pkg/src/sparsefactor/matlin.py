"""Dense symmetric linear algebra and the low-rank covariance kernels.

Dense eigenproblems go through LAPACK (``numpy.linalg.eigh``); a cyclic
Jacobi solver is kept here as an independent reference implementation.
"""
from dataclasses import dataclass

import numpy as np

# relative eigenvalue tolerance used by the Jacobi reference solver
EIG_RTOL = 1e-10

# Cholesky jitter policy: add JITTER_SCALE * trace/dim, at most JITTER_RETRIES times
JITTER_SCALE = 1e-12
JITTER_RETRIES = 3


def _finite_matrix(a, name="A"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def as_symmetric(a, name="A", atol=1e-12):
    """Validate a square symmetric matrix and return an exactly symmetric copy."""
    a = _finite_matrix(a, name)
    if a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"{name} must be square and non-empty, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > atol * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (a + a.T)


def jacobi_eigh(a, rtol=EIG_RTOL, max_sweeps=100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(w, V)`` with ascending eigenvalues and orthonormal columns.
    Sweeps stop once the off-diagonal mass is below ``rtol`` times the
    Frobenius norm (squared, so eigenvalues are accurate to about ``rtol``).
    """
    a = as_symmetric(a).copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = np.sum(a * a)
    for _ in range(max_sweeps):
        off = 2.0 * np.sum(np.triu(a, 1) ** 2)
        if off <= (rtol**2) * scale * 1e-4 or off == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.diag(a).copy()
    order = np.argsort(w)
    return w[order], v[:, order]


def operator_norm(a):
    """Largest absolute eigenvalue of a symmetric matrix."""
    a = as_symmetric(a)
    return float(np.max(np.abs(np.linalg.eigvalsh(a))))


def frobenius_norm(a):
    a = _finite_matrix(a)
    return float(np.sqrt(np.sum(a * a)))


def extreme_singular_values(a):
    """Return ``(s_min, s_max)``; for wide matrices s_min is the min(rows, cols)-th value."""
    a = _finite_matrix(a)
    s = np.linalg.svd(a, compute_uv=False)
    return float(s[-1]), float(s[0])


class SpdMatrix:
    """Symmetric positive-definite matrix with a cached lower Cholesky factor.

    Borderline inputs get up to ``JITTER_RETRIES`` diagonal jitters of
    ``JITTER_SCALE * trace / dim`` before construction fails.
    """

    def __init__(self, a):
        a = as_symmetric(a, "SPD matrix")
        self.dim = a.shape[0]
        self.jitter = 0.0
        step = JITTER_SCALE * np.trace(a) / self.dim
        for attempt in range(JITTER_RETRIES + 1):
            try:
                self.chol = np.linalg.cholesky(a + self.jitter * np.eye(self.dim))
                break
            except np.linalg.LinAlgError:
                if attempt == JITTER_RETRIES or not step > 0:
                    raise ValueError("matrix is not positive definite") from None
                self.jitter += step
        self.matrix = a + self.jitter * np.eye(self.dim) if self.jitter else a

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def solve(self, b):
        from scipy.linalg import cho_solve

        return cho_solve((self.chol, True), b)

    def inverse(self):
        return self.solve(np.eye(self.dim))

    def eigvalsh(self):
        return np.linalg.eigvalsh(self.matrix)


def as_spd(a):
    return a if isinstance(a, SpdMatrix) else SpdMatrix(a)


@dataclass(frozen=True)
class LowRankPlusScalar:
    """``loadings @ loadings.T + scalar * I`` kept in factored form."""

    loadings: np.ndarray
    scalar: float

    def __post_init__(self):
        lam = np.asarray(self.loadings, dtype=float)
        if lam.ndim == 1:
            lam = lam[:, None]
        if lam.ndim != 2 or lam.shape[1] > lam.shape[0]:
            raise ValueError(f"loadings must be p x k with k <= p, got {lam.shape}")
        if not np.all(np.isfinite(lam)) or not np.isfinite(self.scalar):
            raise ValueError("non-finite loadings or scalar")
        if self.scalar < 0:
            raise ValueError("scalar must be nonnegative")
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "scalar", float(self.scalar))

    @property
    def p(self):
        return self.loadings.shape[0]

    @property
    def k(self):
        return self.loadings.shape[1]

    def to_dense(self):
        lam = self.loadings
        return lam @ lam.T + self.scalar * np.eye(self.p)

    def matvec(self, x):
        return self.loadings @ (self.loadings.T @ x) + self.scalar * x


def _signed_gram_spectrum(m1, m2):
    """Eigenvalues of L1 L1' - L2 L2' restricted to span([L1, L2]), plus that span's rank."""
    if m1.p != m2.p:
        raise ValueError(f"dimension mismatch: {m1.p} vs {m2.p}")
    if m1.loadings.shape == m2.loadings.shape and np.array_equal(m1.loadings, m2.loadings):
        # identical low-rank parts cancel exactly; QR would leave rounding residue
        return np.zeros(m1.k), m1.k
    w = np.hstack([m1.loadings, m2.loadings])
    sign = np.concatenate([np.ones(m1.k), -np.ones(m2.k)])
    # w S w' = q (r S r') q' with q orthonormal, so the nonzero spectrum lives in r S r'
    _, r = np.linalg.qr(w, mode="reduced")
    core = (r * sign) @ r.T
    mu = np.linalg.eigvalsh(0.5 * (core + core.T))
    return mu, r.shape[0]


def lowrank_opnorm_diff(m1, m2):
    """Operator norm of ``(L1 L1' + s1 I) - (L2 L2' + s2 I)`` in O(p (k1+k2)^2)."""
    mu, rank = _signed_gram_spectrum(m1, m2)
    shift = m1.scalar - m2.scalar
    out = float(np.max(np.abs(mu + shift)))
    if rank < m1.p:
        out = max(out, abs(shift))
    return out


def lowrank_frob_diff(m1, m2):
    """Frobenius norm of the same difference, without forming p x p storage."""
    mu, _ = _signed_gram_spectrum(m1, m2)
    shift = m1.scalar - m2.scalar
    # the remaining p - rank eigenvalues all equal the shift
    total = np.sum((mu + shift) ** 2) + (m1.p - mu.size) * shift**2
    return float(np.sqrt(max(total, 0.0)))


def whitened_discrepancy(sigma0, sigma1):
    """Return ``(d, D)`` with d = ||S1^{1/2}(S0^{-1} - S1^{-1})S1^{1/2}||_F and D = log|S1 S0^{-1}|."""
    s0 = as_spd(sigma0)
    s1 = as_spd(sigma1)
    if s0.dim != s1.dim:
        raise ValueError(f"dimension mismatch: {s0.dim} vs {s1.dim}")
    l1 = s1.chol
    # L1' S0^{-1} L1 - I is similar to the symmetric square-root form, same spectrum
    m = l1.T @ s0.solve(l1) - np.eye(s0.dim)
    d = float(np.sqrt(np.sum(np.linalg.eigvalsh(0.5 * (m + m.T)) ** 2)))
    return d, s1.logdet() - s0.logdet()
