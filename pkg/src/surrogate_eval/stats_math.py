"""Numerical kernels shared by the estimators and the sampler.

Normal CDF and regularized incomplete beta come from ``scipy.special``
(Cephes); everything that needs log-space stability or a specific error
contract is written out here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

PD_TOL = 1e-10


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot falls below the tolerance."""

    def __init__(self, pivot: int, value: float, label: str = "matrix"):
        self.pivot = pivot
        self.value = value
        super().__init__(
            f"{label} is not positive definite: pivot {pivot} = {value:.3e}"
        )


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream) pair naming one reproducible random sequence.

    Streams are derived with ``numpy.random.SeedSequence`` spawn keys, so two
    streams that differ in any component are statistically independent and
    the sequence for a given pair is the same on every platform.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def child(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(int(k) for k in key))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return RngStream(seed, tuple(stream)).generator()


# ---------------------------------------------------------------------------
# Normal distribution
# ---------------------------------------------------------------------------


def std_normal_cdf(x):
    """Standard normal CDF, accurate to ~1e-16 absolute (Cephes ``ndtr``)."""
    return special.ndtr(x)


def std_normal_ppf(p):
    return special.ndtri(p)


# ---------------------------------------------------------------------------
# Incomplete beta
# ---------------------------------------------------------------------------


def _check_ab(a: float, b: float) -> None:
    if not (a > 0 and b > 0):
        raise ValueError(f"incomplete beta requires a, b > 0 (got a={a}, b={b})")


def _log_betacf(a: float, b: float, x: float, max_iter: int = 10_000) -> float:
    """Log of the continued fraction for I_x(a, b) (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return math.log(h)
    raise RuntimeError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def log_incomplete_beta_lower(a: float, b: float, x: float) -> float:
    """``log ∫_0^x v^(a-1) (1-v)^(b-1) dv`` without underflow."""
    _check_ab(a, b)
    if x <= 0.0:
        return -math.inf
    if x >= 1.0:
        return float(special.betaln(a, b))
    reg = float(special.betainc(a, b, x))
    if reg > 1e-200:
        return math.log(reg) + float(special.betaln(a, b))
    # Tiny lower tail means x sits well below the mode; the continued fraction
    # converges quickly there.
    return a * math.log(x) + b * math.log1p(-x) - math.log(a) + _log_betacf(a, b, x)


def log_incomplete_beta(a: float, b: float, lo: float, hi: float) -> float:
    """``log ∫_lo^hi v^(a-1) (1-v)^(b-1) dv``."""
    _check_ab(a, b)
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"need 0 <= lo <= hi <= 1 (got lo={lo}, hi={hi})")
    if lo == hi:
        return -math.inf
    if lo == 0.0:
        return log_incomplete_beta_lower(a, b, hi)
    if hi == 1.0:
        reg = float(special.betaincc(a, b, lo))
        if reg > 1e-200:
            return math.log(reg) + float(special.betaln(a, b))
        # lo is far into the right tail, so 1 - lo is exact enough to reflect
        return log_incomplete_beta_lower(b, a, 1.0 - lo)
    upper = log_incomplete_beta_lower(a, b, hi)
    lower = log_incomplete_beta_lower(a, b, lo)
    return upper + math.log1p(-math.exp(lower - upper))


def incomplete_beta(a: float, b: float, lo: float, hi: float) -> float:
    """Unregularized incomplete beta integral over ``[lo, hi]``.

    >>> incomplete_beta(2, 1, 0.5, 1)
    0.375
    """
    _check_ab(a, b)
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"need 0 <= lo <= hi <= 1 (got lo={lo}, hi={hi})")
    if lo == hi:
        return 0.0
    # Work on whichever side keeps both regularized tails small, so the
    # difference does not cancel.
    mid = a / (a + b)
    if hi <= mid or lo == 0.0:
        val = special.betainc(a, b, hi) - special.betainc(a, b, lo)
    else:
        val = special.betaincc(a, b, lo) - special.betaincc(a, b, hi)
    return float(val * special.beta(a, b))


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def cholesky(a, tol: float = PD_TOL, label: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor; raises ``NotPositiveDefiniteError`` naming the pivot.

    A pivot is rejected when it is below ``tol`` times the original diagonal
    entry, which keeps the check scale-free.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{label} must be square, got shape {a.shape}")
    k = a.shape[0]
    out = np.zeros_like(a)
    for j in range(k):
        pivot = a[j, j] - out[j, :j] @ out[j, :j]
        if not np.isfinite(pivot) or pivot <= tol * max(abs(a[j, j]), 1e-300):
            raise NotPositiveDefiniteError(j, float(pivot), label)
        out[j, j] = math.sqrt(pivot)
        if j + 1 < k:
            out[j + 1 :, j] = (a[j + 1 :, j] - out[j + 1 :, :j] @ out[j, :j]) / out[j, j]
    return out


def mvn_conditional(mu, sigma, observed_idx, observed_vals):
    """Gaussian conditional moments of the unobserved block.

    ``observed_vals`` may be a single vector or an ``(m, len(observed_idx))``
    batch; the conditional covariance does not depend on the values so it is
    returned once.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    k = mu.shape[0]
    obs = np.asarray(observed_idx, dtype=int)
    if obs.size == 0 or obs.size >= k or len(set(obs.tolist())) != obs.size:
        raise ValueError("observed_idx must be a nonempty proper subset of the coordinates")
    mis = np.setdiff1d(np.arange(k), obs)
    s_oo = sigma[np.ix_(obs, obs)]
    s_mo = sigma[np.ix_(mis, obs)]
    s_mm = sigma[np.ix_(mis, mis)]
    chol = cholesky(s_oo, label=f"observed block {obs.tolist()}")
    # K = s_mo s_oo^{-1} via two triangular solves
    tmp = np.linalg.solve(chol, s_mo.T)
    gain = np.linalg.solve(chol.T, tmp).T
    vals = np.asarray(observed_vals, dtype=float)
    resid = vals - mu[obs]
    mu_c = mu[mis] + resid @ gain.T
    sigma_c = s_mm - gain @ s_mo.T
    sigma_c = 0.5 * (sigma_c + sigma_c.T)
    return mu_c, sigma_c


def sample_mvn(mu, sigma, rng: np.random.Generator, size: int | None = None):
    mu = np.asarray(mu, dtype=float)
    chol = cholesky(sigma, label="covariance")
    shape = (mu.shape[0],) if size is None else (size, mu.shape[0])
    eps = rng.standard_normal(shape)
    return mu + eps @ chol.T


# ---------------------------------------------------------------------------
# Correlation matrices
# ---------------------------------------------------------------------------


def is_correlation_matrix(omega, tol: float = PD_TOL) -> bool:
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        return False
    if not np.allclose(omega, omega.T, atol=1e-12, rtol=0):
        return False
    if not np.allclose(np.diag(omega), 1.0, atol=1e-12, rtol=0):
        return False
    return bool(np.linalg.eigvalsh(omega)[0] > tol)


def sample_lkj(tau: float, k: int, rng: np.random.Generator, return_cholesky: bool = False):
    """Draw a k x k correlation matrix with density proportional to det^(tau-1).

    Onion construction (Lewandowski, Kurowicka and Joe 2009): grow the
    matrix one row at a time, each new row being the existing Cholesky
    factor times a scaled uniform direction.
    """
    if not tau > 0:
        raise ValueError(f"LKJ shape must be positive, got {tau}")
    if k < 1:
        raise ValueError("dimension must be at least 1")
    chol = np.zeros((k, k))
    chol[0, 0] = 1.0
    if k == 1:
        return (np.ones((1, 1)), chol) if return_cholesky else np.ones((1, 1))
    beta = tau + (k - 2) / 2.0
    r12 = 2.0 * rng.beta(beta, beta) - 1.0
    chol[1, 0] = r12
    chol[1, 1] = math.sqrt(1.0 - r12 * r12)
    for m in range(2, k):
        beta -= 0.5
        y = rng.beta(m / 2.0, beta)
        z = rng.standard_normal(m)
        w = math.sqrt(y) * z / np.linalg.norm(z)
        chol[m, :m] = w
        chol[m, m] = math.sqrt(1.0 - y)
    omega = chol @ chol.T
    np.fill_diagonal(omega, 1.0)
    return (omega, chol) if return_cholesky else omega


def cpc_to_cholesky(z, k: int) -> np.ndarray:
    """Cholesky factor of a correlation matrix from canonical partial correlations.

    ``z`` lists the strictly-lower entries row by row; entry ``(i, j)`` is the
    partial correlation of variables ``j`` and ``i`` given ``0..j-1``.
    """
    chol = np.zeros((k, k))
    chol[0, 0] = 1.0
    pos = 0
    for i in range(1, k):
        remaining = 1.0
        for j in range(i):
            val = z[pos] * math.sqrt(remaining)
            chol[i, j] = val
            remaining -= val * val
            pos += 1
        chol[i, i] = math.sqrt(max(remaining, 0.0))
    return chol


def cholesky_to_cpc(chol) -> np.ndarray:
    chol = np.asarray(chol, dtype=float)
    k = chol.shape[0]
    out = []
    for i in range(1, k):
        remaining = 1.0
        for j in range(i):
            out.append(chol[i, j] / math.sqrt(remaining))
            remaining -= chol[i, j] ** 2
    return np.asarray(out)


def lkj_cpc_shapes(tau: float, k: int) -> np.ndarray:
    """Beta shape for each CPC under LKJ(tau); order matches ``cpc_to_cholesky``.

    CPCs at conditioning depth ``j`` are independent symmetric Beta on (-1, 1)
    with shape ``tau + (k - 2 - j) / 2``.
    """
    return np.asarray([tau + (k - 2 - j) / 2.0 for i in range(1, k) for j in range(i)])


def correlation_from_cpc(z, k: int) -> np.ndarray:
    chol = cpc_to_cholesky(z, k)
    omega = chol @ chol.T
    np.fill_diagonal(omega, 1.0)
    return omega
