"""Bayes-factor calibration of the surrogate validation threshold.

The count ``K = n * V_S_hat`` is Binomial(n, V_S). Under H0 ``V_S = 1/2``;
under H1 ``V_S`` has a Beta(a, b) prior truncated to (1/2, 1). The Bayes
factor for count ``k`` is

    x_k = 2^n * B_{1/2}^1(a + k, b + n - k) / B_{1/2}^1(a, b)

which is increasing in ``k``, so every event ``{BF_n > x_j}`` is a binomial
tail ``{K > j}``. All arithmetic is done in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, special, stats

from .stats_math import log_incomplete_beta


class InfeasiblePowerError(ValueError):
    def __init__(self, target: float, max_power: float):
        self.target = target
        self.max_power = max_power
        super().__init__(
            f"target power {target:.4f} is not achievable; the supremum over V_S < 1 is {max_power:.4f}"
        )


@dataclass(frozen=True)
class ThresholdConfig:
    n: int
    alpha: float = 0.05
    beta: float = 0.2
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("Beta prior parameters a, b must be positive")


@dataclass
class ThresholdResult:
    config: ThresholdConfig
    bf_values: np.ndarray
    null_probs: np.ndarray
    critical_index: int
    critical: float
    attained_level: float
    v_s: float | None = None
    v_y: float | None = None
    eta: float | None = None
    power: float | None = None
    log_bf_values: np.ndarray = field(default=None, repr=False)

    def to_dict(self, table: bool = False) -> dict:
        c = self.config
        out = {
            "n": c.n,
            "alpha": c.alpha,
            "beta": c.beta,
            "a": c.a,
            "b": c.b,
            "critical": self.critical,
            "critical_count": self.critical_index,
            "attained_level": self.attained_level,
            "v_s": self.v_s,
            "v_y": self.v_y,
            "eta": self.eta,
        }
        if table:
            out["table"] = [
                {"k": k, "bf": float(x), "prob": float(p)}
                for k, (x, p) in enumerate(zip(self.bf_values, self.null_probs))
            ]
        return out


def _log_bf(n: int, k, a: float, b: float) -> np.ndarray:
    log_den = log_incomplete_beta(a, b, 0.5, 1.0)
    ks = np.atleast_1d(k)
    vals = [log_incomplete_beta(a + kk, b + n - kk, 0.5, 1.0) - log_den + n * math.log(2.0) for kk in ks]
    return np.asarray(vals)


def log_bf_value(n: int, k: int, a: float = 1.0, b: float = 1.0) -> float:
    if int(n) != n or n < 1 or not 0 <= k <= n or int(k) != k:
        raise ValueError(f"need integer 0 <= k <= n with n >= 1 (got n={n}, k={k})")
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    return float(_log_bf(int(n), int(k), a, b)[0])


def bf_value(n: int, k: int, a: float = 1.0, b: float = 1.0) -> float:
    """BF_n at ``V_S_hat = k/n``. Overflows to ``inf`` for very large n; use
    :func:`log_bf_value` there."""
    log_x = log_bf_value(n, k, a, b)
    x = float(_bf_direct(int(n), np.asarray(int(k)), a, b))
    return x if math.isfinite(x) else math.exp(log_x)


def log_null_probs(n: int) -> np.ndarray:
    k = np.arange(n + 1)
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1) - n * math.log(2.0)


def _bf_direct(n: int, k: np.ndarray, a: float, b: float) -> np.ndarray:
    # linear-space ratio with the 2^n factor applied exactly; nan where the
    # integrals leave the comfortable double range
    with np.errstate(under="ignore", over="ignore"):
        num = special.betaincc(a + k, b + n - k, 0.5) * special.beta(a + k, b + n - k)
        den = special.betaincc(a, b, 0.5) * special.beta(a, b)
        x = np.ldexp(num / den, n)
    ok = (num > 1e-280) & np.isfinite(x) & (x > 0)
    return np.where(ok, x, np.nan)


@lru_cache(maxsize=256)
def _null_table(n: int, a: float, b: float):
    k = np.arange(n + 1)
    log_x = _log_bf(n, k, a, b)
    x = _bf_direct(n, k, a, b)
    x = np.where(np.isnan(x), np.exp(log_x), x)
    log_p = log_null_probs(n)
    return x, log_x, log_p


def bf_null_distribution(n: int, a: float = 1.0, b: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Support ``x_0..x_n`` and H0 probabilities ``C(n, k) 2^-n``."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    x, _, log_p = _null_table(int(n), float(a), float(b))
    return x.copy(), np.exp(log_p)


def null_exceedance(n: int, k: int) -> float:
    """``P(K > k)`` for ``K ~ Bin(n, 1/2)``."""
    return float(stats.binom.sf(k, n, 0.5))


def bf_critical(n: int, alpha: float, a: float = 1.0, b: float = 1.0) -> tuple[float, int, float]:
    """Smallest support point ``x_k`` with ``P(BF_n > x_k | H0) <= alpha``.

    Returns ``(critical value, k, attained level)``. Because the support is
    ordered by ``k`` the tail event is ``{K > k}``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    x, log_x, _ = _null_table(int(n), float(a), float(b))
    if not np.all(np.diff(log_x) > 0):
        raise ArithmeticError("Bayes-factor support is not increasing in k")
    tails = stats.binom.sf(np.arange(n + 1), n, 0.5)
    k = int(np.flatnonzero(tails <= alpha)[0])
    return float(x[k]), k, float(tails[k])


def power_at(n: int, v_s: float, critical_count: int) -> float:
    """``P(BF_n > x_{k*} | V_S = v_s) = P(K > k*)`` with ``K ~ Bin(n, v_s)``."""
    return float(stats.binom.sf(critical_count, n, v_s))


def solve_v_s(config: ThresholdConfig, xtol: float = 1e-12) -> float:
    """Smallest ``v_s`` in (1/2, 1) whose power reaches ``1 - beta``.

    The binomial tail is continuous and strictly increasing in ``v_s``, so
    the root is unique.
    """
    n, alpha = config.n, config.alpha
    _, k, _ = bf_critical(n, alpha, config.a, config.b)
    target = 1.0 - config.beta
    hi = 1.0 - 1e-15
    max_power = power_at(n, hi, k)
    if max_power < target or k >= n:
        raise InfeasiblePowerError(target, max_power if k < n else 0.0)
    lo = 0.5
    if power_at(n, lo, k) >= target:
        return lo
    return float(optimize.bisect(lambda v: power_at(n, v, k) - target, lo, hi, xtol=xtol, maxiter=500))


def compute_eta(v_y: float, v_s: float) -> float:
    if not (0.0 <= v_y <= 1.0 and 0.0 <= v_s <= 1.0):
        raise ValueError("v_y and v_s must lie in [0, 1]")
    return max(v_y - v_s, 0.0)


def select_threshold(config: ThresholdConfig, v_y: float | None = None) -> ThresholdResult:
    """Full calibration: BF support, critical value, ``v_s`` and (given ``v_y``) ``eta``."""
    x, log_x, log_p = _null_table(config.n, float(config.a), float(config.b))
    crit, k, level = bf_critical(config.n, config.alpha, config.a, config.b)
    v_s = solve_v_s(config)
    eta = None if v_y is None else compute_eta(v_y, v_s)
    return ThresholdResult(
        config=config,
        bf_values=x.copy(),
        null_probs=np.exp(log_p),
        critical_index=k,
        critical=crit,
        attained_level=level,
        v_s=v_s,
        v_y=v_y,
        eta=eta,
        power=power_at(config.n, v_s, k),
        log_bf_values=log_x,
    )
