"""Mann-Whitney based surrogate test.

``delta_hat = U_Y - U_S`` with each U the two-sample Mann-Whitney
probability index (ties count one half). Its variance uses the
structural-component (placement) decomposition, with the Y and S
placements of the same unit paired so the covariance comes for free.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .core import TrialData, ValidationError
from .stats_math import make_rng, std_normal_ppf


@dataclass(frozen=True)
class RankTestResult:
    u_y: float
    u_s: float
    delta_hat: float
    variance: float
    ci_upper: float
    epsilon: float
    alpha: float
    valid: bool

    @property
    def decision(self) -> str:
        return "valid" if self.valid else "not-valid"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["decision"] = self.decision
        return out


def _as_arm(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValidationError(f"{name} arm is empty")
    return arr


def placements(treated, control) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit structural components of the Mann-Whitney index.

    ``v10[i]`` is the fraction of controls beaten by treated unit ``i`` and
    ``v01[j]`` the fraction of treated units beating control ``j``; both use
    midranks so ties score one half.
    """
    t = _as_arm(treated, "treated")
    c = _as_arm(control, "control")
    n1, n0 = t.size, c.size
    pooled = stats.rankdata(np.concatenate([t, c]))
    rank_t = stats.rankdata(t)
    rank_c = stats.rankdata(c)
    v10 = (pooled[:n1] - rank_t) / n0
    v01 = 1.0 - (pooled[n1:] - rank_c) / n1
    return v10, v01


def mann_whitney_u(treated, control) -> float:
    """``P(T > C) + P(T = C) / 2`` estimated over all treated/control pairs.

    >>> mann_whitney_u([2, 4], [1, 3])
    0.75
    """
    t = _as_arm(treated, "treated")
    c = _as_arm(control, "control")
    n1, n0 = t.size, c.size
    r = stats.rankdata(np.concatenate([t, c]))[:n1]
    return float((r.sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def mann_whitney_u_bruteforce(treated, control) -> float:
    t = _as_arm(treated, "treated")[:, None]
    c = _as_arm(control, "control")[None, :]
    return float(((t > c) + 0.5 * (t == c)).mean())


def u_statistics(data: TrialData) -> tuple[float, float]:
    t = data.treated
    return mann_whitney_u(data.y[t], data.y[~t]), mann_whitney_u(data.s[t], data.s[~t])


def delta_hat(data: TrialData) -> float:
    u_y, u_s = u_statistics(data)
    return u_y - u_s


def variance_components(data: TrialData) -> dict[str, float]:
    """Structural-component estimates of Var(U_Y), Var(U_S), Cov(U_Y, U_S)."""
    t = data.treated
    if data.n1 < 2 or data.n0 < 2:
        raise ValidationError("variance estimation needs at least 2 units per arm")
    y10, y01 = placements(data.y[t], data.y[~t])
    s10, s01 = placements(data.s[t], data.s[~t])
    n1, n0 = data.n1, data.n0

    def cov(a, b):
        return float(np.cov(a, b, ddof=1)[0, 1])

    return {
        "var_y": cov(y10, y10) / n1 + cov(y01, y01) / n0,
        "var_s": cov(s10, s10) / n1 + cov(s01, s01) / n0,
        "cov_ys": cov(y10, s10) / n1 + cov(y01, s01) / n0,
    }


def delta_variance(data: TrialData, method: str = "projection", n_boot: int = 2000, seed: int = 0) -> float:
    """Variance estimate for ``delta_hat``.

    ``method="projection"`` (default) differences the paired placements, which
    equals ``var_y + var_s - 2 cov_ys`` from :func:`variance_components`.
    ``method="bootstrap"`` resamples units within arms.
    """
    t = data.treated
    if data.n1 < 2 or data.n0 < 2:
        raise ValidationError("variance estimation needs at least 2 units per arm")
    if method == "projection":
        y10, y01 = placements(data.y[t], data.y[~t])
        s10, s01 = placements(data.s[t], data.s[~t])
        d10, d01 = y10 - s10, y01 - s01
        return float(np.var(d10, ddof=1) / data.n1 + np.var(d01, ddof=1) / data.n0)
    if method == "bootstrap":
        rng = make_rng(seed, 0)
        yt, yc, st, sc = data.y[t], data.y[~t], data.s[t], data.s[~t]
        n1, n0 = yt.size, yc.size
        reps = np.empty(n_boot)
        for b in range(n_boot):
            it = rng.integers(0, n1, n1)
            ic = rng.integers(0, n0, n0)
            reps[b] = mann_whitney_u(yt[it], yc[ic]) - mann_whitney_u(st[it], sc[ic])
        return float(np.var(reps, ddof=1))
    raise ValueError(f"unknown variance method {method!r}")


def min_detectable_u(n1: int, n0: int, alpha: float = 0.05, beta: float = 0.2) -> float:
    """Smallest U_S that the two-sided level-``alpha`` Wilcoxon rank-sum test
    detects with power ``1 - beta`` (normal approximation, null variance)."""
    if n1 < 1 or n0 < 1:
        raise ValidationError("both arms need at least one unit")
    sd0 = np.sqrt((n1 + n0 + 1) / (12.0 * n1 * n0))
    z = float(std_normal_ppf(1.0 - alpha / 2.0)) + float(std_normal_ppf(1.0 - beta))
    return float(min(0.5 + z * sd0, 1.0))


def auto_epsilon(u_y: float, n1: int, n0: int, alpha: float = 0.05, beta: float = 0.2) -> float:
    """Data-driven epsilon: observed U_Y minus the smallest U_S the rank-sum
    test on S would detect with power ``1 - beta``."""
    return max(u_y - min_detectable_u(n1, n0, alpha, beta), 0.0)


def rank_test(data: TrialData, epsilon: float | str, alpha: float = 0.05, variance_method: str = "projection",
              beta: float = 0.2) -> RankTestResult:
    """Declare the surrogate valid when the one-sided upper bound of delta is below epsilon.

    ``epsilon="auto"`` uses :func:`auto_epsilon` with the observed U_Y.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    u_y, u_s = u_statistics(data)
    var = delta_variance(data, method=variance_method)
    if epsilon == "auto":
        epsilon = auto_epsilon(u_y, data.n1, data.n0, alpha, beta)
    return _decide(u_y, u_s, var, float(epsilon), alpha)


def _decide(u_y: float, u_s: float, variance: float, epsilon: float, alpha: float) -> RankTestResult:
    d = u_y - u_s
    upper = d + float(std_normal_ppf(1.0 - alpha)) * np.sqrt(max(variance, 0.0))
    return RankTestResult(
        u_y=u_y,
        u_s=u_s,
        delta_hat=d,
        variance=variance,
        ci_upper=float(upper),
        epsilon=float(epsilon),
        alpha=alpha,
        valid=bool(upper < epsilon),
    )
