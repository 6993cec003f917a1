"""Closed-form causal (theta) and rank (delta) discrepancies for Gaussian
potential outcomes with a discrete covariate.

Within stratum ``x`` the potential outcomes ``(Y1, S1, Y0, S0)`` are
N(mu^x, Sigma^x). The within-unit probability ``V^x`` uses the variance of
a paired difference, so it involves the cross-arm covariance; the
between-unit probability ``U^{x_i x_j}`` compares independent units and
does not.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import S0, S1, Y0, Y1
from .stats_math import std_normal_cdf

_PAIRS = {"Y": (Y1, Y0), "S": (S1, S0)}


class DegenerateDifferenceError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianGroupParams:
    mu: tuple[float, ...]
    sigma: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if mu.shape != (4,) or sigma.shape != (4, 4):
            raise ValueError("mu must have length 4 and sigma be 4x4 (order Y1, S1, Y0, S0)")
        if not np.allclose(sigma, sigma.T, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        if np.linalg.eigvalsh(sigma)[0] <= 0:
            raise ValueError("sigma must be positive definite")
        object.__setattr__(self, "mu", tuple(mu.tolist()))
        object.__setattr__(self, "sigma", tuple(map(tuple, sigma.tolist())))

    @property
    def mu_arr(self) -> np.ndarray:
        return np.asarray(self.mu)

    @property
    def sigma_arr(self) -> np.ndarray:
        return np.asarray(self.sigma)

    def shifted(self, c: float) -> "GaussianGroupParams":
        return GaussianGroupParams(tuple(m + c for m in self.mu), self.sigma)


@dataclass(frozen=True)
class CovariateMixture:
    groups: tuple[GaussianGroupParams, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        groups = tuple(self.groups)
        probs = np.asarray(self.probs, dtype=float)
        if not groups:
            raise ValueError("mixture needs at least one group")
        if probs.shape != (len(groups),):
            raise ValueError("one probability per group is required")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("group probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "probs", tuple(probs.tolist()))


@dataclass(frozen=True)
class DiscrepancyReport:
    theta: float
    delta: float
    per_group_theta: np.ndarray
    cross_group_delta: np.ndarray
    v_y: float
    v_s: float
    u_y: float
    u_s: float


def v_conditional(params: GaussianGroupParams, target: str) -> float:
    """``P(outcome1 > outcome0)`` for one unit in this stratum."""
    i, j = _PAIRS[target]
    mu, sig = params.mu_arr, params.sigma_arr
    var = sig[i, i] + sig[j, j] - 2.0 * sig[i, j]
    if not var > 0:
        raise DegenerateDifferenceError(f"{target}1 - {target}0 has non-positive variance {var}")
    return float(std_normal_cdf((mu[i] - mu[j]) / np.sqrt(var)))


def u_cross(params_i: GaussianGroupParams, params_j: GaussianGroupParams, target: str) -> float:
    """``P(outcome1 of a unit in stratum i > outcome0 of an independent unit in stratum j)``."""
    i, j = _PAIRS[target]
    var = params_i.sigma_arr[i, i] + params_j.sigma_arr[j, j]
    if not var > 0:
        raise DegenerateDifferenceError(f"{target} comparison across units has non-positive variance {var}")
    return float(std_normal_cdf((params_i.mu_arr[i] - params_j.mu_arr[j]) / np.sqrt(var)))


def discrepancy_report(mixture: CovariateMixture) -> DiscrepancyReport:
    g = mixture.groups
    p = np.asarray(mixture.probs)
    k = len(g)
    vy = np.empty(k)
    vs = np.empty(k)
    for a in range(k):
        try:
            vy[a] = v_conditional(g[a], "Y")
            vs[a] = v_conditional(g[a], "S")
        except DegenerateDifferenceError as err:
            raise DegenerateDifferenceError(f"group {a}: {err}") from None
    uy = np.empty((k, k))
    us = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            uy[a, b] = u_cross(g[a], g[b], "Y")
            us[a, b] = u_cross(g[a], g[b], "S")
    w = np.outer(p, p)
    return DiscrepancyReport(
        theta=float(p @ (vy - vs)),
        delta=float((w * (uy - us)).sum()),
        per_group_theta=vy - vs,
        cross_group_delta=uy - us,
        v_y=float(p @ vy),
        v_s=float(p @ vs),
        u_y=float((w * uy).sum()),
        u_s=float((w * us).sum()),
    )


def discrepancy_perfect_surrogate(delta_effect, d_y, d_s):
    """``|theta - delta|`` for a perfect surrogate with a homogeneous effect and
    a balanced binary covariate; ``d_y``/``d_s`` are the control-mean gaps
    between strata."""
    Phi = std_normal_cdf
    out = 0.25 * np.abs(
        Phi(delta_effect + d_y) - Phi(delta_effect + d_s) + Phi(delta_effect - d_y) - Phi(delta_effect - d_s)
    )
    return float(out) if np.ndim(out) == 0 else out


def heatmap_grid(delta_effect: float, d_range: tuple[float, float], step: float):
    """Grid of ``|theta - delta|``; rows index ``d_y``, columns ``d_s``."""
    lo, hi = map(float, d_range)
    if not lo < hi:
        raise ValueError(f"range must satisfy lo < hi (got {lo}, {hi})")
    if not step > 0:
        raise ValueError("step must be positive")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    axis = lo + step * np.arange(count)
    values = discrepancy_perfect_surrogate(delta_effect, axis[:, None], axis[None, :])
    return axis, axis.copy(), values


def write_heatmap_csv(path, d_y: Sequence[float], d_s: Sequence[float], values) -> None:
    values = np.asarray(values)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d_y\\d_s"] + [f"{v:.9g}" for v in d_s])
        for i, dy in enumerate(d_y):
            w.writerow([f"{dy:.9g}"] + [f"{v:.9g}" for v in values[i]])


def read_heatmap_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    d_s = np.asarray([float(v) for v in rows[0][1:]])
    d_y = np.asarray([float(r[0]) for r in rows[1:]])
    values = np.asarray([[float(v) for v in r[1:]] for r in rows[1:]])
    return d_y, d_s, values
