"""Data-generating settings and replication campaigns.

Settings 1-3 and 5 are Gaussian and carry their exact ``(mu, Sigma)``
mixture, so their true discrepancies come from :mod:`analytics`. Setting 4
is non-Gaussian and its truth is estimated by Monte Carlo.

Setting 5 uses the published parameters. Settings 1-4 are reconstructions
from their qualitative descriptions:

1. useless surrogate: Y1 ~ N(2, 1), Y0 ~ N(0, 1), S1, S0 ~ N(0, 1), all independent
2. near-perfect surrogate: S_g = 0.9 Y_g + N(0, 0.1^2)
3. imperfect surrogate: S_g = 0.9 Y_g + N(0, NOISE_3^2)
4. non-Gaussian outcome (shifted exponential mixture) and a non-linear
   surrogate with centred log-normal noise
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .analytics import CovariateMixture, GaussianGroupParams, discrepancy_report
from .bayes import bayes_test
from .core import AUTO, AnalysisConfig, TrialData
from .rank import rank_test
from .stats_math import RngStream

METHODS = ("rank", "bayes", "bayes-cov")
TREATMENT_PROB = 0.5
NOISE_3 = 2.0


@dataclass(frozen=True)
class Truth:
    delta: float
    theta: float
    provenance: str
    delta_se: float = 0.0
    theta_se: float = 0.0


@dataclass(frozen=True)
class SettingSpec:
    id: int
    description: str
    mixture: CovariateMixture | None = None
    sampler: Callable | None = field(default=None, compare=False)
    emits_covariate: bool = False

    @property
    def gaussian(self) -> bool:
        return self.mixture is not None


def _linear_surrogate_group(effect: float, slope: float, noise_sd: float) -> GaussianGroupParams:
    """Y1 ~ N(effect, 1), Y0 ~ N(0, 1) independent; S_g = slope Y_g + N(0, noise_sd^2)."""
    var_s = slope**2 + noise_sd**2
    sigma = np.zeros((4, 4))
    sigma[0, 0] = sigma[2, 2] = 1.0
    sigma[1, 1] = sigma[3, 3] = var_s
    sigma[0, 1] = sigma[1, 0] = sigma[2, 3] = sigma[3, 2] = slope
    return GaussianGroupParams(mu=(effect, slope * effect, 0.0, 0.0), sigma=sigma)


def _setting4_sampler(n: int, rng: np.random.Generator) -> np.ndarray:
    def outcome(shift: float) -> np.ndarray:
        heavy = rng.uniform(size=n) < 0.3
        return shift + rng.exponential(1.0, n) + 3.0 * heavy

    y1 = outcome(2.0)
    y0 = outcome(0.0)

    def surrogate(y: np.ndarray) -> np.ndarray:
        noise = rng.lognormal(0.0, 1.0, n) - math.exp(0.5)
        return np.exp(y / 3.0) + 0.5 * noise

    return np.column_stack([y1, surrogate(y1), y0, surrogate(y0)])


def _setting5_mixture() -> CovariateMixture:
    a = np.array([[1.0, 1.0], [1.0, 2.0]])
    sigma = np.block([[a, np.zeros((2, 2))], [np.zeros((2, 2)), a]])
    g0 = GaussianGroupParams(mu=(5.0, 5.0, 0.0, 0.0), sigma=sigma)
    g1 = GaussianGroupParams(mu=(5.0, -5.0, 0.0, -10.0), sigma=sigma)
    return CovariateMixture(groups=(g0, g1), probs=(0.5, 0.5))


SETTINGS: dict[int, SettingSpec] = {
    1: SettingSpec(1, "useless surrogate", CovariateMixture((_linear_surrogate_group(2.0, 0.0, 1.0),), (1.0,))),
    2: SettingSpec(2, "perfect surrogate", CovariateMixture((_linear_surrogate_group(2.0, 0.9, 0.1),), (1.0,))),
    3: SettingSpec(3, "imperfect surrogate", CovariateMixture((_linear_surrogate_group(2.0, 0.9, NOISE_3),), (1.0,))),
    4: SettingSpec(4, "misspecified (non-Gaussian, non-linear)", sampler=_setting4_sampler),
    5: SettingSpec(5, "binary covariate", _setting5_mixture(), emits_covariate=True),
}


def get_setting(setting_id: int) -> SettingSpec:
    try:
        return SETTINGS[int(setting_id)]
    except KeyError:
        raise ValueError(f"unknown setting {setting_id}; choose from {sorted(SETTINGS)}") from None


def draw_latent(spec: SettingSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Full potential-outcome table ``(Y1, S1, Y0, S0)`` and the stratum labels."""
    if spec.gaussian:
        mix = spec.mixture
        groups = rng.choice(len(mix.groups), size=n, p=np.asarray(mix.probs))
        table = np.empty((n, 4))
        eps = rng.standard_normal((n, 4))
        for g, params in enumerate(mix.groups):
            sel = groups == g
            chol = np.linalg.cholesky(params.sigma_arr)
            table[sel] = params.mu_arr + eps[sel] @ chol.T
        return table, groups
    return spec.sampler(n, rng), np.zeros(n, dtype=int)


def generate_setting(spec: SettingSpec, n: int, rng: np.random.Generator, return_latent: bool = False):
    """Draw a trial of ``n`` units; only the assigned arm's pair is emitted."""
    if n < 4:
        raise ValueError("need n >= 4")
    latent, groups = draw_latent(spec, n, rng)
    while True:
        z = (rng.uniform(size=n) < TREATMENT_PROB).astype(int)
        if 0 < z.sum() < n:
            break
    y = np.where(z == 1, latent[:, 0], latent[:, 2])
    s = np.where(z == 1, latent[:, 1], latent[:, 3])
    x = groups.astype(float).reshape(n, 1) if spec.emits_covariate else None
    data = TrialData(y=y, s=s, z=z, x=x)
    return (data, latent, groups) if return_latent else data


def monte_carlo_truth(spec: SettingSpec, draws: int = 10_000_000, seed: int = 20240101, chunk: int = 1_000_000) -> Truth:
    """Estimate ``(delta, theta)`` from latent draws with Monte Carlo standard errors.

    ``theta`` compares the two potential outcomes of one unit; ``delta``
    pairs the treated outcome of one batch with the control outcome of an
    independent batch.
    """
    stream = RngStream(seed, (spec.id,))
    rng = stream.generator()
    sums = np.zeros(2)
    sq = np.zeros(2)
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        a, _ = draw_latent(spec, m, rng)
        b, _ = draw_latent(spec, m, rng)
        th = (a[:, 0] > a[:, 2]).astype(float) - (a[:, 1] > a[:, 3])
        de = (a[:, 0] > b[:, 2]).astype(float) - (a[:, 1] > b[:, 3])
        for i, v in enumerate((de, th)):
            sums[i] += v.sum()
            sq[i] += (v * v).sum()
        done += m
    mean = sums / draws
    se = np.sqrt(np.maximum(sq / draws - mean**2, 0.0) / draws)
    return Truth(delta=float(mean[0]), theta=float(mean[1]), provenance="monte-carlo",
                 delta_se=float(se[0]), theta_se=float(se[1]))


@lru_cache(maxsize=None)
def _truth_cached(setting_id: int) -> Truth:
    spec = get_setting(setting_id)
    if spec.gaussian:
        rep = discrepancy_report(spec.mixture)
        return Truth(delta=rep.delta, theta=rep.theta, provenance="analytic")
    return monte_carlo_truth(spec)


def setting_truth(spec: SettingSpec) -> Truth:
    return _truth_cached(spec.id)


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationOutcome:
    rep: int
    valid: bool | None
    covered: bool | None
    bound: float | None
    threshold: float | None
    estimate: float | None
    error: str | None = None


@dataclass
class CampaignResult:
    setting: int
    method: str
    reps: int
    n: int
    coverage: float
    power: float
    mean_eta: float
    failures: int
    runtime_seconds: float
    outcomes: list[ReplicationOutcome] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {
            "setting": self.setting,
            "method": self.method,
            "reps": self.reps,
            "n": self.n,
            "coverage": self.coverage,
            "power": self.power,
            "mean_eta": self.mean_eta,
            "failures": self.failures,
        }


CAMPAIGN_COLUMNS = ["setting", "method", "reps", "n", "coverage", "power", "mean_eta", "failures"]
DETAIL_COLUMNS = ["setting", "method", "rep", "valid", "covered", "bound", "threshold", "estimate", "error"]


def replication_stream(seed: int, setting_id: int, rep: int) -> RngStream:
    return RngStream(int(seed), (int(setting_id), int(rep)))


def run_replication(setting_id: int, method: str, rep: int, n: int, config: AnalysisConfig) -> ReplicationOutcome:
    spec = get_setting(setting_id)
    stream = replication_stream(config.seed, setting_id, rep)
    # data depends only on (seed, setting, rep), so every method sees the same trials
    data = generate_setting(spec, n, stream.child(0).generator())
    truth = setting_truth(spec)
    try:
        if method == "rank":
            res = rank_test(data, config.threshold, alpha=config.alpha, beta=config.beta)
            return ReplicationOutcome(rep, res.valid, bool(res.ci_upper >= truth.delta), res.ci_upper,
                                      res.epsilon, res.delta_hat)
        if method in ("bayes", "bayes-cov"):
            model = "covariates" if method == "bayes-cov" else "no-covariates"
            res, _, _ = bayes_test(data, config, model=model, stream=stream.child(1))
            return ReplicationOutcome(rep, res.valid, bool(res.theta_quantile >= truth.theta), res.theta_quantile,
                                      res.eta, res.posterior_mean_theta)
        raise ValueError(f"unknown method {method!r}")
    except Exception as err:  # recorded per replication; the campaign continues
        return ReplicationOutcome(rep, None, None, None, None, None, f"{type(err).__name__}: {err}")


def _run_many(args) -> list[ReplicationOutcome]:
    setting_id, method, reps, n, config = args
    return [run_replication(setting_id, method, r, n, config) for r in reps]


def summarize(setting_id: int, method: str, n: int, outcomes: list[ReplicationOutcome], runtime: float) -> CampaignResult:
    outcomes = sorted(outcomes, key=lambda o: o.rep)
    ok = [o for o in outcomes if o.error is None]
    nan = float("nan")
    return CampaignResult(
        setting=setting_id,
        method=method,
        reps=len(outcomes),
        n=n,
        coverage=float(np.mean([o.covered for o in ok])) if ok else nan,
        power=float(np.mean([o.valid for o in ok])) if ok else nan,
        mean_eta=float(np.mean([o.threshold for o in ok])) if ok else nan,
        failures=len(outcomes) - len(ok),
        runtime_seconds=runtime,
        outcomes=outcomes,
    )


def run_campaign(spec: SettingSpec | int, method: str, reps: int, n: int = 50, config: AnalysisConfig | None = None,
                 jobs: int = 1, rep_order=None) -> CampaignResult:
    """Run ``reps`` seeded replications and aggregate coverage and power.

    ``rep_order`` only changes execution order (for testing); results are
    always reduced in replication order.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    spec = get_setting(spec) if isinstance(spec, int) else spec
    config = config or AnalysisConfig()
    setting_truth(spec)
    order = list(range(reps)) if rep_order is None else list(rep_order)
    if sorted(order) != list(range(reps)):
        raise ValueError("rep_order must be a permutation of range(reps)")
    start = time.perf_counter()
    if jobs <= 1:
        outcomes = _run_many((spec.id, method, order, n, config))
    else:
        chunks = [order[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = [o for part in pool.map(_run_many, [(spec.id, method, c, n, config) for c in chunks]) for o in part]
    return summarize(spec.id, method, n, outcomes, time.perf_counter() - start)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_campaign_csv(results: list[CampaignResult], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CAMPAIGN_COLUMNS)
        for r in results:
            row = r.row()
            w.writerow([_fmt(row[c]) for c in CAMPAIGN_COLUMNS])


def write_detail_csv(results: list[CampaignResult], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETAIL_COLUMNS)
        for r in results:
            for o in r.outcomes:
                w.writerow([r.setting, r.method, o.rep, _fmt(o.valid), _fmt(o.covered), _fmt(o.bound),
                            _fmt(o.threshold), _fmt(o.estimate), o.error or ""])
