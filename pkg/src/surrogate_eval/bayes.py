"""Bayesian imputation of the unobserved potential outcomes.

Each unit's ``(Y1, S1, Y0, S0)`` is Gaussian with mean ``mu`` (no-covariate
model) or ``B x_i`` (covariate model) and covariance
``diag(sigma) Omega diag(sigma)`` with half-normal scales and an LKJ
correlation prior.

One sweep of the sampler is

1. Metropolis updates of ``(log sigma, atanh CPC(Omega))`` against the
   observed-data likelihood (the missing pair integrated out), so the
   correlations between never-jointly-observed outcomes move under their
   conditional prior instead of being pinned by the previous imputation;
2. exact Gaussian imputation of the missing pair of every unit;
3. a conjugate Gaussian draw of ``mu`` (or ``B``) from the completed table;
4. ``V_Y_hat``, ``V_S_hat`` and ``theta_hat`` on the completed table.

Steps 1-2 together draw ``(Sigma, missing)`` from their joint conditional,
so the sweep leaves the full posterior invariant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AUTO, S0, S1, Y0, Y1, AnalysisConfig, ModelPriors, PotentialTable, TrialData, ValidationError
from .stats_math import (
    RngStream,
    cholesky,
    cholesky_to_cpc,
    cpc_to_cholesky,
    lkj_cpc_shapes,
    mvn_conditional,
)
from .threshold import ThresholdConfig, ThresholdResult, select_threshold

K = 4
N_CPC = K * (K - 1) // 2
OFFDIAG = [(i, j) for i in range(K) for j in range(i + 1, K)]
OFFDIAG_NAMES = ["rho_y1s1", "rho_y1y0", "rho_y1s0", "rho_s1y0", "rho_s1s0", "rho_y0s0"]
TARGET_ACCEPT = 0.3
MIN_DET = 1e-8
MODELS = ("no-covariates", "covariates")


class ChainError(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        super().__init__(f"sampler failed at iteration {iteration}: {cause}")


@dataclass
class PosteriorState:
    mean: np.ndarray
    sigma_scales: np.ndarray
    cpc: np.ndarray
    completed: PotentialTable

    @property
    def correlation(self) -> np.ndarray:
        chol = cpc_to_cholesky(self.cpc, K)
        omega = chol @ chol.T
        np.fill_diagonal(omega, 1.0)
        return omega

    @property
    def covariance(self) -> np.ndarray:
        d = self.sigma_scales
        return d[:, None] * self.correlation * d[None, :]

    def row_means(self, design: np.ndarray | None) -> np.ndarray:
        if self.mean.ndim == 1:
            return np.broadcast_to(self.mean, (self.completed.values.shape[0], K))
        return design @ self.mean.T


@dataclass
class PosteriorDraws:
    theta: np.ndarray
    v_y: np.ndarray
    v_s: np.ndarray
    sigma: np.ndarray
    correlation: np.ndarray
    mean: np.ndarray
    accept: np.ndarray
    model: str
    burnin: int = 0

    @property
    def accept_rates(self) -> dict[str, float]:
        post = self.accept[self.burnin :] if self.burnin < len(self.accept) else self.accept
        return {"scales": float(post[:, 0].mean()), "correlation": float(post[:, 1].mean())}

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "v_y", "v_s", "theta", "acceptance"])
            for t in range(self.theta.shape[0]):
                w.writerow(
                    [t + 1, repr(float(self.v_y[t])), repr(float(self.v_s[t])), repr(float(self.theta[t])),
                     repr(float(self.accept[t].mean()))]
                )


@dataclass(frozen=True)
class BayesTestResult:
    theta_quantile: float
    eta: float
    alpha: float
    valid: bool
    posterior_mean_v_y: float
    posterior_mean_v_s: float
    posterior_mean_theta: float

    @property
    def decision(self) -> str:
        return "valid" if self.valid else "not-valid"


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def design_matrix(data: TrialData, intercept: bool = True) -> np.ndarray:
    x = np.asarray(data.x, dtype=float)
    if intercept:
        x = np.column_stack([np.ones(data.n), x])
    if x.shape[1] == 0:
        raise ValidationError("covariate model needs at least one design column")
    return x


def _log_sech2(u: np.ndarray) -> np.ndarray:
    a = np.abs(u)
    return 2.0 * (math.log(2.0) - a - np.log1p(np.exp(-2.0 * a)))


def _block_loglik(cov2: np.ndarray, scatter: np.ndarray, count: int) -> float:
    a, b, d = cov2[0, 0], cov2[0, 1], cov2[1, 1]
    det = a * d - b * b
    if not det > 0:
        return -math.inf
    tr = (d * scatter[0, 0] - 2.0 * b * scatter[0, 1] + a * scatter[1, 1]) / det
    return -0.5 * count * math.log(det) - 0.5 * tr


class CovarianceTarget:
    """Log density of ``(log sigma, atanh cpc)`` given the mean and the
    observed pairs, up to a constant."""

    def __init__(self, priors: ModelPriors, scatter_t=None, n_t: int = 0, scatter_c=None, n_c: int = 0,
                 use_likelihood: bool = True):
        self.inv_2s2 = 1.0 / (2.0 * priors.s**2)
        self.shapes = lkj_cpc_shapes(priors.tau, K)
        self.scatter_t, self.n_t = scatter_t, n_t
        self.scatter_c, self.n_c = scatter_c, n_c
        self.use_likelihood = use_likelihood

    def __call__(self, log_sigma: np.ndarray, u: np.ndarray) -> float:
        if np.any(np.abs(u) > 15.0) or np.any(np.abs(log_sigma) > 30.0):
            return -math.inf
        sigma = np.exp(log_sigma)
        lp = float(-(sigma * sigma).sum() * self.inv_2s2 + log_sigma.sum())
        lp += float((self.shapes * _log_sech2(u)).sum())
        chol = cpc_to_cholesky(np.tanh(u), K)
        # det(Omega) floor keeps every conditional variance used by the
        # imputation step above the Cholesky pivot tolerance
        if np.prod(np.diag(chol)) ** 2 < MIN_DET:
            return -math.inf
        if not self.use_likelihood:
            return lp
        omega = chol @ chol.T
        sig = sigma[:, None] * omega * sigma[None, :]
        if self.n_t:
            lp += _block_loglik(sig[:2, :2], self.scatter_t, self.n_t)
        if self.n_c:
            lp += _block_loglik(sig[2:, 2:], self.scatter_c, self.n_c)
        return lp


class AdaptiveBlock:
    """Random-walk proposal for one parameter block.

    During adaptation the proposal covariance tracks the empirical covariance
    of the block's history (scaled by 2.38^2/d) and a global log-scale is
    tuned by Robbins-Monro toward ``TARGET_ACCEPT``. ``freeze()`` stops both.
    """

    def __init__(self, dim: int, init_sd: float):
        self.dim = dim
        self.chol = np.eye(dim) * init_sd
        self.log_scale = 0.0
        self.adapting = True
        self.history: list[np.ndarray] = []
        self.steps = 0

    def propose(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return x + math.exp(self.log_scale) * (self.chol @ rng.standard_normal(self.dim))

    def record(self, x: np.ndarray, accepted: bool) -> None:
        if not self.adapting:
            return
        self.steps += 1
        self.log_scale += (float(accepted) - TARGET_ACCEPT) / (self.steps**0.6)
        self.log_scale = min(max(self.log_scale, -10.0), 5.0)
        self.history.append(x.copy())
        n = len(self.history)
        if n >= 20 * self.dim and n % 25 == 0:
            emp = np.cov(np.asarray(self.history[n // 2 :]), rowvar=False)
            emp = emp * (2.38**2 / self.dim) + 1e-8 * np.eye(self.dim)
            try:
                self.chol = np.linalg.cholesky(emp)
            except np.linalg.LinAlgError:
                pass

    def freeze(self) -> None:
        self.adapting = False
        self.history = []


def impute_missing(state: PosteriorState, rng: np.random.Generator, design: np.ndarray | None = None,
                   index=None) -> PotentialTable:
    """Redraw the unobserved pair of each unit (or of ``index`` only) from its
    exact Gaussian conditional; observed entries are never written."""
    table = state.completed
    vals = table.values
    sigma = state.covariance
    means = state.row_means(design)
    rows = np.arange(vals.shape[0]) if index is None else np.atleast_1d(np.asarray(index))
    treated = table.treated[rows]
    for obs_cols, mis_cols, sel in (((Y1, S1), (Y0, S0), rows[treated]), ((Y0, S0), (Y1, S1), rows[~treated])):
        if sel.size == 0:
            continue
        resid = vals[np.ix_(sel, obs_cols)] - means[np.ix_(sel, obs_cols)]
        mu_c, cov_c = mvn_conditional(np.zeros(K), sigma, list(obs_cols), resid)
        chol = cholesky(cov_c, label="conditional covariance of the missing pair")
        draw = means[np.ix_(sel, mis_cols)] + mu_c + rng.standard_normal((sel.size, 2)) @ chol.T
        vals[np.ix_(sel, mis_cols)] = draw
    return table


def draw_mean(completed: np.ndarray, sigma: np.ndarray, mu0, sigma0, rng: np.random.Generator) -> np.ndarray:
    """Conjugate draw of a common mean vector given complete Gaussian rows."""
    completed = np.asarray(completed, dtype=float).reshape(-1, K)
    n = completed.shape[0]
    prior_prec = np.linalg.inv(np.asarray(sigma0, dtype=float))
    sig_inv = np.linalg.inv(sigma)
    prec = prior_prec + n * sig_inv
    rhs = prior_prec @ np.asarray(mu0, dtype=float) + sig_inv @ completed.sum(axis=0)
    return _draw_from_precision(prec, rhs, rng)


def draw_coefficients(completed: np.ndarray, design: np.ndarray, sigma: np.ndarray, mu_beta, sigma_beta,
                      rng: np.random.Generator) -> np.ndarray:
    """Conjugate draw of ``B`` (K x d) with independent N(mu_beta, sigma_beta) rows."""
    d = design.shape[1]
    sb_inv = np.linalg.inv(np.asarray(sigma_beta, dtype=float))
    sig_inv = np.linalg.inv(sigma)
    prec = np.kron(np.eye(K), sb_inv) + np.kron(sig_inv, design.T @ design)
    rhs = np.tile(sb_inv @ np.asarray(mu_beta, dtype=float), K) + (sig_inv @ completed.T @ design).reshape(-1)
    return _draw_from_precision(prec, rhs, rng).reshape(K, d)


def _draw_from_precision(prec: np.ndarray, rhs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    prec = 0.5 * (prec + prec.T)
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    return mean + np.linalg.solve(chol.T, rng.standard_normal(rhs.shape[0]))


def concordance(completed: np.ndarray) -> tuple[float, float]:
    """Fractions of units with ``Y1 > Y0`` and ``S1 > S0`` (exact ties count 0)."""
    return float(np.mean(completed[:, Y1] > completed[:, Y0])), float(np.mean(completed[:, S1] > completed[:, S0]))


def observed_scatter(data: TrialData, means: np.ndarray) -> tuple[np.ndarray, int, np.ndarray, int]:
    t = data.treated
    rt = np.column_stack([data.y[t], data.s[t]]) - means[t][:, [Y1, S1]]
    rc = np.column_stack([data.y[~t], data.s[~t]]) - means[~t][:, [Y0, S0]]
    return rt.T @ rt, int(t.sum()), rc.T @ rc, int((~t).sum())


# ---------------------------------------------------------------------------
# Chain
# ---------------------------------------------------------------------------


class Sampler:
    """Holds the data, priors and proposal state for one chain."""

    def __init__(self, data: TrialData, priors: ModelPriors, model: str = "no-covariates", intercept: bool = True,
                 mh_steps: int = 5, use_likelihood: bool = True):
        if model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if model == "covariates" and data.d == 0:
            raise ValidationError("covariate model requires at least one covariate column")
        self.data = data
        self.priors = priors
        self.model = model
        self.mh_steps = mh_steps
        self.use_likelihood = use_likelihood
        self.design = design_matrix(data, intercept) if model == "covariates" else None
        if self.design is not None:
            self.mu_beta, self.sigma_beta = priors.coefficient_prior(self.design.shape[1])
        self.scale_block = AdaptiveBlock(K, 0.15)
        self.corr_block = AdaptiveBlock(N_CPC, 0.3)

    def initial_state(self) -> PosteriorState:
        data = self.data
        t = data.treated
        obs_t = np.column_stack([data.y[t], data.s[t]])
        obs_c = np.column_stack([data.y[~t], data.s[~t]])
        if self.design is None:
            mean = np.concatenate([obs_t.mean(axis=0), obs_c.mean(axis=0)])
            resid_t, resid_c = obs_t - mean[:2], obs_c - mean[2:]
        else:
            mean = np.zeros((K, self.design.shape[1]))
            xt, xc = self.design[t], self.design[~t]
            mean[:2] = np.linalg.lstsq(xt, obs_t, rcond=None)[0].T
            mean[2:] = np.linalg.lstsq(xc, obs_c, rcond=None)[0].T
            resid_t, resid_c = obs_t - xt @ mean[:2].T, obs_c - xc @ mean[2:].T
        sd = np.concatenate([_safe_sd(resid_t), _safe_sd(resid_c)])
        omega = np.eye(K)
        omega[0, 1] = omega[1, 0] = _safe_corr(resid_t)
        omega[2, 3] = omega[3, 2] = _safe_corr(resid_c)
        cpc = cholesky_to_cpc(np.linalg.cholesky(omega))
        return PosteriorState(mean=mean, sigma_scales=sd, cpc=cpc, completed=PotentialTable.from_trial(data))

    def target(self, state: PosteriorState) -> CovarianceTarget:
        if not self.use_likelihood:
            return CovarianceTarget(self.priors, use_likelihood=False)
        means = state.row_means(self.design)
        st, nt, sc, nc = observed_scatter(self.data, means)
        return CovarianceTarget(self.priors, st, nt, sc, nc)

    def update_covariance(self, state: PosteriorState, rng: np.random.Generator) -> tuple[float, float]:
        target = self.target(state)
        x = np.log(state.sigma_scales)
        u = np.arctanh(np.clip(state.cpc, -1 + 1e-15, 1 - 1e-15))
        lp = target(x, u)
        acc = np.zeros(2)
        for _ in range(self.mh_steps):
            prop = self.scale_block.propose(x, rng)
            lp_prop = target(prop, u)
            ok = math.log(rng.uniform()) < lp_prop - lp
            if ok:
                x, lp = prop, lp_prop
            self.scale_block.record(x, ok)
            acc[0] += ok
            prop = self.corr_block.propose(u, rng)
            lp_prop = target(x, prop)
            ok = math.log(rng.uniform()) < lp_prop - lp
            if ok:
                u, lp = prop, lp_prop
            self.corr_block.record(u, ok)
            acc[1] += ok
        state.sigma_scales = np.exp(x)
        state.cpc = np.tanh(u)
        return acc[0] / self.mh_steps, acc[1] / self.mh_steps

    def update_mean(self, state: PosteriorState, rng: np.random.Generator) -> np.ndarray:
        sigma = state.covariance
        vals = state.completed.values
        if self.design is None:
            state.mean = draw_mean(vals, sigma, self.priors.mu0, self.priors.sigma0, rng)
        else:
            state.mean = draw_coefficients(vals, self.design, sigma, self.mu_beta, self.sigma_beta, rng)
        return state.mean

    def freeze(self) -> None:
        self.scale_block.freeze()
        self.corr_block.freeze()

    def run(self, iters: int, burnin: int, rng: np.random.Generator, callback=None) -> PosteriorDraws:
        state = self.initial_state()
        theta = np.empty(iters)
        v_y = np.empty(iters)
        v_s = np.empty(iters)
        sig_tr = np.empty((iters, K))
        cor_tr = np.empty((iters, N_CPC))
        mean_tr = np.empty((iters,) + state.mean.shape)
        acc_tr = np.empty((iters, 2))
        for t in range(iters):
            if t == burnin:
                self.freeze()
            try:
                acc_tr[t] = self.update_covariance(state, rng)
                impute_missing(state, rng, self.design)
                self.update_mean(state, rng)
            except (np.linalg.LinAlgError, ValueError, FloatingPointError) as err:
                raise ChainError(t + 1, err) from err
            vy, vs = concordance(state.completed.values)
            v_y[t], v_s[t], theta[t] = vy, vs, vy - vs
            sig_tr[t] = state.sigma_scales
            omega = state.correlation
            cor_tr[t] = [omega[i, j] for i, j in OFFDIAG]
            mean_tr[t] = state.mean
            if callback is not None:
                callback(t, state)
        return PosteriorDraws(theta=theta, v_y=v_y, v_s=v_s, sigma=sig_tr, correlation=cor_tr, mean=mean_tr,
                              accept=acc_tr, model=self.model, burnin=burnin)


def _safe_sd(resid: np.ndarray) -> np.ndarray:
    if resid.shape[0] < 2:
        return np.ones(2)
    sd = resid.std(axis=0, ddof=1)
    return np.where(sd > 1e-8, sd, 1.0)


def _safe_corr(resid: np.ndarray) -> float:
    if resid.shape[0] < 3:
        return 0.0
    c = np.corrcoef(resid, rowvar=False)[0, 1]
    return float(np.clip(c, -0.95, 0.95)) if np.isfinite(c) else 0.0


def resolve_model(data: TrialData, model: str) -> str:
    if model in ("auto", None):
        return "covariates" if data.d > 0 else "no-covariates"
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    return model


def run_chain(data: TrialData, config: AnalysisConfig, model: str = "auto", stream: RngStream | None = None,
              use_likelihood: bool = True, callback=None) -> PosteriorDraws:
    """Run ``config.iters`` sweeps; identical seed/stream gives identical draws."""
    model = resolve_model(data, model)
    stream = stream or RngStream(int(config.seed))
    sampler = Sampler(data, config.priors, model=model, intercept=config.intercept, mh_steps=config.mh_steps,
                      use_likelihood=use_likelihood)
    return sampler.run(config.iters, config.burnin, stream.generator(), callback=callback)


def empirical_quantile(values, prob: float) -> float:
    """Order statistic ``ceil(prob * m)`` (1-based) of ``m`` values."""
    v = np.sort(np.asarray(values, dtype=float))
    m = v.size
    if m == 0:
        raise ValueError("no draws to take a quantile of")
    idx = max(1, math.ceil(prob * m - 1e-9))
    return float(v[min(idx, m) - 1])


def credible_decision(draws: PosteriorDraws, eta: float, alpha: float, burnin: int) -> BayesTestResult:
    """Valid iff the post-burn-in ``(1 - alpha)`` quantile of theta is below ``eta``."""
    if not 0 <= burnin < draws.theta.shape[0]:
        raise ValueError("burnin must be smaller than the number of draws")
    post = draws.theta[burnin:]
    q = empirical_quantile(post, 1.0 - alpha)
    return BayesTestResult(
        theta_quantile=q,
        eta=float(eta),
        alpha=alpha,
        valid=bool(q < eta),
        posterior_mean_v_y=float(draws.v_y[burnin:].mean()),
        posterior_mean_v_s=float(draws.v_s[burnin:].mean()),
        posterior_mean_theta=float(post.mean()),
    )


def bayes_test(data: TrialData, config: AnalysisConfig, model: str = "auto", stream: RngStream | None = None
               ) -> tuple[BayesTestResult, PosteriorDraws, ThresholdResult | None]:
    """Chain, then threshold (auto: from the posterior mean of V_Y), then decision."""
    draws = run_chain(data, config, model=model, stream=stream)
    thr = None
    if config.threshold == AUTO:
        v_y = float(draws.v_y[config.burnin :].mean())
        thr = select_threshold(
            ThresholdConfig(n=data.n, alpha=config.alpha, beta=config.beta, a=config.prior_a, b=config.prior_b),
            v_y=v_y,
        )
        eta = thr.eta
    else:
        eta = float(config.threshold)
    return credible_decision(draws, eta, config.alpha, config.burnin), draws, thr
