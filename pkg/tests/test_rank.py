import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from surrogate_eval import simlab
from surrogate_eval.core import TrialData, ValidationError
from surrogate_eval.rank import (
    _decide,
    auto_epsilon,
    delta_hat,
    delta_variance,
    mann_whitney_u,
    mann_whitney_u_bruteforce,
    min_detectable_u,
    placements,
    rank_test,
    variance_components,
)
from surrogate_eval.stats_math import make_rng


def trial(y_t, y_c, s_t=None, s_c=None):
    s_t = y_t if s_t is None else s_t
    s_c = y_c if s_c is None else s_c
    return TrialData(
        y=np.concatenate([y_t, y_c]),
        s=np.concatenate([s_t, s_c]),
        z=np.r_[np.ones(len(y_t)), np.zeros(len(y_c))],
    )


def component_variance(t, c):
    """Two-sample structural-component variance of one Mann-Whitney index,
    written from the pairwise kernel rather than from ranks."""
    t = np.asarray(t, float)[:, None]
    c = np.asarray(c, float)[None, :]
    kern = (t > c) + 0.5 * (t == c)
    v10 = kern.mean(axis=1)
    v01 = kern.mean(axis=0)
    return v10.var(ddof=1) / kern.shape[0] + v01.var(ddof=1) / kern.shape[1]


class TestMannWhitney:
    def test_separation(self):
        assert mann_whitney_u([10, 20], [1, 2]) == 1.0

    def test_enumeration(self):
        assert mann_whitney_u([2, 4], [1, 3]) == 0.75

    def test_tie(self):
        assert mann_whitney_u([1], [1]) == 0.5

    def test_empty(self):
        with pytest.raises(ValidationError, match="treated"):
            mann_whitney_u([], [1.0])

    @given(
        st.lists(st.integers(-5, 5), min_size=1, max_size=30),
        st.lists(st.integers(-5, 5), min_size=1, max_size=30),
    )
    def test_equals_bruteforce_with_ties(self, t, c):
        assert mann_whitney_u(t, c) == mann_whitney_u_bruteforce(t, c)

    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30, unique=True),
        st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30, unique=True),
    )
    def test_complement(self, t, c):
        if set(t) & set(c):
            return
        assert mann_whitney_u(t, c) + mann_whitney_u(c, t) == pytest.approx(1.0, abs=1e-12)

    # well-spaced grid values so floating-point rounding in f cannot merge neighbours
    @given(
        st.lists(st.integers(-160, 160).map(lambda k: k / 8), min_size=1, max_size=25),
        st.lists(st.integers(-160, 160).map(lambda k: k / 8), min_size=1, max_size=25),
    )
    def test_monotone_invariance(self, t, c):
        f = lambda v: np.exp(np.asarray(v) / 4.0) + 3.0 * np.asarray(v)
        assert mann_whitney_u(f(t), f(c)) == mann_whitney_u(t, c)

    def test_placements_average_to_u(self):
        rng = make_rng(5)
        t, c = rng.integers(0, 4, 17), rng.integers(0, 4, 11)
        v10, v01 = placements(t, c)
        u = mann_whitney_u(t, c)
        assert v10.mean() == pytest.approx(u)
        assert v01.mean() == pytest.approx(u)


class TestDeltaHat:
    def test_identical(self):
        assert delta_hat(trial([2.0, 4.0], [1.0, 3.0])) == 0.0

    def test_reversed(self):
        d = trial([2.0, 4.0], [1.0, 3.0], s_t=[-2.0, -4.0], s_c=[-1.0, -3.0])
        assert delta_hat(d) == 0.5

    def test_monotone_surrogate(self):
        rng = make_rng(1)
        y_t, y_c = rng.normal(1, 1, 20), rng.normal(0, 1, 20)
        assert delta_hat(trial(y_t, y_c, np.exp(y_t), np.exp(y_c))) == 0.0


class TestVariance:
    def test_perfect_dependence(self):
        rng = make_rng(2)
        d = trial(rng.normal(1, 1, 20), rng.normal(0, 1, 20))
        assert delta_variance(d) == 0.0

    def test_small_arm(self):
        with pytest.raises(ValidationError):
            delta_variance(trial([1.0], [0.0, 2.0]))

    def test_components_match_projection(self):
        rng = make_rng(3)
        d = simlab.generate_setting(simlab.get_setting(3), 60, rng)
        comp = variance_components(d)
        assert delta_variance(d) == pytest.approx(comp["var_y"] + comp["var_s"] - 2 * comp["cov_ys"], rel=1e-12)

    def test_independent_componentwise(self):
        rng = make_rng(4)
        y_t, y_c = rng.normal(1, 1, 40), rng.normal(0, 1, 40)
        s_t, s_c = rng.normal(0, 1, 40), rng.normal(0, 1, 40)
        d = trial(y_t, y_c, s_t, s_c)
        comp = variance_components(d)
        assert comp["var_y"] == pytest.approx(component_variance(y_t, y_c), rel=1e-12)
        assert comp["var_s"] == pytest.approx(component_variance(s_t, s_c), rel=1e-12)
        assert abs(comp["cov_ys"]) < 0.25 * np.sqrt(comp["var_y"] * comp["var_s"]) + 1e-4
        assert delta_variance(d) == pytest.approx(comp["var_y"] + comp["var_s"], rel=0.3)

    def test_simulation_oracle(self):
        # near-perfect surrogate with a weak effect so var(delta_hat) is not degenerate
        spec = simlab.SettingSpec(
            0, "weak effect, noisy linear surrogate",
            simlab.CovariateMixture((simlab._linear_surrogate_group(0.5, 0.9, 0.5),), (1.0,)),
        )
        rng = make_rng(6)
        reps = 10_000
        dh = np.empty(reps)
        est = np.empty(reps)
        for r in range(reps):
            d = simlab.generate_setting(spec, 50, rng)
            dh[r] = delta_hat(d)
            est[r] = delta_variance(d)
        assert est.mean() == pytest.approx(dh.var(ddof=1), rel=0.15)

    def test_bootstrap_agrees(self):
        d = simlab.generate_setting(simlab.get_setting(3), 80, make_rng(7))
        assert delta_variance(d, "bootstrap", n_boot=2000, seed=1) == pytest.approx(delta_variance(d), rel=0.3)

    def test_bootstrap_seeded(self):
        d = simlab.generate_setting(simlab.get_setting(3), 30, make_rng(8))
        assert delta_variance(d, "bootstrap", n_boot=200, seed=3) == delta_variance(d, "bootstrap", n_boot=200, seed=3)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            delta_variance(trial([1.0, 2.0], [0.0, 1.0]), "jackknife")


class TestDecision:
    def test_point_mass_below(self):
        assert _decide(0.6, 0.6, 0.0, 0.1, 0.05).valid

    def test_far_above(self):
        assert not _decide(0.9, 0.6, 1e-8, 0.1, 0.05).valid

    def test_boundary_is_not_valid(self):
        assert not _decide(0.75, 0.5, 0.0, 0.25, 0.05).valid

    def test_invariants(self):
        d = simlab.generate_setting(simlab.get_setting(3), 50, make_rng(9))
        res = rank_test(d, 0.2)
        assert res.delta_hat == res.u_y - res.u_s
        assert res.valid == (res.ci_upper < res.epsilon)
        assert res.to_dict()["decision"] == res.decision

    @given(st.floats(0.001, 0.5), st.floats(0.001, 0.5))
    @settings(max_examples=50, deadline=None)
    def test_ci_upper_monotone_in_alpha(self, a1, a2):
        d = simlab.generate_setting(simlab.get_setting(3), 40, make_rng(10))
        lo, hi = min(a1, a2), max(a1, a2)
        assert rank_test(d, 0.1, alpha=lo).ci_upper >= rank_test(d, 0.1, alpha=hi).ci_upper

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            rank_test(trial([1.0, 2.0], [0.0, 1.0]), 0.1, alpha=1.5)

    def test_setting1_rejects(self):
        spec = simlab.get_setting(1)
        rng = make_rng(11)
        valid = [rank_test(simlab.generate_setting(spec, 50, rng), "auto").valid for _ in range(500)]
        assert np.mean(valid) <= 0.05


class TestAutoEpsilon:
    def test_min_detectable_power(self):
        # plugging the returned U into the normal-approximation power gives 1 - beta
        n1, n0, alpha, beta = 25, 25, 0.05, 0.2
        u = min_detectable_u(n1, n0, alpha, beta)
        sd = np.sqrt((n1 + n0 + 1) / (12 * n1 * n0))
        power = stats.norm.sf(stats.norm.ppf(1 - alpha / 2) - (u - 0.5) / sd)
        assert power == pytest.approx(1 - beta, abs=1e-12)

    def test_shrinks_with_n(self):
        assert min_detectable_u(100, 100) < min_detectable_u(25, 25)

    def test_floor_at_zero(self):
        assert auto_epsilon(0.55, 25, 25) == 0.0
        assert auto_epsilon(0.95, 25, 25) == pytest.approx(0.95 - min_detectable_u(25, 25))

    def test_rank_test_auto(self):
        d = simlab.generate_setting(simlab.get_setting(2), 50, make_rng(12))
        res = rank_test(d, "auto")
        assert res.epsilon == pytest.approx(auto_epsilon(res.u_y, d.n1, d.n0))
