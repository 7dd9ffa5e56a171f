import math

import numpy as np
import pytest

from psirep import (
    Crossing,
    LocationModel,
    NormalVarianceModel,
    ParamInterval,
    PsiModel,
    SolveOptions,
    WeightedSample,
    comparison_function,
    estimate,
    locate_sign_change,
    sign_profile,
    theta1,
    theta1_value,
    weighted_psi_sum,
)
from psirep.errors import (
    BracketNotFound,
    ConfigError,
    DivisionNearZero,
    DomainEmpty,
    InvalidWeights,
    NonFiniteEvaluation,
    NotSignChanging,
)

import oracles


def step_model():
    return PsiModel(lambda x, t: 1.0 if t < x else -1.0, ParamInterval(), theta1_closed_form=lambda x: x)


class TestParamInterval:
    def test_rejects_degenerate(self):
        with pytest.raises(ConfigError):
            ParamInterval(1.0, 1.0)
        with pytest.raises(ConfigError):
            ParamInterval(math.nan, 1.0)

    def test_membership_is_open(self):
        iv = ParamInterval(0.0, 1.0)
        assert 0.5 in iv
        assert 0.0 not in iv and 1.0 not in iv

    @pytest.mark.parametrize(
        "lo, hi, probe",
        [(0.0, 2.0, 1.0), (0.0, math.inf, 1.0), (5.0, math.inf, 10.0), (-math.inf, -3.0, -6.0), (-math.inf, math.inf, 0.0)],
    )
    def test_default_probe(self, lo, hi, probe):
        assert ParamInterval(lo, hi).default_probe() == probe


class TestWeightedSample:
    def test_uniform(self):
        s = WeightedSample.uniform([1.0, 2.0])
        assert s.weights == (1.0, 1.0)
        assert s.n == 2 and s.total_weight == 2.0

    @pytest.mark.parametrize(
        "obs, w",
        [((), ()), ((1.0,), (1.0, 2.0)), ((1.0, 2.0), (0.0, 0.0)), ((1.0,), (-1.0,)), ((1.0,), (math.nan,)), ((1.0,), (math.inf,))],
    )
    def test_invalid(self, obs, w):
        with pytest.raises(InvalidWeights) as info:
            WeightedSample(obs, w)
        assert info.value.code == "CONFIG_INVALID_WEIGHTS"

    def test_active_skips_zero_weights(self):
        s = WeightedSample((1.0, 2.0, 3.0), (0.0, 1.0, 0.0))
        assert s.active() == [(2.0, 1.0)]


class TestLocateSignChange:
    def test_linear_root(self):
        r = locate_sign_change(lambda t: 3.0 - t, ParamInterval())
        assert r.theta == pytest.approx(3.0, abs=1e-12)
        assert r.crossing is Crossing.ZERO
        assert r.bracket_lo <= r.theta <= r.bracket_hi

    def test_polished_bracket_is_tight(self):
        r = locate_sign_change(lambda t: math.exp(-t) - 0.3, ParamInterval())
        assert r.width <= 4 * np.spacing(r.theta)
        assert r.theta == pytest.approx(-math.log(0.3), rel=1e-15)

    def test_unpolished_bracket_respects_tolerance(self):
        opts = SolveOptions(tol=1e-6, polish=False)
        r = locate_sign_change(lambda t: 2.0 - t, ParamInterval(), opts)
        assert r.width <= opts.width(r.theta)
        assert abs(r.theta - 2.0) <= opts.width(2.0)

    def test_jump_crossing(self):
        r = locate_sign_change(lambda t: 1.0 if t < 0.3 else -1.0, ParamInterval())
        assert r.crossing is Crossing.JUMP
        assert r.theta == pytest.approx(0.3, abs=1e-15)
        assert abs(r.residual) == 1.0

    def test_exact_zero_plateau_point(self):
        # zero only at t = 1, found exactly by bisection from a symmetric bracket
        r = locate_sign_change(lambda t: 1.0 - t, ParamInterval(0.0, 2.0))
        assert r.theta == 1.0 and r.residual == 0.0
        assert r.bracket_lo < 1.0 < r.bracket_hi

    def test_zero_plateau_with_wrong_sign_raises(self):
        # the first expansion probe lands on a zero plateau with negative values to its left
        def f(t):
            if t < 0.2:
                return 1.0
            return 0.0 if 0.9 <= t <= 1.1 else -1.0

        with pytest.raises(NotSignChanging):
            locate_sign_change(f, ParamInterval(), SolveOptions(initial_probe=0.1))

    def test_bounded_interval_approaches_boundary(self):
        r = locate_sign_change(lambda t: 1e-6 - t, ParamInterval(0.0, 1.0))
        assert r.theta == pytest.approx(1e-6, rel=1e-9)

    def test_far_root_found_by_expansion(self):
        r = locate_sign_change(lambda t: 1e12 - t, ParamInterval())
        assert r.theta == pytest.approx(1e12, rel=1e-12)

    def test_no_bracket(self):
        with pytest.raises(BracketNotFound) as info:
            locate_sign_change(lambda t: 1.0, ParamInterval(), SolveOptions(max_expansions=30))
        assert info.value.code == "SOLVER_BRACKET_NOT_FOUND"

    def test_increasing_function_has_no_decreasing_sign_change(self):
        with pytest.raises(BracketNotFound):
            locate_sign_change(lambda t: t, ParamInterval(), SolveOptions(max_expansions=30))

    def test_non_finite(self):
        with pytest.raises(NonFiniteEvaluation):
            locate_sign_change(lambda t: math.nan, ParamInterval())

    def test_probe_outside_interval(self):
        with pytest.raises(ConfigError):
            locate_sign_change(lambda t: -t, ParamInterval(0.0, 1.0), SolveOptions(initial_probe=2.0))

    def test_brent_matches_bisection(self):
        f = lambda t: math.tanh(2.0 - t) + 0.1 * (2.0 - t)
        a = locate_sign_change(f, ParamInterval())
        b = locate_sign_change(f, ParamInterval(), SolveOptions(use_brent=True))
        assert abs(a.theta - b.theta) <= 4 * np.spacing(2.0)
        assert b.iterations < a.iterations

    def test_agrees_with_dense_scan(self):
        f = lambda t: math.cos(t) - t
        r = locate_sign_change(f, ParamInterval(-2.0, 2.0))
        lo, hi = oracles.scan_sign_change(f, -2.0, 2.0)
        assert lo <= r.theta <= hi


class TestTheta1:
    def test_closed_form_preferred(self):
        nv = NormalVarianceModel(m=1.0)
        assert theta1_value(nv, 4.0) == 9.0

    def test_solver_agrees_with_closed_form(self):
        nv = NormalVarianceModel(m=1.0)
        assert theta1(nv, 4.0).theta == pytest.approx(9.0, rel=1e-14)

    def test_step_model(self):
        r = theta1(step_model(), 0.25)
        assert r.crossing is Crossing.JUMP
        assert r.theta == pytest.approx(0.25, abs=1e-15)


class TestEstimate:
    def test_example_two_points(self):
        nv = NormalVarianceModel(m=2.0)
        r = estimate(nv, WeightedSample.uniform((1.0, 3.0)))
        assert r.theta == pytest.approx(1.0, abs=1e-14)
        assert r.crossing is Crossing.ZERO

    def test_single_observation_at_center(self):
        # theta1 = 0 lies on the boundary of (0, inf); the solver walks toward it
        nv = NormalVarianceModel(m=0.0)
        with pytest.raises(BracketNotFound):
            estimate(nv, WeightedSample.uniform((0.0,)), SolveOptions(max_expansions=60))

    def test_against_rational_oracle(self, rng):
        for _ in range(50):
            m = rng.uniform(-5, 5)
            xs = rng.uniform(m - 10, m + 10, 7)
            ws = rng.uniform(0, 5, 7)
            r = estimate(NormalVarianceModel(m), WeightedSample(tuple(xs), tuple(ws)))
            exact = oracles.weighted_mean_square(xs, ws, m)
            assert abs(r.theta - exact) <= 1e-12 * (1 + exact)

    def test_mean_model_is_weighted_mean(self):
        r = estimate(LocationModel(), WeightedSample((1.0, 2.0, 6.0), (1.0, 1.0, 2.0)))
        assert r.theta == pytest.approx(3.75, abs=1e-14)

    def test_huber_with_outlier(self):
        xs = (0.0, 0.1, -0.1, 0.2, 100.0)
        r = estimate(LocationModel("huber", k=1.0), WeightedSample.uniform(xs))
        # four clean points inside the linear zone plus one clipped term
        expected = (0.2 + 1.0) / 4
        assert r.theta == pytest.approx(expected, abs=1e-12)

    def test_zero_weights_ignored(self):
        nv = NormalVarianceModel()
        a = estimate(nv, WeightedSample((1.0, 2.0, 50.0), (1.0, 1.0, 0.0)))
        b = estimate(nv, WeightedSample((1.0, 2.0), (1.0, 1.0)))
        assert a.theta == b.theta

    def test_rejects_plain_sequences(self):
        with pytest.raises(InvalidWeights):
            estimate(NormalVarianceModel(), [1.0, 2.0])

    def test_weighted_sum_is_fsum(self):
        nv = NormalVarianceModel()
        s = WeightedSample((1.0, 1e8, -1e8), (1.0, 1.0, 1.0))
        f = weighted_psi_sum(nv, s)
        direct = math.fsum(nv.psi(x, 2.0) for x in s.observations)
        assert f(2.0) == direct


class TestComparisonFunction:
    def test_matches_exact_rational_values(self):
        nv = NormalVarianceModel(m=0.0)
        x, y = math.sqrt(0.5), 2.0
        r = comparison_function(nv, x, y)
        assert (r.lo, r.hi) == pytest.approx((0.5, 4.0))
        for s in (0.75, 1.0, 2.0, 3.5):
            assert r(s) == pytest.approx(float(oracles.nv_comparison_exact(x * x, 4, s)), rel=1e-14)

    def test_outside_domain(self):
        r = comparison_function(NormalVarianceModel(), 1.0, 2.0)
        with pytest.raises(ValueError):
            r(0.5)

    def test_empty_domain(self):
        with pytest.raises(DomainEmpty):
            comparison_function(NormalVarianceModel(), 2.0, 1.0)
        with pytest.raises(DomainEmpty):
            comparison_function(NormalVarianceModel(), 2.0, -2.0)

    def test_guard(self):
        # psi(y, .) vanishes inside the domain
        model = PsiModel(lambda x, t: (x - t) * (t - 0.5) ** 2 if x > 1 else x - t, ParamInterval(), theta1_closed_form=lambda x: x)
        r = comparison_function(model, 0.0, 2.0)
        with pytest.raises(DivisionNearZero):
            r(0.5)


class TestSignProfile:
    def test_clean_profile(self):
        assert sign_profile(lambda t: 1.0 - t, 1.0, -1.0, 3.0) is None

    def test_reports_first_offender(self):
        f = lambda t: t * (t - 1.0) * (t - 2.0)
        t, v = sign_profile(f, 1.0, 0.1, 2.5)
        assert t > 2.0 and v > 0
        t, v = sign_profile(f, 1.0, -0.5, 2.5)
        assert t < 0.0 and v < 0
