import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from psirep import (
    ConvexifiedLoss,
    EnvelopeConfig,
    LocationModel,
    MinimizeOptions,
    MonotoneWeight,
    NormalVarianceModel,
    OscillatingModel,
    ParamInterval,
    PsiModel,
    QuadratureOptions,
    WeightedSample,
    argmin_objective,
    build_monotone_weight,
    convexified_loss,
    estimate,
    log_derivative_ratio,
    lower_envelope,
    normal_variance_reference,
    objective_sum,
    one_sided_fill,
    q_star_envelope,
    weighted_psi,
    working_grid,
    working_span,
)
from psirep.errors import (
    AtTheta1,
    BracketNotFound,
    ConfigError,
    EnvelopeOrderViolated,
    NonFiniteEvaluation,
    OutsideGridSpan,
    RichnessViolated,
    TauOutsideGrid,
)

import oracles


def nv_family(m, thetas):
    return tuple(m + math.sqrt(v) for v in thetas)


class TestLogDerivativeRatio:
    def test_closed_form(self):
        nv = NormalVarianceModel(m=0.0)
        for a, s in [(4, 1), (2, 3), (8, 1)]:
            got = log_derivative_ratio(nv, math.sqrt(a), s)
            assert got == pytest.approx(float(oracles.nv_ratio_exact(a, s)), rel=1e-13)

    def test_finite_difference_fallback(self):
        nv = NormalVarianceModel(m=0.0)
        plain = PsiModel(nv.psi, nv.theta, theta1_closed_form=nv.theta1_closed_form)
        for a, s in [(4, 1), (2, 3)]:
            assert log_derivative_ratio(plain, math.sqrt(a), s) == pytest.approx(
                float(oracles.nv_ratio_exact(a, s)), rel=1e-7
            )

    def test_excluded_at_theta1(self):
        with pytest.raises(AtTheta1):
            log_derivative_ratio(NormalVarianceModel(), 2.0, 4.0)
        with pytest.raises(AtTheta1):
            log_derivative_ratio(NormalVarianceModel(), 2.0, 4.1, exclusion_radius=0.5)


class TestEnvelope:
    def test_three_point_family(self):
        nv = NormalVarianceModel(m=0.0)
        cfg = EnvelopeConfig(nv_family(0.0, (2, 4, 8)), [1.0], require_richness=False)
        env = q_star_envelope(nv, cfg)
        assert abs(env.q_lower[0] - float(oracles.THREE_POINT_Q_LOWER)) <= 1e-12
        assert math.isinf(env.q_upper[0]) and math.isinf(env.gap[0])

    def test_richness_required(self):
        nv = NormalVarianceModel(m=0.0)
        with pytest.raises(RichnessViolated) as info:
            q_star_envelope(nv, EnvelopeConfig(nv_family(0.0, (2, 4, 8)), [1.0, 3.0]))
        assert info.value.t == 1.0 and info.value.side == "below"
        assert info.value.code == "RICHNESS_VIOLATED"

    def test_ordered_and_bracketing_exact_q(self):
        nv = NormalVarianceModel(m=1.0)
        grid = np.linspace(0.5, 4.0, 50)
        env = q_star_envelope(nv, EnvelopeConfig(nv_family(1.0, (0.1, 0.3, 1, 3, 10, 30)), grid))
        assert np.all(env.gap >= 0)
        assert np.all(env.q_lower <= -2 / grid) and np.all(-2 / grid <= env.q_upper)

    def test_brute_force_max_min(self):
        nv = NormalVarianceModel(m=0.0)
        thetas = (0.2, 0.6, 1.5, 2.5, 7.0)
        grid = np.array([0.4, 1.0, 2.0])
        env = q_star_envelope(nv, EnvelopeConfig(nv_family(0.0, thetas), grid))
        for i, t in enumerate(grid):
            above = [float(oracles.nv_ratio_exact(a, t)) for a in thetas if a > t]
            below = [float(oracles.nv_ratio_exact(a, t)) for a in thetas if a < t]
            assert env.q_lower[i] == pytest.approx(max(above), rel=1e-13)
            assert env.q_upper[i] == pytest.approx(min(below), rel=1e-13)

    def test_order_violation_for_oscillating_model(self):
        om = OscillatingModel(1.0, 10.0)
        fam = tuple(np.linspace(-2.0, 2.0, 9))
        with pytest.raises(EnvelopeOrderViolated) as info:
            q_star_envelope(om, EnvelopeConfig(fam, np.linspace(-1.5, 1.5, 61)))
        err = info.value
        assert err.q_lower > err.q_upper and -1.5 <= err.t <= 1.5

    def test_grid_outside_theta(self):
        nv = NormalVarianceModel()
        with pytest.raises(ConfigError):
            q_star_envelope(nv, EnvelopeConfig((1.0, 2.0), [0.0, 1.0]))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            EnvelopeConfig((), [0.0, 1.0])
        with pytest.raises(ConfigError):
            EnvelopeConfig((1.0,), [1.0, 0.0])
        with pytest.raises(ConfigError):
            EnvelopeConfig((1.0,), [0.0, 1.0], exclusion_radius=0.0)

    def test_location_model_ratios_are_minus_inverse_residual(self):
        lm = LocationModel()
        env = q_star_envelope(lm, EnvelopeConfig((-2.0, -1.0, 1.0, 3.0), [0.0, 0.5]))
        np.testing.assert_allclose(env.q_lower, [-1 / 3, -1 / 2.5])
        np.testing.assert_allclose(env.q_upper, [0.5, 0.4])

    def test_lower_envelope_callable_agrees(self):
        nv = NormalVarianceModel(m=0.0)
        fam = nv_family(0.0, (0.1, 1, 10, 100))
        grid = np.linspace(0.5, 5, 20)
        q = lower_envelope(nv, fam)
        env = q_star_envelope(nv, EnvelopeConfig(fam, grid))
        np.testing.assert_array_equal(q(grid), env.q_lower)
        assert np.shape(q(2.0)) == ()

    def test_one_sided_fill(self):
        t = np.array([0.5, 1.0, 2.0])
        q = one_sided_fill(t, np.array([-1.0, -np.inf, -3.0]), np.array([np.inf, -0.5, 1.0]))
        np.testing.assert_array_equal(q, [-1.0, -0.5, -3.0])
        with pytest.raises(RichnessViolated):
            one_sided_fill(t, np.full(3, -np.inf), np.array([1.0, np.inf, 1.0]))


class TestMonotoneWeight:
    def test_exact_q_reproduces_p(self):
        ref = normal_variance_reference(0.0, 2.0)
        grid = np.linspace(0.5, 8.0, 128)
        w = build_monotone_weight(ref.q_star, grid, tau=2.0)
        assert w(2.0) == 1.0
        assert w.interpolation == "hermite"
        np.testing.assert_allclose(w(grid), ref.p(grid), rtol=1e-12)
        between = np.linspace(0.5, 8.0, 3001)
        np.testing.assert_allclose(w(between), ref.p(between), rtol=1e-7)

    def test_interpolation_stays_monotone_near_singularity(self):
        # q = -2/s varies by orders of magnitude across the first cell
        grid = np.linspace(1e-5, 150.0, 512)
        w = build_monotone_weight(lambda s: -2.0 / s, grid, quadrature=QuadratureOptions(refine=1))
        ts = np.linspace(grid[0], grid[2], 2001)
        assert np.all(np.diff(w.log_p(ts)) >= 0)

    def test_fast_cells_are_split(self):
        grid = np.linspace(0.005, 150.0, 512)
        w = build_monotone_weight(lambda s: -2.0 / s, grid, tau=75.0)
        h = np.diff(w.grid)
        assert h[0] < 1e-3 * (grid[1] - grid[0])
        assert np.all(np.isin(grid, w.grid))
        ts = np.geomspace(0.005, 150.0, 4001)
        np.testing.assert_allclose(w(ts), (ts / 75.0) ** 2, rtol=1e-9)

    def test_split_respects_node_budget(self):
        grid = np.linspace(0.005, 150.0, 64)
        w = build_monotone_weight(lambda s: -2.0 / s, grid, quadrature=QuadratureOptions(refine=1, max_nodes=100))
        # the grid plus the inserted anchor
        assert w.grid.size == 65

    def test_tau_default_and_outside(self):
        grid = np.linspace(1.0, 3.0, 5)
        assert build_monotone_weight(lambda t: 0 * t, grid).tau == 2.0
        with pytest.raises(TauOutsideGrid):
            build_monotone_weight(lambda t: 0 * t, grid, tau=5.0)

    def test_constant_q(self):
        w = build_monotone_weight(lambda t: np.full_like(t, 0.5), np.linspace(0.0, 4.0, 9), tau=1.0)
        assert w(3.0) == pytest.approx(math.exp(-1.0), rel=1e-14)

    def test_array_q_uses_smooth_interpolant(self):
        ref = normal_variance_reference(0.0, 1.0)
        grid = np.linspace(0.25, 4.0, 512)
        w = build_monotone_weight(ref.q_star(grid), grid, tau=1.0)
        np.testing.assert_allclose(w(grid), ref.p(grid), rtol=1e-6)

    def test_array_q_shape_checked(self):
        with pytest.raises(ConfigError):
            build_monotone_weight(np.zeros(3), np.linspace(0, 1, 4))

    def test_non_finite_q(self):
        with pytest.raises(NonFiniteEvaluation), np.errstate(divide="ignore"):
            build_monotone_weight(lambda t: 1.0 / (t - 0.5), np.linspace(0.0, 1.0, 3))
        with pytest.raises(NonFiniteEvaluation):
            build_monotone_weight(np.array([0.0, np.inf, 1.0]), np.linspace(0.0, 1.0, 3))

    def test_outside_span(self):
        w = MonotoneWeight.constant(0.0, 1.0)
        assert w(0.5) == 1.0
        with pytest.raises(OutsideGridSpan):
            w(1.5)

    def test_rebased(self):
        w = build_monotone_weight(lambda t: np.ones_like(t), np.linspace(0.0, 2.0, 3), tau=0.0)
        r = w.rebased(1.0)
        assert r(1.0) == 1.0
        assert r(2.0) == pytest.approx(w(2.0) / w(1.0), rel=1e-14)
        with pytest.raises(TauOutsideGrid):
            w.rebased(0.123456)

    def test_from_log_p(self):
        w = MonotoneWeight.from_log_p(lambda t: -t, np.linspace(0.0, 2.0, 3), tau=0.5)
        assert w.tau == 0.5 and 0.5 in w.grid
        assert w(1.7) == pytest.approx(math.exp(-1.2), rel=1e-15)

    @given(st.floats(0.3, 0.9), st.floats(1.1, 3.0))
    def test_weighted_product_linear_with_exact_p(self, a, s):
        ref = normal_variance_reference(0.0, 1.0)
        nv = NormalVarianceModel(0.0, 1.0)
        w = ref.weight(np.linspace(0.25, 4.0, 16))
        prod = weighted_psi(nv, w, math.sqrt(a))
        assert prod(s) == pytest.approx(ref.weighted_product(math.sqrt(a), s), rel=1e-13, abs=1e-15)


class TestConvexifiedLoss:
    @pytest.fixture
    def setup(self):
        m, s0 = 0.5, 1.5
        nv = NormalVarianceModel(m, s0)
        grid = np.linspace(0.25 * s0, 4 * s0, 512)
        w = build_monotone_weight(lambda s: -2.0 / s, grid, tau=s0)
        return nv, w, oracles.nv_rho_star(m, s0), m

    @pytest.mark.parametrize("rule", ["gauss", "simpson"])
    def test_matches_symbolic(self, setup, rule):
        nv, w, rho, m = setup
        loss = ConvexifiedLoss(nv, w, QuadratureOptions(loss_rule=rule))
        for a in (0.5, 1.0, 3.3):
            z = m + math.sqrt(a)
            for t in (0.4, 1.0, 2.9, 5.9):
                exact = float(rho(z, t))
                assert convexified_loss(loss, z, t) == pytest.approx(exact, rel=1e-6)

    def test_zero_at_theta1_and_convex(self, setup):
        nv, w, _, m = setup
        loss = ConvexifiedLoss(nv, w)
        z = m + 1.2
        assert convexified_loss(loss, z, 1.44) == 0.0
        ts = np.linspace(0.4, 5.9, 200)
        vals = loss.table(z)(ts)
        assert np.all(vals >= 0)
        second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
        assert second.min() >= -1e-8 * np.abs(vals).max()

    def test_derivative_is_minus_weighted_psi(self, setup):
        nv, w, _, m = setup
        loss = ConvexifiedLoss(nv, w)
        table = loss.table(m + 2.0)
        for t in (0.6, 2.0, 5.0):
            fd = oracles.central_difference(table, t, 1e-5)
            assert fd == pytest.approx(-w(t) * nv.psi(m + 2.0, t), rel=1e-6)

    def test_many_and_total(self, setup):
        nv, w, rho, m = setup
        loss = ConvexifiedLoss(nv, w)
        zs = [m + 1.0, m - 1.5, m + 1.0]
        ts = [0.9, 2.0, 3.0]
        np.testing.assert_allclose(loss.many(zs, ts), [float(rho(z, t)) for z, t in zip(zs, ts)], rtol=1e-6)
        s = WeightedSample(tuple(zs), (1.0, 2.0, 0.5))
        total = loss.total(s)
        expected = math.fsum(wt * float(rho(z, 2.5)) for z, wt in zip(zs, s.weights))
        assert total(2.5) == pytest.approx(expected, rel=1e-6)

    def test_total_matches_tables_at_nodes(self, setup):
        nv, w, _, m = setup
        loss = ConvexifiedLoss(nv, w)
        zs = (m + 1.0, m - 1.5, m + 0.8, m + 2.1)
        s = WeightedSample(zs, (1.0, 2.0, 0.5, 0.0))
        total = loss.total(s)
        tables = [loss.table(z) for z in zs[:3]]
        probes = [w.grid[0], w.grid[7], 1.0, 0.64, 2.25, 1.7, w.grid[-1]]
        for t in probes:
            expected = math.fsum(wt * float(tb(t)) for wt, tb in zip(s.weights, tables))
            assert total(t) == pytest.approx(expected, rel=1e-13, abs=1e-15)
        with pytest.raises(OutsideGridSpan):
            total(w.grid[-1] + 1.0)

    def test_theta1_outside_span(self, setup):
        nv, w, _, m = setup
        with pytest.raises(OutsideGridSpan):
            convexified_loss(ConvexifiedLoss(nv, w), m + 10.0, 1.0)

    def test_unknown_rule(self, setup):
        nv, w, _, m = setup
        with pytest.raises(ConfigError):
            ConvexifiedLoss(nv, w, QuadratureOptions(loss_rule="midpoint")).table(m + 1.0)

    def test_scalar_model_path(self):
        lm = LocationModel()
        scalar = PsiModel(lambda x, t: float(x - t), lm.theta, theta1_closed_form=lambda x: x, continuous=True)
        w = MonotoneWeight.constant(-3.0, 3.0)
        a = ConvexifiedLoss(lm, w)
        b = ConvexifiedLoss(scalar, w)
        assert convexified_loss(a, 1.0, -2.0) == pytest.approx(4.5, rel=1e-13)
        assert convexified_loss(b, 1.0, -2.0) == pytest.approx(4.5, rel=1e-13)


class TestArgmin:
    def test_quadratic(self):
        t = argmin_objective(lambda t: (t - 3.0) ** 2, ParamInterval())
        assert abs(t - 3.0) <= 1e-7 * 4

    def test_bounded_interval(self):
        t = argmin_objective(lambda t: t + 1.0 / t, ParamInterval(0.0, math.inf))
        assert t == pytest.approx(1.0, abs=2e-7)

    def test_minimum_at_probe(self):
        t = argmin_objective(lambda t: abs(t), ParamInterval())
        assert abs(t) <= 1e-7

    def test_unbounded_decrease(self):
        with pytest.raises(BracketNotFound):
            argmin_objective(lambda t: -t, ParamInterval(), MinimizeOptions(max_expansions=20))

    def test_nan(self):
        with pytest.raises(NonFiniteEvaluation):
            argmin_objective(lambda t: math.nan, ParamInterval())

    def test_nll_argmin_is_estimate(self, rng):
        for _ in range(10):
            m = rng.uniform(-5, 5)
            xs, ws = rng.uniform(m - 10, m + 10, 12), rng.uniform(0, 5, 12)
            nv = NormalVarianceModel(m)
            s = WeightedSample(tuple(xs), tuple(ws))
            est = estimate(nv, s).theta
            got = argmin_objective(objective_sum(nv.rho, s), nv.theta)
            assert abs(got - est) <= 2e-7 * (1 + est)


class TestWorkingSpan:
    def test_stays_inside_theta(self):
        nv = NormalVarianceModel(m=0.0)
        lo, hi = working_span(nv, [1.0, 3.0])
        assert 0.0 < lo < 1.0 and hi == 13.0
        assert lo == 0.5

    def test_single_point(self):
        assert working_span(LocationModel(), [2.0]) == (1.0, 3.0)

    def test_grid(self):
        g = working_grid(LocationModel(), [0.0, 1.0], points=5)
        np.testing.assert_allclose(g, np.linspace(-0.5, 1.5, 5))
