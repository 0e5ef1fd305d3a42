import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from mvgrad.bismut import estimate_intrinsic
from mvgrad.errors import UnequalSupport, UnsupportedScenario
from mvgrad.measure import EmpiricalMeasure
from mvgrad.model import linear_schedule
from mvgrad.oracle import (finite_difference_intrinsic, fit_loglog_slope,
                           gaussian_quadrature_reference, moment_report,
                           richardson_intrinsic, stability_report,
                           tv_gradient_scaling, tv_sign_reference)
from mvgrad.scenarios import (build_family, constant_observable,
                              coord_observable, coordinate_field,
                              identity_field, sign_observable, sine_field,
                              tanh_observable)
from mvgrad.simulate import TimeGrid

from conftest import brownian_model, gaussian_cloud, mfou_model

const_e1 = coordinate_field(0, 1.0)


class TestFiniteDifference:
    def test_constant_payoff_exactly_zero(self):
        model = mfou_model()
        mu0 = gaussian_cloud(200, seed=1)
        est = finite_difference_intrinsic(model, mu0, const_e1,
                                          constant_observable(3.0), 0.5,
                                          TimeGrid(0.5, 50), 0.1, 2)
        assert est.value == 0.0
        assert est.stderr == 0.0

    def test_affine_flow_eps_independent(self):
        # linear dynamics and payoff: the quotient is exactly linear in eps,
        # so different ladder entries agree to roundoff
        model = brownian_model()
        mu0 = gaussian_cloud(500, seed=3)
        grid = TimeGrid(0.5, 50)
        vals = [finite_difference_intrinsic(model, mu0, identity_field(),
                                            coord_observable(0), 0.5, grid,
                                            eps, 4).value
                for eps in (0.1, 0.05, 0.025)]
        assert abs(vals[0] - vals[1]) < 1e-11
        assert abs(vals[1] - vals[2]) < 1e-11
        # and equals the sample phi-mean by direct computation
        assert vals[0] == pytest.approx(float(mu0.points.mean()), abs=1e-11)

    def test_richardson_matches_estimator(self):
        model = mfou_model()
        mu0 = gaussian_cloud(3000, seed=5)
        grid = TimeGrid(1.0, 300)
        est = estimate_intrinsic(model, mu0, const_e1, coord_observable(0),
                                 1.0, grid, linear_schedule(1.0), 6)
        rich = richardson_intrinsic(model, mu0, const_e1, coord_observable(0),
                                    1.0, grid, 0.05, 6)
        gap = abs(est.value - rich.value)
        assert gap <= 3.0 * math.hypot(est.stderr, rich.stderr)

    def test_richardson_improves_order_on_smooth_nonlinear(self):
        # quadratic bias term: plain quotients drift linearly in eps while
        # the extrapolated pair cancels that slope
        model = build_family("meanfield_sine")
        mu0 = gaussian_cloud(2000, seed=7)
        grid = TimeGrid(0.5, 100)
        phi = sine_field()
        f = coord_observable(0)

        def fd(eps):
            return finite_difference_intrinsic(model, mu0, phi, f, 0.5, grid,
                                               eps, 8).value

        def rich(eps):
            return richardson_intrinsic(model, mu0, phi, f, 0.5, grid, eps, 8).value

        fd_gap = abs(fd(0.2) - fd(0.05))
        rich_gap = abs(rich(0.2) - rich(0.05))
        assert rich_gap < fd_gap / 3.0

    def test_eps_validation(self):
        model = brownian_model()
        mu0 = gaussian_cloud(8, seed=0)
        with pytest.raises(ValueError):
            finite_difference_intrinsic(model, mu0, const_e1, coord_observable(0),
                                        0.5, TimeGrid(0.5, 5), 0.0, 0)


class TestQuadratureReference:
    def test_brownian_sine(self):
        val = gaussian_quadrature_reference("brownian", "sin", 1.0, "const_e1", x0=0.0)
        assert val == pytest.approx(math.exp(-0.5), abs=1e-10)

    def test_ou_linear(self):
        val = gaussian_quadrature_reference("ou", "coord1", 1.0, "const_e1", x0=0.0)
        assert val == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_constant_payoff(self):
        val = gaussian_quadrature_reference("brownian", "const1", 1.0, "const_e1")
        assert val == pytest.approx(0.0, abs=1e-14)

    def test_meanfield_ou_constant_direction(self):
        val = gaussian_quadrature_reference("meanfield_ou", "coord1", 1.0, "const_e1")
        assert val == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_ou_identity_direction_scales_with_start(self):
        val = gaussian_quadrature_reference("ou", "coord1", 1.0, "identity", x0=2.0)
        assert val == pytest.approx(2.0 * math.exp(-1.0), abs=1e-12)

    def test_negative_direction(self):
        plus = gaussian_quadrature_reference("brownian", "sin", 1.0, "const_e1", x0=0.0)
        minus = gaussian_quadrature_reference("brownian", "sin", 1.0,
                                              "neg_const_e1", x0=0.0)
        assert minus == pytest.approx(-plus, abs=1e-14)

    def test_sign_reference_from_point_mass(self):
        val = gaussian_quadrature_reference("brownian", "sign0", 0.25, "const_e1",
                                            x0=0.0)
        assert val == pytest.approx(math.sqrt(2.0 / (math.pi * 0.25)), rel=1e-12)

    def test_quadrature_error_below_budget(self):
        # independent check through adaptive quadrature of the same integral
        s = 1.0  # brownian noise std at t=1

        def integrand(g, x0):
            return math.cos(x0 + g) * norm.pdf(g, scale=s)

        for x0 in (0.0, 0.7):
            direct, _ = integrate.quad(integrand, -12, 12, args=(x0,))
            gh = gaussian_quadrature_reference("brownian", "sin", 1.0,
                                               "const_e1", x0=x0)
            assert abs(gh - direct) < 1e-8

    def test_gaussian_initial_law_with_quadrature(self):
        # registry brownian starts from N(0,1): E cos(X_0 + G) over both
        def integrand(g, x0):
            return math.cos(x0 + g) * norm.pdf(g) * norm.pdf(x0)

        direct, _ = integrate.dblquad(integrand, -10, 10, -10, 10, epsabs=1e-12)
        gh = gaussian_quadrature_reference("brownian", "sin", 1.0, "const_e1")
        assert abs(gh - direct) < 1e-8

    def test_unsupported_combinations(self):
        with pytest.raises(UnsupportedScenario):
            gaussian_quadrature_reference("trig", "sin", 1.0, "const_e1")
        with pytest.raises(UnsupportedScenario):
            gaussian_quadrature_reference("brownian", "tanh", 1.0, "const_e1")
        with pytest.raises(UnsupportedScenario):
            gaussian_quadrature_reference("brownian", "sign0", 1.0, "const_e1")
        with pytest.raises(UnsupportedScenario):
            gaussian_quadrature_reference("brownian", "sin", 1.0, "sine_field")


class TestTvSignReference:
    def test_matches_direct_quadrature(self):
        c, sigma, t = 0.5, 1.0, 0.2
        theta = c / 2.0
        s = sigma * math.sqrt(t)

        def gap_by_quad():
            f = lambda x: math.copysign(1.0, x - theta)
            lhs, _ = integrate.quad(lambda x: f(x) * norm.pdf(x, 0.0, s), -12, 12,
                                    points=[theta])
            rhs, _ = integrate.quad(lambda x: f(x) * norm.pdf(x, c, s), -12, 12,
                                    points=[theta])
            return abs(lhs - rhs)

        assert tv_sign_reference(c, sigma, t) == pytest.approx(gap_by_quad(), abs=1e-10)

    def test_never_exceeds_tv_range(self):
        for t in (1e-4, 0.01, 1.0, 10.0):
            assert tv_sign_reference(1.0, 1.0, t) <= 2.0

    def test_diffusive_slope_for_large_t(self):
        ts = [10.0, 20.0, 40.0]
        vals = [tv_sign_reference(0.5, 1.0, t) for t in ts]
        slope = fit_loglog_slope(ts, vals)
        assert slope == pytest.approx(-0.5, abs=0.01)


class TestFitSlope:
    def test_exact_power_law(self):
        ts = [0.1, 0.2, 0.4]
        vals = [3.0 * t ** (-0.5) for t in ts]
        assert fit_loglog_slope(ts, vals) == pytest.approx(-0.5, abs=1e-12)

    def test_positive_values_required(self):
        with pytest.raises(ValueError):
            fit_loglog_slope([1.0, 2.0], [1.0, 0.0])


class TestStabilityReport:
    def test_identical_clouds_degenerate(self):
        model = mfou_model()
        mu0 = gaussian_cloud(64, seed=9)
        rep = stability_report(model, mu0, mu0, 0.5, TimeGrid(0.5, 50), 10)
        assert rep.degenerate
        assert rep.sup_ratio == 0.0 and rep.terminal_ratio == 0.0

    def test_brownian_translation_exact(self):
        # b = 0: the synchronous gap is the constant initial shift, both
        # ratios are exactly one
        model = brownian_model()
        mu0 = gaussian_cloud(128, seed=11)
        nu0 = mu0.shifted([0.7])
        rep = stability_report(model, mu0, nu0, 0.5, TimeGrid(0.5, 50), 12)
        assert rep.initial_distance == pytest.approx(0.7, abs=1e-12)
        assert rep.sup_ratio == pytest.approx(1.0, abs=1e-10)
        assert rep.terminal_ratio == pytest.approx(1.0, abs=1e-10)

    def test_meanfield_ou_contracts(self):
        model = mfou_model(a=1.0, kappa=0.5)
        mu0 = gaussian_cloud(256, seed=13)
        rep = stability_report(model, mu0, mu0.shifted([0.5]), 1.0,
                               TimeGrid(1.0, 200), 14)
        assert rep.terminal_ratio <= 1.0 + 1e-9
        assert rep.sup_ratio <= 1.0 + 1e-9

    def test_unequal_sizes_rejected(self):
        model = brownian_model()
        with pytest.raises(UnequalSupport):
            stability_report(model, gaussian_cloud(8, seed=0),
                             gaussian_cloud(9, seed=1), 0.5, TimeGrid(0.5, 5), 0)

    def test_json_carries_provenance(self):
        import json
        model = brownian_model()
        mu0 = gaussian_cloud(32, seed=21)
        rep = stability_report(model, mu0, mu0.shifted([0.3]), 0.2,
                               TimeGrid(0.2, 10), 22)
        payload = json.loads(json.dumps(rep.to_json_dict()))
        assert payload["seed"] == 22
        assert payload["n_particles"] == 32
        assert payload["n_steps"] == 10


class TestMomentReport:
    def test_frozen_dynamics_ratio_below_one(self):
        model = build_family("affine", d=1, a=0.0, kappa=0.0, sigma=0.0)
        clouds = [gaussian_cloud(128, std=s, seed=15) for s in (0.5, 2.0)]
        # zero drift and noise: sup equals the initial moment exactly
        rep = moment_report(model, clouds, 0.2, TimeGrid(0.2, 10), 16,
                            check_ellipticity=False)
        for i0, sup, ratio in zip(rep.initial_moments, rep.sup_moments, rep.ratios):
            assert sup == pytest.approx(i0, abs=1e-12)
            assert ratio == pytest.approx(i0 / (1.0 + i0), abs=1e-12)
            assert ratio < 1.0

    def test_brownian_second_moment_growth(self):
        model = brownian_model()
        n = 20_000
        mu0 = gaussian_cloud(n, seed=17)
        t = 0.5
        rep = moment_report(model, [mu0], t, TimeGrid(t, 50), 18)
        # independent increments: E|X_t|^2 = E|X_0|^2 + t
        expected_sup = rep.initial_moments[0] + t
        assert rep.sup_moments[0] == pytest.approx(expected_sup,
                                                   abs=4.0 * t * math.sqrt(6.0 / n))

    def test_dissipative_large_start_bounded(self):
        model = mfou_model(a=1.0, kappa=0.5)
        big = gaussian_cloud(256, std=10.0, seed=19)
        rep = moment_report(model, [big], 1.0, TimeGrid(1.0, 100), 20)
        assert rep.max_ratio <= 1.0 + 1e-6
        assert rep.to_json_dict()["n_particles"] == 256
        assert len(rep.rows()) == 1


class TestTvScaling:
    def _point_pair(self, n, c):
        mu0 = EmpiricalMeasure(np.zeros((n, 1)))
        nu0 = EmpiricalMeasure(np.full((n, 1), c))
        return mu0, nu0

    def test_identical_laws_zero_gap(self):
        model = brownian_model()
        mu0, _ = self._point_pair(500, 0.5)
        rep = tv_gradient_scaling(model, mu0, mu0, (0.1, 0.2), [sign_observable(0.3)],
                                  dt=0.01, seed=21)
        assert all(g == 0.0 for g in rep.gaps)
        assert rep.slope is None

    def test_constant_dictionary_cannot_separate(self):
        model = brownian_model()
        mu0, nu0 = self._point_pair(500, 0.5)
        rep = tv_gradient_scaling(model, mu0, nu0, (0.1, 0.2),
                                  [constant_observable(1.0)], dt=0.01, seed=22)
        assert all(g == 0.0 for g in rep.gaps)

    def test_bounded_by_tv_range_and_monotone_in_dictionary(self):
        model = brownian_model()
        mu0, nu0 = self._point_pair(2000, 0.5)
        small = [sign_observable(0.25)]
        large = small + [tanh_observable(), sign_observable(0.1)]
        rep_small = tv_gradient_scaling(model, mu0, nu0, (0.05, 0.1, 0.2), small,
                                        dt=0.005, seed=23)
        rep_large = tv_gradient_scaling(model, mu0, nu0, (0.05, 0.1, 0.2), large,
                                        dt=0.005, seed=23)
        for gs, gl in zip(rep_small.gaps, rep_large.gaps):
            assert gs <= 2.0 and gl <= 2.0
            assert gl >= gs

    def test_slope_matches_reference(self):
        model = brownian_model()
        c = 0.5
        mu0, nu0 = self._point_pair(4000, c)
        ts = (0.05, 0.1, 0.2, 0.4)
        rep = tv_gradient_scaling(model, mu0, nu0, ts, [sign_observable(c / 2.0)],
                                  dt=1e-3, seed=24)
        exact = [tv_sign_reference(c, 1.0, t) for t in ts]
        exact_slope = fit_loglog_slope(ts, exact)
        assert rep.slope == pytest.approx(exact_slope, abs=0.15)

    def test_unbounded_dictionary_rejected(self):
        model = brownian_model()
        mu0, nu0 = self._point_pair(100, 0.5)
        with pytest.raises(ValueError):
            tv_gradient_scaling(model, mu0, nu0, (0.1,), [coord_observable(0)],
                                dt=0.01, seed=25)
