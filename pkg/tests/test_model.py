import math

import numpy as np
import pytest

from mvgrad.errors import NonFinite, SingularDiffusion
from mvgrad.measure import EmpiricalMeasure
from mvgrad.model import (BismutSchedule, CylindricalDrift, Diffusion,
                          drift_eval, linear_schedule, lions_derivative,
                          quadratic_schedule, schedule_by_name, sine_schedule,
                          validate_ellipticity, zeta)
from mvgrad.scenarios import (affine_drift, build_family,
                              regularized_singular_drift, sine_coupling_drift,
                              trig_diffusion, trig_drift)

from conftest import brownian_model, gaussian_cloud, mfou_model


def const_diffusion_matrix(mat):
    mat = np.asarray(mat, dtype=float)

    def sigma(t, x):
        return np.broadcast_to(mat, (x.shape[0],) + mat.shape)

    return Diffusion(sigma=sigma, constant_in_x=True)


class TestZeta:
    def test_identity(self):
        diff = const_diffusion_matrix(np.eye(2))
        assert np.allclose(zeta(diff, 0.0, np.zeros(2)), np.eye(2))

    def test_diagonal(self):
        diff = const_diffusion_matrix(np.diag([2.0, 1.0]))
        assert np.allclose(zeta(diff, 0.0, np.zeros(2)), np.diag([0.5, 1.0]))

    def test_upper_triangular_is_inverse_transpose(self):
        sig = np.array([[1.0, 1.0], [0.0, 1.0]])
        diff = const_diffusion_matrix(sig)
        z = zeta(diff, 0.0, np.zeros(2))
        # square invertible sigma: zeta collapses to the plain inverse,
        # certified by the defining identity sigma @ zeta = I
        assert np.allclose(z, np.linalg.inv(sig))
        assert np.allclose(sig @ z, np.eye(2), atol=1e-12)

    def test_random_draws_satisfy_identity(self, rng):
        for _ in range(25):
            d = rng.integers(1, 4)
            m = rng.integers(d, 4)
            sig_mat = rng.standard_normal((d, m)) + np.eye(d, m)
            a = sig_mat @ sig_mat.T
            if np.linalg.cond(a) > 1e6:
                continue
            z = zeta(const_diffusion_matrix(sig_mat), 0.0, np.zeros(d))
            assert np.allclose(sig_mat @ z, np.eye(d), atol=1e-10)

    def test_batch_shape(self):
        diff = const_diffusion_matrix(np.eye(2))
        out = zeta(diff, 0.0, np.zeros((7, 2)))
        assert out.shape == (7, 2, 2)

    def test_singular_raises(self):
        diff = const_diffusion_matrix(np.diag([1.0, 0.0]))
        with pytest.raises(SingularDiffusion):
            zeta(diff, 0.0, np.zeros(2))

    def test_condition_cap(self):
        mat = np.diag([1.0, 1e-6])
        diff = Diffusion(sigma=lambda t, x: np.broadcast_to(mat, (x.shape[0], 2, 2)),
                         constant_in_x=True, cond_cap=1e4)
        with pytest.raises(SingularDiffusion):
            zeta(diff, 0.0, np.zeros(2))


class TestLionsDerivative:
    def test_meanfield_ou_is_kappa_identity(self):
        kappa = 0.7
        drift = affine_drift(2, a=1.0, kappa=kappa)
        mu = gaussian_cloud(50, d=2, seed=3)
        out = lions_derivative(drift, 0.0, np.array([0.3, -1.0]), mu,
                               np.array([2.0, 5.0]))
        assert np.allclose(out, kappa * np.eye(2), atol=1e-14)

    def test_no_measure_dependence_gives_zero(self):
        drift = trig_drift(a=1.0, c_nl=0.5)
        mu = gaussian_cloud(20, seed=1)
        out = lions_derivative(drift, 0.0, np.array([0.5]), mu, np.array([1.0]))
        assert np.all(out == 0.0)

    def test_quadratic_moment_hand_computation(self):
        # F(x, z) = z e_1 with h(y) = y_1^2 in d=2: derivative matrix has
        # single entry (1,1) = 2 y_1, evaluated at y=(3,0) -> 6
        def F(t, x, z):
            out = np.zeros_like(x)
            out[:, 0] = z[0]
            return out

        def grad_x_F(t, x, z):
            return np.zeros((x.shape[0], 2, 2))

        def grad_z_F(t, x, z):
            out = np.zeros((x.shape[0], 2, 1))
            out[:, 0, 0] = 1.0
            return out

        drift = CylindricalDrift(
            n=1, F=F, grad_x_F=grad_x_F, grad_z_F=grad_z_F,
            h=(lambda x: x[:, 0] ** 2,),
            grad_h=(lambda x: np.stack([2.0 * x[:, 0], np.zeros(x.shape[0])], axis=1),),
        )
        mu = gaussian_cloud(10, d=2, seed=0)
        out = lions_derivative(drift, 0.0, np.zeros(2), mu, np.array([3.0, 0.0]))
        expected = np.zeros((2, 2))
        expected[0, 0] = 6.0
        assert np.allclose(out, expected)

    def test_linear_in_grad_z_slot(self):
        drift = sine_coupling_drift(a=1.0, kappa=0.4)
        doubled = CylindricalDrift(
            n=drift.n, F=drift.F, grad_x_F=drift.grad_x_F,
            grad_z_F=lambda t, x, z: 2.0 * np.asarray(drift.grad_z_F(t, x, z)),
            h=drift.h, grad_h=drift.grad_h,
        )
        mu = gaussian_cloud(30, seed=5)
        x, y = np.array([0.2]), np.array([-0.9])
        base = lions_derivative(drift, 0.0, x, mu, y)
        twice = lions_derivative(doubled, 0.0, x, mu, y)
        assert np.array_equal(twice, 2.0 * base)


class TestDriftEval:
    def test_pure_linear(self):
        model = build_family("affine", d=2, a=1.0, kappa=0.0)
        mu = gaussian_cloud(10, d=2, seed=2)
        out = drift_eval(model, 0.0, np.array([1.0, 2.0]), mu)
        assert np.allclose(out, [-1.0, -2.0])

    def test_meanfield_ou_at_origin(self):
        model = mfou_model(a=1.0, kappa=1.0, d=2)
        mu = EmpiricalMeasure(np.tile([2.0, 0.0], (8, 1)))
        out = drift_eval(model, 0.0, np.zeros(2), mu)
        assert np.allclose(out, [2.0, 0.0])

    def test_regularized_singularity_at_origin(self):
        sing = regularized_singular_drift(delta=1e-3)
        out = sing(0.0, np.zeros((1, 1)))
        assert np.allclose(out, 0.0)

    def test_depends_on_measure_only_through_moments(self):
        model = mfou_model(a=1.0, kappa=0.5)
        # two very different clouds with identical means
        mu1 = EmpiricalMeasure(np.array([[-1.0], [1.0], [3.0]]))
        mu2 = EmpiricalMeasure(np.array([[0.0], [0.5], [2.5]]))
        assert np.mean(mu1.points) == np.mean(mu2.points)
        x = np.array([0.3])
        assert np.array_equal(drift_eval(model, 0.0, x, mu1),
                              drift_eval(model, 0.0, x, mu2))

    def test_nonfinite_detected(self):
        model = build_family("affine", d=1, a=1.0, kappa=0.0)
        bad = CylindricalDrift(
            n=0, F=lambda t, x, z: np.full_like(x, np.nan),
            grad_x_F=lambda t, x, z: np.zeros((x.shape[0], 1, 1)),
            grad_z_F=lambda t, x, z: np.zeros((x.shape[0], 1, 0)),
            h=(), grad_h=(),
        )
        from dataclasses import replace
        model = replace(model, meanfield_drift=bad)
        with pytest.raises(NonFinite):
            drift_eval(model, 0.0, np.zeros(1), gaussian_cloud(4))


class TestEllipticity:
    def test_identity_passes(self):
        rep = validate_ellipticity(const_diffusion_matrix(np.eye(2)),
                                   np.zeros((3, 2)))
        assert rep.passed
        assert rep.min_eigenvalue == pytest.approx(1.0)
        assert rep.max_eigenvalue == pytest.approx(1.0)

    def test_degenerate_fails(self):
        rep = validate_ellipticity(const_diffusion_matrix(np.diag([1.0, 0.0])),
                                   np.zeros((3, 2)))
        assert not rep.passed
        assert rep.min_eigenvalue == pytest.approx(0.0, abs=1e-15)
        with pytest.raises(SingularDiffusion):
            validate_ellipticity(const_diffusion_matrix(np.diag([1.0, 0.0])),
                                 np.zeros((3, 2)), raise_on_fail=True)

    def test_trig_diffusion_extremes(self):
        # sigma(x) = 1 + 0.5 sin x on [0, 2pi]: eigenvalues of sigma sigma*
        # range over [(1-0.5)^2, (1+0.5)^2] = [0.25, 2.25]
        diff = trig_diffusion(1.0, 0.5)
        probes = np.linspace(0.0, 2.0 * math.pi, 721)[:, None]
        rep = validate_ellipticity(diff, probes)
        assert rep.min_eigenvalue == pytest.approx(0.25, abs=1e-6)
        assert rep.max_eigenvalue == pytest.approx(2.25, abs=1e-6)

    def test_empty_probes_rejected(self):
        with pytest.raises(ValueError):
            validate_ellipticity(const_diffusion_matrix(np.eye(1)), np.zeros((0, 1)))


class TestAnalyticGradients:
    """Analytic derivatives must match central differences at order two."""

    def _grad_error(self, drift, t, pts, z, step):
        n_pts, d = pts.shape
        fd = np.zeros((n_pts, d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            fd[:, :, j] = (np.asarray(drift.F(t, pts + e, z))
                           - np.asarray(drift.F(t, pts - e, z))) / (2 * step)
        return np.max(np.abs(fd - np.asarray(drift.grad_x_F(t, pts, z))))

    @pytest.mark.parametrize("drift", [trig_drift(1.0, 0.5),
                                       sine_coupling_drift(1.0, 0.5),
                                       affine_drift(2, 1.0, 0.3)])
    def test_grad_x_second_order(self, drift, rng):
        d = 2 if drift.n == 2 else 1
        pts = rng.standard_normal((16, d))
        z = rng.standard_normal(drift.n)
        e1 = self._grad_error(drift, 0.0, pts, z, 1e-3)
        e2 = self._grad_error(drift, 0.0, pts, z, 5e-4)
        if e1 < 1e-10:
            # exact gradient (affine case): both errors sit at roundoff
            assert e2 < 1e-10
        else:
            # second order: halving the step divides the error by about four
            assert e2 <= e1 / 3.0 + 1e-12

    def test_grad_z_second_order(self, rng):
        drift = sine_coupling_drift(1.0, 0.5)
        pts = rng.standard_normal((16, 1))
        z = np.array([0.4])
        step = 1e-3

        def err(h):
            fd = (np.asarray(drift.F(0.0, pts, z + h))
                  - np.asarray(drift.F(0.0, pts, z - h))) / (2 * h)
            return np.max(np.abs(fd - np.asarray(drift.grad_z_F(0.0, pts, z))[:, :, 0]))

        assert err(step / 2) <= err(step) / 3.0 + 1e-12

    def test_grad_h_matches(self, rng):
        drift = affine_drift(2, 1.0, 0.3)
        pts = rng.standard_normal((16, 2))
        step = 1e-4
        for hl, gl in zip(drift.h, drift.grad_h):
            for j in range(2):
                e = np.zeros(2)
                e[j] = step
                fd = (np.asarray(hl(pts + e)) - np.asarray(hl(pts - e))) / (2 * step)
                assert np.allclose(fd, np.asarray(gl(pts))[:, j], atol=1e-8)

    def test_grad_sigma_second_order(self, rng):
        diff = trig_diffusion(1.0, 0.25)
        pts = rng.standard_normal((16, 1))

        def err(h):
            fd = (diff(0.0, pts + h) - diff(0.0, pts - h)) / (2 * h)
            return np.max(np.abs(fd - np.asarray(diff.grad_sigma(0.0, pts))[:, :, :, 0]))

        assert err(5e-4) <= err(1e-3) / 3.0 + 1e-12

    def test_growth_bound_on_moment_gradients(self, rng):
        # |grad h_l(y)| <= c (1 + |y|^{k-1}) on a compact probe set
        drift = affine_drift(2, 1.0, 0.5)
        k = 2.0
        pts = 5.0 * rng.standard_normal((128, 2))
        for gl in drift.grad_h:
            norms = np.linalg.norm(np.asarray(gl(pts)), axis=1)
            bound = 1.0 + np.linalg.norm(pts, axis=1) ** (k - 1.0)
            assert np.all(norms <= 2.0 * bound)


class TestSchedules:
    @pytest.mark.parametrize("factory", [linear_schedule, quadratic_schedule,
                                         sine_schedule])
    def test_endpoints_and_derivative(self, factory):
        sched = factory(0.7)
        assert float(sched.beta(np.array(0.0))) == pytest.approx(0.0, abs=1e-12)
        assert float(sched.beta(np.array(0.7))) == pytest.approx(1.0, abs=1e-12)
        assert sched.derivative_mismatch() < 1e-6

    def test_bad_endpoints_rejected(self):
        with pytest.raises(ValueError):
            BismutSchedule(beta=lambda s: np.asarray(s), beta_prime=lambda s: 1.0,
                           t=2.0)

    def test_by_name(self):
        assert schedule_by_name("linear", 1.0).name == "linear"
        with pytest.raises(KeyError):
            schedule_by_name("nope", 1.0)


class TestModelValidation:
    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            build_family("affine", d=0)

    def test_schedules_registry_has_three(self):
        from mvgrad.model import SCHEDULE_FACTORIES
        assert len(SCHEDULE_FACTORIES) >= 3

    def test_brownian_has_no_singular_part(self):
        assert not brownian_model().has_singular_part
        assert build_family("singular").has_singular_part
