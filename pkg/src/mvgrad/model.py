"""Problem instances: drift and diffusion coefficients, observables, schedules.

Coefficient callables follow one batching convention throughout the package:
the state argument is an (N, d) array of particle positions and the return
value carries the particle axis first.  Concretely,

* ``F(t, x, z)``          -> (N, d)       mean-field drift, z an (n,) moment vector
* ``grad_x_F(t, x, z)``   -> (N, d, d)    entry [i, a, b] = dF_a/dx_b
* ``grad_z_F(t, x, z)``   -> (N, d, n)    entry [i, a, l] = dF_a/dz_l
* ``h[l](x)``             -> (N,)         moment functionals
* ``grad_h[l](x)``        -> (N, d)
* ``sigma(t, x)``         -> (N, d, m)
* ``grad_sigma(t, x)``    -> (N, d, m, d) entry [i, a, b, j] = d sigma_ab / dx_j
* singular ``eval(t, x)`` -> (N, d)

Scalar ``t`` everywhere; grids are uniform and coefficients may be
time-dependent but default to autonomous.  All objects here are immutable
after construction and evaluation functions must be pure, so instances can
be shared freely across parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TYPE_CHECKING

import numpy as np

from .errors import NonFinite, SingularDiffusion

if TYPE_CHECKING:  # pragma: no cover
    from .measure import EmpiricalMeasure

Array = np.ndarray

#: Hard ceiling on |X| used by the integrators' blow-up guard.
BLOWUP_THRESHOLD = 1e8


def _batch(x) -> tuple[Array, bool]:
    """Promote a single point (d,) to a batch (1, d); report if promoted."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise ValueError(f"expected point or batch of points, got shape {arr.shape}")
    return arr, False


@dataclass(frozen=True)
class CylindricalDrift:
    """Mean-field drift of cylindrical form F(x, mu(h_1), ..., mu(h_n)).

    The measure enters only through the n scalar moments mu(h_l), which is
    what makes both the particle update and the measure-derivative
    contraction O(N) per step.  ``grad_z_F`` and ``grad_h`` together encode
    the measure derivative: its action at (x, mu) on a point y is the
    matrix sum_l dF/dz_l(x, z) (x) grad_h_l(y).
    """

    n: int
    F: Callable[[float, Array, Array], Array]
    grad_x_F: Callable[[float, Array, Array], Array]
    grad_z_F: Callable[[float, Array, Array], Array]
    h: tuple
    grad_h: tuple

    def __post_init__(self):
        if self.n != len(self.h) or self.n != len(self.grad_h):
            raise ValueError("n must match the number of moment functionals")

    def moment_vector(self, points: Array) -> Array:
        """Empirical moments (mu(h_1), ..., mu(h_n)) of a point cloud."""
        if self.n == 0:
            return np.zeros(0)
        return np.array([float(np.mean(hl(points))) for hl in self.h])


@dataclass(frozen=True)
class SingularDrift:
    """Regularized stand-in for a locally integrable drift component.

    ``declared_integrability`` is an informational (p0, q0) tag only; no
    membership check is attempted.  ``eval`` must already include the
    delta-regularization so every value is finite.
    """

    eval: Callable[[float, Array], Array]
    regularization_scale: float
    declared_integrability: tuple = (4.0, 8.0)

    def __post_init__(self):
        if not self.regularization_scale > 0:
            raise ValueError("regularization_scale must be positive")

    def __call__(self, t: float, x: Array) -> Array:
        out = np.asarray(self.eval(t, x), dtype=float)
        if not np.all(np.isfinite(out)):
            raise NonFinite("regularized singular drift returned a non-finite value")
        return out


@dataclass(frozen=True)
class Diffusion:
    """Noise coefficient sigma(t, x) in R^{d x m}.

    ``grad_sigma`` may be omitted for diffusions constant in the state
    (set ``constant_in_x=True``); tangent integration requires one of the
    two.  ``cond_cap`` bounds the condition number of a = sigma sigma*
    accepted by :func:`zeta` and :func:`validate_ellipticity`.
    """

    sigma: Callable[[float, Array], Array]
    grad_sigma: Optional[Callable[[float, Array], Array]] = None
    constant_in_x: bool = False
    cond_cap: float = 1e8

    def __call__(self, t: float, x: Array) -> Array:
        return np.asarray(self.sigma(t, x), dtype=float)


@dataclass(frozen=True)
class Observable:
    """Scalar test function f paired against terminal particle states."""

    f: Callable[[Array], Array]
    bounded_flag: bool = False
    bound: Optional[float] = None
    grad_f: Optional[Callable[[Array], Array]] = None
    name: str = ""

    def __call__(self, x: Array) -> Array:
        return np.asarray(self.f(x), dtype=float)

    def check_bound(self, x: Array, tol: float = 1e-9) -> None:
        """Verify |f| <= bound on the supplied probe points."""
        if not self.bounded_flag:
            return
        b = 1.0 if self.bound is None else float(self.bound)
        worst = float(np.max(np.abs(self(x)))) if len(x) else 0.0
        if worst > b + tol:
            raise ValueError(
                f"observable {self.name or '<anon>'} declared |f|<={b} "
                f"but reached {worst:.6g} on probes"
            )


@dataclass(frozen=True)
class PerturbationField:
    """Vector field phi: R^d -> R^d used to push an initial law around."""

    phi: Callable[[Array], Array]
    name: str = ""

    def __call__(self, x: Array) -> Array:
        return np.asarray(self.phi(x), dtype=float)

    def scaled(self, factor: float) -> "PerturbationField":
        f = self.phi
        return PerturbationField(lambda x: factor * np.asarray(f(x), dtype=float),
                                 name=f"{factor}*{self.name}" if self.name else "")


@dataclass(frozen=True)
class BismutSchedule:
    """Weighting schedule beta on [0, t] with beta(0)=0 and beta(t)=1.

    Any C^1 schedule with those endpoints is admissible; estimates must
    not depend on the choice beyond Monte Carlo noise, which is exactly
    what the invariance check exercises.
    """

    beta: Callable[[Array], Array]
    beta_prime: Callable[[Array], Array]
    t: float
    name: str = ""

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("schedule terminal time must be positive")
        b0 = float(self.beta(np.array(0.0)))
        bt = float(self.beta(np.array(self.t)))
        if abs(b0) > 1e-12 or abs(bt - 1.0) > 1e-12:
            raise ValueError(f"schedule must satisfy beta(0)=0, beta(t)=1; got {b0}, {bt}")

    def derivative_mismatch(self, n_probes: int = 64, step: float = 1e-6) -> float:
        """Max gap between beta_prime and a central difference of beta."""
        s = np.linspace(step, self.t - step, n_probes)
        fd = (self.beta(s + step) - self.beta(s - step)) / (2 * step)
        return float(np.max(np.abs(fd - self.beta_prime(s))))


def linear_schedule(t: float) -> BismutSchedule:
    return BismutSchedule(beta=lambda s: np.asarray(s) / t,
                          beta_prime=lambda s: np.full_like(np.asarray(s, dtype=float), 1.0 / t),
                          t=t, name="linear")


def quadratic_schedule(t: float) -> BismutSchedule:
    return BismutSchedule(beta=lambda s: (np.asarray(s) / t) ** 2,
                          beta_prime=lambda s: 2.0 * np.asarray(s) / t ** 2,
                          t=t, name="quadratic")


def sine_schedule(t: float) -> BismutSchedule:
    w = math.pi / (2.0 * t)
    return BismutSchedule(beta=lambda s: np.sin(w * np.asarray(s)),
                          beta_prime=lambda s: w * np.cos(w * np.asarray(s)),
                          t=t, name="sine")


SCHEDULE_FACTORIES = {
    "linear": linear_schedule,
    "quadratic": quadratic_schedule,
    "sine": sine_schedule,
}


def schedule_by_name(name: str, t: float) -> BismutSchedule:
    try:
        return SCHEDULE_FACTORIES[name](t)
    except KeyError:
        raise KeyError(f"unknown schedule {name!r}; have {sorted(SCHEDULE_FACTORIES)}") from None


@dataclass(frozen=True)
class ModelSpec:
    """A full problem instance.

    The drift splits as b = b0 + F(x, mu(h)) with b0 the optional
    regularized singular part and F the cylindrical mean-field part.
    ``k`` is the Wasserstein exponent the instance lives in and ``horizon``
    the largest admissible terminal time.
    """

    d: int
    m: int
    k: float
    meanfield_drift: CylindricalDrift
    diffusion: Diffusion
    horizon: float
    singular_drift: Optional[SingularDrift] = None
    name: str = ""

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ValueError("state and noise dimensions must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.k >= 1:
            raise ValueError("Wasserstein exponent k must be >= 1")

    @property
    def has_singular_part(self) -> bool:
        return self.singular_drift is not None


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def zeta(diffusion: Diffusion, t: float, x, check: bool = True) -> Array:
    """Right pseudo-inverse sigma*(sigma sigma*)^{-1} of the diffusion.

    This is the matrix that converts a state-space direction into the noise
    coordinates paired against the Brownian increments, so the result is
    (m, d) per point and sigma(t,x) @ zeta(t,x) = I_d.  Raises
    :class:`SingularDiffusion` when a = sigma sigma* is ill-conditioned
    beyond ``diffusion.cond_cap`` (only evaluated when ``check`` is set;
    hot loops disable it after probing once).
    """
    xb, single = _batch(x)
    sig = diffusion(t, xb)                      # (N, d, m)
    a = sig @ np.swapaxes(sig, 1, 2)            # (N, d, d)
    if check:
        eigs = np.linalg.eigvalsh(a)
        lo = eigs[:, 0].min()
        hi = eigs[:, -1].max()
        if lo <= 0 or hi / lo > diffusion.cond_cap:
            raise SingularDiffusion(
                f"sigma sigma* has eigenvalue range [{lo:.3g}, {hi:.3g}] at t={t}"
            )
    try:
        z = np.linalg.solve(a, sig)             # a^{-1} sigma: (N, d, m)
    except np.linalg.LinAlgError as exc:
        raise SingularDiffusion(str(exc)) from exc
    out = np.swapaxes(z, 1, 2)                  # sigma* a^{-1}: (N, m, d)
    return out[0] if single else out


def lions_derivative(drift: CylindricalDrift, t: float, x, mu: "EmpiricalMeasure", y) -> Array:
    """Measure-derivative matrix of a cylindrical drift at (x, mu), point y.

    Returns the (d, d) matrix sum_l dF/dz_l(x, mu(h)) (x) grad_h_l(y); its
    action on a vector v is the directional derivative of the drift when
    mass at y moves with velocity v.
    """
    xb, _ = _batch(x)
    yb, _ = _batch(y)
    z = drift.moment_vector(np.asarray(mu.points, dtype=float))
    gz = np.asarray(drift.grad_z_F(t, xb, z), dtype=float)[0]       # (d, n)
    if drift.n == 0:
        return np.zeros((xb.shape[1], xb.shape[1]))
    gh = np.stack([np.asarray(gl(yb), dtype=float)[0] for gl in drift.grad_h])  # (n, d)
    return gz @ gh                                                   # (d, d)


def drift_eval(model: ModelSpec, t: float, x, mu: "EmpiricalMeasure") -> Array:
    """Total drift b0(t,x) + F(t, x, mu(h)) at one point or a batch."""
    xb, single = _batch(x)
    z = model.meanfield_drift.moment_vector(np.asarray(mu.points, dtype=float))
    out = np.asarray(model.meanfield_drift.F(t, xb, z), dtype=float)
    if model.singular_drift is not None:
        out = out + model.singular_drift(t, xb)
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"drift evaluation produced NaN/Inf at t={t}")
    return out[0] if single else out


@dataclass(frozen=True)
class EllipticityReport:
    """Spectral summary of a = sigma sigma* over a probe set."""

    min_eigenvalue: float
    max_eigenvalue: float
    max_condition: float
    n_probes: int
    passed: bool


def validate_ellipticity(diffusion: Diffusion, probe_points, times: Sequence[float] = (0.0,),
                         min_eig: float = 1e-10, raise_on_fail: bool = False) -> EllipticityReport:
    """Check uniform ellipticity of sigma sigma* over probe points and times."""
    pts, _ = _batch(probe_points)
    if len(pts) == 0:
        raise ValueError("probe set must be nonempty")
    lo, hi = math.inf, -math.inf
    for t in times:
        sig = diffusion(t, pts)
        a = sig @ np.swapaxes(sig, 1, 2)
        eigs = np.linalg.eigvalsh(a)
        lo = min(lo, float(eigs[:, 0].min()))
        hi = max(hi, float(eigs[:, -1].max()))
    cond = math.inf if lo <= 0 else hi / lo
    ok = lo > min_eig and cond <= diffusion.cond_cap
    report = EllipticityReport(min_eigenvalue=lo, max_eigenvalue=hi,
                               max_condition=cond, n_probes=len(pts) * len(times),
                               passed=ok)
    if raise_on_fail and not ok:
        raise SingularDiffusion(
            f"ellipticity check failed: min eig {lo:.3g}, condition {cond:.3g}"
        )
    return report
