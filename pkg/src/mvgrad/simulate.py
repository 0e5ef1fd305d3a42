"""Euler integration of the interacting particle system and its decoupled twin.

Owns all path randomness.  Brownian increments come from counter-based
streams keyed by (seed, particle index) with the step index addressing the
position inside the stream, so output is bit-identical for any parallel
schedule and any single particle's noise can be regenerated in isolation.
Increments are retained in memory (they are the raw material for every
stochastic-integral weight); a budget guard errors out instead of spilling
to disk.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
import numpy as np
from scipy.special import ndtri

from .errors import GridMismatch, MemoryBudgetExceeded, NonFinite
from .measure import EmpiricalMeasure
from .model import BLOWUP_THRESHOLD, ModelSpec, validate_ellipticity

Array = np.ndarray

MEMORY_BUDGET_ENV = "MVGRAD_MEMORY_BUDGET_MB"
DEFAULT_MEMORY_BUDGET_MB = 4096

# Uniform draws are clamped away from 0 before the inverse normal CDF; the
# event has probability 2^-53 per draw and would otherwise map to -inf.
_U_FLOOR = 2.0 ** -60

_MASK64 = 2**64 - 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_end] with n_steps steps."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    def times(self) -> Array:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)


def _memory_budget_bytes() -> int:
    mb = os.environ.get(MEMORY_BUDGET_ENV)
    try:
        budget = float(mb) if mb else float(DEFAULT_MEMORY_BUDGET_MB)
    except ValueError:
        budget = float(DEFAULT_MEMORY_BUDGET_MB)
    return int(budget * 1e6)


def _guard_memory(n_steps: int, N: int, d: int, m: int) -> None:
    need = 8 * N * ((n_steps + 1) * d + n_steps * m)
    budget = _memory_budget_bytes()
    if need > budget:
        raise MemoryBudgetExceeded(
            f"retained paths need {need / 1e6:.0f} MB, budget is {budget / 1e6:.0f} MB "
            f"(set {MEMORY_BUDGET_ENV} to raise it)"
        )


def particle_increments(seed: int, particle: int, grid: TimeGrid, m: int) -> Array:
    """Increments of one particle's stream, reproducible in isolation."""
    gen = np.random.Generator(np.random.Philox(key=[seed & _MASK64, particle & _MASK64]))
    u = gen.random((grid.n_steps, m))
    return ndtri(np.maximum(u, _U_FLOOR)) * np.sqrt(grid.dt)


def brownian_increments(grid: TimeGrid, N: int, m: int, seed: int) -> Array:
    """Gaussian(0, dt I) increment tensor of shape (n_steps, N, m).

    Stream layout: particle i draws its (n_steps, m) block from the
    counter-based generator keyed by (seed, i), so the output does not
    depend on evaluation order and two calls with equal arguments are
    bit-identical.
    """
    out = np.empty((grid.n_steps, N, m))
    root = np.sqrt(grid.dt)
    for i in range(N):
        gen = np.random.Generator(np.random.Philox(key=[seed & _MASK64, i]))
        u = gen.random((grid.n_steps, m))
        out[:, i, :] = ndtri(np.maximum(u, _U_FLOOR)) * root
    return out


@dataclass(frozen=True)
class ParticlePaths:
    """Time-gridded trajectories with their driving noise retained.

    ``states`` is (n_steps+1, N, d), ``noise`` is (n_steps, N, m) and
    ``moment_flow`` records the empirical moments mu_s(h_l) of each time
    slice, one row per grid node.
    """

    states: Array
    noise: Array
    grid: TimeGrid
    seed: int
    moment_flow: Array

    @property
    def N(self) -> int:
        return self.states.shape[1]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @property
    def m(self) -> int:
        return self.noise.shape[2]

    def terminal(self) -> Array:
        return self.states[-1]

    def initial_measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[0])

    def terminal_measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[-1])

    def validate(self, model: ModelSpec, tol: float = 1e-12) -> None:
        """Recompute the moment flow and finiteness invariants."""
        if not np.all(np.isfinite(self.states)) or not np.all(np.isfinite(self.noise)):
            raise NonFinite("stored paths contain non-finite entries")
        drift = model.meanfield_drift
        for s in range(self.grid.n_steps + 1):
            row = drift.moment_vector(self.states[s])
            if np.max(np.abs(row - self.moment_flow[s]), initial=0.0) > tol:
                raise AssertionError(f"moment flow row {s} does not match its state slice")


@dataclass(frozen=True)
class FrozenFlow:
    """Recorded moment flow (mu_s(h_l))_s standing in for a measure flow."""

    moment_flow: Array
    grid: TimeGrid

    @classmethod
    def from_paths(cls, paths: ParticlePaths) -> "FrozenFlow":
        return cls(moment_flow=np.array(paths.moment_flow, copy=True), grid=paths.grid)


def _step_guard(X: Array, step: int) -> None:
    if not np.all(np.isfinite(X)):
        raise NonFinite(f"non-finite state at step {step}", step=step)
    if np.max(np.abs(X)) > BLOWUP_THRESHOLD:
        raise NonFinite(f"blow-up guard tripped at step {step}", step=step)


def _integrate(model: ModelSpec, X0: Array, grid: TimeGrid, seed: int,
               moment_source) -> ParticlePaths:
    """Shared Euler loop; ``moment_source(s, X)`` supplies the drift moments."""
    N, d = X0.shape
    n = grid.n_steps
    dt = grid.dt
    _guard_memory(n, N, d, model.m)

    dW = brownian_increments(grid, N, model.m, seed)
    states = np.empty((n + 1, N, d))
    states[0] = X0
    drift = model.meanfield_drift
    flow = np.empty((n + 1, drift.n))

    X = np.array(X0, copy=True)
    for s in range(n):
        t = s * dt
        z = moment_source(s, X)
        flow[s] = z
        b = np.asarray(drift.F(t, X, z), dtype=float)
        if model.singular_drift is not None:
            b = b + model.singular_drift(t, X)
        sig = model.diffusion(t, X if not model.diffusion.constant_in_x else X[:1])
        if sig.shape[0] == 1 and N > 1:
            incr = dW[s] @ sig[0].T
        else:
            incr = np.einsum("idm,im->id", sig, dW[s])
        X = X + b * dt + incr
        _step_guard(X, s + 1)
        states[s + 1] = X
    flow[n] = moment_source(n, X)
    return ParticlePaths(states=states, noise=dW, grid=grid, seed=seed, moment_flow=flow)


def simulate_particles(model: ModelSpec, mu0: EmpiricalMeasure, grid: TimeGrid,
                       seed: int, check_ellipticity: bool = True) -> ParticlePaths:
    """Integrate the N-particle interacting system.

    Each step computes the empirical drift moments of the current slice
    (the only cross-particle synchronization), then updates all particles
    independently with their own noise.  Output is fully determined by
    (model, mu0, grid, seed).
    """
    if grid.t_end > model.horizon + 1e-12:
        raise GridMismatch(f"grid end {grid.t_end} exceeds model horizon {model.horizon}")
    if mu0.d != model.d:
        raise ValueError(f"initial measure dimension {mu0.d} != model dimension {model.d}")
    if check_ellipticity:
        probes = mu0.points[:: max(1, mu0.N // 64)]
        validate_ellipticity(model.diffusion, probes, times=(0.0,), raise_on_fail=True)
    drift = model.meanfield_drift
    return _integrate(model, np.array(mu0.points, copy=True), grid, seed,
                      moment_source=lambda s, X: drift.moment_vector(X))


def simulate_decoupled(model: ModelSpec, flow: FrozenFlow, x0s: EmpiricalMeasure,
                       grid: TimeGrid, seed: int, check_ellipticity: bool = True) -> ParticlePaths:
    """Integrate independent copies against a frozen moment flow.

    Identical recursion to :func:`simulate_particles` except the drift sees
    ``flow.moment_flow[s]`` instead of the live empirical moments, which
    decouples the particles entirely.  The returned ``moment_flow`` is the
    recomputed live moments of the decoupled states (they track the frozen
    flow only up to sampling error).
    """
    if flow.grid != grid or flow.moment_flow.shape[0] != grid.n_steps + 1:
        raise GridMismatch("frozen flow does not match the requested grid")
    if check_ellipticity:
        probes = x0s.points[:: max(1, x0s.N // 64)]
        validate_ellipticity(model.diffusion, probes, times=(0.0,), raise_on_fail=True)
    drift = model.meanfield_drift
    frozen = flow.moment_flow

    def source(s, X):
        del X
        return frozen[s]

    paths = _integrate(model, np.array(x0s.points, copy=True), grid, seed, moment_source=source)
    # store live moments so the ParticlePaths invariant stays recomputable
    live = np.empty_like(paths.moment_flow)
    for s in range(grid.n_steps + 1):
        live[s] = drift.moment_vector(paths.states[s])
    return ParticlePaths(states=paths.states, noise=paths.noise, grid=grid,
                         seed=seed, moment_flow=live)


# ---------------------------------------------------------------------------
# On-disk layout
# ---------------------------------------------------------------------------

def write_gridded_array(values: Array, d: int, m: int, N: int, grid: TimeGrid,
                        path) -> None:
    """Shared binary layout: little-endian int64 header (d, m, N, n_steps),
    float64 dt, then the (n_steps+1, N, d) array row-major float64."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qqqq", d, m, N, grid.n_steps))
        fh.write(struct.pack("<d", grid.dt))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def save_paths(paths: ParticlePaths, path) -> None:
    """Binary dump of the state array in the shared gridded layout."""
    write_gridded_array(paths.states, paths.d, paths.m, paths.N, paths.grid, path)


def load_states(path) -> tuple[Array, dict]:
    """Read back a binary dump; returns (states, header dict)."""
    with open(path, "rb") as fh:
        d, m, N, n_steps = struct.unpack("<qqqq", fh.read(32))
        (dt,) = struct.unpack("<d", fh.read(8))
        flat = np.frombuffer(fh.read(), dtype="<f8")
    states = flat.reshape(n_steps + 1, N, d).astype(float)
    return states, {"d": d, "m": m, "N": N, "n_steps": n_steps, "dt": dt}


def save_moment_flow_csv(paths: ParticlePaths, path) -> None:
    """CSV summary of the moment flow: time column plus one column per h_l."""
    times = paths.grid.times()[:, None]
    table = np.hstack([times, paths.moment_flow])
    header = ",".join(["t"] + [f"h{i}" for i in range(paths.moment_flow.shape[1])])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=header, comments="")
