"""Exponential Euler time stepping of the truncated reaction-diffusion equation.

One step of length ``h`` is, mode by mode,

    x' = exp(-lambda_k h) x + phi1_k(h) P_N F(x) + G I1,

with ``phi1_k(h) = (1 - exp(-lambda_k h)) / lambda_k`` and ``I1`` the exact
OU integral of the step.  With ``F = 0`` this is the exact OU transition.  The
Nemytskii term is evaluated on the collocation grid and projected back, which
is alias-free for cubic drifts when ``n_quad >= 2 n_modes``.

The array kernels operate on stacks ``(n_paths, n_modes)``; the field-level
functions are thin wrappers around them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache, partial

import numpy as np

from . import parallel
from .drift import DriftSpec
from .errors import BlowUpError, ConfigurationError, DomainError
from .noise import IncrementWeights, NoiseSpec, OUState
from .rng import PathBlockNoise
from .spectral import GridSpec, SpectralField, analyze, eigenvalues, lp_norm_array, synthesize

SCHEMES = ("exponential_euler", "splitting_reference")
AUTO_TAME_THRESHOLD = 10.0
CHUNK = 64


@dataclass(frozen=True)
class SchemeSpec:
    dt: float
    scheme: str = "exponential_euler"
    taming: float | None = None

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.taming is not None and self.taming <= 0:
            raise ConfigurationError("taming must be positive when given")


@dataclass(frozen=True)
class TrajectoryState:
    t: float
    x: SpectralField
    w_a: OUState | None = None

    def __post_init__(self) -> None:
        if self.w_a is not None and abs(self.w_a.t - self.t) > 1e-12 * max(1.0, self.t):
            raise ConfigurationError("trajectory and OU state times disagree")


def n_steps_for(T: float, dt: float) -> int:
    """Number of steps of size ``dt`` in ``[0, T]``; rejects non-divisible horizons."""
    if T <= 0:
        raise DomainError(f"horizon must be positive, got {T}")
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-12 * max(1.0, T):
        raise ConfigurationError(f"dt={dt} does not divide T={T}")
    return int(n)


def steps_for_times(times, dt: float) -> list[int]:
    out = []
    for t in times:
        if t == 0:
            out.append(0)
        else:
            out.append(n_steps_for(t, dt))
    return out


class Kernel:
    """Precomputed per-mode weights for one (grid, drift, noise, scheme) tuple."""

    def __init__(self, grid: GridSpec, drift: DriftSpec, noise: NoiseSpec, scheme: SchemeSpec,
                 h: float | None = None):
        if noise.n_modes != grid.n_modes:
            raise ConfigurationError("noise and grid disagree on n_modes")
        self.grid = grid
        self.drift = drift
        self.noise = noise
        self.scheme = scheme
        self.h = scheme.dt if h is None else h
        self.lam = eigenvalues(grid.n_modes)
        self.w = IncrementWeights.build(self.lam, self.h)
        self.scale = noise.scale
        self.n_tamed = 0

    # -- nonlinear part -------------------------------------------------
    def drift_values(self, values: np.ndarray) -> np.ndarray:
        """``f`` at collocation values with optional / automatic taming."""
        fv = self.drift(values)
        fmax = np.max(np.abs(fv), axis=-1)
        if not np.all(np.isfinite(fmax)):
            raise BlowUpError(math.nan)
        h = self.h
        if self.scheme.taming is not None:
            return fv / (1.0 + self.scheme.taming * h * np.abs(fv))
        hot = h * fmax > AUTO_TAME_THRESHOLD
        if np.any(hot):
            self.n_tamed += int(np.count_nonzero(hot))
            fv = np.where(hot[..., None], fv / (1.0 + h * np.abs(fv)), fv)
        return fv

    def nonlinear(self, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(P_N F(u), u at nodes)`` for coefficient stack ``c``."""
        if self.drift.is_zero:
            return np.zeros_like(c), None
        vals = synthesize(c, self.grid.n_quad)
        return analyze(self.drift_values(vals), self.grid.n_modes), vals

    # -- steps ----------------------------------------------------------
    def advance(self, c: np.ndarray, i1: np.ndarray, nl: np.ndarray | None = None) -> np.ndarray:
        """One exponential Euler step given the OU integral ``i1`` (cylindrical coordinates)."""
        if self.scheme.scheme == "splitting_reference":
            return self._advance_split(c, i1)
        if nl is None:
            nl, _ = self.nonlinear(c)
        return self.w.decay * c + self.w.phi1 * nl + self.scale * i1

    def _advance_split(self, c: np.ndarray, i1: np.ndarray) -> np.ndarray:
        # Strang splitting: half reaction (pointwise RK4), exact linear+noise, half reaction
        c = self._react(c, 0.5 * self.h)
        c = self.w.decay * c + self.scale * i1
        return self._react(c, 0.5 * self.h)

    def _react(self, c: np.ndarray, tau: float) -> np.ndarray:
        if self.drift.is_zero:
            return c
        u = synthesize(c, self.grid.n_quad)
        f = self.drift_values
        k1 = f(u)
        k2 = f(u + 0.5 * tau * k1)
        k3 = f(u + 0.5 * tau * k2)
        k4 = f(u + tau * k3)
        return analyze(u + tau / 6 * (k1 + 2 * k2 + 2 * k3 + k4), self.grid.n_modes)

    def step_from_normals(self, c: np.ndarray, z: np.ndarray) -> np.ndarray:
        _, i1 = self.w.split(z)
        return self.advance(c, i1)


@lru_cache(maxsize=16)
def kernel_for(grid: GridSpec, drift: DriftSpec, noise: NoiseSpec, scheme: SchemeSpec) -> Kernel:
    return Kernel(grid, drift, noise, scheme)


def _grid_for(n: NoiseSpec, grid: GridSpec | None) -> GridSpec:
    return grid if grid is not None else GridSpec(n.n_modes)


def _check_finite(c: np.ndarray, t: float, last: np.ndarray) -> None:
    if not np.all(np.isfinite(c)):
        raise BlowUpError(t, float(np.max(np.sqrt(np.sum(last * last, axis=-1)))))


# ----------------------------------------------------------------------
# single-path API


def step(state: TrajectoryState, d: DriftSpec, n: NoiseSpec, s: SchemeSpec,
         rng: np.random.Generator, grid: GridSpec | None = None) -> TrajectoryState:
    """Advance one step of size ``s.dt``; consumes one ``(2, n_modes)`` normal draw."""
    k = kernel_for(_grid_for(n, grid), d, n, s)
    z = rng.standard_normal((2, n.n_modes))
    _, i1 = k.w.split(z)
    c = state.x.coeffs
    try:
        new = k.advance(c, i1)
    except BlowUpError as exc:
        raise BlowUpError(state.t, float(np.linalg.norm(c))) from exc
    t = state.t + s.dt
    _check_finite(new, t, c)
    w_a = None
    if state.w_a is not None:
        w_a = OUState(t, SpectralField(k.w.decay * state.w_a.field.coeffs + k.scale * i1))
    return TrajectoryState(t, SpectralField(new), w_a)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    coeffs: np.ndarray  # (n_obs, n_modes)
    w_a: np.ndarray | None = None

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.coeffs[i])


def simulate_path(x0: SpectralField, T: float, d: DriftSpec, n: NoiseSpec, s: SchemeSpec,
                  rng: np.random.Generator, observe_times=None, track_ou: bool = False,
                  grid: GridSpec | None = None) -> Trajectory:
    """Iterate :func:`step` to ``T`` and record the state at ``observe_times``.

    Observation times must lie on the step grid; by default every step is kept.
    """
    n_steps = n_steps_for(T, s.dt)
    obs = list(range(n_steps + 1)) if observe_times is None else steps_for_times(observe_times, s.dt)
    if any(i > n_steps for i in obs):
        raise ConfigurationError("observation time beyond the horizon")
    wanted = set(obs)
    state = TrajectoryState(0.0, x0, OUState(0.0, SpectralField.zeros(n.n_modes)) if track_ou else None)
    rec, rec_w = {}, {}
    for i in range(n_steps + 1):
        if i in wanted:
            rec[i] = state.x.coeffs
            if track_ou:
                rec_w[i] = state.w_a.field.coeffs
        if i < n_steps:
            state = step(state, d, n, s, rng, grid)
            # keep time on the grid
            state = TrajectoryState(round((i + 1) * s.dt, 15), state.x,
                                    None if state.w_a is None else OUState(round((i + 1) * s.dt, 15), state.w_a.field))
    times = np.array([i * s.dt for i in obs])
    coeffs = np.array([rec[i] for i in obs])
    w = np.array([rec_w[i] for i in obs]) if track_ou else None
    return Trajectory(times, coeffs, w)


@dataclass(frozen=True)
class PairTrajectory:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    distance: np.ndarray  # ||X_t - Y_t||_p at each time


def simulate_pair_same_noise(x0: SpectralField, y0: SpectralField, T: float, d: DriftSpec,
                             n: NoiseSpec, s: SchemeSpec, rng: np.random.Generator,
                             observe_times=None, p: float = 2.0,
                             grid: GridSpec | None = None) -> PairTrajectory:
    """Two solutions driven by one noise realization."""
    g = _grid_for(n, grid)
    k = kernel_for(g, d, n, s)
    n_steps = n_steps_for(T, s.dt)
    obs = list(range(n_steps + 1)) if observe_times is None else steps_for_times(observe_times, s.dt)
    c = np.stack([x0.coeffs, y0.coeffs])
    rec = {}
    for i in range(n_steps + 1):
        rec[i] = c
        if i < n_steps:
            z = rng.standard_normal((2, n.n_modes))
            new = k.step_from_normals(c, z)
            _check_finite(new, (i + 1) * s.dt, c)
            c = new
    xs = np.array([rec[i][0] for i in obs])
    ys = np.array([rec[i][1] for i in obs])
    dist = lp_norm_array(xs - ys, p, g.n_quad)
    return PairTrajectory(np.array([i * s.dt for i in obs]), xs, ys, np.atleast_1d(dist))


# ----------------------------------------------------------------------
# batched API used by the Monte Carlo layers


@dataclass(frozen=True)
class Model:
    """Everything that defines the SPDE being simulated."""

    grid: GridSpec
    drift: DriftSpec
    noise: NoiseSpec
    p: float = 2.0

    def __post_init__(self) -> None:
        if self.p < 2:
            raise ConfigurationError("p must be >= 2")
        if self.grid.n_modes != self.noise.n_modes:
            raise ConfigurationError("grid and noise disagree on n_modes")

    @property
    def lam(self) -> float:
        from .drift import compute_lambda

        d = self.drift
        return compute_lambda(d.L_f, d.theta_diss, d.q, self.p, math.pi**2)

    def norm(self, c: np.ndarray) -> np.ndarray:
        return lp_norm_array(c, self.p, self.grid.n_quad)


def run_block(kernel: Kernel, x0: np.ndarray, n_steps: int, noise: PathBlockNoise,
              record_steps=(), observer=None) -> dict:
    """Advance a block of paths; returns ``{step: coeffs}`` for requested steps.

    ``observer(step, c, values)`` is invoked before every step with the state at
    the left end and its collocation values (None for zero drift); it is how
    time averages are accumulated without storing trajectories.
    """
    c = np.array(x0, dtype=float)
    rec = {}
    wanted = set(record_steps)
    done = 0
    while done <= n_steps:
        m = min(CHUNK, n_steps - done)
        z = noise.next(m) if m > 0 else None
        for j in range(m + 1):
            i = done + j
            if i in wanted:
                rec[i] = c.copy()
            if j == m:
                break
            nl = None
            vals = None
            if kernel.scheme.scheme == "exponential_euler":
                try:
                    nl, vals = kernel.nonlinear(c)
                except BlowUpError as exc:
                    raise BlowUpError(i * kernel.h, float(np.max(np.linalg.norm(c, axis=-1)))) from exc
            if observer is not None:
                observer(i, c, vals)
            _, i1 = kernel.w.split(z[j])
            new = kernel.advance(c, i1, nl)
            _check_finite(new, (i + 1) * kernel.h, c)
            c = new
        done += m
        if m == 0:
            break
    if observer is not None:
        vals = synthesize(c, kernel.grid.n_quad) if not kernel.drift.is_zero else None
        observer(n_steps, c, vals)
    return rec


def _endpoint_block(start: int, count: int, *, model: Model, scheme: SchemeSpec, x0: np.ndarray,
                    T: float, seed: int, role: str, record_times) -> np.ndarray:
    kernel = Kernel(model.grid, model.drift, model.noise, scheme)
    n_steps = n_steps_for(T, scheme.dt)
    steps = steps_for_times(record_times, scheme.dt)
    noise = PathBlockNoise(seed, start, count, (2, model.grid.n_modes), role)
    c0 = np.broadcast_to(x0, (count, model.grid.n_modes))
    rec = run_block(kernel, c0, n_steps, noise, steps)
    return np.stack([rec[s] for s in steps], axis=1)  # (count, n_obs, n_modes)


def simulate_batch(model: Model, scheme: SchemeSpec, x0: SpectralField, T: float, n_paths: int,
                   seed: int | None = None, role: str = "main", record_times=None,
                   n_workers: int = 1, block_size: int = parallel.DEFAULT_BLOCK) -> np.ndarray:
    """States of ``n_paths`` independent paths at ``record_times`` (default: ``[T]``).

    Returns shape ``(n_paths, n_times, n_modes)``.  Path ``i`` always uses the
    stream ``(seed, role, i)``.
    """
    seed = model.noise.seed if seed is None else seed
    record_times = [T] if record_times is None else list(record_times)
    fn = partial(_endpoint_block, model=model, scheme=scheme, x0=np.asarray(x0.coeffs), T=T,
                 seed=seed, role=role, record_times=tuple(record_times))
    return np.concatenate(parallel.map_blocks(fn, n_paths, block_size, n_workers), axis=0)


def _pair_block(start: int, count: int, *, model: Model, scheme: SchemeSpec, x0: np.ndarray,
                y0: np.ndarray, T: float, seed: int, role: str, record_times) -> np.ndarray:
    kernel = Kernel(model.grid, model.drift, model.noise, scheme)
    n_steps = n_steps_for(T, scheme.dt)
    steps = steps_for_times(record_times, scheme.dt)
    noise = PathBlockNoise(seed, start, count, (2, model.grid.n_modes), role)
    n = model.grid.n_modes
    c0 = np.concatenate([np.broadcast_to(x0, (count, n)), np.broadcast_to(y0, (count, n))])
    doubled = _DoubledNoise(noise)
    rec = run_block(kernel, c0, n_steps, doubled, steps)
    out = np.stack([model.norm(rec[s][:count] - rec[s][count:]) for s in steps], axis=1)
    return out


@dataclass
class _DoubledNoise:
    """Feeds the same draw to the X half and the Y half of a stacked block."""

    inner: PathBlockNoise

    def next(self, m: int) -> np.ndarray:
        z = self.inner.next(m)
        return np.concatenate([z, z], axis=1)


def pair_distance_batch(model: Model, scheme: SchemeSpec, x0: SpectralField, y0: SpectralField,
                        T: float, n_paths: int, record_times, seed: int | None = None,
                        role: str = "main", n_workers: int = 1,
                        block_size: int = parallel.DEFAULT_BLOCK) -> np.ndarray:
    """``||X_t - Y_t||_p`` for same-noise pairs, shape ``(n_paths, n_times)``."""
    seed = model.noise.seed if seed is None else seed
    fn = partial(_pair_block, model=model, scheme=scheme, x0=np.asarray(x0.coeffs),
                 y0=np.asarray(y0.coeffs), T=T, seed=seed, role=role, record_times=tuple(record_times))
    return np.concatenate(parallel.map_blocks(fn, n_paths, block_size, n_workers), axis=0)


# ----------------------------------------------------------------------
# strong self-convergence on a shared Brownian path


def _levels_block(start: int, count: int, *, model: Model, dt_fine: float, factors, x0: np.ndarray,
                  T: float, seed: int, role: str) -> np.ndarray:
    lam = eigenvalues(model.grid.n_modes)
    n_fine = n_steps_for(T, dt_fine)
    big = max(factors)
    if n_fine % big:
        raise ConfigurationError("coarsest step must divide the horizon")
    noise = PathBlockNoise(seed, start, count, (2, model.grid.n_modes), role)
    wf = IncrementWeights.build(lam, dt_fine)
    kernels = {m: Kernel(model.grid, model.drift, model.noise, SchemeSpec(m * dt_fine)) for m in factors}
    states = {m: np.array(np.broadcast_to(x0, (count, model.grid.n_modes))) for m in factors}
    acc = {m: np.zeros((count, model.grid.n_modes)) for m in factors}
    done = 0
    while done < n_fine:
        chunk = min(CHUNK * big, n_fine - done)
        z = noise.next(chunk)
        for j in range(chunk):
            _, i1 = wf.split(z[j])
            i = done + j
            for m in factors:
                # I1 over a coarse step: decay the running sum, add the fine piece
                acc[m] = wf.decay * acc[m] + i1
                if (i + 1) % m == 0:
                    states[m] = kernels[m].advance(states[m], acc[m])
                    acc[m] = np.zeros_like(acc[m])
        done += chunk
    return np.stack([states[m] for m in factors], axis=1)


def strong_levels(model: Model, x0: SpectralField, T: float, dt_fine: float, factors=(1, 2, 4),
                  n_paths: int = 200, seed: int | None = None, role: str = "reference",
                  n_workers: int = 1, block_size: int = parallel.DEFAULT_BLOCK) -> np.ndarray:
    """Endpoints at steps ``m * dt_fine`` for each factor, all driven by one fine noise path.

    Returns shape ``(n_paths, len(factors), n_modes)``.
    """
    seed = model.noise.seed if seed is None else seed
    fn = partial(_levels_block, model=model, dt_fine=dt_fine, factors=tuple(factors),
                 x0=np.asarray(x0.coeffs), T=T, seed=seed, role=role)
    return np.concatenate(parallel.map_blocks(fn, n_paths, block_size, n_workers), axis=0)


@dataclass(frozen=True)
class ConvergenceReport:
    dts: tuple[float, ...]
    errors: tuple[float, ...]  # RMS L^2 difference between consecutive levels
    order: float
    orders: tuple[float, ...] = field(default=())


def self_convergence(model: Model, x0: SpectralField, T: float, dts=(4e-4, 2e-4, 1e-4),
                     n_paths: int = 200, seed: int | None = None, **kw) -> ConvergenceReport:
    """Strong order from ``E||X^{dt} - X^{dt/2}||^2`` over successive halvings."""
    dts = tuple(sorted(dts, reverse=True))
    fine = dts[-1]
    factors = tuple(int(round(d / fine)) for d in dts)
    for f, d in zip(factors, dts):
        if abs(f * fine - d) > 1e-15:
            raise ConfigurationError("step sizes must be integer multiples of the finest")
    ends = strong_levels(model, x0, T, fine, factors, n_paths, seed, **kw)
    errs = []
    for a in range(len(dts) - 1):
        diff = ends[:, a] - ends[:, a + 1]
        errs.append(float(np.sqrt(np.mean(np.sum(diff * diff, axis=-1)))))
    orders = tuple(math.log(errs[i] / errs[i + 1]) / math.log(dts[i] / dts[i + 1])
                   for i in range(len(errs) - 1))
    order = float(np.mean(orders)) if orders else math.nan
    return ConvergenceReport(dts, tuple(errs), order, orders)
