"""Coupling by change of measure.

Alongside ``X`` (from ``x``) we run ``Y`` (from ``y``) with the same noise and the
extra drift ``(X - Y) / gamma_t``, where ``gamma_t`` solves
``gamma' + 2 lambda gamma + 1 = 0`` with ``gamma_T = 0``.  The control
``v = G^-1 (X - Y) / gamma_t`` defines the Girsanov weight

    log M_t = -int (v, dW) - 1/2 int ||v||^2 dt,

under which ``Y`` solves the uncoupled equation from ``y`` and meets ``X``
before ``T``.

The difference ``D = X - Y`` is propagated directly.  Over one step the
extra drift is frozen at its left-point value and integrated against the
exponential kernel, exactly like the reaction term.  For that discretization
the shifted pair ``(I0 + v h, I1 + v phi1)`` is the exact image of the step
noise under the tilt, so ``Y`` under ``M P`` is *exactly* the exponential Euler
chain from ``y`` and ``exp(-(v, I0) - |v|^2 h / 2)`` is the exact one-step
likelihood ratio.  The multiplier ``exp(-lambda_k h) - phi1_k / gamma`` stays in
``[0, 1)`` because ``gamma >= h`` on every left point, so no inner sub-stepping
is required.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.special import exprel

from . import parallel
from .drift import DriftSpec
from .errors import BlowUpError, ConfigurationError, DomainError, SafeguardError
from .integrator import Kernel, Model, SchemeSpec, n_steps_for, steps_for_times
from .noise import NoiseSpec
from .rng import PathBlockNoise
from .spectral import GridSpec, SpectralField, lp_norm_array

DEFAULT_EPS = 1e-6
CERT_TOL_FACTOR = 10.0


@dataclass(frozen=True)
class CouplingSchedule:
    lam: float
    T: float

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise DomainError("horizon must be positive")

    def gamma_value(self, t):
        """``int_0^{T-t} exp(2 lambda r) dr``; equals ``T - t`` when ``lambda = 0``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.T * (1 + 1e-12)):
            raise DomainError(f"t outside [0, {self.T}]")
        tau = np.clip(self.T - t, 0.0, None)
        g = tau * exprel(2 * self.lam * tau)  # stable through lambda = 0
        return float(g) if g.ndim == 0 else g

    def gamma_prime(self, t):
        return -np.exp(2 * self.lam * (self.T - np.asarray(t, dtype=float)))

    @property
    def gamma0(self) -> float:
        return self.gamma_value(0.0)

    def floor(self, dt: float) -> float:
        """Smallest admissible gamma at a left point while uncoupled."""
        return 1e3 * np.finfo(float).eps * max(dt, self.T * 1e-6)


def gamma_value(sched: CouplingSchedule, t):
    return sched.gamma_value(t)


def entropy_bound(lam: float, T: float, g_inv: float, dist: float) -> float:
    """``lambda ||G^-1||^2 ||x-y||^2 / (exp(2 lambda T) - 1)``, i.e. ``||G^-1||^2 ||x-y||^2 / (2 gamma_0)``."""
    return g_inv**2 * dist**2 / (2 * CouplingSchedule(lam, T).gamma0)


@dataclass(frozen=True)
class CouplingState:
    t: float
    x: SpectralField
    y: SpectralField
    log_m: float = 0.0
    v_energy: float = 0.0
    coupled_at: float | None = None
    cert_integral: float = 0.0  # running sum of ||X - Y||_p^2 / gamma^2 dt


@dataclass(frozen=True)
class CouplingResult:
    coupled: bool
    tau: float | None
    log_m_final: float
    v_energy_final: float
    pathwise_margin: float
    eps_couple: float
    dt: float
    safeguard_trips: int
    trace: dict = field(default_factory=dict)
    x_final: SpectralField | None = None
    y_final: SpectralField | None = None

    def as_dict(self) -> dict:
        return {
            "coupled": self.coupled, "tau": self.tau, "log_m_final": self.log_m_final,
            "v_energy_final": self.v_energy_final, "pathwise_margin": self.pathwise_margin,
            "eps_couple": self.eps_couple, "dt": self.dt, "safeguard_trips": self.safeguard_trips,
        }


class _Coupler:
    """Array form of one coupled step for a stack of paths."""

    def __init__(self, model: Model, scheme: SchemeSpec, sched: CouplingSchedule, eps: float):
        if scheme.scheme != "exponential_euler":
            raise ConfigurationError("coupling runs use the exponential Euler scheme")
        self.kernel = Kernel(model.grid, model.drift, model.noise, scheme)
        self.model = model
        self.sched = sched
        self.eps = eps
        self.h = scheme.dt
        self.g_inv = model.noise.inverse_scale

    def norm(self, d: np.ndarray) -> np.ndarray:
        return lp_norm_array(d, self.model.p, self.model.grid.n_quad)

    def step(self, cx, d, active, z, gamma):
        """Advance ``X`` and ``D``; returns new arrays plus log-weight and energy increments."""
        k, w, h = self.kernel, self.kernel.w, self.h
        i0, i1 = w.split(z)
        n = cx.shape[0]
        n_act = int(np.count_nonzero(active))
        if n_act == 0:
            nl_x, _ = k.nonlinear(cx)
            cx_new = w.decay * cx + w.phi1 * nl_x + k.scale * i1
            return cx_new, np.zeros_like(d), np.zeros(n), np.zeros(n)
        every = n_act == n
        da = d if every else d[active]
        both, _ = k.nonlinear(np.concatenate([cx, (cx if every else cx[active]) - da]))
        nl_x, nl_y = both[:n], both[n:]
        cx_new = w.decay * cx + w.phi1 * nl_x + k.scale * i1
        v = self.g_inv * da / gamma
        vv = np.sum(v * v, axis=-1)
        step_d = w.decay * da + w.phi1 * ((nl_x if every else nl_x[active]) - nl_y) - w.phi1 * da / gamma
        step_log = -np.sum(v * (i0 if every else i0[active]), axis=-1) - 0.5 * vv * h
        if every:
            return cx_new, step_d, step_log, 0.5 * vv * h
        dlog = np.zeros(n)
        den = np.zeros(n)
        d_new = np.zeros_like(d)
        dlog[active] = step_log
        den[active] = 0.5 * vv * h
        d_new[active] = step_d
        return cx_new, d_new, dlog, den


def _cert_rhs(d0_norm: float, gamma0: float, dt: float) -> float:
    return d0_norm**2 / gamma0 + CERT_TOL_FACTOR * dt


def _coupling_block(start: int, count: int, *, model: Model, scheme: SchemeSpec, lam: float,
                    x0: np.ndarray, y0: np.ndarray, T: float, eps: float, seed: int, role: str,
                    record_times) -> dict:
    sched = CouplingSchedule(lam, T)
    cp = _Coupler(model, scheme, sched, eps)
    h = scheme.dt
    n_steps = n_steps_for(T, h)
    rec_steps = steps_for_times(record_times, h)
    n = model.grid.n_modes
    noise = PathBlockNoise(seed, start, count, (2, n), role)

    cx = np.array(np.broadcast_to(x0, (count, n)))
    d = np.array(np.broadcast_to(x0 - y0, (count, n)))
    gamma0 = sched.gamma0
    d0 = float(cp.norm(d[:1])[0])
    rhs = _cert_rhs(d0, gamma0, h)
    log_m = np.zeros(count)
    v_energy = np.zeros(count)
    integral = np.zeros(count)
    margin = np.full(count, rhs - d0**2 / gamma0)
    tau = np.full(count, np.nan)
    active = np.ones(count, dtype=bool)
    if d0 <= eps:
        active[:] = False
        d[:] = 0.0
        tau[:] = 0.0
    rec_log = {}
    trips = 0

    i = 0
    while True:
        if i in rec_steps:
            rec_log[i] = log_m.copy()
        if i == n_steps:
            break
        m = min(64, n_steps - i)
        z_chunk = noise.next(m)
        for j in range(m):
            t = i * h
            gamma = sched.gamma_value(t)
            if gamma < sched.floor(h) and np.any(active):
                trips += int(np.count_nonzero(active))
                raise SafeguardError(f"gamma={gamma:.3e} below floor at t={t} before coupling")
            if np.any(active):
                dn = cp.norm(d[active])
                integral[active] += dn**2 / gamma**2 * h
            try:
                cx, d, dlog, den = cp.step(cx, d, active, z_chunk[j], gamma)
            except BlowUpError as exc:
                raise BlowUpError((i + 1) * h, float(np.max(np.linalg.norm(cx, axis=-1)))) from exc
            if not (np.all(np.isfinite(cx)) and np.all(np.isfinite(d))):
                raise BlowUpError((i + 1) * h, float(np.max(np.linalg.norm(cx, axis=-1))))
            log_m += dlog
            v_energy += den
            i += 1
            t_new = i * h
            if np.any(active):
                dn = cp.norm(d)
                newly = active & (dn <= eps)
                if np.any(newly):
                    tau[newly] = t_new
                    d[newly] = 0.0
                    active &= ~newly
                if i < n_steps:
                    g_new = sched.gamma_value(t_new)
                    first = np.where(active, dn**2 / g_new, 0.0)
                else:
                    # gamma_T = 0: only the integral term is defined at the horizon
                    first = np.zeros(count)
                margin = np.minimum(margin, rhs - (first + integral))
            if i in rec_steps and j < m - 1:
                rec_log[i] = log_m.copy()
    return {
        "coupled": ~active,
        "tau": tau,
        "log_m": np.stack([rec_log[s] for s in rec_steps], axis=1),
        "v_energy": v_energy,
        "margin": margin,
        "x_final": cx,
        "y_final": cx - d,
        "trips": np.full(count, trips),
    }


@dataclass(frozen=True)
class CouplingBatch:
    """Per-path outputs of many coupling runs."""

    record_times: tuple[float, ...]
    coupled: np.ndarray
    tau: np.ndarray
    log_m: np.ndarray  # (n_paths, n_record)
    v_energy: np.ndarray
    margin: np.ndarray
    x_final: np.ndarray
    y_final: np.ndarray
    cert_rhs: float
    eps_couple: float
    dt: float
    safeguard_trips: int

    @property
    def n_paths(self) -> int:
        return self.coupled.size

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.coupled))

    def log_m_at(self, s: float) -> np.ndarray:
        for k, r in enumerate(self.record_times):
            if abs(r - s) <= 1e-12 * max(1.0, s):
                return self.log_m[:, k]
        raise KeyError(f"log M not recorded at {s}")

    @property
    def log_m_final(self) -> np.ndarray:
        return self.log_m[:, -1]


def run_coupling_batch(model: Model, scheme: SchemeSpec, x0: SpectralField, y0: SpectralField,
                       T: float, n_paths: int, *, eps: float = DEFAULT_EPS, seed: int | None = None,
                       role: str = "x", record_times=None, lam: float | None = None,
                       n_workers: int = 1, block_size: int = parallel.DEFAULT_BLOCK) -> CouplingBatch:
    """Run ``n_paths`` independent couplings; ``X`` in path ``i`` uses stream ``(seed, role, i)``.

    Because ``X`` is advanced by the plain integrator, ``x_final`` coincides with
    :func:`srdlab.integrator.simulate_batch` from ``x0`` on the same role.
    """
    seed = model.noise.seed if seed is None else seed
    lam = model.lam if lam is None else lam
    if record_times is None:
        record_times = [T / 4, T / 2, 3 * T / 4, T]
    record_times = tuple(float(r) for r in record_times)
    fn = partial(_coupling_block, model=model, scheme=scheme, lam=lam, x0=np.asarray(x0.coeffs),
                 y0=np.asarray(y0.coeffs), T=T, eps=eps, seed=seed, role=role, record_times=record_times)
    parts = parallel.map_blocks(fn, n_paths, block_size, n_workers)
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    d0 = float(lp_norm_array(x0.coeffs - y0.coeffs, model.p, model.grid.n_quad))
    return CouplingBatch(record_times, cat["coupled"], cat["tau"], cat["log_m"], cat["v_energy"],
                         cat["margin"], cat["x_final"], cat["y_final"],
                         _cert_rhs(d0, CouplingSchedule(lam, T).gamma0, scheme.dt), eps, scheme.dt,
                         int(cat["trips"].max()) if cat["trips"].size else 0)


# ----------------------------------------------------------------------
# single-path API


def _model_for(d: DriftSpec, n: NoiseSpec, p: float, grid: GridSpec | None) -> Model:
    return Model(grid if grid is not None else GridSpec(n.n_modes), d, n, p)


def step_coupled(state: CouplingState, sched: CouplingSchedule, d: DriftSpec, n: NoiseSpec,
                 s: SchemeSpec, rng: np.random.Generator, *, eps: float = DEFAULT_EPS, p: float = 2.0,
                 grid: GridSpec | None = None) -> CouplingState:
    """One coupled step; consumes one ``(2, n_modes)`` normal draw like :func:`integrator.step`."""
    if state.t + s.dt > sched.T * (1 + 1e-12):
        raise DomainError("step would pass the coupling horizon")
    model = _model_for(d, n, p, grid)
    cp = _Coupler(model, s, sched, eps)
    z = rng.standard_normal((2, n.n_modes))[None]
    cx = state.x.coeffs[None, :]
    dd = (state.x.coeffs - state.y.coeffs)[None, :]
    active = np.array([state.coupled_at is None])
    gamma = sched.gamma_value(state.t)
    integral = state.cert_integral
    if active[0]:
        if gamma < sched.floor(s.dt):
            raise SafeguardError(f"gamma={gamma:.3e} below floor at t={state.t} before coupling")
        integral += float(cp.norm(dd)[0]) ** 2 / gamma**2 * s.dt
    cx, dd, dlog, den = cp.step(cx, dd, active, z, gamma)
    if not (np.all(np.isfinite(cx)) and np.all(np.isfinite(dd))):
        raise BlowUpError(state.t + s.dt, float(np.linalg.norm(state.x.coeffs)))
    t_new = state.t + s.dt
    coupled_at = state.coupled_at
    if coupled_at is None and float(cp.norm(dd)[0]) <= eps:
        coupled_at = t_new
        dd[:] = 0.0
    x = SpectralField(cx[0])
    return CouplingState(t_new, x, SpectralField(cx[0] - dd[0]), state.log_m + float(dlog[0]),
                         state.v_energy + float(den[0]), coupled_at, integral)


def run_coupling(x0: SpectralField, y0: SpectralField, sched: CouplingSchedule, d: DriftSpec,
                 n: NoiseSpec, s: SchemeSpec, rng: np.random.Generator, *, eps: float = DEFAULT_EPS,
                 p: float = 2.0, grid: GridSpec | None = None, trace_stride: int = 1) -> CouplingResult:
    """Iterate :func:`step_coupled` to the horizon and collect diagnostics.

    Failures (blow-up, safeguard) are returned as an uncoupled result with the
    reason in ``trace["failure"]`` rather than raised.
    """
    model = _model_for(d, n, p, grid)
    norm = partial(lambda c: float(lp_norm_array(c, p, model.grid.n_quad)))
    n_steps = n_steps_for(sched.T, s.dt)
    d0 = norm(x0.coeffs - y0.coeffs)
    rhs = _cert_rhs(d0, sched.gamma0, s.dt)
    state = CouplingState(0.0, x0, y0, coupled_at=0.0 if d0 <= eps else None)
    if state.coupled_at == 0.0:
        state = CouplingState(0.0, x0, x0, coupled_at=0.0)
    margin = rhs - (0.0 if state.coupled_at is not None else d0**2 / sched.gamma0)
    trace = {"t": [0.0], "distance": [d0], "gamma": [sched.gamma0], "log_m": [0.0]}
    trips = 0
    try:
        for i in range(n_steps):
            state = step_coupled(state, sched, d, n, s, rng, eps=eps, p=p, grid=grid)
            state = CouplingState((i + 1) * s.dt, state.x, state.y, state.log_m, state.v_energy,
                                  state.coupled_at, state.cert_integral)
            dist = norm(state.x.coeffs - state.y.coeffs)
            if state.coupled_at is not None:
                first = 0.0
            elif i + 1 < n_steps:
                first = dist**2 / sched.gamma_value(state.t)
            else:
                first = 0.0
            margin = min(margin, rhs - (first + state.cert_integral))
            if (i + 1) % trace_stride == 0 or i + 1 == n_steps:
                trace["t"].append(state.t)
                trace["distance"].append(dist)
                trace["gamma"].append(sched.gamma_value(state.t))
                trace["log_m"].append(state.log_m)
    except SafeguardError as exc:
        trips += 1
        trace["failure"] = str(exc)
    except BlowUpError as exc:
        trace["failure"] = f"blow-up at t={exc.t}"
    trace = {k: (np.asarray(v) if isinstance(v, list) else v) for k, v in trace.items()}
    return CouplingResult(state.coupled_at is not None, state.coupled_at, state.log_m, state.v_energy,
                          margin, eps, s.dt, trips, trace, state.x, state.y)
