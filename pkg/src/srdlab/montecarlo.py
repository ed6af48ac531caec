"""Monte Carlo semigroup estimates and statistical checks of the Harnack-type bounds.

Decision rule used by every checker: with independent estimates ``L +- sL``
and ``R +- sR`` the verdict is ``satisfied`` when ``L <= R + 3 sqrt(sL^2 + sR^2)``
and ``violated_beyond_3sigma`` otherwise.  Nonlinear transforms (log, powers,
square roots) carry standard errors by the delta method.  ``inconclusive`` is
reserved for runs whose own validity checks fail: more than 1% uncoupled paths,
Richardson inconsistency of a finite difference, or non-finite estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import parallel
from .coupling import CouplingBatch, CouplingSchedule, run_coupling_batch
from .errors import ConfigurationError, DomainError
from .integrator import Model, SchemeSpec, simulate_batch
from .noise import NoiseSpec, g_inverse_norm
from .spectral import SpectralField, lp_norm_array
from .stats import Estimate, RunningStats

SemigroupEstimate = Estimate

SATISFIED = "satisfied"
VIOLATED = "violated_beyond_3sigma"
INCONCLUSIVE = "inconclusive"
N_SIGMA = 3.0
MAX_UNCOUPLED = 0.01
RICHARDSON_TOL = 0.10
KURTOSIS_WARN = 50.0

KINDS = ("constant", "bounded_trig", "clipped_exponential", "indicator_ball", "linear_mode", "quadratic_mode")


@dataclass(frozen=True)
class ObservableSpec:
    """Closed menu of test functions on coefficient vectors.

    * ``constant``: ``value``
    * ``bounded_trig``: ``a + b sin(<x, e_mode>)`` with ``a > |b|``
    * ``clipped_exponential``: ``exp(clip(b <x, e_mode>, -clip, clip))``
    * ``indicator_ball``: ``floor + 1{||x - center||_2 <= radius}``
    * ``linear_mode``: ``b <x, e_mode>`` (unbounded, semigroup oracles only)
    * ``quadratic_mode``: ``b <x, e_mode>^2`` (unbounded, semigroup oracles only)
    """

    kind: str
    mode: int = 1
    a: float = 2.0
    b: float = 1.0
    clip: float = 1.0
    center: tuple[float, ...] | None = None
    radius: float = 1.0
    floor: float = 0.0
    value: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigurationError(f"observable kind must be one of {KINDS}, got {self.kind!r}")
        if self.mode < 1:
            raise ConfigurationError("mode index starts at 1")
        if self.kind == "bounded_trig" and not self.a > abs(self.b):
            raise ConfigurationError("bounded_trig needs a > |b| to stay strictly positive")
        if self.kind == "clipped_exponential" and not self.clip > 0:
            raise ConfigurationError("clip must be positive")
        if self.kind == "indicator_ball":
            if self.center is None:
                raise ConfigurationError("indicator_ball needs a center")
            if not self.radius > 0 or self.floor < 0:
                raise ConfigurationError("indicator_ball needs radius > 0 and floor >= 0")
        if self.kind == "constant" and self.value < 0:
            raise ConfigurationError("constant observable must be nonnegative")
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def constant(cls, value: float) -> ObservableSpec:
        return cls("constant", value=value)

    @classmethod
    def ball(cls, center: SpectralField, radius: float, floor: float = 0.0) -> ObservableSpec:
        return cls("indicator_ball", center=tuple(center.coeffs), radius=radius, floor=floor)

    @property
    def label(self) -> str:
        if self.kind == "constant":
            return f"constant({self.value:g})"
        if self.kind == "indicator_ball":
            return f"indicator_ball(r={self.radius:g}, floor={self.floor:g})"
        return f"{self.kind}(k={self.mode})"

    @property
    def sup(self) -> float:
        """``sup |phi|``; infinite for the unbounded kinds."""
        if self.kind == "constant":
            return self.value
        if self.kind == "bounded_trig":
            return self.a + abs(self.b)
        if self.kind == "clipped_exponential":
            return math.exp(self.clip)
        if self.kind == "indicator_ball":
            return self.floor + 1.0
        return math.inf

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.sup)

    @property
    def strictly_positive(self) -> bool:
        if self.kind == "constant":
            return self.value > 0
        if self.kind == "indicator_ball":
            return self.floor > 0
        return self.kind in ("bounded_trig", "clipped_exponential")

    def __call__(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.asarray(coeffs, dtype=float)
        if self.kind == "constant":
            return np.full(c.shape[:-1], float(self.value))
        if self.mode > c.shape[-1]:
            raise ConfigurationError(f"mode {self.mode} beyond the {c.shape[-1]} simulated modes")
        xk = c[..., self.mode - 1]
        if self.kind == "bounded_trig":
            return self.a + self.b * np.sin(xk)
        if self.kind == "clipped_exponential":
            return np.exp(np.clip(self.b * xk, -self.clip, self.clip))
        if self.kind == "linear_mode":
            return self.b * xk
        if self.kind == "quadratic_mode":
            return self.b * xk * xk
        center = np.asarray(self.center)
        if center.size != c.shape[-1]:
            raise ConfigurationError("ball center and state disagree on n_modes")
        dist = np.sqrt(np.sum((c - center) ** 2, axis=-1))
        return self.floor + (dist <= self.radius).astype(float)


@dataclass(frozen=True)
class HarnackReport:
    quantity: str
    lhs: Estimate
    rhs: Estimate
    bound_constant: float
    verdict: str
    details: dict = field(default_factory=dict)

    @property
    def sigma(self) -> float:
        return math.hypot(self.lhs.stderr, self.rhs.stderr)

    @property
    def slack(self) -> float:
        """``RHS - LHS`` in units of the combined standard error (inf when both are exact)."""
        gap = self.rhs.mean - self.lhs.mean
        if self.sigma == 0:
            return math.inf if gap >= 0 else -math.inf
        return gap / self.sigma

    def as_dict(self) -> dict:
        return {
            "quantity": self.quantity, "lhs": self.lhs.as_dict(), "rhs": self.rhs.as_dict(),
            "bound_constant": self.bound_constant, "verdict": self.verdict,
            "details": _jsonable(self.details),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Estimate):
        return obj.as_dict()
    return obj


def decide(lhs: Estimate, rhs: Estimate, k: float = N_SIGMA) -> str:
    """The fixed 3-sigma rule."""
    if not all(math.isfinite(v) for v in (lhs.mean, rhs.mean, lhs.stderr, rhs.stderr)):
        return INCONCLUSIVE
    return SATISFIED if lhs.mean <= rhs.mean + k * math.hypot(lhs.stderr, rhs.stderr) else VIOLATED


# ----------------------------------------------------------------------
# closed-form constants


def entropy_constant(model: Model, x0: SpectralField, y0: SpectralField, T: float) -> float:
    """``lambda ||G^-1||^2 ||x-y||_p^2 / (exp(2 lambda T) - 1)`` (``||G^-1||^2 ||x-y||^2 / (2T)`` at lambda = 0)."""
    dist = float(lp_norm_array(x0.coeffs - y0.coeffs, model.p, model.grid.n_quad))
    sched = CouplingSchedule(model.lam, T)
    return g_inverse_norm(model.noise) ** 2 * dist**2 / (2 * sched.gamma0)


def power_moment_constant(model, x0, y0, T, s_exp: float) -> float:
    """Exponent of the bound on ``E M_T^{s/(s-1)}``."""
    _check_s(s_exp)
    return s_exp / (s_exp - 1) ** 2 * entropy_constant(model, x0, y0, T)


def power_harnack_constant(model, x0, y0, T, s_exp: float) -> float:
    _check_s(s_exp)
    return s_exp / (s_exp - 1) * entropy_constant(model, x0, y0, T)


def gradient_constant(model: Model, T: float) -> float:
    """``sqrt(2 lambda ||G^-1||^2 / (exp(2 lambda T) - 1))``."""
    return g_inverse_norm(model.noise) / math.sqrt(CouplingSchedule(model.lam, T).gamma0)


def _check_s(s_exp: float) -> None:
    if not s_exp > 1:
        raise DomainError(f"power exponent must exceed 1, got {s_exp}")


# ----------------------------------------------------------------------
# endpoint sampling


_CACHE: dict = {}
_CACHE_MAX = 24


def endpoints(model: Model, scheme: SchemeSpec, x0: SpectralField, T: float, n_paths: int,
              seed: int | None = None, role: str = "x", n_workers: int = 1,
              block_size: int = parallel.DEFAULT_BLOCK) -> np.ndarray:
    """Memoized ``X_T^{x0}`` samples, shape ``(n_paths, n_modes)``.

    The worker count is not part of the key since it does not change the numbers.
    """
    seed = model.noise.seed if seed is None else int(seed)
    key = (model, scheme, x0, float(T), int(n_paths), seed, role, int(block_size))
    hit = _CACHE.get(key)
    if hit is None:
        hit = simulate_batch(model, scheme, x0, T, n_paths, seed=seed, role=role, n_workers=n_workers,
                             block_size=block_size)[:, 0]
        hit.setflags(write=False)
        if len(_CACHE) >= _CACHE_MAX:
            _CACHE.pop(next(iter(_CACHE)))
        _CACHE[key] = hit
    return hit


def clear_cache() -> None:
    _CACHE.clear()


def deterministic_endpoint(model: Model, scheme: SchemeSpec, x0: SpectralField, T: float) -> SpectralField:
    """The noise-free flow from ``x0`` at ``T``."""
    quiet = replace(model, noise=replace(model.noise, amplitude=0.0))
    return SpectralField(simulate_batch(quiet, scheme, x0, T, 1)[0, 0])


def default_menu(model: Model, scheme: SchemeSpec, x0: SpectralField, T: float,
                 radius: float = 0.3, floor: float = 0.1) -> list[ObservableSpec]:
    """The three strictly positive bounded observables used for the Harnack checks."""
    return [
        ObservableSpec("bounded_trig", mode=1, a=2.0, b=1.0),
        ObservableSpec("clipped_exponential", mode=1, b=1.0, clip=1.0),
        ObservableSpec.ball(deterministic_endpoint(model, scheme, x0, T), radius, floor),
    ]


def _estimate(values: np.ndarray) -> Estimate:
    return RunningStats.from_values(values).estimate()


def estimate_semigroup(phi: ObservableSpec, x0: SpectralField, T: float, model: Model, scheme: SchemeSpec,
                       n_paths: int, seed: int | None = None, *, role: str = "x", n_workers: int = 1,
                       block_size: int = parallel.DEFAULT_BLOCK) -> Estimate:
    """``P_T phi(x0)`` by plain Monte Carlo."""
    if n_paths < 2:
        raise DomainError("need at least two paths")
    ends = endpoints(model, scheme, x0, T, n_paths, seed, role, n_workers, block_size)
    return _estimate(phi(ends))


# ----------------------------------------------------------------------
# Girsanov weight bounds


def _coupling(model, scheme, x0, y0, T, n_paths, seed, coupling, n_workers, block_size) -> CouplingBatch:
    if coupling is not None:
        return coupling
    return run_coupling_batch(model, scheme, x0, y0, T, n_paths, seed=seed, n_workers=n_workers,
                              block_size=block_size)


def _coupling_ok(batch: CouplingBatch) -> bool:
    return 1.0 - batch.success_rate <= MAX_UNCOUPLED


def check_entropy_bound(x0: SpectralField, y0: SpectralField, T: float, model: Model, scheme: SchemeSpec,
                        n_paths: int = 10_000, seed: int | None = None, *, coupling: CouplingBatch | None = None,
                        times=None, n_workers: int = 1,
                        block_size: int = parallel.DEFAULT_BLOCK) -> HarnackReport:
    """``E[M_s log M_s]`` at ``s`` in ``times`` (default ``T/2, T``) against the closed form.

    The verdict uses the horizon value; earlier times are reported in ``details``.
    """
    batch = _coupling(model, scheme, x0, y0, T, n_paths, seed, coupling, n_workers, block_size)
    const = entropy_constant(model, x0, y0, T)
    times = [T / 2, T] if times is None else list(times)
    per_time = {}
    for s in times:
        lm = batch.log_m_at(s)
        per_time[f"{s:g}"] = _estimate(np.exp(lm) * lm)
    lhs = per_time[f"{times[-1]:g}"]
    rhs = Estimate.exact(const, batch.n_paths)
    verdict = decide(lhs, rhs) if _coupling_ok(batch) else INCONCLUSIVE
    return HarnackReport("entropy_bound", lhs, rhs, const, verdict,
                         {"per_time": per_time, "success_rate": batch.success_rate})


def check_power_moment(x0: SpectralField, y0: SpectralField, T: float, s_exp: float, model: Model,
                       scheme: SchemeSpec, n_paths: int = 10_000, seed: int | None = None, *,
                       coupling: CouplingBatch | None = None, n_workers: int = 1,
                       block_size: int = parallel.DEFAULT_BLOCK) -> HarnackReport:
    """``E[M_T^{s/(s-1)}]`` against ``exp(s lambda ||G^-1||^2 ||x-y||^2 / ((s-1)^2 (e^{2 lambda T} - 1)))``."""
    _check_s(s_exp)
    batch = _coupling(model, scheme, x0, y0, T, n_paths, seed, coupling, n_workers, block_size)
    r = s_exp / (s_exp - 1)
    vals = np.exp(r * batch.log_m_final)
    lhs = _estimate(vals)
    const = power_moment_constant(model, x0, y0, T, s_exp)
    rhs = Estimate.exact(math.exp(const), batch.n_paths)
    kurt = _excess_kurtosis(vals)
    verdict = decide(lhs, rhs) if _coupling_ok(batch) else INCONCLUSIVE
    return HarnackReport("power_moment_bound", lhs, rhs, const, verdict,
                         {"s": s_exp, "excess_kurtosis": kurt, "heavy_tail_warning": bool(kurt > KURTOSIS_WARN),
                          "success_rate": batch.success_rate})


def _excess_kurtosis(v: np.ndarray) -> float:
    c = v - v.mean()
    var = np.mean(c * c)
    return float(np.mean(c**4) / var**2 - 3.0) if var > 0 else 0.0


# ----------------------------------------------------------------------
# Harnack inequalities


def _require_positive(phi: ObservableSpec) -> None:
    if not (phi.bounded and phi.strictly_positive):
        raise DomainError(f"{phi.label} must be bounded and strictly positive")


def _sample_pair(model, scheme, x0, y0, T, n_paths, seed, roles, n_workers, block_size):
    ex = endpoints(model, scheme, x0, T, n_paths, seed, roles[0], n_workers, block_size)
    ey = endpoints(model, scheme, y0, T, n_paths, seed, roles[1], n_workers, block_size)
    return ex, ey


def check_log_harnack(phi: ObservableSpec, x0: SpectralField, y0: SpectralField, T: float, model: Model,
                      scheme: SchemeSpec, n_paths: int = 2000, seed: int | None = None, *,
                      roles=("x", "y"), n_workers: int = 1,
                      block_size: int = parallel.DEFAULT_BLOCK) -> HarnackReport:
    """``E log phi(X_T^y)`` against ``log E phi(X_T^x) + C``.

    ``roles`` names the independent streams used for the samples from ``x0`` and
    ``y0``; swapping them when swapping the points reuses cached samples.
    """
    _require_positive(phi)
    ex, ey = _sample_pair(model, scheme, x0, y0, T, n_paths, seed, roles, n_workers, block_size)
    lhs = _estimate(np.log(phi(ey)))
    px = _estimate(phi(ex))
    const = entropy_constant(model, x0, y0, T)
    rhs = Estimate(math.log(px.mean) + const, px.stderr / px.mean, px.n_samples)
    return HarnackReport("log_harnack", lhs, rhs, const, decide(lhs, rhs), {"observable": phi.label})


def check_power_harnack(phi: ObservableSpec, x0: SpectralField, y0: SpectralField, T: float, s_exp: float,
                        model: Model, scheme: SchemeSpec, n_paths: int = 2000, seed: int | None = None, *,
                        roles=("x", "y"), n_workers: int = 1,
                        block_size: int = parallel.DEFAULT_BLOCK) -> HarnackReport:
    """``(E phi(X_T^y))^s`` against ``E phi^s(X_T^x) exp(C_s)``."""
    _check_s(s_exp)
    if not phi.bounded or phi.kind in ("linear_mode", "quadratic_mode"):
        raise DomainError(f"{phi.label} must be bounded and nonnegative")
    ex, ey = _sample_pair(model, scheme, x0, y0, T, n_paths, seed, roles, n_workers, block_size)
    py = _estimate(phi(ey))
    lhs = Estimate(py.mean**s_exp, s_exp * py.mean ** (s_exp - 1) * py.stderr, py.n_samples)
    const = power_harnack_constant(model, x0, y0, T, s_exp)
    px = _estimate(phi(ex) ** s_exp)
    rhs = Estimate(px.mean * math.exp(const), px.stderr * math.exp(const), px.n_samples)
    return HarnackReport("power_harnack", lhs, rhs, const, decide(lhs, rhs),
                         {"observable": phi.label, "s": s_exp})


# ----------------------------------------------------------------------
# gradient estimate


def _fd(model, scheme, phi, x0, direction, eps, T, n_paths, seed, role_p, role_m, n_workers, block_size):
    plus = endpoints(model, scheme, x0 + direction * eps, T, n_paths, seed, role_p, n_workers, block_size)
    minus = endpoints(model, scheme, x0 - direction * eps, T, n_paths, seed, role_m, n_workers, block_size)
    hn = float(lp_norm_array(direction.coeffs, model.p, model.grid.n_quad))
    return _estimate((phi(plus) - phi(minus)) / (2 * eps * hn))


def check_gradient_estimate(phi: ObservableSpec, x0: SpectralField, direction: SpectralField, eps: float,
                            T: float, model: Model, scheme: SchemeSpec, n_paths: int = 1000,
                            seed: int | None = None, *, independent_check: bool = True, n_workers: int = 1,
                            block_size: int = parallel.DEFAULT_BLOCK) -> HarnackReport:
    """Central difference of ``P_T phi`` along ``direction`` against the variance bound.

    The difference uses common random numbers; the same difference with
    independent noise for the two endpoints is reported for comparison.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    if not phi.bounded:
        raise DomainError("gradient estimate needs a bounded observable")
    hn = float(lp_norm_array(direction.coeffs, model.p, model.grid.n_quad))
    if hn == 0:
        raise DomainError("direction must be nonzero")
    args = (model, scheme, phi, x0, direction)
    fd = _fd(*args, eps, T, n_paths, seed, "control", "control", n_workers, block_size)
    fd_half = _fd(*args, eps / 2, T, n_paths, seed, "control", "control", n_workers, block_size)
    lhs = Estimate(abs(fd.mean), fd.stderr, fd.n_samples)

    centre = phi(endpoints(model, scheme, x0, T, n_paths, seed, "x", n_workers, block_size))
    mu = centre.mean()
    dev = centre - mu
    var = float(np.sum(dev * dev) / (centre.size - 1))
    m4 = float(np.mean(dev**4))
    const = gradient_constant(model, T)
    sd = math.sqrt(var)
    # delta method: Var(s^2) ~ (m4 - s^4) / n, d sqrt = 1 / (2 s)
    sd_err = math.sqrt(max(m4 - var * var, 0.0) / centre.size) / (2 * sd) if sd > 0 else 0.0
    rhs = Estimate(const * sd, const * sd_err, centre.size)

    diff = abs(fd.mean - fd_half.mean)
    scale = max(abs(fd.mean), abs(fd_half.mean))
    noise_floor = N_SIGMA * math.hypot(fd.stderr, fd_half.stderr)
    rel = diff / scale if scale > 0 else 0.0
    consistent = diff <= RICHARDSON_TOL * scale or diff <= noise_floor
    details = {"observable": phi.label, "eps": eps, "fd": fd, "fd_half_eps": fd_half,
               "richardson_rel": rel, "richardson_ok": bool(consistent),
               "p_t_phi": mu, "std_phi": sd}
    if independent_check:
        ind = _fd(*args, eps, T, n_paths, seed, "independent_plus", "independent_minus", n_workers, block_size)
        details["independent_fd"] = ind
        details["independent_stderr"] = ind.stderr
        details["crn_stderr"] = fd.stderr
    verdict = decide(lhs, rhs) if consistent else INCONCLUSIVE
    return HarnackReport("gradient_estimate", lhs, rhs, const, verdict, details)


def ou_trig_derivative(phi: ObservableSpec, x0: SpectralField, direction: SpectralField, T: float,
                       noise: NoiseSpec, p: float = 2.0, n_quad: int | None = None) -> float:
    """Exact directional derivative of ``P_T phi`` for ``F = 0`` and a ``bounded_trig`` observable."""
    if phi.kind != "bounded_trig":
        raise DomainError("closed form available for bounded_trig only")
    k = phi.mode
    lam = (math.pi * k) ** 2
    decay = math.exp(-lam * T)
    var = noise.amplitude**2 * lam**noise.theta_noise * -math.expm1(-2 * lam * T) / (2 * lam)
    m = decay * x0.coeffs[k - 1]
    hn = float(lp_norm_array(direction.coeffs, p, n_quad or 2 * direction.n_modes))
    return phi.b * math.exp(-var / 2) * math.cos(m) * decay * direction.coeffs[k - 1] / hn
