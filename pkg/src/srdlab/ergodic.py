"""Long-run behaviour: Krylov-Bogoliubov averages, two-chain agreement and TV decay bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import parallel
from .coupling import run_coupling_batch
from .errors import ConfigurationError, DomainError
from .integrator import Kernel, Model, SchemeSpec, n_steps_for, run_block
from .montecarlo import ObservableSpec, entropy_constant
from .rng import PathBlockNoise
from .spectral import SpectralField, lp_norm_array, lp_power_array, sobolev_slobodeckij_array
from .stats import Estimate, RunningStats, batch_means

MIN_BATCHES = 8


@dataclass(frozen=True)
class NormFunctional:
    """``||x||_r^r`` (``kind="lp_power"``) or ``||x||_{beta,p}`` (``kind="sobolev"``)."""

    kind: str
    exponent: float = 2.0
    beta: float = 0.2

    def __post_init__(self) -> None:
        if self.kind not in ("lp_power", "sobolev"):
            raise ConfigurationError(f"unknown norm functional {self.kind!r}")
        if self.exponent < 1:
            raise ConfigurationError("exponent must be >= 1")
        if self.kind == "sobolev" and not 0 < self.beta < 1:
            raise ConfigurationError("beta must lie in (0, 1)")

    @property
    def label(self) -> str:
        if self.kind == "lp_power":
            return f"lp_power({self.exponent:g})"
        return f"sobolev(beta={self.beta:g}, p={self.exponent:g})"

    def evaluate(self, coeffs: np.ndarray, n_quad: int) -> np.ndarray:
        if self.kind == "lp_power":
            return lp_power_array(coeffs, self.exponent, n_quad)
        return sobolev_slobodeckij_array(coeffs, self.beta, self.exponent, n_quad)


Functional = ObservableSpec | NormFunctional


def _label(obs) -> str:
    return obs.label


def _evaluate(obs, coeffs: np.ndarray, n_quad: int) -> np.ndarray:
    if isinstance(obs, NormFunctional):
        return obs.evaluate(coeffs, n_quad)
    return obs(coeffs)


def default_beta(d_dim: int, p: float, q: float, theta_noise: float) -> float:
    """``min(0.2, 1 - d(p-1)(q-2)/(2p(q+p-2)), beta0, d/p)`` with ``beta0`` just below ``1/2 - theta``."""
    constraint = 1 - d_dim * (p - 1) * (q - 2) / (2 * p * (q + p - 2))
    beta0 = 0.99 * (0.5 - theta_noise)
    return min(0.2, constraint, beta0, d_dim / p)


def tightness_functionals(model: Model) -> list[NormFunctional]:
    """The two functionals whose averages must stay bounded: ``||.||_{q+p-2}^{q+p-2}`` and ``||.||_{beta,p}``."""
    d = model.drift
    r = d.q + model.p - 2
    beta = default_beta(1, model.p, d.q, model.noise.theta_noise)
    return [NormFunctional("lp_power", r), NormFunctional("sobolev", model.p, beta)]


@dataclass(frozen=True)
class ErgodicRunSpec:
    horizon: float
    observation_stride: float
    observables: tuple = ()
    burn_in: float = 0.0
    horizons: tuple[float, ...] = ()
    n_batches: int = 10

    def __post_init__(self) -> None:
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")
        if not 0 <= self.burn_in < self.horizon:
            raise ConfigurationError("burn_in must lie in [0, horizon)")
        span = (self.horizon - self.burn_in) / self.observation_stride
        if self.observation_stride <= 0 or abs(span - round(span)) > 1e-9 * max(1.0, span):
            raise ConfigurationError("observation_stride must divide horizon - burn_in")
        if self.n_batches < MIN_BATCHES:
            raise ConfigurationError(f"batch means needs at least {MIN_BATCHES} batches")
        hs = tuple(sorted(self.horizons)) if self.horizons else (self.horizon,)
        if hs[-1] > self.horizon * (1 + 1e-12) or hs[0] <= self.burn_in:
            raise ConfigurationError("nested horizons must lie in (burn_in, horizon]")
        object.__setattr__(self, "horizons", hs)
        object.__setattr__(self, "observables", tuple(self.observables))


@dataclass(frozen=True)
class KBEstimate:
    horizons: tuple[float, ...]
    values: dict  # label -> tuple of Estimate, one per horizon

    def at(self, label: str, horizon: float | None = None) -> Estimate:
        series = self.values[label]
        if horizon is None:
            return series[-1]
        return series[self.horizons.index(horizon)]

    def growth(self, label: str) -> tuple[float, ...]:
        """``(mu_{n_k} - mu_{n_1}) / sigma`` for each later horizon."""
        series = self.values[label]
        base = series[0]
        return tuple((e.mean - base.mean) / math.hypot(e.stderr, base.stderr) if (e.stderr or base.stderr)
                     else 0.0 for e in series[1:])

    def bounded(self, label: str, k: float = 3.0) -> bool:
        """No upward trend beyond ``k`` sigma across the nested horizons."""
        return all(g <= k for g in self.growth(label))

    def as_dict(self) -> dict:
        return {"horizons": list(self.horizons),
                "values": {k: [e.as_dict() for e in v] for k, v in self.values.items()}}


class _StackedNoise:
    """Concatenates the draws of several path-block noises (optionally repeated) along the path axis."""

    def __init__(self, parts):
        self.parts = parts

    def next(self, m: int) -> np.ndarray:
        return np.concatenate([np.repeat(nz.next(m), rep, axis=1) if rep > 1 else nz.next(m)
                               for nz, rep in self.parts], axis=1)


def _observe(model: Model, scheme: SchemeSpec, x0s: np.ndarray, horizon: float, stride: float, noise,
             observables, extra=None) -> tuple[np.ndarray, dict, list]:
    """Run stacked chains and record every observable at the stride grid."""
    kernel = Kernel(model.grid, model.drift, model.noise, scheme)
    n_steps = n_steps_for(horizon, scheme.dt)
    every = n_steps_for(stride, scheme.dt)
    n_obs = n_steps // every
    times = np.arange(n_obs) * every * scheme.dt
    series = {_label(o): np.empty((n_obs, x0s.shape[0])) for o in observables}
    extras = []

    def observer(i, c, _vals):
        if i % every or i >= n_steps:
            return
        j = i // every
        for o in observables:
            series[_label(o)][j] = _evaluate(o, c, model.grid.n_quad)
        if extra is not None:
            extras.append(extra(c))

    run_block(kernel, x0s, n_steps, noise, (), observer)
    return times, series, extras


def _kb_from_series(times, series, spec: ErgodicRunSpec) -> KBEstimate:
    values = {}
    for label, s in series.items():
        ests = []
        for n in spec.horizons:
            sel = (times >= spec.burn_in - 1e-12) & (times < n - 1e-12)
            ests.append(batch_means(s[sel], spec.n_batches))
        values[label] = tuple(ests)
    return KBEstimate(spec.horizons, values)


def kb_average(spec: ErgodicRunSpec, model: Model, scheme: SchemeSpec, seed: int | None = None, *,
               x0: SpectralField | None = None, role: str = "main") -> KBEstimate:
    """Time averages along one trajectory from ``x0`` (default 0) at each nested horizon."""
    seed = model.noise.seed if seed is None else seed
    n = model.grid.n_modes
    x0 = SpectralField.zeros(n) if x0 is None else x0
    noise = PathBlockNoise(seed, 0, 1, (2, n), role)
    times, series, _ = _observe(model, scheme, x0.coeffs[None, :], spec.horizon, spec.observation_stride,
                                noise, spec.observables)
    return _kb_from_series(times, {k: v[:, 0] for k, v in series.items()}, spec)


@dataclass(frozen=True)
class TwoChainReport:
    chain_x: KBEstimate
    chain_y: KBEstimate
    z_scores: dict
    agree: dict
    envelope_times: np.ndarray
    envelope_distance: np.ndarray
    envelope_ratio_max: float
    envelope_ok: bool
    lam: float

    @property
    def all_agree(self) -> bool:
        return all(self.agree.values())

    def as_dict(self) -> dict:
        return {
            "chain_x": self.chain_x.as_dict(), "chain_y": self.chain_y.as_dict(),
            "z_scores": self.z_scores, "agree": self.agree, "envelope_ratio_max": self.envelope_ratio_max,
            "envelope_ok": self.envelope_ok, "lambda": self.lam,
        }


def two_chain_convergence(x0: SpectralField, y0: SpectralField, spec: ErgodicRunSpec, model: Model,
                          scheme: SchemeSpec, seed: int | None = None, *, k_sigma: float = 3.0,
                          envelope_tol: float | None = None) -> TwoChainReport:
    """Independent chains from ``x0`` and ``y0`` plus a same-noise pair for the contraction envelope.

    All four rows are advanced in one stacked run: rows 0 and 1 carry the
    independent chains (paths 0 and 1 of ``chain_a``), rows 2 and 3 share the
    single ``chain_b`` stream.
    """
    seed = model.noise.seed if seed is None else seed
    n = model.grid.n_modes
    noise = _StackedNoise([(PathBlockNoise(seed, 0, 2, (2, n), "chain_a"), 1),
                           (PathBlockNoise(seed, 0, 1, (2, n), "chain_b"), 2)])
    x0s = np.stack([x0.coeffs, y0.coeffs, x0.coeffs, y0.coeffs])
    times, series, dist = _observe(model, scheme, x0s, spec.horizon, spec.observation_stride, noise,
                                   spec.observables,
                                   extra=lambda c: float(lp_norm_array(c[2] - c[3], model.p, model.grid.n_quad)))
    kx = _kb_from_series(times, {k: v[:, 0] for k, v in series.items()}, spec)
    ky = _kb_from_series(times, {k: v[:, 1] for k, v in series.items()}, spec)
    z, agree = {}, {}
    for label in kx.values:
        a, b = kx.at(label), ky.at(label)
        sig = math.hypot(a.stderr, b.stderr)
        z[label] = (a.mean - b.mean) / sig if sig > 0 else (0.0 if a.mean == b.mean else math.inf)
        agree[label] = bool(abs(z[label]) <= k_sigma)
    dist = np.asarray(dist)
    lam = model.lam
    d0 = dist[0] if dist.size else 0.0
    tol = 5 * scheme.dt if envelope_tol is None else envelope_tol
    if d0 > 0:
        ratio = dist / (d0 * np.exp(-lam * times))
        ratio_max = float(np.max(ratio))
    else:
        ratio_max = 0.0 if not np.any(dist) else math.inf
    return TwoChainReport(kx, ky, z, agree, times, dist, ratio_max, ratio_max <= 1 + tol, lam)


@dataclass(frozen=True)
class TVReport:
    times: tuple[float, ...]
    coupling_bound: tuple[Estimate, ...]
    entropy_bound: tuple[float, ...]
    uncoupled_fraction: tuple[float, ...]
    envelope_ok: bool
    envelope_ratios: tuple[float, ...]
    coupling_envelope_ok: bool
    lam: float
    t0: float
    notes: tuple[str, ...] = field(default=())

    def as_dict(self) -> dict:
        return {
            "times": list(self.times), "coupling_bound": [e.as_dict() for e in self.coupling_bound],
            "entropy_bound": list(self.entropy_bound), "uncoupled_fraction": list(self.uncoupled_fraction),
            "envelope_ok": self.envelope_ok, "envelope_ratios": list(self.envelope_ratios),
            "coupling_envelope_ok": self.coupling_envelope_ok, "lambda": self.lam, "t0": self.t0,
            "notes": list(self.notes),
        }


def tv_decay_profile(x0: SpectralField, y0: SpectralField, times, model: Model, scheme: SchemeSpec,
                     n_paths: int = 500, seed: int | None = None, *, t0: float = 0.25,
                     envelope_tol: float = 1e-9, n_workers: int = 1,
                     block_size: int = parallel.DEFAULT_BLOCK) -> TVReport:
    """Two upper bounds on ``||L(X_t^x) - L(X_t^y)||_TV`` (sup over ``|phi| <= 1``).

    * coupling route: a coupling with horizon ``t`` gives
      ``E|M_t - 1| + 2 E[M_t 1{not coupled by t}]``;
    * entropy route: Pinsker applied to the closed-form entropy bound,
      ``sqrt(2 lambda ||G^-1||^2 ||x-y||^2 / (exp(2 lambda t) - 1))``.

    The envelope check asks that the entropy-route bound decays at least like
    ``exp(-lambda t)`` between consecutive times ``>= t0``; the coupling route is
    checked in the same way up to three standard errors.
    """
    times = tuple(float(t) for t in times)
    if not times:
        raise DomainError("need at least one time")
    if any(t <= 0 for t in times) or list(times) != sorted(times):
        raise DomainError("times must be positive and increasing")
    lam = model.lam
    coupling, entropy, uncoupled = [], [], []
    same = np.array_equal(x0.coeffs, y0.coeffs)
    for t in times:
        entropy.append(0.0 if same else math.sqrt(2 * entropy_constant(model, x0, y0, t)))
        if same:
            coupling.append(Estimate.exact(0.0, n_paths))
            uncoupled.append(0.0)
            continue
        b = run_coupling_batch(model, scheme, x0, y0, t, n_paths, seed=seed, role="control",
                               record_times=[t], n_workers=n_workers, block_size=block_size)
        m = np.exp(b.log_m_final)
        vals = np.abs(m - 1) + 2 * m * (~b.coupled)
        coupling.append(RunningStats.from_values(vals).estimate())
        uncoupled.append(1.0 - b.success_rate)
    ratios, ok, ok_c = [], True, True
    late = [i for i, t in enumerate(times) if t >= t0]
    for a, b in zip(late, late[1:]):
        env = math.exp(-lam * (times[b] - times[a]))
        if entropy[a] > 0:
            r = entropy[b] / entropy[a]
            ratios.append(r)
            ok &= r <= env * (1 + envelope_tol)
        ca, cb = coupling[a], coupling[b]
        ok_c &= cb.mean <= env * ca.mean + 3 * math.hypot(cb.stderr, env * ca.stderr)
    return TVReport(times, tuple(coupling), tuple(entropy), tuple(uncoupled), bool(ok), tuple(ratios),
                    bool(ok_c), lam, t0)
