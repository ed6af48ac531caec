"""Additive noise ``G dW`` with ``G = amplitude * (-Laplacian)^(theta/2)``.

The stochastic convolution ``W_A`` is simulated exactly mode by mode.  Each step
of length ``h`` draws two standard normals per mode, ``z0`` and ``z1``, and forms
the jointly Gaussian pair

    I0 = beta_k(t+h) - beta_k(t)                      (Brownian increment)
    I1 = int_t^{t+h} exp(-lambda_k (t+h-r)) d beta_k   (OU integral)

so that the same draw drives both the exact OU transition and the Girsanov
weight of the coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from . import parallel
from .errors import DivergenceError, DomainError
from .rng import PathBlockNoise
from .spectral import SpectralField, eigenvalues, lp_power_array, sobolev_slobodeckij_array
from .stats import Estimate, RunningStats, merge_all


@dataclass(frozen=True)
class NoiseSpec:
    theta_noise: float
    n_modes: int
    seed: int = 0
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        if not self.theta_noise < 0.5:
            raise DivergenceError(
                f"theta_noise={self.theta_noise}: the gamma-radonifying series of the "
                "stochastic convolution converges only for theta < 1/2"
            )
        if self.n_modes < 1:
            raise DomainError("n_modes must be positive")
        if self.amplitude < 0:
            raise DomainError("noise amplitude must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")

    @property
    def scale(self) -> np.ndarray:
        """Diagonal of G in the eigenbasis, ``amplitude * lambda_k^(theta/2)``."""
        return self.amplitude * eigenvalues(self.n_modes) ** (self.theta_noise / 2)

    @property
    def inverse_scale(self) -> np.ndarray:
        """Diagonal of ``G^-1``."""
        if self.amplitude == 0:
            raise DomainError("G is not invertible for zero noise amplitude")
        return 1.0 / self.scale


@dataclass(frozen=True)
class OUState:
    t: float
    field: SpectralField


@dataclass(frozen=True)
class IncrementWeights:
    """Per-mode coefficients of one exact step of length ``h``.

    ``decay = exp(-lambda h)``, ``phi1 = (1 - exp(-lambda h)) / lambda`` and the
    Cholesky factors mapping ``(z0, z1)`` to ``(I0, I1)``.
    """

    h: float
    decay: np.ndarray
    phi1: np.ndarray
    bm: float
    ou0: np.ndarray
    ou1: np.ndarray

    @classmethod
    def build(cls, lam: np.ndarray, h: float) -> IncrementWeights:
        if h <= 0:
            raise DomainError(f"time step must be positive, got {h}")
        a = lam * h
        decay = np.exp(-a)
        phi1 = -np.expm1(-a) / lam
        var_ou = -np.expm1(-2 * a) / (2 * lam)
        resid = np.where(a < 1e-2, _small_resid(a), 0.5 * (-np.expm1(-2 * a)) - np.expm1(-a) ** 2 / a) / lam
        resid = np.maximum(resid, 0.0)
        sq = math.sqrt(h)
        ou0 = phi1 / sq
        ou1 = np.sqrt(resid)
        # the two factors reproduce var_ou up to rounding
        assert np.allclose(ou0**2 + ou1**2, var_ou, rtol=1e-10, atol=0)
        return cls(h, decay, phi1, sq, ou0, ou1)

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``z[..., 0, :], z[..., 1, :]`` -> ``(I0, I1)`` in cylindrical coordinates."""
        z0 = z[..., 0, :]
        z1 = z[..., 1, :]
        return self.bm * z0, self.ou0 * z0 + self.ou1 * z1


def _small_resid(a: np.ndarray) -> np.ndarray:
    # series of (1 - e^{-2a})/2 - (1 - e^{-a})^2 / a, accurate for a < 1e-2
    return a**3 * (1 / 12 - a / 12 + 17 * a**2 / 360 - 7 * a**3 / 360 + 43 * a**4 / 6720)


def ou_stationary_variance(spec: NoiseSpec) -> np.ndarray:
    """``amplitude^2 lambda_k^(theta-1) / 2`` per mode."""
    lam = eigenvalues(spec.n_modes)
    return spec.amplitude**2 * lam**spec.theta_noise / (2 * lam)


def ou_transition_moments(spec: NoiseSpec, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean factor and variance of one exact OU step."""
    lam = eigenvalues(spec.n_modes)
    return np.exp(-lam * dt), spec.amplitude**2 * lam**spec.theta_noise * -np.expm1(-2 * lam * dt) / (2 * lam)


def wiener_increment(spec: NoiseSpec, dt: float, rng: np.random.Generator) -> SpectralField:
    """``G (W_{t+dt} - W_t)`` projected on the first ``n_modes`` modes."""
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    z = rng.standard_normal(spec.n_modes)
    return SpectralField(spec.scale * math.sqrt(dt) * z)


def ou_exact_step(state: OUState, dt: float, spec: NoiseSpec, rng: np.random.Generator) -> OUState:
    """Exact transition of the stochastic convolution over ``dt``.

    Consumes one ``(2, n_modes)`` normal draw, the same layout as an
    integrator step, so a zero-drift integrator run reproduces it exactly.
    """
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if state.field.n_modes != spec.n_modes:
        raise DomainError("OU state and noise spec disagree on n_modes")
    w = IncrementWeights.build(eigenvalues(spec.n_modes), dt)
    _, i1 = w.split(rng.standard_normal((2, spec.n_modes)))
    new = w.decay * state.field.coeffs + spec.scale * i1
    return OUState(state.t + dt, SpectralField(new))


@dataclass(frozen=True)
class SeriesValue:
    """Truncated series plus an integral-test bracket for the remainder."""

    value: float
    partial_sum: float
    tail_bound: float
    n_terms: int

    def __float__(self) -> float:
        return self.value


def gamma_series_integrated(theta_noise: float, n_terms: int = 64) -> SeriesValue:
    """``sum_k 1 / (2 lambda_k^(1-theta))`` with an integral-comparison tail.

    This is the time integral of ``sum_k exp(-2 lambda_k t) lambda_k^theta``
    and bounds the second moment of the stochastic convolution uniformly in t.
    """
    if not theta_noise < 0.5:
        raise DivergenceError(f"series diverges for theta_noise={theta_noise} >= 1/2")
    expo = 2 * (1 - theta_noise)  # terms ~ c k^-expo with expo > 1
    c = 1.0 / (2 * np.pi**expo)
    k = np.arange(1, n_terms + 1, dtype=float)
    partial_sum = math.fsum(c * k**-expo)
    # sum_{k>N} k^-s lies between int_{N+1}^inf and int_N^inf of x^-s
    lo = c * (n_terms + 1) ** (1 - expo) / (expo - 1)
    hi = c * n_terms ** (1 - expo) / (expo - 1)
    return SeriesValue(partial_sum + 0.5 * (lo + hi), partial_sum, 0.5 * (hi - lo), n_terms)


def per_time_gamma_series(theta_noise: float, t: np.ndarray, n_terms: int) -> np.ndarray:
    """``sum_{k<=N} exp(-2 lambda_k t) lambda_k^theta`` for an array of times."""
    lam = eigenvalues(n_terms)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.exp(-2 * np.outer(t, lam)) @ lam**theta_noise


def stationary_l2_tail(spec: NoiseSpec) -> float:
    """Exact ``E||W_A||_2^2`` contribution of the modes above the truncation."""
    s = gamma_series_integrated(spec.theta_noise, spec.n_modes)
    return spec.amplitude**2 * (s.value - s.partial_sum)


def g_inverse_norm(spec: NoiseSpec) -> float:
    """Operator norm of ``G^-1`` on L^2, attained on the first mode: ``pi^-theta / amplitude``."""
    if spec.theta_noise < 0:
        raise DomainError("closed form needs theta_noise >= 0")
    if spec.amplitude == 0:
        raise DomainError("G is not invertible for zero noise amplitude")
    return float(np.pi ** (-spec.theta_noise) / spec.amplitude)


def _ou_marginal_block(start: int, count: int, *, spec: NoiseSpec, t: float, role: str) -> np.ndarray:
    # W_A(t) from zero in one exact step; the per-path stream makes this block independent
    noise = PathBlockNoise(spec.seed, start, count, (2, spec.n_modes), role)
    w = IncrementWeights.build(eigenvalues(spec.n_modes), t)
    _, i1 = w.split(noise.next(1)[0])
    return spec.scale * i1


def sample_ou_marginal(spec: NoiseSpec, t: float, n_paths: int, *, role: str = "main",
                       n_workers: int = 1, block_size: int = parallel.DEFAULT_BLOCK) -> np.ndarray:
    """Exact samples of ``W_A(t)`` started from zero, shape ``(n_paths, n_modes)``."""
    if t <= 0:
        return np.zeros((n_paths, spec.n_modes))
    parts = parallel.map_blocks(partial(_ou_marginal_block, spec=spec, t=t, role=role),
                                n_paths, block_size, n_workers)
    return np.concatenate(parts, axis=0)


def ou_moment_estimate(spec: NoiseSpec, t: float, p_norm: float, moment: int, n_paths: int,
                       n_quad: int | None = None, **kw) -> Estimate:
    """Monte Carlo ``E ||W_A(t)||_p^moment`` from a zero initial state."""
    if p_norm < 2 or moment < 1:
        raise DomainError("need p_norm >= 2 and a positive integer moment")
    if n_paths < 2:
        raise DomainError("need at least two paths")
    if t < 0:
        raise DomainError("t must be nonnegative")
    if t == 0:
        return Estimate(0.0, 0.0, n_paths)
    n_quad = n_quad or 2 * spec.n_modes
    w = sample_ou_marginal(spec, t, n_paths, **kw)
    vals = lp_power_array(w, p_norm, n_quad) ** (moment / p_norm)
    return RunningStats.from_values(vals).estimate()


def sobolev_moment_estimate(spec: NoiseSpec, beta0: float, t: float, n_paths: int, p: float = 2.0,
                            n_quad: int | None = None, **kw) -> Estimate:
    """Monte Carlo ``E ||W_A(t)||_{beta0,p}``."""
    if not 0 < beta0 or beta0 + spec.theta_noise >= 0.5:
        raise DivergenceError(
            f"beta0={beta0} with theta_noise={spec.theta_noise}: the fractional moment "
            "is finite only for 0 < beta0 and beta0 + theta < 1/2"
        )
    if n_paths < 2:
        raise DomainError("need at least two paths")
    if t == 0:
        return Estimate(0.0, 0.0, n_paths)
    n_quad = n_quad or 2 * spec.n_modes
    w = sample_ou_marginal(spec, t, n_paths, **kw)
    parts = [RunningStats.from_values(sobolev_slobodeckij_array(w[i:i + 256], beta0, p, n_quad))
             for i in range(0, n_paths, 256)]
    return merge_all(parts).estimate()


@dataclass(frozen=True)
class TransitionCheck:
    """Per-mode z-scores of the sample mean and variance of one exact OU step."""

    mean_z: np.ndarray
    var_z: np.ndarray
    n_samples: int

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.mean_z)), np.max(np.abs(self.var_z))))

    def passed(self, k: float = 4.0) -> bool:
        return self.max_abs_z <= k


def _transition_block(start: int, count: int, *, spec: NoiseSpec, x0: np.ndarray, dt: float,
                      role: str) -> np.ndarray:
    noise = PathBlockNoise(spec.seed, start, count, (2, spec.n_modes), role)
    w = IncrementWeights.build(eigenvalues(spec.n_modes), dt)
    _, i1 = w.split(noise.next(1)[0])
    return w.decay * x0 + spec.scale * i1


def ou_transition_check(spec: NoiseSpec, x0: SpectralField, dt: float, n_paths: int, *,
                        role: str = "main", n_workers: int = 1,
                        block_size: int = parallel.DEFAULT_BLOCK) -> TransitionCheck:
    """Compare one-step samples from ``x0`` with the exact conditional moments.

    The variance z-score uses the Gaussian standard error ``var * sqrt(2 / (n - 1))``.
    """
    if n_paths < 2:
        raise DomainError("need at least two paths")
    samples = np.concatenate(parallel.map_blocks(
        partial(_transition_block, spec=spec, x0=np.asarray(x0.coeffs), dt=dt, role=role),
        n_paths, block_size, n_workers))
    factor, var = ou_transition_moments(spec, dt)
    mean = samples.mean(axis=0)
    s2 = samples.var(axis=0, ddof=1)
    mean_z = (mean - factor * x0.coeffs) / np.sqrt(var / n_paths)
    var_z = (s2 - var) / (var * math.sqrt(2.0 / (n_paths - 1)))
    return TransitionCheck(mean_z, var_z, n_paths)
