"""Fields on (0, 1) with homogeneous Dirichlet data, stored in the sine eigenbasis.

The basis is ``e_k(xi) = sqrt(2) sin(k pi xi)`` with Dirichlet-Laplacian
eigenvalues ``lambda_k = pi^2 k^2``.  Collocation uses the uniform interior grid
``xi_j = j / (n_quad + 1)``, on which the type-I discrete sine transform is an
exact change of basis.

Every routine accepts either a single coefficient vector or a stack of them
(leading axes are batch axes), so Monte Carlo code can call the same kernels
on ``(n_paths, n_modes)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft

from .errors import ConfigurationError, DomainError

SQRT2 = np.sqrt(2.0)


def eigenvalues(n_modes: int) -> np.ndarray:
    """Dirichlet eigenvalues ``pi^2 k^2`` for ``k = 1..n_modes``."""
    k = np.arange(1, n_modes + 1, dtype=float)
    return (np.pi * k) ** 2


@dataclass(frozen=True)
class GridSpec:
    """Spectral truncation and collocation resolution."""

    n_modes: int
    n_quad: int | None = None

    def __post_init__(self) -> None:
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ConfigurationError(f"n_modes must be a positive integer, got {self.n_modes}")
        if self.n_quad is None:
            object.__setattr__(self, "n_quad", default_n_quad(self.n_modes))
        if self.n_quad < 2 * self.n_modes:
            raise ConfigurationError(
                f"n_quad={self.n_quad} must be >= 2*n_modes={2 * self.n_modes}"
            )

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(1, self.n_quad + 1) / (self.n_quad + 1)

    @property
    def h(self) -> float:
        return 1.0 / (self.n_quad + 1)

    @property
    def eigenvalues(self) -> np.ndarray:
        return eigenvalues(self.n_modes)


def default_n_quad(n_modes: int) -> int:
    """Smallest ``n_quad >= 2 n_modes`` whose DST-I length is FFT friendly."""
    return fft.next_fast_len(2 * (2 * n_modes + 1)) // 2 - 1 if n_modes > 1 else 2


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable coefficient vector in the basis ``e_k``, k = 1..N."""

    coeffs: np.ndarray

    def __post_init__(self) -> None:
        c = _frozen(self.coeffs)
        if c.ndim != 1 or c.size == 0:
            raise ConfigurationError("SpectralField needs a non-empty 1-D coefficient vector")
        if not np.all(np.isfinite(c)):
            raise DomainError("SpectralField coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def n_modes(self) -> int:
        return self.coeffs.size

    @classmethod
    def zeros(cls, n_modes: int) -> SpectralField:
        return cls(np.zeros(n_modes))

    @classmethod
    def mode(cls, k: int, n_modes: int, amplitude: float = 1.0) -> SpectralField:
        if not 1 <= k <= n_modes:
            raise ConfigurationError(f"mode {k} outside 1..{n_modes}")
        c = np.zeros(n_modes)
        c[k - 1] = amplitude
        return cls(c)

    def __add__(self, other: SpectralField) -> SpectralField:
        return SpectralField(self.coeffs + other.coeffs)

    def __sub__(self, other: SpectralField) -> SpectralField:
        return SpectralField(self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> SpectralField:
        return SpectralField(a * self.coeffs)

    __rmul__ = __mul__

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SpectralField) and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self) -> int:
        return hash(self.coeffs.tobytes())


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Samples at the interior collocation nodes."""

    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values))


# --------------------------------------------------------------------------
# array kernels


MATRIX_LIMIT = 1 << 16  # below n_modes * n_quad a dense product beats the DST


@lru_cache(maxsize=32)
def _sine_matrix(n_modes: int, n_quad: int) -> np.ndarray:
    xi = np.arange(1, n_quad + 1) / (n_quad + 1)
    k = np.arange(1, n_modes + 1)
    mat = SQRT2 * np.sin(np.pi * k[:, None] * xi[None, :])
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=32)
def _analysis_matrix(n_modes: int, n_quad: int) -> np.ndarray:
    mat = np.ascontiguousarray(_sine_matrix(n_modes, n_quad).T / (n_quad + 1))
    mat.setflags(write=False)
    return mat


def synthesize(coeffs: np.ndarray, n_quad: int) -> np.ndarray:
    """Collocation values of sine series; ``coeffs[..., k-1]`` multiplies ``e_k``."""
    n = coeffs.shape[-1]
    if n > n_quad:
        raise ConfigurationError(f"{n} modes cannot be represented on {n_quad} nodes")
    if n * n_quad <= MATRIX_LIMIT:
        return coeffs @ _sine_matrix(n, n_quad)
    padded = np.zeros(coeffs.shape[:-1] + (n_quad,))
    padded[..., :n] = coeffs
    return fft.dst(padded, type=1, axis=-1) / SQRT2


def analyze(values: np.ndarray, n_modes: int) -> np.ndarray:
    """Inverse of :func:`synthesize`, truncated to the first ``n_modes`` modes."""
    m = values.shape[-1]
    if n_modes > m:
        raise ConfigurationError(f"cannot extract {n_modes} modes from {m} nodes")
    if n_modes * m <= MATRIX_LIMIT:
        return values @ _analysis_matrix(n_modes, m)
    return fft.dst(values, type=1, axis=-1)[..., :n_modes] / (SQRT2 * (m + 1))


@lru_cache(maxsize=32)
def _cos_matrix(n_modes: int, n_quad: int) -> np.ndarray:
    # derivative synthesis on the closed grid j/(n_quad+1), j = 0..n_quad+1
    xi = np.arange(0, n_quad + 2) / (n_quad + 1)
    k = np.arange(1, n_modes + 1)
    mat = SQRT2 * np.pi * k[:, None] * np.cos(np.pi * k[:, None] * xi[None, :])
    mat.setflags(write=False)
    return mat


def derivative_values(coeffs: np.ndarray, n_quad: int) -> np.ndarray:
    """u' on the closed grid including both endpoints."""
    return coeffs @ _cos_matrix(coeffs.shape[-1], n_quad)


def _quad_nodes_for_power(n_modes: int, n_quad: int, p: float) -> int:
    # |u|^p for even integer p is a trigonometric polynomial of degree p*N;
    # the interior rectangle rule on n+1 cells is exact below degree 2(n+1).
    if float(p).is_integer() and int(p) % 2 == 0:
        need = (int(p) * n_modes) // 2
        return max(n_quad, need)
    return 8 * (max(n_quad, 2 * n_modes) + 1) - 1


def lp_norm_array(coeffs: np.ndarray, p: float, n_quad: int) -> np.ndarray:
    """Batched ``||u||_p`` via rectangle quadrature on the collocation grid."""
    return lp_power_array(coeffs, p, n_quad) ** (1.0 / p)


def lp_power_array(coeffs: np.ndarray, p: float, n_quad: int) -> np.ndarray:
    """Batched ``||u||_p^p``."""
    if p < 1:
        raise DomainError(f"L^p norm needs p >= 1, got {p}")
    if p == 2:
        return np.sum(coeffs * coeffs, axis=-1)
    m = _quad_nodes_for_power(coeffs.shape[-1], n_quad, p)
    vals = synthesize(coeffs, m)
    return np.sum(np.abs(vals) ** p, axis=-1) / (m + 1)


def lp_power_from_values(values: np.ndarray, p: float) -> np.ndarray:
    """``||u||_p^p`` from interior samples (exact when the grid resolves |u|^p)."""
    return np.sum(np.abs(values) ** p, axis=-1) / (values.shape[-1] + 1)


def sobolev_slobodeckij_array(coeffs: np.ndarray, beta: float, p: float, n_quad: int) -> np.ndarray:
    """Batched fractional Sobolev norm ``||u||_{beta,p}`` on (0, 1).

    The double integral is reduced to ``2 * int_0^1 r^(p(1-beta)-1) s(r) dr``
    with ``s(r) = r^-p int_0^{1-r} |u(xi+r) - u(xi)|^p dxi``.  ``s`` is sampled
    at the grid offsets ``r_m = m h`` and interpolated piecewise linearly; the
    weights of the singular power are integrated exactly.  On the first cell
    the diagonal limit ``s(0) = ||u'||_p^p`` supplies the local correction.
    """
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta must lie in (0, 1), got {beta}")
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    coeffs = np.asarray(coeffs, dtype=float)
    m_int = n_quad
    vals = synthesize(coeffs, m_int)
    zeros = np.zeros(vals.shape[:-1] + (1,))
    u = np.concatenate([zeros, vals, zeros], axis=-1)  # closed grid, n = m_int + 2 points
    n_pts = u.shape[-1]
    h = 1.0 / (n_pts - 1)

    du = derivative_values(coeffs, m_int)
    s = np.empty(vals.shape[:-1] + (n_pts,))
    s[..., 0] = _trapezoid(np.abs(du) ** p, h)
    for m in range(1, n_pts):
        diff = np.abs(u[..., m:] - u[..., :-m]) ** p
        s[..., m] = _trapezoid(diff, h) / (m * h) ** p

    alpha = p * (1.0 - beta) - 1.0
    w = _hat_power_weights(n_pts - 1, h, alpha)
    seminorm = 2.0 * (s @ w)
    return (lp_power_array(coeffs, p, n_quad) + seminorm) ** (1.0 / p)


def _trapezoid(y: np.ndarray, h: float) -> np.ndarray:
    if y.shape[-1] == 1:
        return np.zeros(y.shape[:-1])
    return h * (np.sum(y, axis=-1) - 0.5 * (y[..., 0] + y[..., -1]))


@lru_cache(maxsize=64)
def _hat_power_weights(n_cells: int, h: float, alpha: float) -> np.ndarray:
    """Weights ``w_m = int_0^1 r^alpha phi_m(r) dr`` for hat functions on ``m h``."""
    r = np.arange(n_cells + 1) * h
    a1 = alpha + 1.0
    a2 = alpha + 2.0
    # moments of r^alpha and r^(alpha+1) over each cell [r_i, r_{i+1}]
    i0 = (r[1:] ** a1 - r[:-1] ** a1) / a1
    i1 = (r[1:] ** a2 - r[:-1] ** a2) / a2
    left = (r[1:] * i0 - i1) / h  # weight of node i on cell i
    right = (i1 - r[:-1] * i0) / h  # weight of node i+1 on cell i
    w = np.zeros(n_cells + 1)
    w[:-1] += left
    w[1:] += right
    w.setflags(write=False)
    return w


# --------------------------------------------------------------------------
# field-level operations


def _check_grid(u: SpectralField, g: GridSpec) -> None:
    if u.n_modes > g.n_modes:
        raise ConfigurationError(
            f"field has {u.n_modes} modes but grid supports {g.n_modes}"
        )


def to_physical(u: SpectralField, g: GridSpec) -> PhysicalField:
    _check_grid(u, g)
    return PhysicalField(synthesize(u.coeffs, g.n_quad))


def to_spectral(v: PhysicalField, g: GridSpec) -> SpectralField:
    if v.values.shape != (g.n_quad,):
        raise ConfigurationError(
            f"expected {g.n_quad} collocation values, got shape {v.values.shape}"
        )
    return SpectralField(analyze(v.values, g.n_modes))


def lp_norm(u: SpectralField, p: float, g: GridSpec) -> float:
    _check_grid(u, g)
    return float(lp_norm_array(u.coeffs, p, g.n_quad))


def sobolev_slobodeckij_norm(u: SpectralField, beta: float, p: float, g: GridSpec) -> float:
    _check_grid(u, g)
    return float(sobolev_slobodeckij_array(u.coeffs, beta, p, g.n_quad))


def gradient_l2_norm(u: SpectralField) -> float:
    """``||u'||_2 = (sum lambda_k c_k^2)^(1/2)``."""
    return float(np.sqrt(np.sum(eigenvalues(u.n_modes) * u.coeffs**2)))


def apply_laplacian_power(u: SpectralField, s: float) -> SpectralField:
    """Scale mode k by ``lambda_k^s``, i.e. apply ``(-Laplacian)^s``."""
    return SpectralField(eigenvalues(u.n_modes) ** s * u.coeffs)


def heat_semigroup(u: SpectralField, t: float) -> SpectralField:
    if t < 0:
        raise DomainError(f"heat semigroup needs t >= 0, got {t}")
    if t == 0:
        return u
    return SpectralField(np.exp(-eigenvalues(u.n_modes) * t) * u.coeffs)
