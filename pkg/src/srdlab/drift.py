"""Reaction term ``f = polynomial + Lipschitz perturbation`` and its certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, DomainError
from .spectral import PhysicalField

# name -> (f(x; c), Lipschitz constant of f(.; c) for |c| = 1)
LIPSCHITZ_MENU = {
    "none": (lambda x, c: np.zeros_like(x), 0.0),
    "sin": (lambda x, c: c * np.sin(x), 1.0),
    "rational": (lambda x, c: c * x / (1.0 + x * x), 1.0),
    "constant": (lambda x, c: np.full_like(x, c, dtype=float), 0.0),
}

STANDARD_RADIUS = 50.0
STANDARD_STEP = 0.05
REL_TOL = 1e-12


@dataclass(frozen=True)
class Certificate:
    passed: bool
    worst_pair: tuple[float, float]
    worst_margin: float  # max over the grid of LHS - RHS (<= 0 on a pass)
    asymptotic_ok: bool
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst_pair": list(self.worst_pair),
            "worst_margin": self.worst_margin,
            "asymptotic_ok": self.asymptotic_ok,
            "note": self.note,
        }


@dataclass(frozen=True)
class DriftSpec:
    """``f(x) = sum_i poly_coeffs[i] x^i + lipschitz(x)`` with its constants.

    ``L_f``, ``theta_diss`` and ``q`` are the one-sided dissipativity constants,
    ``L_f_prime`` the polynomial growth constant.  Construction checks both on
    the standard grid unless ``validate=False``.
    """

    poly_coeffs: tuple[float, ...]
    L_f: float
    theta_diss: float
    q: float
    L_f_prime: float
    lipschitz: str = "none"
    lipschitz_coeff: float = 0.0
    validate: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self) -> None:
        coeffs = tuple(float(c) for c in self.poly_coeffs)
        while coeffs and coeffs[-1] == 0.0:
            coeffs = coeffs[:-1]
        object.__setattr__(self, "poly_coeffs", coeffs)
        if self.lipschitz not in LIPSCHITZ_MENU:
            raise ConfigurationError(
                f"lipschitz part {self.lipschitz!r} not in {sorted(LIPSCHITZ_MENU)}"
            )
        if self.theta_diss <= 0:
            raise ConfigurationError("theta_diss must be positive")
        if self.L_f_prime <= 0:
            raise ConfigurationError("L_f_prime must be positive")
        if self.q < 2:
            raise ConfigurationError("q must be >= 2")
        if not self.is_zero:
            degree = len(coeffs) - 1
            if degree < 1 or degree % 2 == 0 or coeffs[-1] >= 0:
                raise ConfigurationError(
                    "polynomial part must have odd degree with a negative leading coefficient"
                )
            if degree != self.q - 1:
                raise ConfigurationError(f"degree {degree} does not match q - 1 = {self.q - 1}")
        if self.validate:
            cert = _cached_dissipativity(self, STANDARD_RADIUS, STANDARD_STEP)
            if not cert.passed:
                raise ConfigurationError(
                    f"dissipativity constants (L_f={self.L_f}, theta={self.theta_diss}, q={self.q}) "
                    f"violated at {cert.worst_pair} by {cert.worst_margin:.3g}"
                )
            cert = _cached_growth(self, STANDARD_RADIUS, STANDARD_STEP)
            if not cert.passed:
                raise ConfigurationError(
                    f"growth constant L_f_prime={self.L_f_prime} violated at {cert.worst_pair}"
                )

    @classmethod
    def allen_cahn(cls, **kw) -> DriftSpec:
        """``f(x) = x - x^3`` with constants (1, 1/4, 4) and growth constant 3."""
        return cls((0.0, 1.0, 0.0, -1.0), L_f=1.0, theta_diss=0.25, q=4, L_f_prime=3.0, **kw)

    @classmethod
    def zero(cls, theta_diss: float = 1e-3) -> DriftSpec:
        """``f = 0``; with ``L_f = theta_diss`` and ``q = 2`` the constants are sharp."""
        return cls((), L_f=theta_diss, theta_diss=theta_diss, q=2, L_f_prime=1.0, validate=False)

    @property
    def is_zero(self) -> bool:
        return not self.poly_coeffs and (self.lipschitz in ("none",) or self.lipschitz_coeff == 0.0)

    @property
    def degree(self) -> int:
        return max(len(self.poly_coeffs) - 1, 0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.poly_coeffs:
            out = np.full_like(x, self.poly_coeffs[-1])
            for c in reversed(self.poly_coeffs[:-1]):
                out = out * x + c
        else:
            out = np.zeros_like(x)
        if self.lipschitz != "none" and self.lipschitz_coeff != 0.0:
            out = out + LIPSCHITZ_MENU[self.lipschitz][0](x, self.lipschitz_coeff)
        return out

    def as_dict(self) -> dict:
        return {
            "poly_coeffs": list(self.poly_coeffs),
            "L_f": self.L_f,
            "theta_diss": self.theta_diss,
            "q": self.q,
            "L_f_prime": self.L_f_prime,
            "lipschitz": self.lipschitz,
            "lipschitz_coeff": self.lipschitz_coeff,
        }


def apply_nemytskii(d: DriftSpec, v: PhysicalField) -> PhysicalField:
    """Pointwise ``F(x)(xi) = f(x(xi))`` at the collocation nodes."""
    return PhysicalField(d(v.values))


def _grid(radius: float, step: float) -> np.ndarray:
    if step <= 0 or radius <= 0:
        raise DomainError("grid radius and step must be positive")
    n = int(round(radius / step))
    return np.linspace(-n * step, n * step, 2 * n + 1)


def _scan(lhs_minus_rhs, scale, xs: np.ndarray):
    """Max of ``LHS - RHS`` over the grid, relative to the rounding scale."""
    best_rel = -np.inf
    worst, worst_pair = -np.inf, (0.0, 0.0)
    # row chunks keep memory flat for the 2001 x 2001 default grid
    for i in range(0, xs.size, 256):
        xi = xs[i:i + 256, None]
        eta = xs[None, :]
        m = lhs_minus_rhs(xi, eta)
        rel = m - REL_TOL * (1.0 + scale(xi, eta))
        j = np.unravel_index(np.argmax(rel), rel.shape)
        if rel[j] > best_rel:
            best_rel = float(rel[j])
            worst = float(m[j])
            worst_pair = (float(xi[j[0], 0]), float(eta[0, j[1]]))
    return best_rel > 0, worst, worst_pair


def validate_dissipativity(d: DriftSpec, grid_radius: float = STANDARD_RADIUS,
                           grid_step: float = STANDARD_STEP) -> Certificate:
    """Brute-force ``(f(x)-f(y))(x-y) <= L_f |x-y|^2 - theta |x-y|^q`` on a square grid."""
    xs = _grid(grid_radius, grid_step)

    def margin(x, y):
        dxy = x - y
        return (d(x) - d(y)) * dxy - d.L_f * dxy**2 + d.theta_diss * np.abs(dxy) ** d.q

    def scale(x, y):
        dxy = x - y
        return np.abs((d(x) - d(y)) * dxy) + abs(d.L_f) * dxy**2 + d.theta_diss * np.abs(dxy) ** d.q

    violated, worst, pair = _scan(margin, scale, xs)
    asym_ok, note = _asymptotic_dissipativity(d)
    return Certificate(not violated and asym_ok, pair, worst, asym_ok, note)


def validate_growth(d: DriftSpec, grid_radius: float = STANDARD_RADIUS,
                    grid_step: float = STANDARD_STEP) -> Certificate:
    """Brute-force ``|f(x)-f(y)| <= L'_f (1+|x|^(q-2)+|y|^(q-2)) |x-y|``."""
    xs = _grid(grid_radius, grid_step)
    e = d.q - 2

    def margin(x, y):
        return np.abs(d(x) - d(y)) - d.L_f_prime * (1 + np.abs(x) ** e + np.abs(y) ** e) * np.abs(x - y)

    def scale(x, y):
        return np.abs(d(x) - d(y)) + d.L_f_prime * (1 + np.abs(x) ** e + np.abs(y) ** e) * np.abs(x - y)

    violated, worst, pair = _scan(margin, scale, xs)
    asym_ok, note = _asymptotic_growth(d)
    return Certificate(not violated and asym_ok, pair, worst, asym_ok, note)


def _direction_grid(n: int = 20001) -> np.ndarray:
    ang = np.linspace(0.0, np.pi, n)
    return np.stack([np.cos(ang), np.sin(ang)])


def _asymptotic_dissipativity(d: DriftSpec) -> tuple[bool, str]:
    # for |x|,|y| -> inf the leading monomial a x^n dominates; by homogeneity the
    # condition reduces to theta <= |a| * min over directions of
    # (x^n - y^n)(x - y) / |x - y|^(n+1)
    if d.degree <= 1:
        # (f(x)-f(y))(x-y) <= (a + Lip g)|x-y|^2 only matches the q = 2 form
        lead = d.poly_coeffs[-1] if len(d.poly_coeffs) == 2 else 0.0
        slope = lead + LIPSCHITZ_MENU[d.lipschitz][1] * abs(d.lipschitz_coeff)
        ok = d.q == 2 and slope <= d.L_f - d.theta_diss + 1e-12
        return ok, f"linear growth: one-sided slope {slope:.6g}"
    n = d.degree
    x, y = _direction_grid()
    keep = np.abs(x - y) > 1e-9
    x, y = x[keep], y[keep]
    ratio = (x**n - y**n) * (x - y) / np.abs(x - y) ** (n + 1)
    c = float(ratio.min())
    a = abs(d.poly_coeffs[-1])
    ok = d.theta_diss <= a * c * (1 + 1e-9)
    return ok, f"leading term allows theta <= {a * c:.6g}"


def _asymptotic_growth(d: DriftSpec) -> tuple[bool, str]:
    if d.is_zero or d.degree <= 1:
        return True, "at most linear growth"
    n = d.degree
    x, y = _direction_grid()
    keep = np.abs(x - y) > 1e-9
    x, y = x[keep], y[keep]
    ratio = np.abs(x**n - y**n) / (np.abs(x - y) * (np.abs(x) ** (n - 1) + np.abs(y) ** (n - 1)))
    c = float(ratio.max())
    a = abs(d.poly_coeffs[-1])
    ok = a * c <= d.L_f_prime * (1 + 1e-9)
    return ok, f"leading term needs L_f_prime >= {a * c:.6g}"


@lru_cache(maxsize=64)
def _cached_dissipativity(d: DriftSpec, radius: float, step: float) -> Certificate:
    return validate_dissipativity(d, radius, step)


@lru_cache(maxsize=64)
def _cached_growth(d: DriftSpec, radius: float, step: float) -> Certificate:
    return validate_growth(d, radius, step)


def compute_lambda(L_f: float, theta_diss: float, q: float, p: float, lambda_1: float = math.pi**2) -> float:
    """Contraction rate of the solution flow in ``L^p``.

    ``-L_f`` plus ``theta`` when only q = 2, plus ``lambda_1`` when only p = 2,
    plus ``lambda_1 + theta`` when q = p = 2.
    """
    if q < 2 or p < 2:
        raise DomainError("q and p must be >= 2")
    q2, p2 = q == 2, p == 2
    lam = -L_f
    if q2 and not p2:
        lam += theta_diss
    elif p2 and not q2:
        lam += lambda_1
    elif q2 and p2:
        lam += lambda_1 + theta_diss
    return lam


@dataclass(frozen=True)
class DimensionCheck:
    passed: bool
    bound: float
    note: str = ""


def check_dimension_condition(d_dim: int, p: float, q: float) -> DimensionCheck:
    """``d < 2p(q+p-2) / ((p-1)(q-2))``; vacuous for q <= 2."""
    if q <= 2:
        return DimensionCheck(True, math.inf, "q <= 2: condition vacuous")
    bound = 2 * p * (q + p - 2) / ((p - 1) * (q - 2))
    return DimensionCheck(d_dim < bound, bound)
