"""Circle-invariant Kahler potentials on the degree-2 polarized sphere.

Everything lives in the log-radial coordinate s = log|z|^2.  An invariant
positively curved metric is a convex function u(s) with asymptotic slopes 0
and 2 (the moment interval of the polarization); the Kahler form reduces to
the density u''(s), the Ricci potential to F = s - u - log u'', and the
anticanonical measure exp(-phi) to the weight w = exp(s - u).  Fiber
integrals over the sphere carry a factor 2*pi from the collapsed angular
direction.

All types are immutable; the operations are pure functions, so fibers can be
processed in parallel without locking.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import make_interp_spline

from .errors import GridValidationError, PositivityError, ValidationError

TWO_PI = 2.0 * math.pi
#: total mass of the Kahler form, 2*pi * (slope_right - slope_left)
VOLUME = 4.0 * math.pi
SLOPE_LEFT = 0.0
SLOPE_RIGHT = 2.0
DEFAULT_S_RANGE = (-15.0, 15.0)
#: minimum node count: second-order stencils plus boundary layers
MIN_GRID_POINTS = 33


@dataclass(frozen=True)
class SGrid:
    """Uniform sampling of the log-radial coordinate."""

    s_min: float
    s_max: float
    n: int

    def __post_init__(self):
        if not (self.s_min < 0.0 < self.s_max):
            raise GridValidationError(
                f"grid must straddle s=0, got [{self.s_min}, {self.s_max}]"
            )
        if self.n < MIN_GRID_POINTS:
            raise GridValidationError(f"need n >= {MIN_GRID_POINTS}, got n={self.n}")

    @property
    def ds(self) -> float:
        return (self.s_max - self.s_min) / (self.n - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(self.s_min, self.s_max, self.n)

    def to_dict(self) -> dict:
        return {"s_min": self.s_min, "s_max": self.s_max, "n": self.n}

    @classmethod
    def from_dict(cls, d: dict) -> "SGrid":
        return cls(float(d["s_min"]), float(d["s_max"]), int(d["n"]))


def _frozen(values) -> np.ndarray:
    a = np.array(values, dtype=float)
    a.setflags(write=False)
    return a


def derivative(values: np.ndarray, ds: float) -> np.ndarray:
    """First derivative, second-order: central inside, one-sided at the ends."""
    v = np.asarray(values, dtype=float)
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2.0 * ds)
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * ds)
    d[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * ds)
    return d


def second_derivative(values: np.ndarray, ds: float) -> np.ndarray:
    """Second derivative, second-order: central inside, one-sided at the ends."""
    v = np.asarray(values, dtype=float)
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (ds * ds)
    d[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (ds * ds)
    d[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / (ds * ds)
    return d


@dataclass(frozen=True)
class ReducedPotential:
    """Sampled invariant potential u(s) with its asymptotic slopes."""

    grid: SGrid
    values: np.ndarray
    slope_left: float = SLOPE_LEFT
    slope_right: float = SLOPE_RIGHT

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape != (self.grid.n,):
            raise ValidationError(
                f"expected {self.grid.n} samples, got {self.values.shape}"
            )

    def validate(self) -> None:
        """Check Kahler positivity and the moment-interval slope bounds."""
        ds = self.grid.ds
        upp = second_derivative(self.values, ds)
        bad = np.nonzero(upp[1:-1] <= 0.0)[0]
        if bad.size:
            i = int(bad[0]) + 1
            raise PositivityError(
                f"u'' <= 0 at index {i} (s={self.grid.nodes()[i]:.4f})", index=i
            )
        up = derivative(self.values, ds)
        if not (0.0 < up[0] and up[-1] < 2.0):
            raise PositivityError(
                f"moment map leaves (0, 2): u'({self.grid.s_min})={up[0]:.3e}, "
                f"u'({self.grid.s_max})={up[-1]:.3e}"
            )

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "values": [float(v) for v in self.values],
            "slopes": [self.slope_left, self.slope_right],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReducedPotential":
        slopes = d.get("slopes", [SLOPE_LEFT, SLOPE_RIGHT])
        return cls(
            SGrid.from_dict(d["grid"]),
            np.asarray(d["values"], dtype=float),
            float(slopes[0]),
            float(slopes[1]),
        )


@dataclass(frozen=True)
class FiberGeometry:
    """Per-metric derived data: u'', Ricci potential, weighted measure."""

    grid: SGrid
    u_pp: np.ndarray
    F: np.ndarray
    w: np.ndarray
    mass: float

    def __post_init__(self):
        for name in ("u_pp", "F", "w"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


def fubini_study_potential(grid: SGrid) -> ReducedPotential:
    """Reference round metric, u(s) = 2 log(1 + e^s)."""
    s = grid.nodes()
    return ReducedPotential(grid, 2.0 * np.logaddexp(0.0, s))


def _asymptotic_coeffs(u: ReducedPotential, spline) -> tuple[float, float, float, float]:
    # u ~ alpha + c_L e^s on the left, 2s + beta + c_R e^{-s} on the right;
    # coefficients read off the end node and the spline slope there.
    s0, s1 = u.grid.s_min, u.grid.s_max
    d0 = float(spline(s0, nu=1))
    d1 = float(spline(s1, nu=1))
    c_left = d0 * math.exp(-s0)
    alpha = float(u.values[0]) - d0
    c_right = (2.0 - d1) * math.exp(s1)
    beta = float(u.values[-1]) - 2.0 * s1 - (2.0 - d1)
    return alpha, c_left, beta, c_right


def _potential_spline(u: ReducedPotential):
    return make_interp_spline(u.grid.nodes(), u.values, k=5)


def evaluate_potential(u: ReducedPotential, s: np.ndarray, spline=None) -> np.ndarray:
    """Evaluate u off the grid; beyond the sampled range use the exponential
    corrections to the linear asymptotes (exact up to O(e^{-2|s|}))."""
    s = np.asarray(s, dtype=float)
    if spline is None:
        spline = _potential_spline(u)
    alpha, c_left, beta, c_right = _asymptotic_coeffs(u, spline)
    out = np.empty_like(s)
    left = s < u.grid.s_min
    right = s > u.grid.s_max
    mid = ~(left | right)
    out[mid] = spline(s[mid])
    out[left] = alpha + c_left * np.exp(s[left])
    out[right] = 2.0 * s[right] + beta + c_right * np.exp(-s[right])
    return out


def evaluate_slope(u: ReducedPotential, s: np.ndarray, spline=None) -> np.ndarray:
    """Evaluate u' off the grid with the same asymptotic extension; strictly
    increasing on the whole line for convex input."""
    s = np.asarray(s, dtype=float)
    if spline is None:
        spline = _potential_spline(u)
    alpha, c_left, beta, c_right = _asymptotic_coeffs(u, spline)
    out = np.empty_like(s)
    left = s < u.grid.s_min
    right = s > u.grid.s_max
    mid = ~(left | right)
    out[mid] = spline(s[mid], nu=1)
    out[left] = c_left * np.exp(s[left])
    out[right] = 2.0 - c_right * np.exp(-s[right])
    return out


def pullback_potential(u: ReducedPotential, tau: float) -> ReducedPotential:
    """Pull the metric back under z -> a z with tau = log a^2, i.e. resample
    s -> u(s + tau) - tau on the same grid."""
    span = u.grid.s_max - u.grid.s_min
    if abs(tau) > span / 4.0:
        raise ValidationError(
            f"|tau|={abs(tau):.3g} exceeds (s_max - s_min)/4 = {span / 4.0:.3g}"
        )
    vals = evaluate_potential(u, u.grid.nodes() + tau) - tau
    return ReducedPotential(u.grid, vals, u.slope_left, u.slope_right)


def fiber_geometry(u: ReducedPotential) -> FiberGeometry:
    """Metric density, Ricci potential and weighted measure of one fiber.

    The Ricci potential is fixed by the local formula F = s - u - log u'',
    which makes e^F * (u'' e^{-s}) = e^{-u} an identity to round-off.
    """
    u.validate()
    grid = u.grid
    s = grid.nodes()
    upp = second_derivative(u.values, grid.ds)
    bad = np.nonzero(upp <= 0.0)[0]
    if bad.size:
        raise PositivityError(f"u'' <= 0 at index {int(bad[0])}", index=int(bad[0]))
    F = s - u.values - np.log(upp)
    w = np.exp(s - u.values)
    cw = np.full(grid.n, grid.ds)
    cw[0] = cw[-1] = grid.ds / 2.0
    mass = TWO_PI * float(cw @ w)
    wmax = float(w.max())
    if w[0] > 1e-6 * wmax or w[-1] > 1e-6 * wmax:
        # constant message so the warnings module deduplicates repeat hits
        warnings.warn(
            "weighted measure not negligible at the truncated ends; "
            "consider a wider s-range",
            stacklevel=2,
        )
    return FiberGeometry(grid, upp, F, w, mass)


def random_convex_potential(
    grid: SGrid,
    rng: np.random.Generator,
    n_bumps: int = 3,
    amplitude: float = 0.04,
    max_shrink: int = 12,
) -> ReducedPotential:
    """Round metric plus a few sech bumps, shrunk until positivity and the
    slope bounds hold.  Used by the randomized eigenvalue/identity suites."""
    s = grid.nodes()
    base = 2.0 * np.logaddexp(0.0, s)
    centers = rng.uniform(-3.0, 3.0, size=n_bumps)
    coeffs = rng.uniform(-amplitude, amplitude, size=n_bumps)
    bump = np.zeros_like(s)
    for c, s0 in zip(coeffs, centers):
        bump += c / np.cosh(s - s0)
    for _ in range(max_shrink):
        cand = ReducedPotential(grid, base + bump)
        try:
            cand.validate()
            return cand
        except PositivityError:
            bump = 0.5 * bump
    return fubini_study_potential(grid)
