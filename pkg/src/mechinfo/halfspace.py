"""Vertical stress in an elastic halfspace under distributed surface loads.

The Flamant line-load field is superposed over the traction t(s). With the
change of variables ``s = x + y tan(theta)`` the kernel becomes
``cos(theta)^2 d(theta)``:

    sigma22(x, y) = -(2/pi) * integral t(x + y tan(theta)) cos(theta)^2 d(theta)

which removes the near-surface peak at ``s = x`` and is integrated
adaptively. Compressive stress is negative.
"""

import hashlib
import os
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, quad_vec

from .errors import ConvergenceError, DomainError, InvalidInputError
from .loads import legendre_table, traction_from_coeffs

REL_TOL = 1e-10
SURFACE_DEPTH = 1e-6  # y/a at or below which the surface limit is used


def flamant_sigma22_point(P, x, y):
    """sigma22 of a line load ``P`` at the origin (compressive for P > 0)."""
    if y < 0:
        raise DomainError("depth must be non-negative")
    r2 = x * x + y * y
    if r2 == 0.0:
        raise DomainError("Flamant field is singular at the load point")
    return -2.0 * P * y ** 3 / (np.pi * r2 * r2)


def uniform_strip_sigma22(p, a, x, y):
    """Closed-form sigma22 under a uniform pressure ``p`` on ``[-a, a]``."""
    if y <= 0:
        raise DomainError("depth must be positive")
    t1 = np.arctan2(-a - x, y)
    t2 = np.arctan2(a - x, y)
    return -(p / np.pi) * ((t2 - t1) + 0.5 * (np.sin(2 * t2) - np.sin(2 * t1)))


def _angles(a, x, y):
    return np.arctan2(-a - x, y), np.arctan2(a - x, y)


def _surface_limit(values_at_x, a, x):
    if abs(x) < a * (1 - 1e-12):
        return -values_at_x
    if abs(x) <= a * (1 + 1e-12):
        return -0.5 * values_at_x
    return 0.0 * values_at_x


def integrate_traction(traction, a, x, y, rel_tol=REL_TOL, limit=200):
    """sigma22 at (x, y) for an arbitrary callable traction on [-a, a]."""
    if y <= 0:
        raise DomainError("depth must be positive")
    if y <= SURFACE_DEPTH * a:
        return float(_surface_limit(traction(np.clip(x, -a, a)), a, x))
    t1, t2 = _angles(a, x, y)

    def f(theta):
        s = np.clip(x + y * np.tan(theta), -a, a)
        return traction(s) * np.cos(theta) ** 2

    # absolute floor scaled to the integrand so zero-valued results converge
    scale = max(abs(f(0.5 * (t1 + t2))), abs(f(t1)), abs(f(t2)), 1e-300)
    val, err = quad(f, t1, t2, epsabs=1e-14 * scale * (t2 - t1), epsrel=rel_tol, limit=limit)
    tol = max(rel_tol * abs(val), 1e-12 * scale * (t2 - t1))
    if not np.isfinite(val) or err > 10 * tol:
        raise ConvergenceError(f"quadrature did not converge at ({x}, {y})",
                               estimate=-2.0 / np.pi * val, error=err)
    return float(-2.0 / np.pi * val)


def superposed_sigma22(sample, x, y):
    """sigma22 at (x, y) for a Legendre load sample."""
    spec = sample.spec
    return integrate_traction(lambda s: traction_from_coeffs(spec, sample.coeffs, s),
                              spec.a, x, y)


def mode_responses(spec, x, y, rel_tol=1e-11):
    """sigma22 at (x, y) per unit coefficient: ``(unit constant, modes...)``."""
    a = spec.a
    degrees = (0,) + tuple(spec.degrees)
    if y <= 0:
        raise DomainError("depth must be positive")
    if y <= SURFACE_DEPTH * a:
        vals = legendre_table(spec.max_degree, [np.clip(x / a, -1, 1)])[list(degrees), 0]
        return np.asarray(_surface_limit(vals, a, x), dtype=float)
    t1, t2 = _angles(a, x, y)

    def f(theta):
        zeta = np.clip((x + y * np.tan(theta)) / a, -1.0, 1.0)
        return legendre_table(spec.max_degree, [zeta])[list(degrees), 0] * np.cos(theta) ** 2

    val, err = quad_vec(f, t1, t2, epsabs=1e-15 * (t2 - t1), epsrel=rel_tol, norm="max",
                        limit=2000)
    if not np.all(np.isfinite(val)):
        raise ConvergenceError(f"mode quadrature failed at ({x}, {y})", estimate=val, error=err)
    return -2.0 / np.pi * val


@dataclass(frozen=True)
class SensorGrid:
    xs: np.ndarray
    ys: np.ndarray

    @property
    def points(self):
        """``(n, 2)`` array ordered depth-major: index = iy * len(xs) + ix."""
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def shape(self):
        return (len(self.ys), len(self.xs))

    def digest(self):
        return hashlib.sha256(self.points.tobytes()).hexdigest()[:16]


def build_sensor_grid(a, x_steps_per_a=10, x_extent=2.0, y_min_exp=-4, y_max_exp=6):
    """Candidate grid: x on [-2a, 2a] step a/10; y from 1e-4 to 1e6 by sqrt(10)."""
    if not a > 0:
        raise InvalidInputError("a must be positive")
    n_half = int(round(x_extent * x_steps_per_a))
    xs = a * np.arange(-n_half, n_half + 1) / x_steps_per_a
    exps = np.arange(2 * y_min_exp, 2 * y_max_exp + 1) / 2.0
    ys = 10.0 ** exps
    return SensorGrid(xs=xs, ys=ys)


@dataclass(frozen=True)
class ResponseMatrix:
    """Linear map from free coefficients to sensor readings.

    ``readings(c) = c @ B.T + pinned * constant``.
    """

    B: np.ndarray
    constant: np.ndarray
    pinned: float
    a: float
    F: float
    degrees: tuple

    def readings(self, coeffs):
        coeffs = np.atleast_2d(coeffs)
        return coeffs @ self.B.T + self.pinned * self.constant[None, :]

    @property
    def offset(self):
        return self.pinned * self.constant


def _cache_path(spec, grid):
    root = os.environ.get("MECHINFO_CACHE")
    if not root:
        return None
    key = f"{spec.d_x}-{spec.parity}-{spec.a!r}-{spec.F!r}-{grid.digest()}"
    name = "halfspace-" + hashlib.sha256(key.encode()).hexdigest()[:20] + ".npz"
    return os.path.join(root, name)


def response_matrix(spec, grid, use_cache=True):
    """Per-mode sigma22 responses at every grid point (cached on disk when
    ``MECHINFO_CACHE`` is set)."""
    path = _cache_path(spec, grid) if use_cache else None
    if path and os.path.exists(path):
        data = np.load(path)
        return ResponseMatrix(B=data["B"], constant=data["constant"],
                              pinned=spec.pinned_constant, a=spec.a, F=spec.F,
                              degrees=tuple(spec.degrees))
    pts = grid.points
    cols = np.empty((len(pts), spec.d_x + 1))
    for i, (x, y) in enumerate(pts):
        cols[i] = mode_responses(spec, x, y)
    rm = ResponseMatrix(B=cols[:, 1:].copy(), constant=cols[:, 0].copy(),
                        pinned=spec.pinned_constant, a=spec.a, F=spec.F,
                        degrees=tuple(spec.degrees))
    if path:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = path + ".tmp.npz"
        np.savez(tmp, B=rm.B, constant=rm.constant)
        os.replace(tmp, path)
    return rm
