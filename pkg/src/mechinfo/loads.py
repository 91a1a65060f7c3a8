"""Random surface tractions as truncated Legendre series.

A traction on ``s in [-a, a]`` is

    t(s) = F / (2a) + sum_n c_n P_n(s / a)

where the constant term is pinned so the resultant equals ``F`` and the free
coefficients ``c_n`` (the random vector X) are i.i.d. uniform. The "full"
ensemble uses degrees 1..d_x; the "even" ensemble uses degrees 2, 4, ..., 2 d_x,
which keeps the resultant moment at zero.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidInputError

PARITIES = ("full", "even")


@dataclass(frozen=True)
class LoadSpec:
    d_x: int
    F: float = 1.0
    a: float = 100.0
    parity: str = "full"
    coeff_low: float = -10.0
    coeff_high: float = 10.0

    def __post_init__(self):
        if self.d_x < 1:
            raise InvalidInputError("d_x must be >= 1")
        if not self.a > 0:
            raise InvalidInputError("load half-width a must be positive")
        if self.parity not in PARITIES:
            raise InvalidInputError(f"parity must be one of {PARITIES}")
        if not self.coeff_high > self.coeff_low:
            raise InvalidInputError("coeff_high must exceed coeff_low")

    @property
    def degrees(self):
        """Legendre degrees of the free coefficients, in X order."""
        if self.parity == "even":
            return tuple(range(2, 2 * self.d_x + 1, 2))
        return tuple(range(1, self.d_x + 1))

    @property
    def pinned_constant(self):
        """Constant traction level that carries the resultant ``F``."""
        return self.F / (2.0 * self.a)

    @property
    def max_degree(self):
        return self.degrees[-1]


@dataclass(frozen=True)
class LoadSample:
    coeffs: np.ndarray
    spec: LoadSpec = field(repr=False)
    seed: int | None = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.spec.d_x,):
            raise InvalidInputError(f"expected {self.spec.d_x} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)


def legendre_eval(n, zeta):
    """Legendre polynomial P_n via the three-term recurrence.

    ``zeta`` may be a scalar or array; values outside [-1, 1] by more than
    1e-12 raise :class:`DomainError`.
    """
    if n < 0:
        raise DomainError("Legendre degree must be non-negative")
    z = np.asarray(zeta, dtype=float)
    if np.any(np.abs(z) > 1.0 + 1e-12):
        raise DomainError("Legendre argument outside [-1, 1]")
    p_prev = np.ones_like(z)
    if n == 0:
        return p_prev if z.ndim else float(p_prev)
    p = z.copy()
    for m in range(1, n):
        p_prev, p = p, ((2 * m + 1) * z * p - m * p_prev) / (m + 1)
    return p if z.ndim else float(p)


def legendre_table(max_degree, zeta):
    """Array of shape ``(max_degree + 1, len(zeta))`` with P_0..P_max."""
    z = np.atleast_1d(np.asarray(zeta, dtype=float))
    out = np.empty((max_degree + 1, z.size))
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = z
    for m in range(1, max_degree):
        out[m + 1] = ((2 * m + 1) * z * out[m] - m * out[m - 1]) / (m + 1)
    return out


def sample_loads(spec, m, seed):
    """Draw ``m`` load samples; coefficients are i.i.d. uniform.

    The generator is seeded once, so the first ``j`` samples of a larger
    draw coincide with a draw of size ``j``.
    """
    if m < 1:
        raise InvalidInputError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    coeffs = rng.uniform(spec.coeff_low, spec.coeff_high, size=(m, spec.d_x))
    return [LoadSample(c, spec, seed) for c in coeffs]


def sample_coefficients(spec, m, seed):
    """Coefficient matrix ``(m, d_x)`` equal to stacking :func:`sample_loads`."""
    if m < 1:
        raise InvalidInputError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.uniform(spec.coeff_low, spec.coeff_high, size=(m, spec.d_x))


def traction_eval(sample, s):
    """Traction t(s) (force per length, applied along e2)."""
    spec = sample.spec
    s_arr = np.asarray(s, dtype=float)
    if np.any(np.abs(s_arr) > spec.a * (1.0 + 1e-12)):
        raise DomainError("traction evaluated outside [-a, a]")
    return traction_from_coeffs(spec, sample.coeffs, s_arr)


def traction_from_coeffs(spec, coeffs, s):
    s_arr = np.asarray(s, dtype=float)
    zeta = np.clip(s_arr / spec.a, -1.0, 1.0)
    table = legendre_table(spec.max_degree, zeta.ravel())
    t = spec.pinned_constant + np.asarray(coeffs) @ table[list(spec.degrees)]
    return t.reshape(s_arr.shape) if s_arr.ndim else float(t[0])


def gauss_nodes(n_nodes):
    return np.polynomial.legendre.leggauss(n_nodes)


def _exact_quadrature(spec, extra_degree):
    n_nodes = math.ceil((spec.max_degree + extra_degree + 2) / 2)
    zeta, w = gauss_nodes(max(n_nodes, 1))
    return spec.a * zeta, spec.a * w


def resultant_force(sample):
    """Integral of t(s) over [-a, a] by exact Gauss-Legendre quadrature."""
    s, w = _exact_quadrature(sample.spec, 0)
    return float(w @ traction_from_coeffs(sample.spec, sample.coeffs, s))


def resultant_moment(sample):
    """Integral of s t(s) over [-a, a] by exact Gauss-Legendre quadrature."""
    s, w = _exact_quadrature(sample.spec, 1)
    return float(w @ (s * traction_from_coeffs(sample.spec, sample.coeffs, s)))


def write_samples_csv(path, samples):
    samples = list(samples)
    if not samples:
        raise InvalidInputError("no samples to write")
    d = samples[0].spec.d_x
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed"] + [f"c{j}" for j in range(d)])
        for smp in samples:
            w.writerow([smp.seed if smp.seed is not None else ""]
                       + [format(v, ".17g") for v in smp.coeffs])


def read_samples_csv(path, spec):
    out = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for row in rows:
            seed = int(row[0]) if row[0] else None
            out.append(LoadSample(np.array([float(v) for v in row[1:]]), spec, seed))
    return out
