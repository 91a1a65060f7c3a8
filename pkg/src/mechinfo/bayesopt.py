"""Constrained Bayesian optimization of ellipse-array geometries.

A Gaussian process with a Matern (nu = 5/2) kernel models the noisy NMI
objective; a second GP models the material fraction V / L^2. Candidates
maximize expected improvement times the posterior probability of
satisfying V / L^2 >= 0.2. The loop is generic (see :func:`bayes_optimize`);
:func:`optimize_nmi` wires it to the FEM encoder.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .channel import nmi
from .errors import (ConnectivityError, ConvergenceError, InvalidInputError,
                     RefinementError, StructuralSingularityError)
from .fem import (GeometrySpec, assemble_and_factor, build_geometry, ellipse_bounds,
                  fem_response_matrix, mesh_domain, void_fraction)
from .loads import LoadSpec, sample_coefficients

log = logging.getLogger(__name__)

XI = 0.01
MIN_MATERIAL = 0.2
N_INIT = 10
N_CANDIDATES = 1024
N_POLISH = 4
DEFAULT_BUDGET = 150
JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
ELLIPSE_L_DEN = 4.0
SQRT5 = math.sqrt(5.0)


def matern25(r, length, theta0=1.0):
    """Matern 5/2 covariance at distance ``r``."""
    if not length > 0 or not theta0 > 0:
        raise InvalidInputError("length scale and amplitude must be positive")
    s = SQRT5 * np.asarray(r, dtype=float) / length
    return theta0 * (1.0 + s + s * s / 3.0) * np.exp(-s)


def _pairwise(a, b):
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


class GP:
    """Zero-mean GP on standardized targets over the unit box.

    ``noise_var`` is in the units of the raw targets.
    """

    def __init__(self, bounds, noise_var=0.0, n_starts=5, seed=0):
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InvalidInputError("bounds must satisfy low < high")
        self.lo, self.hi = lo, hi
        self.noise_var = float(noise_var)
        self.n_starts = n_starts
        self.seed = seed
        self.theta0 = 1.0
        self.length = 0.5
        self.jitter = JITTERS[0]

    def _unit(self, z):
        return (np.atleast_2d(np.asarray(z, dtype=float)) - self.lo) / (self.hi - self.lo)

    def _factor(self, theta0, length, noise):
        K = matern25(self._r, length, theta0)
        for jit in JITTERS:
            try:
                c = cho_factor(K + (noise + jit * max(theta0, 1.0)) * np.eye(len(K)), lower=True)
                return c, jit
            except LinAlgError:
                continue
        raise ConvergenceError("kernel matrix is not positive definite after jitter escalation")

    def _nll(self, params):
        theta0, length = np.exp(params)
        try:
            c, _ = self._factor(theta0, length, self._noise)
        except ConvergenceError:
            return 1e25
        alpha = cho_solve(c, self._ys)
        return float(0.5 * self._ys @ alpha + np.log(np.diag(c[0])).sum()
                     + 0.5 * len(self._ys) * math.log(2 * math.pi))

    def fit(self, z, y, optimize=True, theta0=None, length=None):
        z = self._unit(z)
        y = np.asarray(y, dtype=float)
        if len(z) != len(y) or len(y) < 1:
            raise InvalidInputError("need matching, non-empty designs and targets")
        self._z = z
        self._r = _pairwise(z, z)
        self.y_mean = float(y.mean())
        spread = float(y.std())
        self.y_scale = spread if spread > 1e-12 else 1.0
        self._ys = (y - self.y_mean) / self.y_scale
        self._noise = self.noise_var / self.y_scale ** 2
        if theta0 is not None:
            self.theta0 = float(theta0) / self.y_scale ** 2
        if length is not None:
            self.length = float(length)
        if optimize and len(y) >= 2:
            d = z.shape[1]
            lo = np.log([1e-3, 1e-2])
            hi = np.log([1e3, 10.0 * math.sqrt(d)])
            rng = np.random.default_rng(self.seed)
            starts = [np.log([1.0, 0.3 * math.sqrt(d)])]
            starts += list(rng.uniform(lo, hi, size=(self.n_starts - 1, 2)))
            best = None
            for s in starts:
                res = minimize(lambda p: self._nll(np.clip(p, lo, hi)), s, method="Nelder-Mead",
                               options={"xatol": 1e-4, "fatol": 1e-8, "maxiter": 400})
                if best is None or res.fun < best.fun:
                    best = res
            self.theta0, self.length = np.exp(np.clip(best.x, lo, hi))
        self._chol, self.jitter = self._factor(self.theta0, self.length, self._noise)
        self._alpha = cho_solve(self._chol, self._ys)
        return self

    @property
    def amplitude(self):
        """Kernel amplitude theta0 in raw target units."""
        return self.theta0 * self.y_scale ** 2

    def predict(self, z):
        """Posterior mean and variance of the latent function."""
        u = self._unit(z)
        ks = matern25(_pairwise(u, self._z), self.length, self.theta0)
        mu = ks @ self._alpha
        v = solve_triangular(self._chol[0], ks.T, lower=True)
        var = np.maximum(self.theta0 - (v * v).sum(0), 0.0)
        return self.y_mean + self.y_scale * mu, self.y_scale ** 2 * var


def gp_fit(designs, objectives, noise_var, bounds=None, seed=0):
    designs = np.atleast_2d(np.asarray(designs, dtype=float))
    if len(designs) < 2:
        raise InvalidInputError("GP fitting needs at least two observations")
    if bounds is None:
        lo = designs.min(0)
        hi = designs.max(0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        bounds = (lo, hi)
    return GP(bounds, noise_var, seed=seed).fit(designs, objectives)


def expected_improvement(mu, sigma, f_max, xi=XI):
    """EI for maximization; ``sigma`` is the posterior standard deviation."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise InvalidInputError("sigma must be non-negative")
    imp = mu - f_max - xi
    safe = np.where(sigma > 0, sigma, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        zs = imp / safe
        ei = imp * norm.cdf(zs) + sigma * norm.pdf(zs)
    return np.where(sigma > 0, np.maximum(ei, 0.0), np.maximum(imp, 0.0))


def probability_feasible(constraint_gp, z, threshold=MIN_MATERIAL):
    if constraint_gp is None:
        return np.ones(len(np.atleast_2d(z)))
    mu, var = constraint_gp.predict(z)
    sd = np.sqrt(var)
    return np.where(sd > 0, norm.cdf((mu - threshold) / np.where(sd > 0, sd, 1.0)),
                    (mu >= threshold).astype(float))


def constrained_suggest(surrogate, constraint_surrogate, bounds, f_best, rng, xi=XI,
                        n_candidates=N_CANDIDATES, threshold=MIN_MATERIAL):
    """Box point maximizing EI x P(feasible) (random starts + Nelder-Mead)."""
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    cand = lo + (hi - lo) * rng.random((n_candidates, len(lo)))

    def score(z, feas_only=False):
        z = np.clip(np.atleast_2d(z), lo, hi)
        pf = probability_feasible(constraint_surrogate, z, threshold)
        if feas_only:
            return pf
        mu, var = surrogate.predict(z)
        return expected_improvement(mu, np.sqrt(var), f_best, xi) * pf

    pf = score(cand, feas_only=True)
    feas_only = bool(pf.max() < 0.01)
    if feas_only:
        log.info("all candidates likely infeasible; maximizing feasibility instead")
    vals = score(cand, feas_only)
    order = np.argsort(-vals, kind="stable")[:N_POLISH]
    best_z, best_v = cand[order[0]], vals[order[0]]
    for i in order:
        res = minimize(lambda u: -score(lo + (hi - lo) * np.clip(u, 0, 1), feas_only)[0],
                       (cand[i] - lo) / (hi - lo), method="Nelder-Mead",
                       options={"maxiter": 200 * len(lo), "xatol": 1e-4, "fatol": 1e-12})
        z = lo + (hi - lo) * np.clip(res.x, 0, 1)
        v = -res.fun
        if v > best_v:
            best_z, best_v = z, v
    return np.clip(best_z, lo, hi)


@dataclass
class TraceRow:
    iteration: int
    design: np.ndarray
    objective: float
    material: float
    feasible: bool
    best: float


@dataclass
class OptimizationTrace:
    direction: str
    rows: list = field(default_factory=list)
    noise_var: float = 0.0

    @property
    def best_row(self):
        feas = [r for r in self.rows if r.feasible]
        if not feas:
            return None
        key = (lambda r: r.objective) if self.direction == "maximize" else (lambda r: -r.objective)
        return max(feas, key=key)

    @property
    def best_curve(self):
        return np.array([r.best for r in self.rows])


def write_trace_header(path, dim):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration"] + [f"z{j}" for j in range(dim)]
                   + ["objective", "material", "feasible", "best"])


def append_trace_row(path, row):
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([row.iteration] + [format(v, ".17g") for v in row.design]
                   + [format(row.objective, ".17g"), format(row.material, ".17g"),
                      int(row.feasible), format(row.best, ".17g")])


def read_trace(path, direction):
    trace = OptimizationTrace(direction)
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        dim = len(header) - 5
        for r in rows:
            trace.rows.append(TraceRow(int(r[0]), np.array([float(v) for v in r[1:1 + dim]]),
                                       float(r[1 + dim]), float(r[2 + dim]),
                                       bool(int(r[3 + dim])), float(r[4 + dim])))
    return trace


def _initial_designs(bounds, n, rng, constraint, threshold):
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    out = []
    for _ in range(100):
        lhs = qmc.LatinHypercube(d=len(lo), seed=rng).random(n)
        for u in lhs:
            z = lo + (hi - lo) * u
            if constraint is None or constraint(z) >= threshold:
                out.append(z)
            if len(out) == n:
                return np.array(out)
    raise ConvergenceError("could not find feasible initial designs")


def bayes_optimize(objective, bounds, budget=DEFAULT_BUDGET, seed=0, direction="maximize",
                   constraint=None, threshold=MIN_MATERIAL, noise_var=1e-8, n_init=N_INIT,
                   xi=XI, trace_path=None, resume=False, n_candidates=N_CANDIDATES):
    """Sequential constrained BO.

    ``objective(z, iteration)`` returns the (noisy) value or ``None`` when
    the design cannot be evaluated; ``constraint(z)`` returns the quantity
    required to be ``>= threshold``. Designs failing the constraint are not
    passed to the objective. The trace CSV is appended after every
    evaluation, and ``resume`` continues from an existing trace.
    """
    if direction not in ("maximize", "minimize"):
        raise InvalidInputError("direction must be 'maximize' or 'minimize'")
    if budget < n_init:
        raise InvalidInputError(f"budget must be >= {n_init}")
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    sign = 1.0 if direction == "maximize" else -1.0
    trace = OptimizationTrace(direction, noise_var=noise_var)
    if trace_path and resume and os.path.exists(trace_path):
        trace = read_trace(trace_path, direction)
        trace.noise_var = noise_var
    elif trace_path:
        write_trace_header(trace_path, len(lo))

    init = _initial_designs((lo, hi), n_init, np.random.default_rng([seed, 0]), constraint,
                            threshold)
    best = trace.rows[-1].best if trace.rows else -sign * math.inf
    for it in range(len(trace.rows), budget):
        rng = np.random.default_rng([seed, it + 1])
        if it < n_init:
            z = init[it]
        else:
            feas = [r for r in trace.rows if r.feasible]
            if len(feas) >= 2:
                gp = GP((lo, hi), noise_var, seed=seed + it).fit(
                    [r.design for r in feas], [sign * r.objective for r in feas])
                f_best = max(sign * r.objective for r in feas)
            else:
                gp, f_best = None, 0.0
            cgp = None
            if constraint is not None:
                cgp = GP((lo, hi), 1e-8, seed=seed + it).fit(
                    [r.design for r in trace.rows], [r.material for r in trace.rows])
            if gp is None:
                z = lo + (hi - lo) * rng.random(len(lo))
            else:
                z = constrained_suggest(gp, cgp, (lo, hi), f_best, rng, xi, n_candidates,
                                        threshold)
        mat = float(constraint(z)) if constraint is not None else 1.0
        value = None
        if mat >= threshold:
            value = objective(z, it)
        feasible = value is not None and np.isfinite(value)
        obj = float(value) if feasible else float("nan")
        if feasible:
            best = max(best, obj) if sign > 0 else min(best, obj)
        row = TraceRow(it, np.asarray(z, dtype=float), obj, mat, feasible, best)
        trace.rows.append(row)
        if trace_path:
            append_trace_row(trace_path, row)
        log.info("iteration %d: objective %s, material %.4f, best %.6g", it, obj, mat, best)
    return trace


# --- FEM-backed objective -------------------------------------------------

def ellipse_spec(z, L=100.0):
    z = np.asarray(z, dtype=float)
    return GeometrySpec("ellipses", L=L, a=tuple(float(v) for v in z[:9]),
                        b=tuple(float(v) for v in z[9:]))


def material_fraction_of(z, L=100.0):
    return void_fraction(build_geometry(ellipse_spec(z, L), check=False))


def encoder_nmi(spec, n_samples, seed, l_den, d_x=6, knn_k=5):
    """NMI of the 6-sensor FEM encoder for a geometry, on fresh loads."""
    geom = build_geometry(spec)
    mesh = mesh_domain(geom, l_den=l_den)
    system = assemble_and_factor(mesh)
    load = LoadSpec(d_x, a=spec.L / 2)
    rm = fem_response_matrix(system, load)
    x = sample_coefficients(load, n_samples, seed)
    return nmi(x, rm.readings(x), knn_k)


def calibrate_noise(n_rep=20, n_samples=500, seed=0, l_den=ELLIPSE_L_DEN, L=100.0):
    """Sample variance of the NMI estimate on the solid block over resamples."""
    spec = GeometrySpec("solid", L=L)
    mesh = mesh_domain(build_geometry(spec), l_den=l_den)
    system = assemble_and_factor(mesh)
    load = LoadSpec(6, a=L / 2)
    rm = fem_response_matrix(system, load)
    vals = []
    for r in range(n_rep):
        x = sample_coefficients(load, n_samples, [seed, 7919, r])
        vals.append(nmi(x, rm.readings(x)))
    return float(np.var(vals, ddof=1)), np.array(vals)


@dataclass
class NMIOptimizationResult:
    trace: OptimizationTrace
    best_spec: GeometrySpec
    final_nmi: float
    noise_var: float


def optimize_nmi(direction="maximize", budget=DEFAULT_BUDGET, seed=0, n_samples=500,
                 final_samples=5000, l_den=ELLIPSE_L_DEN, noise_var=None, trace_path=None,
                 resume=False, L=100.0):
    """BO over the 18 ellipse semi-axes for max or min NMI."""
    if noise_var is None:
        noise_var, _ = calibrate_noise(n_samples=n_samples, seed=seed, l_den=l_den, L=L)
    lo, hi = ellipse_bounds(L)

    def objective(z, it):
        try:
            return encoder_nmi(ellipse_spec(z, L), n_samples, [seed, 104729, it], l_den)
        except (ConnectivityError, RefinementError, StructuralSingularityError) as exc:
            log.warning("design %d not evaluable: %s", it, exc)
            return None

    trace = bayes_optimize(objective, (lo, hi), budget, seed, direction,
                           constraint=lambda z: material_fraction_of(z, L),
                           noise_var=noise_var, trace_path=trace_path, resume=resume)
    best = trace.best_row
    if best is None:
        raise ConvergenceError("no feasible design evaluated")
    spec = ellipse_spec(best.design, L)
    final = encoder_nmi(spec, final_samples, [seed, 15485863], l_den)
    return NMIOptimizationResult(trace, spec, final, noise_var)
