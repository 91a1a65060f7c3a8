"""Principal stress lines of the expected (uniform-load) stress field.

The per-element stress from the FEM solution is decomposed into principal
values and directions; the direction of the principal stress with the larger
magnitude is kept, sign-normalized to point downward, projected onto the
continuous quadratic basis by an L2 (mass-matrix) projection and traced from
evenly spaced seeds on the loaded edge with fixed-step RK4.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix

from .errors import InvalidInputError
from .fem.mesh import p2_shape, triangle_rule
from .fem.solver import (_factor_spd, element_stress, mode_load_vectors,
                         physical_gradients)
from .loads import LoadSpec

log = logging.getLogger(__name__)

STAGNATION = 1e-8
STEP_FRACTION = 1 / 200  # RK4 step as a fraction of L
MAX_STEP_FACTOR = 10  # max_steps = 10 * L / step
N_SEEDS = 20


@dataclass
class Principal:
    s1: np.ndarray
    s2: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    degenerate: np.ndarray


def principal_decompose(s11, s22, s12):
    """Principal values (s1 >= s2) and directions.

    ``theta_p = 0.5 * arctan(2 s12 / (s11 - s22))`` is assigned to the major
    direction when s11 > s22 and to the minor one when s11 < s22. For
    s11 == s22 the directions are at +-45 degrees, and a hydrostatic point
    (s12 == 0 as well) is flagged degenerate with theta1 = 0.
    """
    s11, s22, s12 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (s11, s22, s12)))
    if not (np.all(np.isfinite(s11)) and np.all(np.isfinite(s22)) and np.all(np.isfinite(s12))):
        raise InvalidInputError("stress components must be finite")
    mean = 0.5 * (s11 + s22)
    rad = np.hypot(0.5 * (s11 - s22), s12)
    s1, s2 = mean + rad, mean - rad
    diff = s11 - s22
    with np.errstate(divide="ignore", invalid="ignore"):
        theta_p = 0.5 * np.arctan(2 * s12 / diff)
    equal = diff == 0
    theta_p = np.where(equal, np.where(s12 >= 0, 0.25 * np.pi, -0.25 * np.pi), theta_p)
    degenerate = equal & (s12 == 0)
    theta_p = np.where(degenerate, 0.0, theta_p)
    major_is_p = (diff > 0) | equal
    theta1 = np.where(major_is_p, theta_p, theta_p + 0.5 * np.pi)
    theta2 = np.where(major_is_p, theta_p + 0.5 * np.pi, theta_p)
    return Principal(s1, s2, theta1, theta2, degenerate)


def downward(vx, vy):
    """Flip vectors so that v . e2 <= 0 (horizontal ones point to +x)."""
    flip = (vy > 0) | ((vy == 0) & (vx < 0))
    return np.where(flip, -vx, vx), np.where(flip, -vy, vy)


def select_max_field(p):
    """Unit vectors along the principal direction with the larger |stress|.

    Ties go to the minor (compressive) branch. Returns ``(vx, vy, tie)``.
    """
    a1, a2 = np.abs(p.s1), np.abs(p.s2)
    tie = a1 == a2
    theta = np.where(a1 > a2, p.theta1, p.theta2)
    vx, vy = downward(np.cos(theta), np.sin(theta))
    return vx, vy, tie


def mass_matrix(mesh):
    """Consistent P2 mass matrix (exact on straight elements)."""
    pts, w = triangle_rule(6)
    N, _, det = physical_gradients(mesh.nodes, mesh.elements, pts)
    me = np.einsum("ep,pa,pb->eab", det * w, N, N)
    el = mesh.elements
    rows = np.repeat(el, 6, axis=1).ravel()
    cols = np.tile(el, (1, 6)).ravel()
    return csc_matrix(coo_matrix((me.ravel(), (rows, cols)),
                                 shape=(mesh.n_nodes, mesh.n_nodes)))


def smooth_project(raw, mesh, mass_lu=None):
    """L2 projection of a per-element linear field onto the nodal P2 basis.

    ``raw`` has shape ``(E, 3)`` or ``(E, 3, c)``: values at the three
    corners of each element, interpolated linearly inside it.
    """
    raw = np.asarray(raw, dtype=float)
    squeeze = raw.ndim == 2
    if squeeze:
        raw = raw[..., None]
    if raw.shape[:2] != (mesh.n_elements, 3):
        raise InvalidInputError("raw field must have shape (n_elements, 3[, c])")
    pts, w = triangle_rule(6)
    N, _, det = physical_gradients(mesh.nodes, mesh.elements, pts)
    bary = np.column_stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    fq = np.einsum("pk,ekc->epc", bary, raw)
    be = np.einsum("ep,pa,epc->eac", det * w, N, fq)
    b = np.zeros((mesh.n_nodes, raw.shape[2]))
    np.add.at(b, mesh.elements.ravel(), be.reshape(-1, raw.shape[2]))
    if mass_lu is None:
        mass_lu = _factor_spd(mass_matrix(mesh))
    out = mass_lu.solve(b)
    return out[:, 0] if squeeze else out


@dataclass
class PrincipalField:
    mesh: object = field(repr=False)
    s1: np.ndarray
    s2: np.ndarray
    vectors: np.ndarray  # (M, 2) unit nodal directors
    magnitude: np.ndarray  # nodal |v| before normalization

    def evaluate(self, points):
        """Interpolated directors ``(n, 2)``, their norms and element ids."""
        el, ref = self.mesh.locate(points)
        out = np.zeros((len(el), 2))
        ok = el >= 0
        if np.any(ok):
            N, _ = p2_shape(ref[ok, 0], ref[ok, 1])
            out[ok] = np.einsum("na,nac->nc", N, self.vectors[self.mesh.elements[el[ok]]])
        return out, np.hypot(out[:, 0], out[:, 1]), el


def uniform_stress(system, level=None):
    """Per-element stresses under the uniform load F / (2a) on the top edge."""
    mesh = system.mesh
    spec = LoadSpec(1, a=mesh.L / 2)
    level = spec.pinned_constant if level is None else level
    f = mode_load_vectors(mesh, spec)[:, 0] * level
    u = system.solve(f)
    return element_stress(system, u)


def principal_field(system, stress=None):
    """Smoothed max-|stress| director field for ``stress`` (default: the
    uniform-compression field)."""
    mesh = system.mesh
    if stress is None:
        stress = uniform_stress(system)
    corners = stress[:, :3, :]
    p = principal_decompose(corners[..., 0], corners[..., 1], corners[..., 2])
    vx, vy, tie = select_max_field(p)
    if np.any(tie):
        log.debug("%d principal ties resolved to the minor branch", int(tie.sum()))
    lu = _factor_spd(mass_matrix(mesh))
    vec = smooth_project(np.stack([vx, vy], axis=-1), mesh, lu)
    sig = smooth_project(corners, mesh, lu)
    pn = principal_decompose(sig[:, 0], sig[:, 1], sig[:, 2])
    mag = np.hypot(vec[:, 0], vec[:, 1])
    unit = np.where(mag[:, None] > 0, vec / np.where(mag > 0, mag, 1.0)[:, None], 0.0)
    return PrincipalField(mesh=mesh, s1=pn.s1, s2=pn.s2, vectors=unit, magnitude=mag)


@dataclass
class StressLine:
    points: np.ndarray
    seed: tuple
    reason: str  # boundary | void | max-steps | stagnation


def seed_points(L, n=N_SEEDS):
    x = -L / 2 + (np.arange(n) + 0.5) * L / n
    return np.column_stack([x, np.full(n, L)])


def trace_lines(pfield, seeds=None, step=None, max_steps=None):
    """RK4 streamlines of the director field from ``seeds``.

    At every stage the interpolated director is flipped to agree with the
    current heading (initially straight down), so the result does not depend
    on the global sign of the field. All seeds advance together.
    """
    mesh = pfield.mesh
    L = mesh.L
    geom = mesh.geometry
    step = L * STEP_FRACTION if step is None else float(step)
    max_steps = int(round(MAX_STEP_FACTOR * L / step)) if max_steps is None else int(max_steps)
    seeds = seed_points(L) if seeds is None else np.atleast_2d(np.asarray(seeds, dtype=float))

    def in_void(p):
        if geom is None or not geom.voids:
            return np.zeros(len(p), dtype=bool)
        return geom.level(p[:, 0], p[:, 1]) < 0

    el, _ = mesh.locate(seeds)
    ok = (el >= 0) & ~in_void(seeds)
    for s in seeds[~ok]:
        log.warning("seed (%g, %g) outside the material; skipped", s[0], s[1])
    seeds = seeds[ok]
    n = len(seeds)
    paths = [[s.copy()] for s in seeds]
    reasons = ["max-steps"] * n
    p = seeds.copy()
    heading = np.tile([0.0, -1.0], (n, 1))
    active = np.arange(n)

    def stop(idx, where):
        gone = in_void(where)
        for i, g in zip(idx, gone):
            reasons[i] = "void" if g else "boundary"

    for _ in range(max_steps):
        if len(active) == 0:
            break
        alive = np.ones(len(active), dtype=bool)
        ks = []
        ref = heading[active]
        for c in (0.0, 0.5, 0.5, 1.0):
            q = p[active] + c * step * (ks[-1] if ks else 0.0)
            v, norm, e = pfield.evaluate(q)
            out = e < 0
            stag = ~out & (norm < STAGNATION)
            for i in np.flatnonzero(alive & out):
                stop([active[i]], q[i:i + 1])
            for i in np.flatnonzero(alive & stag):
                reasons[active[i]] = "stagnation"
            alive &= ~(out | stag)
            d = v / np.where(norm > 0, norm, 1.0)[:, None]
            d = np.where((np.einsum("ij,ij->i", d, ref) < 0)[:, None], -d, d)
            ks.append(d)
            ref = d
        move = (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3]) / 6.0
        q = p[active] + step * move
        e, _ = mesh.locate(q)
        bad = alive & ((e < 0) | in_void(q))
        for i in np.flatnonzero(bad):
            stop([active[i]], q[i:i + 1])
        alive &= ~bad
        idx = active[alive]
        p[idx] = q[alive]
        mv = move[alive]
        heading[idx] = mv / np.maximum(np.hypot(mv[:, 0], mv[:, 1]), 1e-300)[:, None]
        for i in idx:
            paths[i].append(p[i].copy())
        active = idx
    return [StressLine(points=np.array(pt), seed=(float(s[0]), float(s[1])), reason=r)
            for pt, s, r in zip(paths, seeds, reasons)]


def min_sensor_distance(lines, sensor_xy):
    """Smallest distance from any traced point to any sensor location."""
    sensor_xy = np.atleast_2d(sensor_xy)
    best = np.inf
    for ln in lines:
        d = np.hypot(ln.points[:, None, 0] - sensor_xy[None, :, 0],
                     ln.points[:, None, 1] - sensor_xy[None, :, 1])
        best = min(best, float(d.min()))
    return best


def write_lines_csv(lines, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["line", "x", "y", "reason"])
        for i, ln in enumerate(lines):
            for x, y in ln.points:
                w.writerow([i, format(x, ".17g"), format(y, ".17g"), ln.reason])
