"""Plane-strain linear elasticity on quadratic triangles.

The stiffness matrix is assembled once, reduced by the clamped bottom
degrees of freedom and factorized; every load case afterwards is a pair of
triangular solves. Sensor readings are the e2 components of the force the
body transmits to the support at the clamped nodes, so compressive loads
give negative readings and the readings sum to minus the applied resultant.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix
from scipy.sparse.linalg import splu

from ..errors import InvalidInputError, StructuralSingularityError
from ..halfspace import ResponseMatrix
from ..loads import legendre_table
from .mesh import TAG_BOTTOM, element_jacobians, p2_shape, triangle_rule

log = logging.getLogger(__name__)

E_DEFAULT = 100.0
NU_DEFAULT = 0.0
N_SENSORS = 6
PIVOT_TOL = 1e-12
EDGE_GAUSS = 8
FORMAT_VERSION = 1
LOCAL_NODES = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]], dtype=float)


def material_matrix(E, nu):
    """Plane-strain D with engineering shear strain."""
    if not E > 0:
        raise InvalidInputError("Young's modulus must be positive")
    if not -1.0 < nu < 0.5:
        raise InvalidInputError("Poisson ratio must lie in (-1, 0.5)")
    c = E / ((1 + nu) * (1 - 2 * nu))
    return c * np.array([[1 - nu, nu, 0.0], [nu, 1 - nu, 0.0], [0.0, 0.0, 0.5 * (1 - 2 * nu)]])


def physical_gradients(nodes, elements, ref_points):
    """Shape values ``(P, 6)``, gradients ``(E, P, 6, 2)`` and det J ``(E, P)``."""
    N, dN = p2_shape(ref_points[:, 0], ref_points[:, 1])
    X = nodes[elements]
    J = np.einsum("pai,eaj->epij", dN, X)  # J[e, p, i, j] = dx_j / dxi_i
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    # dN/dx_j = sum_i (J^-1)[j, i] dN/dxi_i
    grad = np.einsum("epji,pai->epaj", inv, dN)
    return N, grad, det


def strain_operator(grad):
    """B matrices ``(..., 3, 12)`` from shape gradients ``(..., 6, 2)``."""
    shape = grad.shape[:-2]
    B = np.zeros(shape + (3, 12))
    B[..., 0, 0::2] = grad[..., 0]
    B[..., 1, 1::2] = grad[..., 1]
    B[..., 2, 0::2] = grad[..., 1]
    B[..., 2, 1::2] = grad[..., 0]
    return B


def element_dofs(elements):
    return np.stack([2 * elements, 2 * elements + 1], axis=-1).reshape(len(elements), 12)


def assemble_stiffness(mesh, E=E_DEFAULT, nu=NU_DEFAULT, order=6, block=8192):
    """Global stiffness in CSC form (dof 2i is u_x of node i, 2i+1 is u_y)."""
    D = material_matrix(E, nu)
    pts, w = triangle_rule(order)
    ndof = 2 * mesh.n_nodes
    rows, cols, vals = [], [], []
    for start in range(0, mesh.n_elements, block):
        el = mesh.elements[start:start + block]
        _, grad, det = physical_gradients(mesh.nodes, el, pts)
        if np.any(det <= 0):
            raise InvalidInputError("mesh has non-positive element Jacobians")
        B = strain_operator(grad)
        Ke = np.einsum("ep,epki,kl,eplj->eij", det * w, B, D, B, optimize=True)
        dofs = element_dofs(el).astype(np.int32)
        rows.append(np.repeat(dofs, 12, axis=1).ravel())
        cols.append(np.tile(dofs, (1, 12)).ravel())
        vals.append(Ke.ravel())
    K = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(ndof, ndof))
    return csc_matrix(K)


def _factor_spd(K):
    """Sparse LU in symmetric mode with diagonal pivoting, checked for SPD."""
    try:
        lu = splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise StructuralSingularityError(f"stiffness matrix is singular: {exc}") from None
    piv = lu.U.diagonal()
    top = np.abs(piv).max() if len(piv) else 0.0
    if len(piv) == 0 or np.any(piv <= PIVOT_TOL * top):
        raise StructuralSingularityError(
            "reduced stiffness is not positive definite (unconstrained rigid-body mode)")
    return lu


@dataclass
class FactorizedSystem:
    mesh: object
    E: float
    nu: float
    K: csc_matrix = field(repr=False)
    fixed: np.ndarray = field(repr=False)
    free: np.ndarray = field(repr=False)
    lu: object = field(repr=False)
    n_solves: int = 0

    def solve(self, f):
        """Displacements ``(2M,)`` or ``(2M, r)`` for load vectors with zero
        prescribed displacement on the fixed dofs."""
        f = np.asarray(f, dtype=float)
        u = np.zeros_like(f)
        u[self.free] = self.lu.solve(np.ascontiguousarray(f[self.free]))
        self.n_solves += 1 if f.ndim == 1 else f.shape[1]
        return u

    def traction_recovery(self):
        if getattr(self, "_recovery", None) is None:
            self._recovery = bottom_traction_recovery(self.mesh)
        return self._recovery

    def support_forces(self, u, f):
        """Force transmitted to the support at every dof (zero on free dofs)."""
        r = np.asarray(f, dtype=float) - self.K @ u
        out = np.zeros_like(r)
        out[self.fixed] = r[self.fixed]
        return out


def assemble_and_factor(mesh, E=E_DEFAULT, nu=NU_DEFAULT, fixed_nodes=None):
    """Assemble, clamp ``fixed_nodes`` (default: the bottom edge) in both
    directions and factorize the reduced stiffness once."""
    K = assemble_stiffness(mesh, E, nu)
    if fixed_nodes is None:
        fixed_nodes = mesh.bottom_nodes
    fixed_nodes = np.asarray(fixed_nodes, dtype=int)
    fixed = np.sort(np.concatenate([2 * fixed_nodes, 2 * fixed_nodes + 1]))
    mask = np.ones(K.shape[0], dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    Kff = K[free][:, free].tocsc()
    lu = _factor_spd(Kff)
    return FactorizedSystem(mesh=mesh, E=float(E), nu=float(nu), K=K, fixed=fixed,
                            free=free, lu=lu)


def _edge_quadrature(nodes, edges, n_gauss=EDGE_GAUSS):
    """Positions ``(T, G)`` and weighted shape values ``(T, G, 3)`` on
    horizontal quadratic edges."""
    g, w = np.polynomial.legendre.leggauss(n_gauss)
    Nl, Nr, Nm = 0.5 * g * (g - 1), 0.5 * g * (g + 1), 1 - g * g
    shape = np.stack([Nl, Nr, Nm], axis=-1)  # (G, 3)
    dshape = np.stack([g - 0.5, g + 0.5, -2 * g], axis=-1)
    xe = nodes[edges, 0]  # (T, 3)
    x = xe @ shape.T
    jac = np.abs(xe @ dshape.T)
    return x, shape[None, :, :] * (jac * w)[:, :, None]


def bottom_traction_recovery(mesh):
    """Factorized 1-D mass matrix of the bottom edge and its node list.

    Solving ``M s = reactions`` gives the nodal values of the boundary
    stress s22 that is work-consistent with the nodal reactions.
    """
    _, wshape = _edge_quadrature(mesh.nodes, mesh.bottom_edges, 4)
    g, _ = np.polynomial.legendre.leggauss(4)
    shape = np.stack([0.5 * g * (g - 1), 0.5 * g * (g + 1), 1 - g * g], axis=-1)
    me = np.einsum("tga,gb->tab", wshape, shape)
    nodes = np.unique(mesh.bottom_edges)
    local = np.searchsorted(nodes, mesh.bottom_edges)
    rows = np.repeat(local, 3, axis=1).ravel()
    cols = np.tile(local, (1, 3)).ravel()
    M = csc_matrix(coo_matrix((me.ravel(), (rows, cols)), shape=(len(nodes), len(nodes))))
    return splu(M), nodes


def traction_load_vector(mesh, traction):
    """Work-equivalent nodal forces of a downward traction ``traction(x)`` on
    the top edge. Returns ``(2M,)`` or ``(2M, r)`` when the callable returns
    ``(..., r)`` values."""
    x, wshape = _edge_quadrature(mesh.nodes, mesh.top_edges)
    t = np.asarray(traction(x), dtype=float)
    extra = t.shape[2:]
    contrib = -np.einsum("tg...,tga->ta...", t, wshape)
    f = np.zeros((2 * mesh.n_nodes,) + extra)
    np.add.at(f, 2 * mesh.top_edges + 1, contrib)
    return f


def _check_load_span(mesh, spec):
    if abs(spec.a - mesh.L / 2) > 1e-12 * mesh.L:
        raise InvalidInputError(f"load half-width a={spec.a} must equal L/2={mesh.L / 2}")


def mode_load_vectors(mesh, spec):
    """Load vectors ``(2M, d_x + 1)``: unit constant traction, then each free mode."""
    _check_load_span(mesh, spec)
    degrees = [0] + list(spec.degrees)

    def modes(x):
        z = np.clip(x / spec.a, -1.0, 1.0)
        tab = legendre_table(spec.max_degree, z.ravel())[degrees]
        return tab.T.reshape(x.shape + (len(degrees),))

    return traction_load_vector(mesh, modes)


def sensor_targets(L, k=N_SENSORS):
    """Evenly spaced sensor abscissae x = -L/2 + (i - 1/2) L / k."""
    return -L / 2 + (np.arange(1, k + 1) - 0.5) * L / k


def sensor_nodes(mesh, k=N_SENSORS):
    """Bottom nodes nearest to the :func:`sensor_targets`.

    Ties go to the node closer to the centreline so the layout stays
    mirror symmetric.
    """
    bottom = mesh.bottom_nodes
    xb = mesh.nodes[bottom, 0]
    out = []
    for t in sensor_targets(mesh.L, k):
        d = np.round(np.abs(xb - t), 9)
        order = np.lexsort((np.abs(xb), d))
        out.append(int(bottom[order[0]]))
    return np.array(out)


def bottom_stress_interpolant(mesh, xq):
    """Sparse-free interpolation weights ``(len(xq), 3)`` and node ids on the
    bottom edge for abscissae ``xq``."""
    edges = mesh.bottom_edges
    xl = mesh.nodes[edges[:, 0], 0]
    xr = mesh.nodes[edges[:, 1], 0]
    xq = np.atleast_1d(np.asarray(xq, dtype=float))
    k = np.clip(np.searchsorted(xl, xq, side="right") - 1, 0, len(edges) - 1)
    if np.any((xq < xl[k] - 1e-12 * mesh.L) | (xq > xr[k] + 1e-12 * mesh.L)):
        raise InvalidInputError("sensor abscissa not on the clamped edge")
    g = 2 * (xq - xl[k]) / (xr[k] - xl[k]) - 1
    w = np.column_stack([0.5 * g * (g - 1), 0.5 * g * (g + 1), 1 - g * g])
    return w, edges[k]


def element_stress(system, u, ref_points=LOCAL_NODES):
    """Stress ``(E, P, 3)`` as (s11, s22, s12) at reference points per element."""
    mesh = system.mesh
    D = material_matrix(system.E, system.nu)
    _, grad, _ = physical_gradients(mesh.nodes, mesh.elements, np.asarray(ref_points, float))
    ue = u[element_dofs(mesh.elements)]  # (E, 12)
    B = strain_operator(grad)
    eps = np.einsum("epkj,ej->epk", B, ue)
    return eps @ D.T


def nodal_stress(system, u):
    """Element-nodal stresses averaged over the elements sharing each node."""
    mesh = system.mesh
    s = element_stress(system, u)
    acc = np.zeros((mesh.n_nodes, 3))
    cnt = np.zeros(mesh.n_nodes)
    np.add.at(acc, mesh.elements.ravel(), s.reshape(-1, 3))
    np.add.at(cnt, mesh.elements.ravel(), 1.0)
    return acc / cnt[:, None]


def stress_at_points(system, u, points):
    """Stress at arbitrary points, evaluated in the containing element."""
    mesh = system.mesh
    el, ref = mesh.locate(points)
    if np.any(el < 0):
        raise InvalidInputError("point outside the meshed domain")
    out = np.empty((len(el), 3))
    D = material_matrix(system.E, system.nu)
    for i, (e, r) in enumerate(zip(el, ref)):
        _, grad, _ = physical_gradients(mesh.nodes, mesh.elements[e:e + 1], r[None, :])
        ue = u[element_dofs(mesh.elements[e:e + 1])][0]
        out[i] = D @ (strain_operator(grad)[0, 0] @ ue)
    return out


@dataclass
class FemSensorReading:
    values: np.ndarray
    positions: np.ndarray
    nodes: np.ndarray
    bottom_total: float
    applied_total: float
    mode: str = "reaction"


def _readings(system, u, f, sensors, mode):
    r = system.support_forces(u, f)
    total = r[2 * system.mesh.bottom_nodes + 1].sum(axis=0)
    if mode == "reaction":
        return r[2 * sensors + 1], total
    if mode == "stress":
        # boundary s22 at the exact sensor abscissae
        lu, bnodes = system.traction_recovery()
        s22 = np.zeros(r[1::2].shape)
        s22[bnodes] = lu.solve(np.ascontiguousarray(r[2 * bnodes + 1]))
        w, nodes = bottom_stress_interpolant(system.mesh, sensor_targets(system.mesh.L,
                                                                         len(sensors)))
        return np.einsum("ka,ka...->k...", w, s22[nodes]), total
    raise InvalidInputError(f"unknown reading mode {mode!r}")


def solve_load(system, sample, sensors=None, mode="reaction"):
    """Sensor readings for one traction sample applied on the top edge.

    ``mode="reaction"`` returns nodal support forces at the sensor nodes;
    ``mode="stress"`` returns the work-consistent boundary s22 at the exact
    sensor abscissae.
    """
    mesh = system.mesh
    spec = sample.spec
    _check_load_span(mesh, spec)
    if sensors is None:
        sensors = sensor_nodes(mesh)
    coeffs = np.concatenate([[spec.pinned_constant], sample.coeffs])
    f = mode_load_vectors(mesh, spec) @ coeffs
    u = system.solve(f)
    vals, total = _readings(system, u, f, sensors, mode)
    applied = float(-f[1::2].sum())
    pos = mesh.nodes[sensors, 0].copy() if mode == "reaction" else sensor_targets(
        mesh.L, len(sensors))
    return FemSensorReading(values=np.asarray(vals), positions=pos,
                            nodes=np.asarray(sensors), bottom_total=float(total),
                            applied_total=applied, mode=mode)


def fem_response_matrix(system, spec, sensors=None, mode="reaction"):
    """Readings per unit coefficient, one solve per basis mode (d_x + 1)."""
    mesh = system.mesh
    if sensors is None:
        sensors = sensor_nodes(mesh)
    f = mode_load_vectors(mesh, spec)
    u = system.solve(f)
    vals, _ = _readings(system, u, f, np.asarray(sensors), mode)
    return ResponseMatrix(B=np.ascontiguousarray(vals[:, 1:]), constant=vals[:, 0].copy(),
                          pinned=spec.pinned_constant, a=spec.a, F=spec.F,
                          degrees=tuple(spec.degrees))


def boundary_nodes(mesh):
    """Nodes on the outer or void boundary (edges owned by one element)."""
    from .mesh import LOCAL_EDGES
    el = mesh.elements
    ed = np.concatenate([np.column_stack([el[:, a], el[:, b], el[:, 3 + k]])
                         for k, (a, b) in enumerate(LOCAL_EDGES)])
    key = np.sort(ed[:, :2], axis=1)
    _, inv, counts = np.unique(key[:, 0] * mesh.n_nodes + key[:, 1], return_inverse=True,
                               return_counts=True)
    single = counts[inv] == 1
    return np.unique(ed[single].ravel())


def solve_prescribed(K, prescribed_dofs, values, f=None):
    """Solve K u = f with ``u[prescribed_dofs] = values``.

    Returns the displacement and the max-norm residual of the free equations.
    """
    n = K.shape[0]
    f = np.zeros(n) if f is None else np.asarray(f, dtype=float)
    u = np.zeros(n)
    u[prescribed_dofs] = values
    mask = np.ones(n, dtype=bool)
    mask[prescribed_dofs] = False
    free = np.flatnonzero(mask)
    rhs = f[free] - K[free] @ u
    lu = _factor_spd(K[free][:, free].tocsc())
    u[free] = lu.solve(rhs)
    res = (f - K @ u)[free]
    return u, float(np.abs(res).max()) if len(res) else 0.0


def patch_test(mesh, grad, shift=(0.0, 0.0), E=E_DEFAULT, nu=NU_DEFAULT):
    """Impose u = shift + grad @ x on the boundary and solve the interior.

    Returns ``(max nodal error vs the linear field, residual)``.
    """
    grad = np.asarray(grad, dtype=float)
    exact = np.asarray(shift, dtype=float) + mesh.nodes @ grad.T
    K = assemble_stiffness(mesh, E, nu)
    bn = boundary_nodes(mesh)
    dofs = np.concatenate([2 * bn, 2 * bn + 1])
    vals = np.concatenate([exact[bn, 0], exact[bn, 1]])
    u, res = solve_prescribed(K, dofs, vals)
    err = np.abs(u.reshape(-1, 2) - exact).max()
    return float(err), res


def write_mesh_csv(mesh, path):
    """Node table then element table, with a versioned header line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# mechinfo-mesh v{FORMAT_VERSION} nodes={mesh.n_nodes} "
                 f"elements={mesh.n_elements} L={mesh.L!r} nx={mesh.nx}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "x", "y", "tag"])
        for i, (p, t) in enumerate(zip(mesh.nodes, mesh.tags)):
            w.writerow([i, format(p[0], ".17g"), format(p[1], ".17g"), int(t)])
        w.writerow(["element", "n0", "n1", "n2", "n3", "n4", "n5"])
        for i, e in enumerate(mesh.elements):
            w.writerow([i] + [int(v) for v in e])


def write_solution_csv(mesh, u, path):
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        fh.write(f"# mechinfo-solution v{FORMAT_VERSION} nodes={mesh.n_nodes}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "ux", "uy"])
        for i, (a, b) in enumerate(u):
            w.writerow([i, format(a, ".17g"), format(b, ".17g")])


__all__ = [
    "FactorizedSystem", "FemSensorReading", "assemble_and_factor", "assemble_stiffness",
    "boundary_nodes", "element_jacobians", "element_stress", "fem_response_matrix",
    "material_matrix", "mode_load_vectors", "nodal_stress", "patch_test", "sensor_nodes",
    "sensor_targets", "solve_load", "solve_prescribed", "stress_at_points", "traction_load_vector",
    "write_mesh_csv", "write_solution_csv",
]
