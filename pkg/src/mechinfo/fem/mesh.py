"""Structured quadratic triangulation of a carved square domain.

The square is split into ``nx x ny`` cells with a union-jack diagonal
pattern (mirror symmetric about x = 0 when ``nx`` is even). Triangles whose
centroid falls inside a void are removed; corner nodes of the remaining
triangles that lie inside a void are projected onto the void boundary, and
midside nodes of cut edges follow the analytic boundary, which yields
curved isoparametric boundary elements.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ..errors import ConnectivityError, InvalidInputError, RefinementError
from .geometry import Rect

log = logging.getLogger(__name__)

TAG_FREE, TAG_BOTTOM, TAG_TOP = 0, 1, 2
MIN_ELEMENTS_ACROSS = 2
SLIVER_AREA = 0.02  # drop straight triangles smaller than this times h^2
SNAP_DISTANCE = 0.25  # snap vertices this close (in cells) onto void boundaries

# reference P2 triangle: corners (0,0), (1,0), (0,1); midsides on edges
# (0,1), (1,2), (2,0)
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


def p2_shape(xi, eta):
    """Shape functions ``(..., 6)`` and reference gradients ``(..., 6, 2)``."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    l1, l2, l3 = 1.0 - xi - eta, xi, eta
    N = np.stack([l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1),
                  4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1], axis=-1)
    dxi = np.stack([-(4 * l1 - 1), 4 * l2 - 1, 0 * xi,
                    4 * (l1 - l2), 4 * l3, -4 * l3], axis=-1)
    deta = np.stack([-(4 * l1 - 1), 0 * xi, 4 * l3 - 1,
                     -4 * l2, 4 * l2, 4 * (l1 - l3)], axis=-1)
    return N, np.stack([dxi, deta], axis=-1)


def triangle_rule(order=6):
    """Symmetric Gauss rules on the reference triangle (weights sum to 1/2)."""
    if order == 3:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return pts, np.full(3, 1 / 6)
    a, b = 0.445948490915965, 0.091576213509771
    wa, wb = 0.223381589678011, 0.109951743655322
    pts = np.array([[a, a], [1 - 2 * a, a], [a, 1 - 2 * a],
                    [b, b], [1 - 2 * b, b], [b, 1 - 2 * b]])
    return pts, 0.5 * np.array([wa, wa, wa, wb, wb, wb])


CHECK_POINTS = np.vstack([triangle_rule(6)[0], [[0, 0], [1, 0], [0, 1]],
                          [[0.5, 0], [0.5, 0.5], [0, 0.5]]])


def element_jacobians(nodes, elements, points=CHECK_POINTS):
    """Jacobian determinants ``(E, len(points))`` of the isoparametric map."""
    _, dN = p2_shape(points[:, 0], points[:, 1])
    X = nodes[elements]  # (E, 6, 2)
    J = np.einsum("qai,eaj->eqji", dN, X)  # J[.., j, i] = dx_j / dxi_i
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


@dataclass
class MeshedDomain:
    nodes: np.ndarray  # (M, 2)
    elements: np.ndarray  # (E, 6): corners then midsides of edges 01, 12, 20
    tags: np.ndarray  # per node: 0 free, 1 bottom (clamped), 2 top (loaded)
    top_edges: np.ndarray  # (T, 3): left corner, right corner, midside
    bottom_edges: np.ndarray  # same layout along y = 0
    l_den: float
    h: float
    nx: int
    ny: int
    L: float
    geometry: object = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def bottom_nodes(self):
        return np.flatnonzero(self.tags == TAG_BOTTOM)

    @property
    def top_nodes(self):
        return np.flatnonzero(self.tags == TAG_TOP)

    def min_jacobian(self):
        return float(element_jacobians(self.nodes, self.elements).min())

    def digest(self):
        hsh = hashlib.sha256()
        hsh.update(np.ascontiguousarray(self.nodes).tobytes())
        hsh.update(np.ascontiguousarray(self.elements).tobytes())
        return hsh.hexdigest()[:16]

    def locate(self, points):
        """Containing element and reference coordinates for each point.

        Uses barycentric coordinates of the straight corner triangle (exact
        for straight elements). Points outside the mesh get element -1.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tree = self._centroid_tree()
        corners = self.nodes[self.elements[:, :3]]
        k = min(12, self.n_elements)
        _, cand = tree.query(pts, k)
        cand = cand.reshape(len(pts), -1)
        out = np.full(len(pts), -1)
        ref = np.zeros((len(pts), 2))
        best = np.full(len(pts), -np.inf)
        for c in range(cand.shape[1]):
            e = cand[:, c]
            p0, p1, p2 = corners[e, 0], corners[e, 1], corners[e, 2]
            m = np.stack([p1 - p0, p2 - p0], axis=-1)
            rhs = pts - p0
            det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
            xi = (rhs[:, 0] * m[:, 1, 1] - rhs[:, 1] * m[:, 0, 1]) / det
            eta = (m[:, 0, 0] * rhs[:, 1] - m[:, 1, 0] * rhs[:, 0]) / det
            score = np.minimum(np.minimum(xi, eta), 1 - xi - eta)
            better = score > best
            best = np.where(better, score, best)
            out = np.where(better, e, out)
            ref[better] = np.column_stack([xi, eta])[better]
        tol = 1e-9
        out[best < -tol] = -1
        return out, np.clip(ref, 0.0, 1.0)

    def _centroid_tree(self):
        if getattr(self, "_tree", None) is None:
            self._tree = cKDTree(self.nodes[self.elements[:, :3]].mean(axis=1))
        return self._tree


def characteristic_length(geometry):
    spec = geometry.spec
    if spec.kind == "pores":
        return geometry.L / spec.n
    return geometry.L / 20.0


def grid_divisions(geometry, l_den):
    """Cells per side: ceil(L / l_c), rounded up to an even number (and to
    a multiple of 2n for pores so every pore sees the same local grid)."""
    l_c = characteristic_length(geometry) / l_den
    nx = math.ceil(geometry.L / l_c - 1e-9)
    step = 2 * geometry.spec.n if geometry.spec.kind == "pores" else 2
    return step * math.ceil(nx / step)


def _nearest_void(geometry, p):
    levels = np.stack([v.level(p[:, 0], p[:, 1]) for v in geometry.voids])
    return np.argmin(levels, axis=0)


def _graded_lines(breaks, h):
    """Grid lines through every breakpoint with spacing at most ~h.

    The breakpoints are assumed mirror symmetric; a segment straddling the
    centre gets an even count so the grid has a line at the centre.
    """
    breaks = np.asarray(breaks, dtype=float)
    nseg = len(breaks) - 1
    lines = [breaks[:1]]
    for k in range(nseg):
        length = breaks[k + 1] - breaks[k]
        m = max(1, math.ceil(length / h - 1e-9))
        if nseg % 2 == 1 and k == nseg // 2:
            m += m % 2
        lines.append(np.linspace(breaks[k], breaks[k + 1], m + 1)[1:])
    return np.concatenate(lines)


def grid_lines(geometry, nx):
    """x and y grid lines: uniform, or conforming to rectangular voids."""
    x0, x1, y0, y1 = geometry.bounds
    h = geometry.L / nx
    rects = [v for v in geometry.voids if isinstance(v, Rect)]
    if not rects:
        return np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, nx + 1)
    xb = np.unique(np.concatenate([[x0, x1]] + [[r.x0, r.x1] for r in rects]))
    yb = np.unique(np.concatenate([[y0, y1]] + [[r.y0, r.y1] for r in rects]))
    xb = xb[(xb >= x0) & (xb <= x1)]
    yb = yb[(yb >= y0) & (yb <= y1)]
    return _graded_lines(xb, h), _graded_lines(yb, h)


def structured_triangles(xs, ys):
    """Corner coordinates and counter-clockwise triangles of the cell grid.

    The diagonal alternates with cell parity (union-jack), which is mirror
    symmetric about the centre when the number of columns is even.
    """
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10, v01, v11 = v00 + 1, v00 + nx + 1, v00 + nx + 2
    slash = (i + j) % 2 == 0  # diagonal v00-v11
    t1 = np.where(slash[:, None], np.column_stack([v00, v10, v11]),
                  np.column_stack([v00, v10, v01]))
    t2 = np.where(slash[:, None], np.column_stack([v00, v11, v01]),
                  np.column_stack([v10, v11, v01]))
    tris = np.empty((2 * len(i), 3), dtype=np.int64)
    tris[0::2], tris[1::2] = t1, t2
    return pts, tris


def _straight_area(p, tris):
    a, b, c = p[tris[:, 0]], p[tris[:, 1]], p[tris[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _edge_components(tris, n_vertices):
    # elements adjacent through a shared edge belong to one component
    e = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    owner = np.tile(np.arange(len(tris)), 3)
    key = e[:, 0] * n_vertices + e[:, 1]
    order = np.argsort(key, kind="stable")
    key, owner = key[order], owner[order]
    same = key[1:] == key[:-1]
    a, b = owner[:-1][same], owner[1:][same]
    g = coo_matrix((np.ones(len(a)), (a, b)), shape=(len(tris), len(tris)))
    return connected_components(g, directed=False)


def _tagged_edges(nodes, elements, tags, tag):
    """Element edges with both corners carrying ``tag``, sorted left to right."""
    out = []
    for k, (a, b) in enumerate(LOCAL_EDGES):
        sel = (tags[elements[:, a]] == tag) & (tags[elements[:, b]] == tag)
        if np.any(sel):
            out.append(np.column_stack([elements[sel, a], elements[sel, b],
                                        elements[sel, 3 + k]]))
    edges = np.vstack(out) if out else np.zeros((0, 3), dtype=np.int64)
    swap = nodes[edges[:, 0], 0] > nodes[edges[:, 1], 0]
    edges[swap, :2] = edges[swap][:, 1::-1]
    return edges[np.argsort(nodes[edges[:, 0], 0], kind="stable")]


def mesh_domain(geometry, l_den=None, nx=None):
    """Quadratic triangle mesh of ``geometry``.

    Parameters
    ----------
    geometry : Geometry
    l_den : float
        Elements per characteristic length (the unit width for pores,
        L/20 otherwise).
    nx : int, optional
        Cells per side, overriding ``l_den``.
    """
    L = geometry.L
    if nx is None:
        if l_den is None or not l_den > 0:
            raise InvalidInputError("mesh density l_den must be positive")
        nx = grid_divisions(geometry, l_den)
    elif nx < 1:
        raise InvalidInputError("nx must be >= 1")
    ny = nx
    h = L / nx
    if geometry.min_member is not None and geometry.min_member / h < MIN_ELEMENTS_ACROSS:
        raise RefinementError(
            f"cell size {h:.4g} leaves fewer than {MIN_ELEMENTS_ACROSS} elements across "
            f"the thinnest member ({geometry.min_member:.4g})")
    x0, x1, y0, y1 = geometry.bounds
    xs, ys = grid_lines(geometry, nx)
    nx, ny = len(xs) - 1, len(ys) - 1
    pts, tris = structured_triangles(xs, ys)

    if geometry.voids:
        # snap material vertices lying close to a void onto its boundary so
        # that carving leaves no slivers
        lev = geometry.level(pts[:, 0], pts[:, 1])
        near = np.flatnonzero((lev >= 0) & (lev < SNAP_DISTANCE * h))
        if len(near):
            idx = _nearest_void(geometry, pts[near])
            pts = pts.copy()
            for k, v in enumerate(geometry.voids):
                sel = near[idx == k]
                if len(sel):
                    pts[sel, 0], pts[sel, 1] = v.project(pts[sel, 0], pts[sel, 1])
        cen = pts[tris].mean(axis=1)
        tris = tris[geometry.in_material(cen[:, 0], cen[:, 1])]
        used = np.unique(tris)
        inside = used[~geometry.in_material(pts[used, 0], pts[used, 1])]
        if len(inside):
            px, py, _ = geometry.project(pts[inside, 0], pts[inside, 1])
            pts = pts.copy()
            pts[inside, 0], pts[inside, 1] = px, py
        area = _straight_area(pts, tris)
        keep = area > SLIVER_AREA * h * h
        if not np.all(keep):
            log.debug("dropping %d sliver elements", int((~keep).sum()))
        tris = tris[keep]

    tol = 1e-9 * L
    n_comp, comp = _edge_components(tris, len(pts))
    if n_comp > 1:
        on_bottom = np.abs(pts[:, 1] - y0) < tol
        on_top = np.abs(pts[:, 1] - y1) < tol
        clamped = np.zeros(n_comp, dtype=bool)
        loaded = np.zeros(n_comp, dtype=bool)
        np.logical_or.at(clamped, comp, on_bottom[tris].sum(axis=1) >= 2)
        np.logical_or.at(loaded, comp, on_top[tris].sum(axis=1) >= 2)
        if np.any(loaded & ~clamped):
            raise ConnectivityError("a loaded part of the mesh is not attached to the support")
        tris = tris[clamped[comp]]
    if len(tris) == 0:
        raise ConnectivityError("mesh is empty")

    # compact corner numbering, preserving the structured order
    used = np.unique(tris)
    remap = np.full(len(pts), -1)
    remap[used] = np.arange(len(used))
    corners = pts[used]
    tris = remap[tris]
    nv = len(corners)

    # midside nodes, one per unique edge, numbered in sorted edge order
    edges = np.sort(np.stack([tris[:, [a, b]] for a, b in LOCAL_EDGES], axis=1), axis=2)
    flat = edges.reshape(-1, 2)
    uniq, inv = np.unique(flat[:, 0] * nv + flat[:, 1], return_inverse=True)
    ea, eb = uniq // nv, uniq % nv
    mids = 0.5 * (corners[ea] + corners[eb])
    if geometry.voids:
        bad = ~geometry.in_material(mids[:, 0], mids[:, 1])
        if np.any(bad):
            mx, my, _ = geometry.project(mids[bad, 0], mids[bad, 1])
            mids[bad, 0], mids[bad, 1] = mx, my
    nodes = np.vstack([corners, mids])
    elements = np.hstack([tris, nv + inv.reshape(-1, 3)])

    if geometry.voids:
        detj = element_jacobians(nodes, elements).min(axis=1)
        bad = detj <= 0
        if np.any(bad):
            # fall back to straight edges on the offending elements
            m = np.unique(elements[bad, 3:])
            mi = m - nv
            nodes[m] = 0.5 * (corners[ea[mi]] + corners[eb[mi]])
            detj = element_jacobians(nodes, elements).min(axis=1)
            if np.any(detj <= 0):
                raise RefinementError("mesh has inverted elements; refine the density")

    tags = np.full(len(nodes), TAG_FREE)
    tags[np.abs(nodes[:, 1] - y0) < tol] = TAG_BOTTOM
    tags[np.abs(nodes[:, 1] - y1) < tol] = TAG_TOP

    top_edges = _tagged_edges(nodes, elements, tags, TAG_TOP)
    bottom_edges = _tagged_edges(nodes, elements, tags, TAG_BOTTOM)

    return MeshedDomain(nodes=nodes, elements=elements, tags=tags, top_edges=top_edges,
                        bottom_edges=bottom_edges,
                        l_den=float(l_den) if l_den is not None else float("nan"),
                        h=h, nx=nx, ny=ny, L=L, geometry=geometry)
