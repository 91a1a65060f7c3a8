"""Architected square domains: a solid L x L block minus analytic voids.

Coordinates: x in [-L/2, L/2], y in [0, L]. The bottom edge (y = 0) is
clamped and carries the sensors; the top edge (y = L) is loaded.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import ConnectivityError, InvalidInputError

N_ELLIPSES = 9


class Circle:
    def __init__(self, cx, cy, r):
        self.cx, self.cy, self.r = float(cx), float(cy), float(r)

    def level(self, x, y):
        """Negative inside, zero on the boundary (true signed distance)."""
        return np.hypot(x - self.cx, y - self.cy) - self.r

    def project(self, x, y):
        dx, dy = x - self.cx, y - self.cy
        rr = np.hypot(dx, dy)
        rr = np.where(rr == 0, 1.0, rr)
        return self.cx + self.r * dx / rr, self.cy + self.r * dy / rr

    def x_intervals(self, y):
        d = self.r ** 2 - (y - self.cy) ** 2
        half = np.sqrt(np.maximum(d, 0.0))
        return self.cx - half, self.cx + half, d > 0

    def area(self):
        return math.pi * self.r ** 2

    def outline(self, n=96):
        t = np.linspace(0, 2 * np.pi, n + 1)
        return np.column_stack([self.cx + self.r * np.cos(t), self.cy + self.r * np.sin(t)])


class Ellipse:
    """Axis-aligned ellipse with horizontal semi-axis ``a`` and vertical ``b``."""

    def __init__(self, cx, cy, a, b):
        self.cx, self.cy, self.a, self.b = float(cx), float(cy), float(a), float(b)

    def level(self, x, y):
        # radial level set scaled by the smaller semi-axis; sign is exact,
        # magnitude approximates distance near the boundary
        q = np.hypot((x - self.cx) / self.a, (y - self.cy) / self.b)
        return (q - 1.0) * min(self.a, self.b)

    def project(self, x, y):
        # radial projection toward the centre; adequate for snapping nodes
        # that lie within one mesh cell of the boundary
        dx, dy = x - self.cx, y - self.cy
        q = np.hypot(dx / self.a, dy / self.b)
        q = np.where(q == 0, 1.0, q)
        return self.cx + dx / q, self.cy + dy / q

    def x_intervals(self, y):
        d = 1.0 - ((y - self.cy) / self.b) ** 2
        half = self.a * np.sqrt(np.maximum(d, 0.0))
        return self.cx - half, self.cx + half, d > 0

    def area(self):
        return math.pi * self.a * self.b

    def outline(self, n=96):
        t = np.linspace(0, 2 * np.pi, n + 1)
        return np.column_stack([self.cx + self.a * np.cos(t), self.cy + self.b * np.sin(t)])


class Rect:
    def __init__(self, x0, x1, y0, y1):
        self.x0, self.x1, self.y0, self.y1 = map(float, (x0, x1, y0, y1))

    def level(self, x, y):
        dx = np.maximum(self.x0 - x, x - self.x1)
        dy = np.maximum(self.y0 - y, y - self.y1)
        outside = np.hypot(np.maximum(dx, 0), np.maximum(dy, 0))
        inside = np.minimum(np.maximum(dx, dy), 0)
        return outside + inside

    def project(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        gaps = np.stack([x - self.x0, self.x1 - x, y - self.y0, self.y1 - y])
        side = np.argmin(gaps, axis=0)
        px = np.where(side == 0, self.x0, np.where(side == 1, self.x1, x))
        py = np.where(side == 2, self.y0, np.where(side == 3, self.y1, y))
        return px, py

    def x_intervals(self, y):
        inside = (y > self.y0) & (y < self.y1)
        return np.full_like(y, self.x0), np.full_like(y, self.x1), inside

    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def outline(self, n=None):
        return np.array([[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1],
                         [self.x0, self.y1], [self.x0, self.y0]])


@dataclass(frozen=True)
class GeometrySpec:
    kind: str = "solid"  # solid | pores | slits | ellipses
    L: float = 100.0
    n: int = 1
    phi: float = 0.3
    a: tuple = field(default_factory=tuple)
    b: tuple = field(default_factory=tuple)

    def to_json(self):
        d = asdict(self)
        d["a"] = list(self.a)
        d["b"] = list(self.b)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["a"] = tuple(d.get("a", ()))
        d["b"] = tuple(d.get("b", ()))
        return cls(**d)

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def pore_radius(L, n, phi):
    """Radius giving porosity ``phi`` in each of the n x n square units."""
    L0 = L / n
    return L0 * math.sqrt(phi) / math.sqrt(math.pi)


def ellipse_bounds(L):
    """Box bounds ``(low, high)`` for the 18 design variables (a1..a9, b1..b9)."""
    lo = np.full(2 * N_ELLIPSES, L / 100)
    hi = np.empty(2 * N_ELLIPSES)
    hi[:N_ELLIPSES] = L / 9
    hi[0] = hi[N_ELLIPSES - 1] = L / 45
    hi[N_ELLIPSES:] = 7 * L / 15
    return lo, hi


def ellipse_centers(L):
    i = np.arange(1, N_ELLIPSES + 1)
    return -L / 2 + (2 * i - 1) * L / 18, np.full(N_ELLIPSES, L / 2)


class Geometry:
    """Square block minus a union of voids."""

    def __init__(self, spec, voids, min_member=None):
        self.spec = spec
        self.L = spec.L
        self.voids = list(voids)
        self.min_member = min_member

    @property
    def bounds(self):
        return (-self.L / 2, self.L / 2, 0.0, self.L)

    def level(self, x, y):
        """Signed material indicator: >= 0 in material, < 0 inside a void."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.full(np.broadcast(x, y).shape, np.inf)
        for v in self.voids:
            out = np.minimum(out, v.level(x, y))
        return out

    def in_material(self, x, y):
        return self.level(x, y) >= 0

    def void_index(self, x, y):
        """Index of the void with the most negative level, -1 in material."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if not self.voids:
            return np.full(np.broadcast(x, y).shape, -1)
        levels = np.stack([v.level(x, y) for v in self.voids])
        idx = np.argmin(levels, axis=0)
        return np.where(levels.min(axis=0) < 0, idx, -1)

    def project(self, x, y, max_iter=4):
        """Move points inside voids onto the nearest void boundary.

        Points landing inside another (overlapping) void are projected
        again. Returns the new coordinates and a mask of points that are
        on material after projection.
        """
        x = np.array(x, dtype=float, copy=True)
        y = np.array(y, dtype=float, copy=True)
        for _ in range(max_iter):
            idx = self.void_index(x, y)
            if np.all(idx < 0):
                break
            for k, v in enumerate(self.voids):
                sel = idx == k
                if np.any(sel):
                    x[sel], y[sel] = v.project(x[sel], y[sel])
        ok = self.level(x, y) >= -1e-9 * self.L
        return x, y, ok

    def material_fraction(self, n_rows=20000):
        """Material area over L^2 by exact row intervals and midpoint rows."""
        ys = (np.arange(n_rows) + 0.5) * self.L / n_rows
        x0, x1 = -self.L / 2, self.L / 2
        covered = np.zeros(n_rows)
        if self.voids:
            los, his, acts = [], [], []
            for v in self.voids:
                lo, hi, act = v.x_intervals(ys)
                los.append(np.clip(lo, x0, x1))
                his.append(np.clip(hi, x0, x1))
                acts.append(act)
            lo = np.stack(los)
            hi = np.stack(his)
            act = np.stack(acts) & (hi > lo)
            lo = np.where(act, lo, np.inf)
            hi = np.where(act, hi, -np.inf)
            order = np.argsort(lo, axis=0)
            lo = np.take_along_axis(lo, order, 0)
            hi = np.take_along_axis(hi, order, 0)
            reach = np.full(n_rows, -np.inf)
            for k in range(lo.shape[0]):
                valid = np.isfinite(lo[k])
                start = np.maximum(lo[k], reach)
                covered += np.where(valid, np.maximum(hi[k] - start, 0.0), 0.0)
                reach = np.where(valid, np.maximum(reach, hi[k]), reach)
        return float(1.0 - covered.mean() / self.L)

    def raster(self, n=400):
        c = (np.arange(n) + 0.5) / n
        X, Y = np.meshgrid(-self.L / 2 + c * self.L, c * self.L)
        return self.in_material(X, Y)

    def check_connected(self, n=400):
        """Material must form one region touching both top and bottom."""
        img = self.raster(n)
        labels, count = ndimage.label(img)
        if count == 0:
            raise ConnectivityError("domain has no material")
        bottom = set(np.unique(labels[0])) - {0}
        top = set(np.unique(labels[-1])) - {0}
        if not bottom & top:
            raise ConnectivityError("no material path between loaded and clamped edges")
        if count > 1:
            sizes = ndimage.sum(img, labels, range(1, count + 1))
            main = max(bottom & top, key=lambda lab: sizes[lab - 1])
            stray = [lab for lab in range(1, count + 1) if lab != main and sizes[lab - 1] > 4]
            if stray:
                raise ConnectivityError(f"{len(stray)} disconnected material island(s)")

    def outlines(self):
        return [v.outline() for v in self.voids]


def build_geometry(spec, check=True):
    """Analytic geometry for a :class:`GeometrySpec`."""
    L = spec.L
    if not L > 0:
        raise InvalidInputError("L must be positive")
    voids = []
    min_member = None
    if spec.kind == "solid":
        pass
    elif spec.kind == "pores":
        if spec.n < 1 or not 0 <= spec.phi < math.pi / 4:
            raise InvalidInputError("pores need n >= 1 and 0 <= phi < pi/4")
        L0 = L / spec.n
        r0 = pore_radius(L, spec.n, spec.phi)
        if r0 > 0:
            for j in range(spec.n):
                for i in range(spec.n):
                    voids.append(Circle(-L / 2 + (i + 0.5) * L0, (j + 0.5) * L0, r0))
            min_member = L0 - 2 * r0
    elif spec.kind == "slits":
        if spec.n < 1:
            raise InvalidInputError("slits need n >= 1")
        t = L / 20
        width = (L - (spec.n + 1) * t) / spec.n
        if width <= 0:
            raise InvalidInputError(f"{spec.n} slits do not fit with members of width L/20")
        for i in range(spec.n):
            x0 = -L / 2 + t + i * (width + t)
            voids.append(Rect(x0, x0 + width, t, L - t))
        min_member = t
    elif spec.kind == "ellipses":
        a = np.asarray(spec.a, dtype=float)
        b = np.asarray(spec.b, dtype=float)
        if a.shape != (N_ELLIPSES,) or b.shape != (N_ELLIPSES,):
            raise InvalidInputError("ellipse geometry needs 9 values for a and for b")
        lo, hi = ellipse_bounds(L)
        z = np.concatenate([a, b])
        tol = 1e-9 * L
        if np.any(z < lo - tol) or np.any(z > hi + tol):
            raise InvalidInputError("ellipse semi-axes outside their bounds")
        cx, cy = ellipse_centers(L)
        voids = [Ellipse(cx[i], cy[i], a[i], b[i]) for i in range(N_ELLIPSES)]
        min_member = L / 30
    else:
        raise InvalidInputError(f"unknown geometry kind {spec.kind!r}")
    geom = Geometry(spec, voids, min_member)
    if check:
        geom.check_connected()
    return geom


def void_fraction(geometry):
    """Material area fraction V / L^2 (1.0 for the solid block)."""
    return geometry.material_fraction()
