import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mechinfo.fem import GeometrySpec, assemble_and_factor, build_geometry, mesh_domain
from mechinfo.psl import (downward, mass_matrix, principal_decompose, principal_field,
                          select_max_field, seed_points, smooth_project, trace_lines,
                          write_lines_csv)


@pytest.fixture(scope="module")
def solid():
    return assemble_and_factor(mesh_domain(build_geometry(GeometrySpec("solid")), nx=10))


@pytest.fixture(scope="module")
def pores():
    return assemble_and_factor(mesh_domain(build_geometry(GeometrySpec("pores", n=2)), l_den=8))


def same_direction(t1, t2):
    d = np.mod(np.asarray(t1) - np.asarray(t2), np.pi)
    return np.minimum(d, np.pi - d)


class TestDecompose:
    def test_uniaxial(self):
        p = principal_decompose(0.0, -1.0, 0.0)
        assert p.s1 == 0.0 and p.s2 == -1.0
        assert same_direction(p.theta2, math.pi / 2) < 1e-15

    def test_pure_shear(self):
        p = principal_decompose(0.0, 0.0, 2.0)
        assert p.s1 == 2.0 and p.s2 == -2.0
        assert same_direction(p.theta1, math.pi / 4) < 1e-15
        assert same_direction(p.theta2, -math.pi / 4) < 1e-15

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
    def test_eigen_oracle(self, a, b, c):
        p = principal_decompose(a, b, c)
        w, v = np.linalg.eigh([[a, c], [c, b]])
        assert p.s1 == pytest.approx(w[1], abs=1e-12) and p.s2 == pytest.approx(w[0], abs=1e-12)
        assert p.s1 >= p.s2
        if w[1] - w[0] > 1e-6:
            assert same_direction(p.theta1, math.atan2(v[1, 1], v[0, 1])) < 1e-10
            assert same_direction(p.theta2, math.atan2(v[1, 0], v[0, 0])) < 1e-10

    def test_hydrostatic_flag(self):
        assert bool(principal_decompose(-1.0, -1.0, 0.0).degenerate)


class TestSelect:
    def test_uniaxial_vertical(self):
        vx, vy, _ = select_max_field(principal_decompose(np.zeros(5), -np.ones(5), np.zeros(5)))
        np.testing.assert_allclose(vx, 0, atol=1e-15)
        np.testing.assert_allclose(vy, -1)

    def test_pure_shear(self):
        vx, vy, tie = select_max_field(principal_decompose(0.0, 0.0, 1.0))
        assert bool(tie) and vy < 0
        assert abs(abs(vx) - math.sqrt(0.5)) < 1e-12

    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)),
                    min_size=1, max_size=20))
    def test_bruteforce(self, comps):
        a = np.array(comps)
        vx, vy, _ = select_max_field(principal_decompose(a[:, 0], a[:, 1], a[:, 2]))
        assert np.all(vy <= 0)
        np.testing.assert_allclose(np.hypot(vx, vy), 1, atol=1e-10)
        for (s11, s22, s12), x, y in zip(comps, vx, vy):
            w, v = np.linalg.eigh([[s11, s12], [s12, s22]])
            if abs(abs(w[0]) - abs(w[1])) > 1e-6 and w[1] - w[0] > 1e-6:
                e = v[:, int(np.argmax(np.abs(w)))]
                assert abs(abs(e @ [x, y]) - 1) < 1e-8

    def test_downward(self):
        vx, vy = downward(np.array([1.0, -1.0, 0.3]), np.array([0.0, 0.0, 0.5]))
        np.testing.assert_array_equal(vx, [1.0, 1.0, -0.3])
        np.testing.assert_array_equal(vy, [0.0, -0.0, -0.5])


class TestProjection:
    def test_constant(self, pores):
        m = pores.mesh
        out = smooth_project(np.full((m.n_elements, 3), 2.5), m)
        np.testing.assert_allclose(out, 2.5, atol=1e-10)

    def test_linear(self, pores):
        m = pores.mesh
        c = m.nodes[m.elements[:, :3]]
        out = smooth_project(0.3 * c[..., 0] - 0.1 * c[..., 1], m)
        np.testing.assert_allclose(out, 0.3 * m.nodes[:, 0] - 0.1 * m.nodes[:, 1], atol=1e-10)

    @staticmethod
    def checkerboard(m):
        c = m.nodes[m.elements[:, :3]].mean(axis=1)
        v = np.where((np.floor(c[:, 0] / 10) + np.floor(c[:, 1] / 10)) % 2 == 0, 1.0, -1.0)
        return np.repeat(v[:, None], 3, axis=1)

    def test_checkerboard_dense_oracle(self, solid):
        m = solid.mesh
        raw = self.checkerboard(m)
        out = smooth_project(raw, m)
        M = mass_matrix(m).toarray()
        # right-hand side by the exact integral of a piecewise constant against P2
        from mechinfo.fem.mesh import triangle_rule
        from mechinfo.fem.solver import physical_gradients
        pts, w = triangle_rule(6)
        N, _, det = physical_gradients(m.nodes, m.elements, pts)
        b = np.zeros(m.n_nodes)
        np.add.at(b, m.elements.ravel(), np.einsum("ep,pa,e->ea", det * w, N, raw[:, 0]).ravel())
        np.testing.assert_allclose(out, np.linalg.solve(M, b), atol=1e-10)

    @pytest.mark.xfail(strict=True, reason="L2 projection onto P2 has no maximum principle")
    def test_checkerboard_bounded(self, solid):
        out = smooth_project(self.checkerboard(solid.mesh), solid.mesh)
        assert out.max() <= 1 + 1e-9 and out.min() >= -1 - 1e-9


class TestTrace:
    def test_solid_vertical(self, solid):
        lines = trace_lines(principal_field(solid))
        assert len(lines) == 20
        for ln in lines:
            assert np.abs(ln.points[:, 0] - ln.seed[0]).max() < 1.0  # L / 100
            assert ln.reason == "boundary"
            assert ln.points[-1, 1] < 100 / 200 + 1e-9

    def test_sign_invariance(self, pores):
        pf = principal_field(pores)
        flipped = dataclasses.replace(pf, vectors=-pf.vectors)
        seeds = seed_points(100.0, 6)
        a = trace_lines(pf, seeds, max_steps=150)
        b = trace_lines(flipped, seeds, max_steps=150)
        for la, lb in zip(a, b):
            np.testing.assert_allclose(la.points, lb.points, atol=1e-12)
            assert la.reason == lb.reason

    def test_no_void_entry(self, pores):
        lines = trace_lines(principal_field(pores))
        g = pores.mesh.geometry
        for ln in lines:
            assert np.all(g.level(ln.points[:, 0], ln.points[:, 1]) >= -0.5)

    def test_seed_in_void_skipped(self, pores):
        pf = principal_field(pores)
        lines = trace_lines(pf, [[-25.0, 25.0], [0.0, 100.0]], max_steps=5)
        assert len(lines) == 1

    def test_csv(self, solid, tmp_path):
        lines = trace_lines(principal_field(solid), seed_points(100.0, 2))
        write_lines_csv(lines, tmp_path / "l.csv")
        rows = (tmp_path / "l.csv").read_text().splitlines()
        assert rows[0] == "line,x,y,reason"
        assert len(rows) == 1 + sum(len(ln.points) for ln in lines)
