import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings, strategies as st

from rmvp.domain import MU0, build_cylinder_in_box
from rmvp.source import (CoilSource, KernelRule, SingularityError, analytical_loop_A, build_helicoidal_coil,
                         circular_coil, ellipke, equidistant_nodes, eval_A_s, eval_B_s, quadrature_study,
                         volume_rule)
from rmvp.splines import circle_curve

A, NI = 0.025, 320.0


@pytest.fixture(scope="module")
def loop():
    return circular_coil(A, NI)


@pytest.fixture(scope="module")
def helix():
    return build_helicoidal_coil(0.025, 0.003, 10, 1.0)


def _far_points(n, seed=0):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.0, 0.014, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-0.02, 0.02, n)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


# -- nodes ----------------------------------------------------------------------

def test_circle_nodes_uniform_angle(loop):
    n = 24
    nodes = loop.nodes(KernelRule("trapezoidal", n))
    ang = np.mod(np.arctan2(nodes.points[:, 1], nodes.points[:, 0]), 2 * np.pi)
    np.testing.assert_allclose(ang, 2 * np.pi * np.arange(n) / n, atol=1e-12)


def test_two_nodes_antipodal(loop):
    p = loop.nodes(KernelRule("trapezoidal", 2)).points
    np.testing.assert_allclose(p[0], -p[1], atol=1e-15)


def _ellipse():
    c = circle_curve(1.0)
    from rmvp.splines import NurbsPatch
    return CoilSource(NurbsPatch(c.kvs, c.control_points * np.array([0.03, 0.012, 1.0]), c.weights), 1.0)


def test_equidistant_arc_length(helix):
    n = 200
    u = equidistant_nodes(helix, n)
    s = helix.arc(u)
    np.testing.assert_allclose(s, helix.length * np.arange(n) / n, atol=1e-10 * helix.length)


@pytest.mark.parametrize("n", [64, 100, 257])
def test_equal_chords_on_smooth_curves(n):
    for src in (_ellipse(), build_helicoidal_coil(0.02, 0.0, 1, 1.0)):
        pts = src.nodes(KernelRule("trapezoidal", n)).points
        chords = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
        assert chords.max() / chords.min() - 1 < 0.01


def test_kernel_rule_validation():
    with pytest.raises(ValueError):
        KernelRule("trapezoidal", 1)
    with pytest.raises(ValueError):
        KernelRule("simpson", 8)


def test_open_curve_rejected():
    from rmvp.splines import KnotVector, NurbsPatch
    c = NurbsPatch((KnotVector([0, 0, 1, 1], 1),), np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.ones(2))
    with pytest.raises(ValueError):
        CoilSource(c, 1.0)


# -- kernels --------------------------------------------------------------------

def test_A_on_axis_vanishes(loop):
    pts = np.array([[0, 0, z] for z in (-0.03, 0.0, 0.01)])
    A_s = eval_A_s(loop, KernelRule("trapezoidal", 64), pts)
    assert np.abs(A_s).max() < 1e-20


def test_A_matches_oracle_at_128(loop):
    pts = _far_points(20)
    ref = analytical_loop_A(A, NI, pts)
    got = eval_A_s(loop, KernelRule("trapezoidal", 128), pts)
    assert np.linalg.norm(got - ref) <= 1e-8 * np.linalg.norm(ref)


def test_oracle_matches_quadrature_at_512(loop):
    rng = np.random.default_rng(7)
    pts = np.column_stack([rng.uniform(-0.02, 0.02, (20, 2)), rng.uniform(-0.03, 0.03, 20)])
    ref = analytical_loop_A(A, NI, pts)
    got = eval_A_s(loop, KernelRule("trapezoidal", 512), pts)
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-10 * np.abs(ref).max())
    for k in range(20):
        assert np.linalg.norm(got[k] - ref[k]) <= 1e-10 * np.linalg.norm(ref[k])


def test_turns_linearity(loop):
    pts = _far_points(5, 1)
    r = KernelRule("trapezoidal", 64)
    two = circular_coil(A, NI, turns=2)
    np.testing.assert_array_equal(eval_A_s(two, r, pts), 2 * eval_A_s(loop, r, pts))
    np.testing.assert_array_equal(eval_B_s(two, r, pts), 2 * eval_B_s(loop, r, pts))


@settings(max_examples=20, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_kernels_linear_in_current(i1, i2):
    pts = _far_points(4, 2)
    r = KernelRule("trapezoidal", 32)
    c1, c2, c12 = circular_coil(A, i1), circular_coil(A, i2), circular_coil(A, i1 + i2)
    for f in (eval_A_s, eval_B_s):
        lhs = f(c12, r, pts)
        rhs = f(c1, r, pts) + f(c2, r, pts)
        assert np.abs(lhs - rhs).max() <= 1e-13 * max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-30)


def test_on_axis_B_closed_form(loop):
    z = np.array([-0.04, -0.01, 0.0, 0.005, 0.03])
    pts = np.column_stack([np.zeros_like(z), np.zeros_like(z), z])
    B = eval_B_s(loop, KernelRule("trapezoidal", 256), pts)
    exact = MU0 * NI * A**2 / (2 * (A**2 + z**2) ** 1.5)
    np.testing.assert_allclose(B[:, 2], exact, rtol=1e-10)
    assert np.abs(B[:, :2]).max() < 1e-10 * exact.min()
    assert abs(np.linalg.norm(B[2]) - 8.04e-3) < 0.005 * 8.04e-3


def test_B_is_curl_of_A(loop):
    r = KernelRule("trapezoidal", 256)
    h = 1e-5
    for x0 in ([0.06, 0.01, 0.02], [0.0, -0.055, -0.03], [0.004, 0.002, 0.07]):
        x0 = np.array(x0)
        J = np.zeros((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            J[:, j] = (eval_A_s(loop, r, (x0 + e)[None])[0] - eval_A_s(loop, r, (x0 - e)[None])[0]) / (2 * h)
        curl = np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])
        B = eval_B_s(loop, r, x0[None])[0]
        assert np.linalg.norm(curl - B) <= 1e-5 * np.linalg.norm(B)


def test_singularity_guard(loop):
    on = loop.nodes(KernelRule("trapezoidal", 16)).points[3]
    with pytest.raises(SingularityError):
        eval_A_s(loop, KernelRule("trapezoidal", 16), on[None])
    with pytest.raises(SingularityError):
        analytical_loop_A(A, NI, [[A, 0.0, 0.0]])


# -- oracle ---------------------------------------------------------------------

def test_elliptic_integrals_match_scipy():
    m = np.concatenate([[0.0, 1e-12, 1e-6], np.linspace(0.01, 0.99, 50), [0.999999]])
    K, E = ellipke(m)
    np.testing.assert_allclose(K, scipy.special.ellipk(m), rtol=1e-14)
    np.testing.assert_allclose(E, scipy.special.ellipe(m), rtol=1e-14)


def test_oracle_axis_and_mirror():
    assert np.all(analytical_loop_A(A, NI, [[0, 0, 0.01], [0, 0, -0.2]]) == 0.0)
    pts = _far_points(10, 3)
    mir = pts * np.array([1, 1, -1])
    np.testing.assert_allclose(analytical_loop_A(A, NI, pts), analytical_loop_A(A, NI, mir), rtol=1e-14)


def test_oracle_frozen_value():
    # value at (rho, z) = (10 mm, 5 mm) from an mpmath evaluation of the elliptic form
    A_phi = analytical_loop_A(A, NI, [[0.01, 0.0, 0.005]])[0, 1]
    assert A_phi == pytest.approx(FROZEN_A_PHI, rel=1e-13)


FROZEN_A_PHI = 3.9786527623365701e-05


def test_trapezoidal_decay_and_gauss_comparison():
    dom = build_cylinder_in_box(0.012, 0.06, 0.0205, 0.038, symmetry="octant")
    pts, w = volume_rule(dom, dom.interior_patches, 2, 6)
    rows = quadrature_study(circular_coil(A, NI), A, pts, w, ns=(8, 16, 32, 64, 128))
    tr = np.array([r.l2_error for r in rows if r.rule == "trapezoidal"])
    ga = np.array([r.l2_error for r in rows if r.rule == "gauss"])
    assert np.all(np.diff(tr) < 0)
    assert np.polyfit([8, 16, 32, 64, 128], np.log(tr), 1)[0] < 0
    assert tr[3] / tr[4] > 1e3
    assert np.all(ga > tr)


# -- helix ----------------------------------------------------------------------

def test_degenerate_helix_is_circle():
    c = build_helicoidal_coil(0.02, 0.0, 1, 1.0)
    assert abs(c.length - 2 * np.pi * 0.02) < 1e-6
    pts = c.nodes(KernelRule("trapezoidal", 64)).points
    np.testing.assert_allclose(np.linalg.norm(pts[:, :2], axis=1), 0.02, atol=1e-6 * 0.02)


@pytest.mark.parametrize("turns,pitch", [(3, 0.004), (10, 0.003), (200, 0.0003)])
def test_helix_length_and_closure(turns, pitch):
    r = 0.025
    c = build_helicoidal_coil(r, pitch, turns, 2.0)
    ends, _ = c.curve.evaluate(np.array([[0.0], [1.0]]))
    assert np.linalg.norm(ends[0] - ends[1]) < 1e-12 * c.length
    helix_len = turns * np.hypot(2 * np.pi * r, pitch)
    ret = c.length - helix_len
    # the return path is at least the straight axial distance
    assert ret >= turns * pitch * (1 - 1e-3)
    assert abs(c.length - (helix_len + ret)) <= 1e-3 * c.length
    # points of the winding stay on the cylinder r = 0.025 within 1e-6 r
    u = np.linspace(0.0, 0.9 * helix_len / c.length, 400)
    x, _ = c.curve.evaluate(u[:, None])
    assert np.abs(np.linalg.norm(x[:, :2], axis=1) - r).max() < 1e-6 * r


def test_helix_length_formula_frozen():
    c = build_helicoidal_coil(0.025, 0.0003, 200, 1.0)
    helix_len = 200 * np.hypot(2 * np.pi * 0.025, 0.0003)
    assert abs(c.length - helix_len - HELIX_RETURN) < 1e-3 * c.length


HELIX_RETURN = 0.06
