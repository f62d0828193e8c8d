import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmvp.splines import (DegenerateJacobianError, KnotVector, NurbsPatch, check_injective, circle_curve,
                          derivative_scaling, knot_insert, quarter_arc)


def identity_cube(p=1, n=1):
    kv = KnotVector.uniform(n, p)
    g = kv.greville()
    cp = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
    return NurbsPatch((kv, kv, kv), cp, np.ones(cp.shape[:3]))


def cylinder_sector(r0=0.5, r1=1.5, h=2.0):
    """Quarter of a thick-walled cylinder (linear radially / axially, exact arc)."""
    arc, w = quarter_arc(1.0)
    cp = np.zeros((2, 3, 2, 3))
    wt = np.zeros((2, 3, 2))
    for i, r in enumerate((r0, r1)):
        for k, z in enumerate((0.0, h)):
            cp[i, :, k] = arc * r + np.array([0, 0, z])
            wt[i, :, k] = w
    kvl = KnotVector([0, 0, 1, 1], 1)
    kvq = KnotVector([0, 0, 0, 1, 1, 1], 2)
    return NurbsPatch((kvl, kvq, kvl), cp, wt)


# -- knot vectors and basis -------------------------------------------------------

def test_find_span_examples():
    kv = KnotVector([0, 0, 0.5, 1, 1], 1)
    s = kv.find_span(0.25)
    assert kv.knots[s] <= 0.25 < kv.knots[s + 1] and kv.knots[s] == 0.0
    assert kv.find_span(1.0) == kv.n_basis - 1
    assert kv.knots[kv.find_span(1.0)] == 0.5
    kv8 = KnotVector.uniform(8, 2)
    assert kv8.element_index(0.37) == 2
    with pytest.raises(ValueError):
        kv.find_span(1.5)


def test_eval_basis_examples():
    kv = KnotVector([0, 0, 0.5, 1, 1], 1)
    np.testing.assert_allclose(kv.eval_basis(0.25).values, [0.5, 0.5], atol=1e-15)
    kv2 = KnotVector.uniform(4, 2)
    np.testing.assert_allclose(kv2.eval_basis(0.0).values, [1, 0, 0], atol=1e-15)
    b = kv2.eval_basis(0.3, 1)
    assert abs(b.derivatives[1].sum()) < 1e-12
    # derivative order above p gives zero rows
    b3 = kv2.eval_basis(0.3, 4)
    np.testing.assert_array_equal(b3.derivatives[3:], 0.0)


def test_invalid_knot_vectors():
    with pytest.raises(ValueError):
        KnotVector([0, 0.5, 1], 1)             # not open
    with pytest.raises(ValueError):
        KnotVector([0, 0, 0.6, 0.4, 1, 1], 1)   # decreasing
    with pytest.raises(ValueError):
        KnotVector([0, 0, 0, 0.5, 0.5, 0.5, 1, 1, 1], 2)  # interior multiplicity > p


@st.composite
def knot_vectors(draw):
    p = draw(st.integers(0, 4))
    n_int = draw(st.integers(0, 6))
    interior = sorted(draw(st.lists(st.floats(0.01, 0.99), min_size=n_int, max_size=n_int)))
    # cap multiplicities at p (at least 1)
    vals, out = [], []
    for x in interior:
        x = round(x, 3)
        if out.count(x) < max(p, 1):
            out.append(x)
    return KnotVector(np.concatenate([np.zeros(p + 1), out, np.ones(p + 1)]), p)


@settings(max_examples=200, deadline=None)
@given(knot_vectors(), st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5))
def test_partition_of_unity_and_nonnegativity(kv, us):
    spans, ders = kv.eval_many(np.array(us), 0)
    np.testing.assert_allclose(ders[0].sum(axis=1), 1.0, atol=1e-13)
    assert np.all(ders[0] >= -1e-15)


@settings(max_examples=100, deadline=None)
@given(knot_vectors(), st.floats(0.0, 1.0))
def test_local_support(kv, u):
    B = kv.collocation([u])[0, 0]
    t, p = kv.knots, kv.degree
    for i in range(kv.n_basis):
        if u < t[i] or u > t[i + p + 1]:
            assert B[i] == 0.0


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(3)
    for p in (1, 2, 3):
        kv = KnotVector.uniform(5, p)
        bp = kv.breakpoints
        u = rng.uniform(0.02, 0.98, 40)
        u = u[np.min(np.abs(u[:, None] - bp[None]), axis=1) > 1e-3]
        h = 1e-6
        D = kv.collocation(u, 1)[1]
        FD = (kv.collocation(u + h)[0] - kv.collocation(u - h)[0]) / (2 * h)
        np.testing.assert_allclose(D, FD, rtol=1e-6, atol=1e-6 * np.abs(D).max())


def test_derivative_scaling_maps_to_differences():
    kv = KnotVector.uniform(4, 3)
    c = np.random.default_rng(0).normal(size=kv.n_basis)
    u = np.linspace(0, 1, 17)
    lower = KnotVector(kv.knots[1:-1], 2)
    d_direct = kv.collocation(u, 1)[1] @ c
    d_scaled = lower.collocation(u)[0] @ (derivative_scaling(kv) * np.diff(c))
    np.testing.assert_allclose(d_direct, d_scaled, atol=1e-12)


# -- patches ---------------------------------------------------------------------

def test_quarter_arc_exact_radius():
    r = 0.7
    pts, w = quarter_arc(r)
    c = NurbsPatch((KnotVector([0, 0, 0, 1, 1, 1], 2),), pts, w)
    x, _ = c.evaluate(np.linspace(0, 1, 101)[:, None])
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), r, rtol=1e-15)


def test_identity_patch():
    P = identity_cube()
    ref = np.random.default_rng(1).uniform(size=(10, 3))
    x, J = P.evaluate(ref)
    np.testing.assert_allclose(x, ref, atol=1e-15)
    np.testing.assert_allclose(J, np.broadcast_to(np.eye(3), J.shape), atol=1e-14)


def test_cylinder_jacobian_matches_finite_differences():
    P = cylinder_sector()
    u0 = np.array([0.5, 0.5, 0.5])
    _, J = P.eval_nurbs(u0)
    h = 1e-6
    FD = np.stack([(P.evaluate((u0 + h * e)[None])[0][0] - P.evaluate((u0 - h * e)[None])[0][0]) / (2 * h)
                   for e in np.eye(3)], axis=1)
    assert abs(np.linalg.det(J) - np.linalg.det(FD)) <= 1e-6 * abs(np.linalg.det(FD))
    assert check_injective(P)


def test_evaluate_grid_matches_scattered():
    P = cylinder_sector()
    axes = [np.linspace(0, 1, 3), np.linspace(0, 1, 4), np.linspace(0, 1, 2)]
    xg, Jg = P.evaluate_grid(axes)
    ref = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    xs, Js = P.evaluate(ref)
    np.testing.assert_allclose(xg.reshape(-1, 3), xs, atol=1e-14)
    np.testing.assert_allclose(Jg.reshape(-1, 3, 3), Js, atol=1e-13)


def test_degenerate_jacobian_reported():
    cp = np.zeros((2, 2, 2, 3))
    cp[1, :, :, 0] = 1.0   # collapses directions 2 and 3
    kv = KnotVector([0, 0, 1, 1], 1)
    P = NurbsPatch((kv, kv, kv), cp, np.ones((2, 2, 2)))
    with pytest.raises(DegenerateJacobianError) as info:
        P.eval_nurbs([0.2, 0.3, 0.4])
    assert "0.2" in str(info.value)


def test_knot_insertion_linear_midpoint():
    kv = KnotVector([0, 0, 1, 1], 1)
    kv2, T = knot_insert(kv, [0.5])
    c = np.array([0.0, 2.0])
    np.testing.assert_allclose(T @ c, [0.0, 1.0, 2.0])
    assert kv2.n_basis == 3


def test_knot_insertion_preserves_circle():
    c = circle_curve(0.3)
    ref = c.refine([[0.1, 0.6, 0.9]])
    u = np.random.default_rng(2).uniform(size=(50, 1))
    np.testing.assert_allclose(ref.evaluate(u)[0], c.evaluate(u)[0], rtol=1e-12, atol=1e-15)
    arc = NurbsPatch((KnotVector([0, 0, 0, 1, 1, 1], 2),), *quarter_arc(2.0))
    arc2 = arc.refine([[0.25, 0.75]])
    x, _ = arc2.evaluate(np.linspace(0, 1, 33)[:, None])
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 2.0, rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.05, 0.95), min_size=1, max_size=3, unique=True))
def test_knot_insertion_geometry_and_count(new):
    P = cylinder_sector()
    new = sorted(set(round(x, 4) for x in new))
    R = P.refine([None, new, new])
    assert R.kvs[1].n_basis == P.kvs[1].n_basis + len(new)
    assert R.kvs[2].n_basis == P.kvs[2].n_basis + len(new)
    ref = np.random.default_rng(5).uniform(size=(50, 3))
    a, b = P.evaluate(ref)[0], R.evaluate(ref)[0]
    assert np.abs(a - b).max() <= 1e-12 * np.abs(a).max()


def test_insertion_multiplicity_violation():
    kv = KnotVector.uniform(2, 1)
    with pytest.raises(ValueError):
        kv.insert([0.5])
