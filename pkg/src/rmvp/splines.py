"""B-spline and NURBS machinery.

Knot vectors are open (clamped) on [0, 1].  Basis functions are evaluated with
the Cox-de Boor recursion in the triangular-table form, vectorised over the
evaluation points.  Patches are tensor-product rational maps from the unit
interval/square/cube into R^3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import factorial

import numpy as np

KNOT_TOL = 1e-12


class DegenerateJacobianError(ValueError):
    """Raised when a patch map has a (numerically) singular Jacobian."""

    def __init__(self, location, message="degenerate Jacobian"):
        self.location = np.asarray(location, dtype=float)
        super().__init__(f"{message} at reference point {self.location.tolist()}")


def _multiplicities(knots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values, counts = [], []
    for k in knots:
        if values and abs(k - values[-1]) <= KNOT_TOL:
            counts[-1] += 1
        else:
            values.append(float(k))
            counts.append(1)
    return np.array(values), np.array(counts, dtype=int)


def basis_ders(knots: np.ndarray, p: int, spans: np.ndarray, u: np.ndarray, nders: int) -> np.ndarray:
    """Nonzero basis functions and derivatives, shape ``(nders + 1, len(u), p + 1)``.

    ``spans`` must index a nonempty knot span containing each ``u``.  Derivative
    orders above ``p`` are returned as zero rows.
    """
    u = np.asarray(u, dtype=float)
    spans = np.asarray(spans, dtype=int)
    npts = u.shape[0]
    nd = min(nders, p)
    ndu = np.zeros((p + 1, p + 1, npts))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, npts))
    right = np.zeros((p + 1, npts))
    for j in range(1, p + 1):
        left[j] = u - knots[spans + 1 - j]
        right[j] = knots[spans + j] - u
        saved = np.zeros(npts)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nders + 1, npts, p + 1))
    ders[0] = ndu[:, p].T
    for r in range(p + 1):
        s1, s2 = 0, 1
        a = np.zeros((2, p + 1, npts))
        a[0, 0] = 1.0
        for k in range(1, nd + 1):
            d = np.zeros(npts)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            ders[k, :, r] = d
            s1, s2 = s2, s1
    for k in range(1, nd + 1):
        ders[k] *= factorial(p) / factorial(p - k)
    return ders


@dataclass(frozen=True)
class BasisEval:
    """Nonzero basis functions at one parameter value.

    ``values[a]`` belongs to basis function ``span - p + a``.
    """

    span: int
    values: np.ndarray
    derivatives: np.ndarray | None = None

    @property
    def first_index(self) -> int:
        return self.span - (self.values.shape[0] - 1)


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open knot vector on [0, 1] with its polynomial degree."""

    knots: np.ndarray
    degree: int

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).copy()
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be nonnegative")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise ValueError(f"need at least {2 * (p + 1)} knots for degree {p}")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if knots[0] < -KNOT_TOL or knots[-1] > 1 + KNOT_TOL:
            raise ValueError("knots must lie in [0, 1]")
        values, counts = _multiplicities(knots)
        if values.size < 2 or counts[0] != p + 1 or counts[-1] != p + 1:
            raise ValueError("knot vector must be open: end multiplicity p + 1")
        if abs(values[0]) > KNOT_TOL or abs(values[-1] - 1) > KNOT_TOL:
            raise ValueError("knot vector must span [0, 1]")
        if np.any(counts[1:-1] > max(p, 1)):
            raise ValueError("interior knot multiplicity exceeds the degree")

    @classmethod
    def uniform(cls, n_elements: int, degree: int, continuity: int | None = None) -> KnotVector:
        """Uniform open knot vector; ``continuity`` defaults to ``degree - 1``."""
        if n_elements < 1:
            raise ValueError("need at least one element")
        if continuity is None:
            continuity = degree - 1
        mult = degree - continuity
        if mult < 1 or mult > max(degree, 1):
            raise ValueError("continuity must lie in [-1, degree - 1]")
        interior = np.repeat(np.arange(1, n_elements) / n_elements, mult)
        return cls(np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)]), degree)

    @property
    def n_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def breakpoints(self) -> np.ndarray:
        return _multiplicities(self.knots)[0]

    @property
    def n_elements(self) -> int:
        return self.breakpoints.size - 1

    def multiplicity(self, u: float) -> int:
        return int(np.sum(np.abs(self.knots - u) <= KNOT_TOL))

    def greville(self) -> np.ndarray:
        p = self.degree
        if p == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        idx = np.arange(self.n_basis)[:, None] + np.arange(1, p + 1)[None, :]
        return self.knots[idx].mean(axis=1)

    def find_span(self, u):
        """Knot index ``i`` with ``knots[i] <= u < knots[i + 1]``; ``u = 1`` goes to the last nonempty span."""
        arr = np.asarray(u, dtype=float)
        if np.any(arr < -KNOT_TOL) or np.any(arr > 1 + KNOT_TOL):
            raise ValueError("parameter outside [0, 1]")
        arr = np.clip(arr, 0.0, 1.0)
        span = np.searchsorted(self.knots, arr, side="right") - 1
        span = np.clip(span, self.degree, self.n_basis - 1)
        return int(span) if np.ndim(span) == 0 else span

    def element_index(self, u):
        """Index of the nonempty span containing ``u`` (0-based over elements)."""
        arr = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        e = np.searchsorted(self.breakpoints, arr, side="right") - 1
        e = np.clip(e, 0, self.n_elements - 1)
        return int(e) if np.ndim(e) == 0 else e

    def eval_basis(self, u: float, deriv_order: int = 0) -> BasisEval:
        span = self.find_span(u)
        ders = basis_ders(self.knots, self.degree, np.array([span]), np.array([float(u)]), deriv_order)
        return BasisEval(span=span, values=ders[0, 0].copy(), derivatives=ders[:, 0].copy() if deriv_order else None)

    def eval_many(self, u, nders: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Spans and basis derivatives for an array of parameters."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        spans = np.atleast_1d(self.find_span(u))
        return spans, basis_ders(self.knots, self.degree, spans, u, nders)

    def collocation(self, u, nders: int = 0) -> np.ndarray:
        """Dense matrix of all basis functions, shape ``(nders + 1, len(u), n_basis)``."""
        spans, ders = self.eval_many(u, nders)
        out = np.zeros((nders + 1, spans.size, self.n_basis))
        rows = np.arange(spans.size)[:, None]
        cols = spans[:, None] - self.degree + np.arange(self.degree + 1)[None, :]
        for k in range(nders + 1):
            out[k, rows, cols] = ders[k]
        return out

    def insert(self, new_knots) -> tuple[KnotVector, np.ndarray]:
        """Insert knots; return the refined vector and ``T`` with ``new_coeffs = T @ old_coeffs``."""
        t = self.knots.copy()
        p = self.degree
        T = np.eye(self.n_basis)
        for ubar in sorted(float(x) for x in np.atleast_1d(new_knots)):
            if not 0.0 < ubar < 1.0:
                raise ValueError("inserted knots must lie strictly inside (0, 1)")
            if np.sum(np.abs(t - ubar) <= KNOT_TOL) + 1 > max(p, 1):
                raise ValueError(f"inserting {ubar} would exceed multiplicity {max(p, 1)}")
            n = t.size - p - 1
            k = int(np.searchsorted(t, ubar, side="right") - 1)
            step = np.zeros((n + 1, n))
            for i in range(n + 1):
                if i <= k - p:
                    step[i, i] = 1.0
                elif i >= k + 1:
                    step[i, i - 1] = 1.0
                else:
                    alpha = (ubar - t[i]) / (t[i + p] - t[i])
                    step[i, i] = alpha
                    step[i, i - 1] = 1.0 - alpha
            T = step @ T
            t = np.insert(t, k + 1, ubar)
        return KnotVector(t, p), T

    def refine_uniform(self, n_sub: int) -> tuple[KnotVector, np.ndarray]:
        """Split every element into ``n_sub`` equal parts."""
        if n_sub == 1:
            return self, np.eye(self.n_basis)
        bp = self.breakpoints
        new = [a + (b - a) * j / n_sub for a, b in zip(bp[:-1], bp[1:]) for j in range(1, n_sub)]
        return self.insert(new)


def derivative_scaling(kv: KnotVector) -> np.ndarray:
    """Curry-Schoenberg factors ``p / (t[i+p+1] - t[i+1])``, one per derivative basis function.

    With these factors the derivative of ``sum_i c_i B_{i,p}`` has coefficients
    ``c_{i+1} - c_i`` in the scaled degree ``p - 1`` basis.
    """
    p, t = kv.degree, kv.knots
    i = np.arange(kv.n_basis - 1)
    return p / (t[i + p + 1] - t[i + 1])


@dataclass(frozen=True, eq=False)
class NurbsPatch:
    """Rational tensor-product map from the unit cube (square, interval) into R^3."""

    kvs: tuple[KnotVector, ...]
    control_points: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        kvs = tuple(self.kvs)
        cp = np.asarray(self.control_points, dtype=float).copy()
        shape = tuple(kv.n_basis for kv in kvs)
        if not 1 <= len(kvs) <= 3:
            raise ValueError("patch dimension must be 1, 2 or 3")
        if cp.shape != shape + (3,):
            raise ValueError(f"control grid shape {cp.shape} does not match basis counts {shape}")
        w = np.ones(shape) if self.weights is None else np.asarray(self.weights, dtype=float).copy()
        if w.shape != shape:
            raise ValueError("weights shape does not match the control grid")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        cp.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "kvs", kvs)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return len(self.kvs)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(kv.degree for kv in self.kvs)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.control_points.reshape(-1, 3)
        return pts.min(axis=0), pts.max(axis=0)

    def evaluate(self, ref) -> tuple[np.ndarray, np.ndarray]:
        """Map scattered reference points ``(N, d)``; returns points ``(N, 3)`` and Jacobians ``(N, 3, d)``."""
        ref = np.atleast_2d(np.asarray(ref, dtype=float))
        if ref.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} reference coordinates")
        if np.any(ref < -KNOT_TOL) or np.any(ref > 1 + KNOT_TOL):
            raise ValueError("reference point outside the unit domain")
        n = ref.shape[0]
        ev = [kv.eval_many(ref[:, d], 1) for d, kv in enumerate(self.kvs)]
        hom = np.zeros((n, 4))
        dhom = np.zeros((self.dim, n, 4))
        wp = np.concatenate([self.control_points * self.weights[..., None], self.weights[..., None]], axis=-1)
        for local in product(*(range(kv.degree + 1) for kv in self.kvs)):
            idx = tuple(ev[d][0] - self.kvs[d].degree + local[d] for d in range(self.dim))
            c = wp[idx]
            vals = [ev[d][1][0, :, local[d]] for d in range(self.dim)]
            ders = [ev[d][1][1, :, local[d]] for d in range(self.dim)]
            full = np.prod(vals, axis=0)
            hom += full[:, None] * c
            for d in range(self.dim):
                f = ders[d].copy()
                for e in range(self.dim):
                    if e != d:
                        f = f * vals[e]
                dhom[d] += f[:, None] * c
        w = hom[:, 3:4]
        pts = hom[:, :3] / w
        jac = np.stack([(dhom[d, :, :3] - pts * dhom[d, :, 3:4]) / w for d in range(self.dim)], axis=-1)
        return pts, jac

    def evaluate_grid(self, axes) -> tuple[np.ndarray, np.ndarray]:
        """Map the tensor grid spanned by ``axes``; shapes ``(*grid, 3)`` and ``(*grid, 3, d)``."""
        axes = [np.asarray(a, dtype=float) for a in axes]
        mats = [kv.collocation(a, 1) for kv, a in zip(self.kvs, axes)]
        wp = np.concatenate([self.control_points * self.weights[..., None], self.weights[..., None]], axis=-1)
        letters = "ijk"[: self.dim]
        spec_out = "abc"[: self.dim]

        def contract(orders):
            args = []
            subs = []
            for d in range(self.dim):
                args.append(mats[d][orders[d]])
                subs.append(spec_out[d] + letters[d])
            return np.einsum(",".join(subs) + "," + letters + "z->" + spec_out + "z", *args, wp)

        hom = contract([0] * self.dim)
        w = hom[..., 3:4]
        pts = hom[..., :3] / w
        jac = []
        for d in range(self.dim):
            orders = [0] * self.dim
            orders[d] = 1
            dh = contract(orders)
            jac.append((dh[..., :3] - pts * dh[..., 3:4]) / w)
        return pts, np.stack(jac, axis=-1)

    def eval_nurbs(self, ref_point, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Point and Jacobian at one reference point; raises on a degenerate Jacobian."""
        pts, jac = self.evaluate(np.asarray(ref_point, dtype=float)[None, :])
        J = jac[0]
        g = J.T @ J
        scale = max(float(np.trace(g)), np.finfo(float).tiny)
        if np.linalg.det(g) <= tol * scale ** self.dim:
            raise DegenerateJacobianError(ref_point)
        return pts[0], J

    def refine(self, new_knots_per_dir) -> NurbsPatch:
        """Knot insertion in every direction; the map is unchanged."""
        kvs = list(self.kvs)
        hom = np.concatenate([self.control_points * self.weights[..., None], self.weights[..., None]], axis=-1)
        for d, new in enumerate(new_knots_per_dir):
            if new is None or len(np.atleast_1d(new)) == 0:
                continue
            kv_new, T = kvs[d].insert(new)
            hom = np.moveaxis(np.tensordot(T, np.moveaxis(hom, d, 0), axes=(1, 0)), 0, d)
            kvs[d] = kv_new
        w = hom[..., 3]
        return NurbsPatch(tuple(kvs), hom[..., :3] / w[..., None], w)


def knot_insert(obj, new_knots):
    """Knot insertion for a :class:`KnotVector` (returns ``(kv, T)``) or a patch.

    For a patch, ``new_knots`` is a list with one entry per direction.
    """
    if isinstance(obj, KnotVector):
        return obj.insert(new_knots)
    if isinstance(obj, NurbsPatch):
        return obj.refine(new_knots)
    raise TypeError("expected a KnotVector or a NurbsPatch")


def check_injective(patch: NurbsPatch, n_samples: int = 5) -> bool:
    """Jacobian determinant sign is constant on a sample grid (3D patches only)."""
    if patch.dim != 3:
        return True
    s = (np.arange(n_samples) + 0.5) / n_samples
    _, jac = patch.evaluate_grid([s, s, s])
    det = np.linalg.det(jac)
    return bool(np.all(det > 0) or np.all(det < 0))


# -- standard shapes -------------------------------------------------------

SQRT1_2 = float(np.sqrt(0.5))


def quarter_arc(radius: float, angle0: float = 0.0, z: float = 0.0, center=(0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Control points and weights of a quadratic rational 90-degree arc."""
    a0, a1 = angle0, angle0 + np.pi / 2
    cx, cy = center
    mid = radius / np.cos(np.pi / 4)
    am = 0.5 * (a0 + a1)
    pts = np.array(
        [
            [cx + radius * np.cos(a0), cy + radius * np.sin(a0), z],
            [cx + mid * np.cos(am), cy + mid * np.sin(am), z],
            [cx + radius * np.cos(a1), cy + radius * np.sin(a1), z],
        ]
    )
    return pts, np.array([1.0, SQRT1_2, 1.0])


def circle_curve(radius: float, z: float = 0.0, center=(0.0, 0.0)) -> NurbsPatch:
    """Full circle as a quadratic NURBS curve with four 90-degree arcs."""
    pts, wts = [], []
    for q in range(4):
        p, w = quarter_arc(radius, q * np.pi / 2, z, center)
        if q:
            p, w = p[1:], w[1:]
        pts.append(p)
        wts.append(w)
    knots = [0, 0, 0, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 1, 1, 1]
    return NurbsPatch((KnotVector(knots, 2),), np.concatenate(pts), np.concatenate(wts))
