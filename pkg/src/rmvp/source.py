"""Filament coils: arc-length quadrature, Biot-Savart kernels and the circular-loop oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_interp_spline

from .domain import MU0
from .quadrature import gauss_unit
from .splines import KnotVector, NurbsPatch, circle_curve


class SingularityError(ValueError):
    """Kernel evaluated on (or too close to) the source curve."""


class NodePlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelRule:
    kind: str = "trapezoidal"
    n_quad: int = 64

    def __post_init__(self):
        if self.kind not in ("trapezoidal", "gauss"):
            raise ValueError(f"unknown kernel rule {self.kind!r}")
        if self.n_quad < 2:
            raise ValueError("n_quad must be at least 2")


# -- arc length -------------------------------------------------------------

class ArcLength:
    """Cumulative arc length of a curve patch with adaptive composite Gauss quadrature."""

    ORDER = 16

    def __init__(self, curve: NurbsPatch, rtol: float = 1e-14, max_depth: int = 12):
        self.curve = curve
        self._x, self._w = gauss_unit(self.ORDER)
        breaks = curve.kvs[0].breakpoints
        a, b = breaks[:-1], breaks[1:]
        done_a, done_b, done_len = [], [], []
        for depth in range(max_depth + 1):
            m = 0.5 * (a + b)
            whole = self._gauss(a, b)
            left, right = self._gauss(a, m), self._gauss(m, b)
            ok = np.abs(left + right - whole) <= rtol * np.maximum(whole, 1e-300)
            if depth == max_depth:
                ok[:] = True
            done_a += [a[ok], m[ok]]
            done_b += [m[ok], b[ok]]
            done_len += [left[ok], right[ok]]
            a, b = np.concatenate([a[~ok], m[~ok]]), np.concatenate([m[~ok], b[~ok]])
            if a.size == 0:
                break
        ea, eb, el = (np.concatenate(v) for v in (done_a, done_b, done_len))
        order = np.argsort(ea)
        self.edges = np.concatenate([ea[order], eb[order][-1:]])
        self.cum = np.concatenate([[0.0], np.cumsum(el[order])])
        self.length = float(self.cum[-1])

    def speed(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        _, jac = self.curve.evaluate(u.reshape(-1, 1))
        return np.linalg.norm(jac[:, :, 0], axis=1).reshape(u.shape)

    def _gauss(self, a, b):
        h = b - a
        pts = a[:, None] + h[:, None] * self._x[None, :]
        return h * (self.speed(pts) @ self._w)

    def __call__(self, u) -> np.ndarray:
        """s(u) for an array of parameters."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        idx = np.clip(np.searchsorted(self.edges, u, side="right") - 1, 0, len(self.edges) - 2)
        a = self.edges[idx]
        h = u - a
        pts = a[:, None] + h[:, None] * self._x[None, :]
        sp = self.speed(pts.ravel()).reshape(pts.shape)
        return self.cum[idx] + h * (sp @ self._w)

    def invert(self, targets, tol: float = 1e-13, max_iter: int = 30) -> np.ndarray:
        """Parameters u with s(u) = targets (Newton, bisection fallback)."""
        targets = np.asarray(targets, dtype=float)
        j = np.clip(np.searchsorted(self.cum, targets, side="right") - 1, 0, len(self.edges) - 2)
        lo, hi = self.edges[j].copy(), self.edges[j + 1].copy()
        frac = (targets - self.cum[j]) / np.maximum(self.cum[j + 1] - self.cum[j], 1e-300)
        u = lo + frac * (hi - lo)
        abs_tol = tol * self.length
        for _ in range(max_iter):
            r = self(u) - targets
            done = np.abs(r) <= abs_tol
            if np.all(done):
                return u
            lo = np.where(r < 0, np.maximum(lo, u), lo)
            hi = np.where(r > 0, np.minimum(hi, u), hi)
            step = r / np.maximum(self.speed(u), 1e-300)
            un = u - step
            bad = (un <= lo) | (un >= hi)
            un = np.where(bad, 0.5 * (lo + hi), un)
            u = np.where(done, u, un)
        # bisection fallback for any stragglers
        for _ in range(200):
            r = self(u) - targets
            if np.all(np.abs(r) <= abs_tol):
                return u
            lo = np.where(r < 0, u, lo)
            hi = np.where(r > 0, u, hi)
            u = np.where(np.abs(r) <= abs_tol, u, 0.5 * (lo + hi))
        raise NodePlacementError("arc-length inversion failed to converge")


@dataclass(frozen=True)
class QuadNodes:
    params: np.ndarray
    points: np.ndarray   # (n, 3)
    tds: np.ndarray      # (n, 3) tangent times length weight


@dataclass(eq=False)
class CoilSource:
    """Closed filament coil carrying ``turns * current`` amperes."""

    curve: NurbsPatch
    current: float = 1.0
    turns: int = 1
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.curve.dim != 1:
            raise ValueError("coil path must be a curve patch")
        if int(self.turns) != self.turns or self.turns < 0:
            raise ValueError("turns must be a nonnegative integer")
        self.arc = ArcLength(self.curve)
        ends, _ = self.curve.evaluate(np.array([[0.0], [1.0]]))
        gap = np.linalg.norm(ends[0] - ends[1])
        if gap >= 1e-12 * self.arc.length:
            raise ValueError(f"coil path is not closed (gap {gap:.3e} m)")

    @property
    def length(self) -> float:
        return self.arc.length

    @property
    def ampere_turns(self) -> float:
        return float(self.turns * self.current)

    def scaled(self, factor: float) -> CoilSource:
        out = CoilSource(self.curve, self.current * factor, self.turns)
        out._cache = self._cache  # geometry is shared
        return out

    def nodes(self, rule: KernelRule) -> QuadNodes:
        key = (rule.kind, rule.n_quad)
        if key not in self._cache:
            if rule.kind == "trapezoidal":
                u = equidistant_nodes(self, rule.n_quad)
                pts, jac = self.curve.evaluate(u[:, None])
                tan = jac[:, :, 0] / np.linalg.norm(jac[:, :, 0], axis=1, keepdims=True)
                tds = tan * (self.length / rule.n_quad)
            else:
                u, w = gauss_unit(rule.n_quad)
                pts, jac = self.curve.evaluate(u[:, None])
                tds = jac[:, :, 0] * w[:, None]
            self._cache[key] = QuadNodes(u, pts, tds)
        return self._cache[key]


def equidistant_nodes(source_or_curve, n: int) -> np.ndarray:
    """``n`` curve parameters whose arc-length positions are ``k L / n``."""
    if n < 2:
        raise ValueError("need at least two nodes")
    arc = source_or_curve.arc if isinstance(source_or_curve, CoilSource) else ArcLength(source_or_curve)
    targets = arc.length * np.arange(n) / n
    u = arc.invert(targets)
    u[0] = 0.0
    return u


# -- kernels --------------------------------------------------------------

_CHUNK = 1 << 21  # entries of the (points x nodes) distance table per block


def _kernel(source: CoilSource, rule: KernelRule, points, want_B: bool, counter=None, context="interface"):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nodes = source.nodes(rule)
    if counter is not None:
        counter.add(context, pts.shape[0])
    out = np.zeros((pts.shape[0], 3))
    if source.ampere_turns == 0.0 or pts.shape[0] == 0:
        _guard(source, pts, nodes)
        return out
    guard = 1e-9 * source.length
    step = max(1, _CHUNK // len(nodes.params))
    fac = MU0 * source.ampere_turns / (4 * np.pi)
    for s in range(0, pts.shape[0], step):
        r = pts[s:s + step, None, :] - nodes.points[None, :, :]
        d = np.sqrt(np.einsum("mnk,mnk->mn", r, r))
        if np.any(d <= guard):
            raise SingularityError("evaluation point lies on the coil")
        if want_B:
            tw = nodes.tds
            inv3 = 1.0 / d**3
            cx = tw[None, :, 1] * r[..., 2] - tw[None, :, 2] * r[..., 1]
            cy = tw[None, :, 2] * r[..., 0] - tw[None, :, 0] * r[..., 2]
            cz = tw[None, :, 0] * r[..., 1] - tw[None, :, 1] * r[..., 0]
            out[s:s + step, 0] = np.sum(cx * inv3, axis=1)
            out[s:s + step, 1] = np.sum(cy * inv3, axis=1)
            out[s:s + step, 2] = np.sum(cz * inv3, axis=1)
        else:
            out[s:s + step] = (1.0 / d) @ nodes.tds
    return fac * out


def _guard(source, pts, nodes):
    guard = 1e-9 * source.length
    for s in range(0, pts.shape[0], 4096):
        r = pts[s:s + 4096, None, :] - nodes.points[None, :, :]
        if np.any(np.linalg.norm(r, axis=2) <= guard):
            raise SingularityError("evaluation point lies on the coil")


def eval_A_s(source: CoilSource, rule: KernelRule, points, counter=None, context="interface") -> np.ndarray:
    """Source vector potential at ``points`` (T m).  The phasor is real-valued."""
    return _kernel(source, rule, points, False, counter, context)


def eval_B_s(source: CoilSource, rule: KernelRule, points, counter=None, context="interface") -> np.ndarray:
    """Source flux density at ``points`` (T) from the standard Biot-Savart kernel."""
    return _kernel(source, rule, points, True, counter, context)


# -- circular loop oracle ---------------------------------------------------

def _agm_KE_combo(m: np.ndarray, tol: float = 1e-14):
    """K(m), E(m) and (2 - m) K - 2 E without cancellation (m = k^2)."""
    a = np.ones_like(m)
    b = np.sqrt(1.0 - m)
    c = 0.5 * m / (1.0 + b)  # c_1 = (a0 - b0) / 2 computed stably
    a, b = 0.5 * (a + b), np.sqrt(a * b)
    total = 2.0 * c**2
    power = 2.0
    for _ in range(60):
        a, b = 0.5 * (a + b), np.sqrt(a * b)
        c = 0.25 * c**2 / a  # c_{n+1} = c_n^2 / (4 a_{n+1})
        power *= 2.0
        term = power * c**2
        total = total + term
        if np.all(term <= tol * np.maximum(total, 1e-300)):
            break
    K = np.pi / (2.0 * a)
    # E = K (1 - m/2 - sum_{n>=1} 2^(n-1) c_n^2) ; (2-m)K - 2E = K * sum_{n>=1} 2^n c_n^2
    combo = K * total
    E = 0.5 * ((2.0 - m) * K - combo)
    return K, E, combo


def ellipke(m):
    """Complete elliptic integrals K(m) and E(m), parameter m = k^2 in [0, 1)."""
    m = np.asarray(m, dtype=float)
    K, E, _ = _agm_KE_combo(np.atleast_1d(m))
    return K.reshape(m.shape), E.reshape(m.shape)


def analytical_loop_A(radius: float, NI: float, points, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Vector potential of a circular loop in the plane ``z = center_z`` (Cartesian, T m)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(center, dtype=float)
    x, y, z = pts.T
    rho = np.hypot(x, y)
    a = float(radius)
    denom = (a + rho) ** 2 + z**2
    m = 4 * a * rho / denom
    if np.any(m >= 1.0 - 1e-15):
        raise SingularityError("point lies on the loop")
    _, _, combo = _agm_KE_combo(m)
    with np.errstate(invalid="ignore", divide="ignore"):
        a_phi = MU0 * NI * a / np.pi * combo / (m * np.sqrt(denom))
    # small-argument series: combo ~ (pi/2) * m^2 / 8 (1 + ...) -> use it near the axis
    small = m < 1e-8
    a_phi = np.where(small, MU0 * NI * a / np.pi * (np.pi / 16) * m / np.sqrt(denom), a_phi)
    a_phi = np.where(rho == 0.0, 0.0, a_phi)
    with np.errstate(invalid="ignore", divide="ignore"):
        cx = np.where(rho > 0, -y / np.where(rho > 0, rho, 1.0), 0.0)
        cy = np.where(rho > 0, x / np.where(rho > 0, rho, 1.0), 0.0)
    return np.stack([a_phi * cx, a_phi * cy, np.zeros_like(a_phi)], axis=1)


def circular_coil(radius: float, current: float, turns: int = 1, z: float = 0.0) -> CoilSource:
    return CoilSource(circle_curve(radius, z), current, turns)


# -- helix ------------------------------------------------------------------

def build_helicoidal_coil(radius: float, pitch: float, turns: int, current: float = 1.0, *,
                          close: str = "axial", center_z: float = 0.0, points_per_turn: int = 96) -> CoilSource:
    """Cubic spline through a helix of ``turns`` windings, closed by a straight return wire.

    The helix is centred at ``z = center_z``; the return wire runs parallel to
    the axis at the start/end angle.  The source carries ``current`` (the
    windings are geometric, so ``turns`` of the returned source is 1).
    """
    if turns < 1:
        raise ValueError("helix needs at least one turn")
    if close != "axial":
        raise ValueError("only the axial return closure is implemented")
    n = int(points_per_turn * turns)
    theta = np.linspace(0.0, 2 * np.pi * turns, n + 1)
    z0 = center_z - 0.5 * pitch * turns
    xyz = np.stack([radius * np.cos(theta), radius * np.sin(theta), z0 + pitch * theta / (2 * np.pi)], axis=1)
    t = theta / theta[-1]
    spl = make_interp_spline(t, xyz, k=3, bc_type="periodic" if pitch == 0.0 else None)
    knots, coefs = np.asarray(spl.t), np.asarray(spl.c)
    if pitch == 0.0:
        # periodic spline: restrict to an open knot vector on [0, 1] via knot insertion
        inner = np.unique(knots[(knots > 0) & (knots < 1)])
        kv = KnotVector(np.concatenate([[0.0] * 4, inner, [1.0] * 4]), 3)
        coefs = _clamp_periodic(spl, kv)
        coefs[-1] = coefs[0]
        return CoilSource(NurbsPatch((kv,), coefs), current, 1)
    helix_len = turns * np.hypot(2 * np.pi * radius, pitch)
    ret_len = abs(pitch * turns)
    frac = helix_len / (helix_len + ret_len)
    kin = knots * frac
    # Bezier cubic return segment on [frac, 1]
    p_end, p_start = coefs[-1], coefs[0]
    seg = np.array([p_end + (p_start - p_end) * k / 3.0 for k in range(1, 4)])
    seg[-1] = p_start
    all_knots = np.concatenate([kin[:-1], [1.0] * 4])
    kv = KnotVector(all_knots, 3)
    cp = np.concatenate([coefs, seg])
    return CoilSource(NurbsPatch((kv,), cp), current, 1)


def _clamp_periodic(spl, kv: KnotVector) -> np.ndarray:
    """Control points on an open knot vector reproducing a periodic cubic on [0, 1]."""
    g = kv.greville()
    A = kv.collocation(g)[0]
    return np.linalg.solve(A, spl(g))


# -- quadrature study -----------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRow:
    rule: str
    n_quad: int
    l2_error: float


def volume_rule(domain, patches, subdivisions: int = 3, order: int = 8):
    """Points and weights of a composite Gauss rule over the given patches."""
    from .quadrature import gauss_on_breaks

    pts_all, w_all = [], []
    for i in patches:
        axes = []
        for d in range(3):
            n = subdivisions * domain.divisions[i][d]
            x, w = gauss_on_breaks(np.linspace(0.0, 1.0, n + 1), order)
            axes.append((x.ravel(), w.ravel()))
        pts, jac = domain.patches[i].evaluate_grid([a[0] for a in axes])
        w = np.einsum("i,j,k->ijk", axes[0][1], axes[1][1], axes[2][1])
        det = np.abs(np.linalg.det(jac.reshape(-1, 3, 3)))
        pts_all.append(pts.reshape(-1, 3))
        w_all.append(w.ravel() * det)
    return np.concatenate(pts_all), np.concatenate(w_all)


def quadrature_study(source: CoilSource, radius: float, points: np.ndarray, weights: np.ndarray,
                     kinds=("trapezoidal", "gauss"), ns=(2, 4, 8, 16, 32, 64, 128), center=(0.0, 0.0, 0.0),
                     relative: bool = True) -> list[QuadratureRow]:
    """L2 error of the quadrature source potential against the circular-loop oracle."""
    exact = analytical_loop_A(radius, source.ampere_turns, points, center)
    norm = np.sqrt(np.sum(weights * np.sum(exact**2, axis=1))) if relative else 1.0
    rows = []
    for kind in kinds:
        for n in ns:
            A = eval_A_s(source, KernelRule(kind, int(n)), points)
            err = np.sqrt(np.sum(weights * np.sum((A - exact) ** 2, axis=1)))
            rows.append(QuadratureRow(kind, int(n), float(err / norm)))
    return rows
