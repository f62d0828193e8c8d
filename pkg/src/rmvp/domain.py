"""Multipatch domains: materials, interfaces, the separating surface and point location."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .splines import KnotVector, NurbsPatch

MU0 = 4e-7 * np.pi

INTERIOR_LABELS = ("conductor", "air_int")


class DomainError(ValueError):
    pass


class GammaNotClosedError(DomainError):
    pass


class LocateError(RuntimeError):
    """Newton iteration for the inverse map did not converge."""


@dataclass(frozen=True)
class FrequencySettings:
    omega: float = 0.0
    sign: int = -1

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("angular frequency must be nonnegative")
        if self.sign not in (-1, 1):
            raise ValueError("time-convention sign must be +1 or -1")

    @classmethod
    def from_hz(cls, f: float, sign: int = -1) -> FrequencySettings:
        return cls(2 * np.pi * f, sign)


@dataclass(frozen=True)
class Region:
    patches: tuple[int, ...]
    mu: float
    sigma: float
    label: str

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("permeability must be positive")
        if self.sigma < 0:
            raise ValueError("conductivity must be nonnegative")


@dataclass(frozen=True)
class Face:
    """Face ``xi[direction] = side`` of a patch."""

    patch: int
    direction: int
    side: int

    @property
    def tangential(self) -> tuple[int, int]:
        a, b = (d for d in range(3) if d != self.direction)
        return a, b

    def embed(self, uv: np.ndarray) -> np.ndarray:
        """Face parameters ``(N, 2)`` to patch reference coordinates ``(N, 3)``."""
        uv = np.atleast_2d(uv)
        out = np.empty((uv.shape[0], 3))
        a, b = self.tangential
        out[:, a] = uv[:, 0]
        out[:, b] = uv[:, 1]
        out[:, self.direction] = float(self.side)
        return out


@dataclass(frozen=True)
class FaceMap:
    """Orientation map between the parameters of two matching faces."""

    swap: bool
    flip_u: bool
    flip_v: bool

    def __call__(self, uv: np.ndarray) -> np.ndarray:
        uv = np.atleast_2d(uv).copy()
        if self.flip_u:
            uv[:, 0] = 1 - uv[:, 0]
        if self.flip_v:
            uv[:, 1] = 1 - uv[:, 1]
        return uv[:, ::-1].copy() if self.swap else uv


@dataclass(frozen=True)
class Interface:
    first: Face
    second: Face
    mapping: FaceMap  # first-face parameters -> second-face parameters


@dataclass(frozen=True)
class GammaFace:
    """A face of the separating surface, seen from the interior patch."""

    interior: Face
    exterior: Face
    mapping: FaceMap  # interior-face parameters -> exterior-face parameters


def _corners(patch: NurbsPatch, face: Face) -> np.ndarray:
    uv = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    pts, _ = patch.evaluate(face.embed(uv))
    return pts


def _find_face_map(ca: np.ndarray, cb: np.ndarray, tol: float) -> FaceMap | None:
    uv = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    for swap, fu, fv in product((False, True), repeat=3):
        m = FaceMap(swap, fu, fv)
        target = m(uv)
        idx = (target[:, 0] + 2 * target[:, 1]).astype(int)
        if np.all(np.linalg.norm(ca - cb[idx], axis=1) <= tol):
            return m
    return None


@dataclass(eq=False)
class MultipatchDomain:
    """Conforming 3D multipatch domain.

    ``labels[i]`` is one of ``conductor``, ``air_int`` (inside the separating
    surface) or ``ext``.  ``divisions[i]`` holds the base number of elements per
    reference direction used by the discrete spaces; ``natural_planes`` lists
    symmetry planes ``(axis, value)`` carrying natural boundary conditions.
    """

    patches: list[NurbsPatch]
    labels: list[str]
    divisions: list[tuple[int, int, int]]
    mu: dict[str, float] = field(default_factory=lambda: {"conductor": MU0, "air_int": MU0, "ext": MU0})
    sigma: dict[str, float] = field(default_factory=lambda: {"conductor": 0.0, "air_int": 0.0, "ext": 0.0})
    natural_planes: tuple[tuple[int, float], ...] = ()
    symmetry_planes: tuple[tuple[int, float], ...] = ()
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.labels) != len(self.patches) or len(self.divisions) != len(self.patches):
            raise DomainError("labels/divisions must match the patch list")
        for lab in self.labels:
            if lab not in ("conductor", "air_int", "ext"):
                raise DomainError(f"unknown region label {lab!r}")
        for p in self.patches:
            if p.dim != 3:
                raise DomainError("domain patches must be trivariate")
        lo = np.min([p.bounding_box()[0] for p in self.patches], axis=0)
        hi = np.max([p.bounding_box()[1] for p in self.patches], axis=0)
        self.diameter = float(np.linalg.norm(hi - lo))
        self.bbox = (lo, hi)
        self._detect_interfaces()
        self._grid_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- topology ---------------------------------------------------------
    def _detect_interfaces(self):
        tol = 1e-9 * self.diameter
        faces = [Face(i, d, s) for i in range(len(self.patches)) for d in range(3) for s in (0, 1)]
        corners = {f: _corners(self.patches[f.patch], f) for f in faces}
        centroid_key = {}
        for f in faces:
            c = corners[f].mean(axis=0)
            key = tuple(np.round(c / (1e3 * tol)).astype(np.int64))
            centroid_key.setdefault(key, []).append(f)
        matched: set[Face] = set()
        interfaces: list[Interface] = []
        for f in faces:
            if f in matched:
                continue
            c = corners[f].mean(axis=0)
            key = tuple(np.round(c / (1e3 * tol)).astype(np.int64))
            cands = []
            for dk in product((-1, 0, 1), repeat=3):
                cands += centroid_key.get(tuple(k + d for k, d in zip(key, dk)), [])
            for g in cands:
                if g == f or g in matched or g.patch == f.patch:
                    continue
                m = _find_face_map(corners[f], corners[g], tol)
                if m is not None:
                    interfaces.append(Interface(f, g, m))
                    matched.update((f, g))
                    break
        self.interfaces = interfaces
        self.boundary_faces = [f for f in faces if f not in matched]
        self._corner_cache = corners

    def patches_with(self, *labels: str) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab in labels]

    @property
    def symmetry_factor(self) -> int:
        """Copies of the modelled part that make up the full configuration."""
        return 2 ** len(self.symmetry_planes)

    @property
    def interior_patches(self) -> list[int]:
        return self.patches_with(*INTERIOR_LABELS)

    @property
    def exterior_patches(self) -> list[int]:
        return self.patches_with("ext")

    @property
    def regions(self) -> list[Region]:
        out = []
        for lab in ("conductor", "air_int", "ext"):
            ids = tuple(self.patches_with(lab))
            if ids:
                out.append(Region(ids, self.mu[lab], self.sigma[lab], lab))
        return out

    def nu_of(self, patch: int) -> float:
        return 1.0 / self.mu[self.labels[patch]]

    def sigma_of(self, patch: int) -> float:
        return self.sigma[self.labels[patch]]

    def face_on_plane(self, face: Face, planes) -> bool:
        c = self._corner_cache[face]
        tol = 1e-9 * self.diameter
        return any(np.all(np.abs(c[:, ax] - val) <= tol) for ax, val in planes)

    def boundary_kind(self, face: Face) -> str:
        """``natural`` on symmetry planes with natural conditions, ``dirichlet`` elsewhere."""
        return "natural" if self.face_on_plane(face, self.natural_planes) else "dirichlet"

    def check_conformity(self, n_points: int = 100, seed: int = 0) -> float:
        """Largest mismatch of the two patch maps over all interfaces at random face points."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for itf in self.interfaces:
            uv = rng.random((n_points, 2))
            pa, _ = self.patches[itf.first.patch].evaluate(itf.first.embed(uv))
            pb, _ = self.patches[itf.second.patch].evaluate(itf.second.embed(itf.mapping(uv)))
            worst = max(worst, float(np.max(np.linalg.norm(pa - pb, axis=1))))
        return worst

    # -- point location ----------------------------------------------------
    def _sample_grid(self, i: int):
        if i not in self._grid_cache:
            s = np.linspace(0, 1, 7)
            pts, _ = self.patches[i].evaluate_grid([s, s, s])
            ref = np.stack(np.meshgrid(s, s, s, indexing="ij"), axis=-1)
            self._grid_cache[i] = (pts.reshape(-1, 3), ref.reshape(-1, 3))
        return self._grid_cache[i]

    def _invert(self, i: int, x: np.ndarray, max_iter: int = 60):
        patch = self.patches[i]
        pts, ref = self._sample_grid(i)
        xi = ref[np.argmin(np.linalg.norm(pts - x, axis=1))].copy()
        tol = 1e-10 * self.diameter
        f, J = patch.evaluate(xi[None])
        r = f[0] - x
        for _ in range(max_iter):
            res = np.linalg.norm(r)
            if res < tol:
                return xi, res
            try:
                step = np.linalg.solve(J[0], r)
            except np.linalg.LinAlgError:
                break
            t = 1.0
            while t > 1e-4:
                trial = np.clip(xi - t * step, 0.0, 1.0)
                f2, J2 = patch.evaluate(trial[None])
                r2 = f2[0] - x
                if np.linalg.norm(r2) < res:
                    xi, r, J = trial, r2, J2
                    break
                t *= 0.5
            else:
                break
        return xi, float(np.linalg.norm(r))

    def locate(self, point) -> tuple[int, np.ndarray] | None:
        """Patch id and reference coordinates of ``point``, or ``None`` if outside.

        Points on shared faces go to the lowest patch id.
        """
        x = np.asarray(point, dtype=float)
        lo, hi = self.bbox
        tol = 1e-9 * self.diameter
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            return None
        stuck = []
        for i, patch in enumerate(self.patches):
            blo, bhi = patch.bounding_box()
            if np.any(x < blo - tol) or np.any(x > bhi + tol):
                continue
            xi, res = self._invert(i, x)
            if res < 1e-10 * self.diameter:
                return i, xi
            interior = np.all((xi > 1e-6) & (xi < 1 - 1e-6))
            if interior:
                stuck.append(i)
        if stuck:
            raise LocateError(f"Newton did not converge for point {x.tolist()} in patches {stuck}")
        return None

    # -- separating surface -----------------------------------------------
    def interface_faces(self) -> list[GammaFace]:
        """Faces of the separating surface oriented from the interior into the exterior."""
        interior = set(self.interior_patches)
        out = []
        for itf in self.interfaces:
            a, b = itf.first, itf.second
            if (a.patch in interior) == (b.patch in interior):
                continue
            if a.patch in interior:
                out.append(GammaFace(a, b, itf.mapping))
            else:
                inv = _find_face_map(self._corner_cache[b], self._corner_cache[a], 1e-9 * self.diameter)
                out.append(GammaFace(b, a, inv))
        out.sort(key=lambda g: (g.interior.patch, g.interior.direction, g.interior.side))
        check_gamma_closed(self, out)
        return out


def check_gamma_closed(domain: MultipatchDomain, faces: list[GammaFace]) -> None:
    """Every face edge must be shared by two faces, except edges on symmetry planes."""
    if not faces:
        raise GammaNotClosedError("separating surface is empty")
    tol = 1e-6 * domain.diameter
    count: dict[tuple, int] = {}
    on_plane: dict[tuple, bool] = {}
    for gf in faces:
        c = domain._corner_cache[gf.interior]
        for i, j in ((0, 1), (2, 3), (0, 2), (1, 3)):
            mid = 0.5 * (c[i] + c[j])
            key = tuple(np.round(mid / tol).astype(np.int64)) + tuple(
                np.round(np.sort([np.linalg.norm(c[i] - c[j])]) / tol).astype(np.int64)
            )
            count[key] = count.get(key, 0) + 1
            on_plane[key] = any(
                abs(c[i][ax] - v) <= tol and abs(c[j][ax] - v) <= tol for ax, v in domain.symmetry_planes
            )
    bad = [k for k, n in count.items() if n != 2 and not on_plane[k]]
    if bad:
        raise GammaNotClosedError(f"separating surface is not closed ({len(bad)} open edges)")


# -- builders --------------------------------------------------------------

def _arc(radius: float, a0: float, a1: float):
    half = 0.5 * (a1 - a0)
    am = 0.5 * (a0 + a1)
    mid = radius / np.cos(half)
    pts = np.array([[radius * np.cos(a0), radius * np.sin(a0)], [mid * np.cos(am), mid * np.sin(am)], [radius * np.cos(a1), radius * np.sin(a1)]])
    return pts, np.array([1.0, np.cos(half), 1.0])


def _segment(p0, p1):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    return np.array([p0, 0.5 * (p0 + p1), p1]), np.ones(3)


def _square_segment(half: float, a0: float, a1: float):
    """Part of the square boundary between the rays at angles a0 < a1 (multiples of 45 degrees)."""
    def corner(a):
        c, s = np.cos(a), np.sin(a)
        m = max(abs(c), abs(s))
        return half * np.array([c, s]) / m
    return _segment(corner(a0), corner(a1))


def _extrude(cs_pts: np.ndarray, cs_w: np.ndarray, kv1: KnotVector, kv2: KnotVector, z0: float, z1: float) -> NurbsPatch:
    n1, n2 = cs_w.shape
    cp = np.zeros((n1, n2, 2, 3))
    cp[..., :2] = cs_pts[:, :, None, :]
    cp[:, :, 0, 2] = z0
    cp[:, :, 1, 2] = z1
    w = np.repeat(cs_w[:, :, None], 2, axis=2)
    return NurbsPatch((kv1, kv2, KnotVector([0, 0, 1, 1], 1)), cp, w)


QUAD = KnotVector([0, 0, 0, 1, 1, 1], 2)
LIN = KnotVector([0, 0, 1, 1], 1)


def build_cylinder_in_box(
    r_cyl: float,
    h_cyl: float,
    r_interface: float,
    box_half_width: float,
    *,
    gamma_half_height: float | None = None,
    box_half_height: float | None = None,
    gamma_shape: str = "cylinder",
    symmetry: str = "none",
    sigma: float = 0.0,
    mu_r: float = 1.0,
    inner_square: float = 0.5,
    divisions: dict | None = None,
) -> MultipatchDomain:
    """Conducting cylinder inside a separating shell inside a box.

    The cross-section is a five-patch disk (centre square plus four sectors)
    with three rings around it: cylinder, interface shell and outer box.  With
    ``symmetry='octant'`` only ``x, y, z >= 0`` is built; ``x = 0`` and
    ``y = 0`` then carry zero tangential trace and ``z = 0`` a natural condition.
    ``r_interface`` is the shell radius (or half-width for ``gamma_shape='box'``).
    """
    if gamma_half_height is None:
        gamma_half_height = 0.5 * h_cyl + (r_interface - r_cyl)
    if box_half_height is None:
        box_half_height = gamma_half_height + (box_half_width - r_interface)
    if not 0 < r_cyl < r_interface < box_half_width:
        raise DomainError("require 0 < r_cyl < r_interface < box_half_width")
    if not 0 < 0.5 * h_cyl < gamma_half_height < box_half_height:
        raise DomainError("require h_cyl/2 < gamma_half_height < box_half_height")
    if gamma_shape not in ("cylinder", "box"):
        raise DomainError("gamma_shape must be 'cylinder' or 'box'")
    if symmetry not in ("none", "octant"):
        raise DomainError("symmetry must be 'none' or 'octant'")
    div = {"angular": 1, "radial": (1, 1, 1), "axial": (1, 1, 1)}
    if divisions:
        div.update(divisions)
    n_ang = int(div["angular"])
    n_rad = tuple(int(x) for x in div["radial"])
    n_ax = tuple(int(x) for x in div["axial"])  # conductor, gap, outer
    if len(n_rad) != 3 or len(n_ax) != 3:
        raise DomainError("radial and axial divisions need three entries")
    s = inner_square * r_cyl * np.cos(np.pi / 4)

    if symmetry == "none":
        sectors = [(-np.pi / 4 + q * np.pi / 2, np.pi / 4 + q * np.pi / 2) for q in range(4)]
        zs = [-box_half_height, -gamma_half_height, -0.5 * h_cyl, 0.5 * h_cyl, gamma_half_height, box_half_height]
        layer_kind = ["outer", "gap", "cond", "gap", "outer"]
        sq_lo = -s
    else:
        sectors = [(0.0, np.pi / 4), (np.pi / 4, np.pi / 2)]
        zs = [0.0, 0.5 * h_cyl, gamma_half_height, box_half_height]
        layer_kind = ["cond", "gap", "outer"]
        sq_lo = 0.0

    # radial curve levels: 0 inner square, 1 cylinder, 2 interface, 3 box
    def level_curve(level, a0, a1):
        if level == 0:
            return _square_segment(s, a0, a1)
        if level == 1:
            return _arc(r_cyl, a0, a1)
        if level == 2:
            return _arc(r_interface, a0, a1) if gamma_shape == "cylinder" else _square_segment(r_interface, a0, a1)
        return _square_segment(box_half_width, a0, a1)

    curve = level_curve

    cross = []  # (pts (n1, n2, 2), weights, kv1, kv2, ring index, (div1, div2))
    xs = np.array([sq_lo, 0.5 * (sq_lo + s), s])
    sq_pts = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1)
    cross.append((sq_pts, np.ones((3, 3)), QUAD, QUAD, 0, (n_ang, n_ang)))
    for ring in range(3):
        for a0, a1 in sectors:
            pin, win = curve(ring, a0, a1)
            pout, wout = curve(ring + 1, a0, a1)
            pts = np.stack([pin, pout], axis=0)
            w = np.stack([win, wout], axis=0)
            cross.append((pts, w, LIN, QUAD, ring + 1, (n_rad[ring], n_ang)))

    patches, labels, divisions_out = [], [], []
    for li, kind in enumerate(layer_kind):
        z0, z1 = zs[li], zs[li + 1]
        nz = {"cond": n_ax[0], "gap": n_ax[1], "outer": n_ax[2]}[kind]
        for pts, w, kv1, kv2, ring, (d1, d2) in cross:
            patches.append(_extrude(pts, w, kv1, kv2, z0, z1))
            divisions_out.append((d1, d2, nz))
            if kind == "outer" or ring == 3:
                labels.append("ext")
            elif kind == "cond" and ring <= 1:
                labels.append("conductor")
            else:
                labels.append("air_int")

    mu_c = MU0 * mu_r
    natural = ((2, 0.0),) if symmetry == "octant" else ()
    sym = ((0, 0.0), (1, 0.0), (2, 0.0)) if symmetry == "octant" else ()
    return MultipatchDomain(
        patches,
        labels,
        divisions_out,
        mu={"conductor": mu_c, "air_int": MU0, "ext": MU0},
        sigma={"conductor": float(sigma), "air_int": 0.0, "ext": 0.0},
        natural_planes=natural,
        symmetry_planes=sym,
        description=dict(
            r_cyl=r_cyl,
            h_cyl=h_cyl,
            r_interface=r_interface,
            box_half_width=box_half_width,
            gamma_half_height=gamma_half_height,
            box_half_height=box_half_height,
            gamma_shape=gamma_shape,
            symmetry=symmetry,
            sigma=sigma,
            mu_r=mu_r,
        ),
    )


def unit_cube_domain(n: int = 1, label: str = "conductor", sigma: float = 0.0) -> MultipatchDomain:
    """Single-patch identity map of the unit cube (testing helper)."""
    return box_domain([(0.0, 1.0)] * 3, label=label, sigma=sigma, divisions=(n, n, n))


def box_domain(extents, label: str = "conductor", sigma: float = 0.0, divisions=(1, 1, 1), splits: int = 1,
               split_axis: int = 0) -> MultipatchDomain:
    """Axis-aligned box as one patch or ``splits`` patches along ``split_axis``."""
    (x0, x1), (y0, y1), (z0, z1) = extents
    edges = np.linspace([x0, y0, z0][split_axis], [x1, y1, z1][split_axis], splits + 1)
    patches = []
    for k in range(splits):
        lo = [x0, y0, z0]
        hi = [x1, y1, z1]
        lo[split_axis], hi[split_axis] = edges[k], edges[k + 1]
        g = np.stack(np.meshgrid(*[np.array([lo[d], hi[d]]) for d in range(3)], indexing="ij"), axis=-1)
        patches.append(NurbsPatch((LIN, LIN, LIN), g))
    return MultipatchDomain(patches, [label] * splits, [tuple(divisions)] * splits,
                            sigma={"conductor": sigma, "air_int": 0.0, "ext": 0.0})
