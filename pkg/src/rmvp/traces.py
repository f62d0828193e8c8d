"""Quadrature on the separating surface, tangential traces and surface projections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .domain import GammaFace, MultipatchDomain
from .linalg import Factorization
from .quadrature import gauss_on_breaks
from .spaces import CurlSpace, covariant, curl_map


@dataclass
class FaceRule:
    face: GammaFace
    uv: np.ndarray        # (N, 2) interior-face parameters
    ref_int: np.ndarray   # (N, 3) interior patch reference coordinates
    ref_ext: np.ndarray   # (N, 3) exterior patch reference coordinates
    points: np.ndarray    # (N, 3)
    normals: np.ndarray   # (N, 3) unit normals from interior to exterior
    weights: np.ndarray   # (N,) including the surface measure
    n_elements: int


@dataclass
class GammaRule:
    faces: list[FaceRule]

    @property
    def points(self) -> np.ndarray:
        return np.concatenate([f.points for f in self.faces])

    @property
    def normals(self) -> np.ndarray:
        return np.concatenate([f.normals for f in self.faces])

    @property
    def weights(self) -> np.ndarray:
        return np.concatenate([f.weights for f in self.faces])

    @property
    def n_points(self) -> int:
        return int(sum(f.weights.size for f in self.faces))

    @property
    def n_elements(self) -> int:
        return int(sum(f.n_elements for f in self.faces))

    def split(self, values: np.ndarray) -> list[np.ndarray]:
        out, pos = [], 0
        for f in self.faces:
            n = f.weights.size
            out.append(values[pos:pos + n])
            pos += n
        return out


def gamma_rule(domain: MultipatchDomain, level: int, nq: int, faces=None) -> GammaRule:
    """Composite Gauss rule with ``nq`` points per direction on every surface element."""
    faces = domain.interface_faces() if faces is None else faces
    rules = []
    for gf in faces:
        fi = gf.interior
        a, b = fi.tangential
        div = domain.divisions[fi.patch]
        na, nb = level * div[a], level * div[b]
        xa, wa = gauss_on_breaks(np.linspace(0, 1, na + 1), nq)
        xb, wb = gauss_on_breaks(np.linspace(0, 1, nb + 1), nq)
        U, V = np.meshgrid(xa.ravel(), xb.ravel(), indexing="ij")
        W = np.outer(wa.ravel(), wb.ravel())
        uv = np.stack([U.ravel(), V.ravel()], axis=1)
        ref_int = fi.embed(uv)
        ref_ext = gf.exterior.embed(gf.mapping(uv))
        pts, jac = domain.patches[fi.patch].evaluate(ref_int)
        ta, tb = jac[:, :, a], jac[:, :, b]
        nrm = np.cross(ta, tb)
        area = np.linalg.norm(nrm, axis=1)
        nrm = nrm / area[:, None]
        outward = jac[:, :, fi.direction] * (1.0 if fi.side == 1 else -1.0)
        flip = np.sign(np.einsum("nk,nk->n", nrm, outward))
        nrm = nrm * flip[:, None]
        rules.append(FaceRule(gf, uv, ref_int, ref_ext, pts, nrm, W.ravel() * area, na * nb))
    return GammaRule(rules)


def tangential(v: np.ndarray, n: np.ndarray) -> np.ndarray:
    return v - np.einsum("nk,nk->n", v, n)[:, None] * n


def _side(fr: FaceRule, side: str):
    if side == "interior":
        return fr.face.interior.patch, fr.ref_int
    if side == "exterior":
        return fr.face.exterior.patch, fr.ref_ext
    raise ValueError("side must be 'interior' or 'exterior'")


def _default_side(space: CurlSpace, fr: FaceRule) -> str:
    return "interior" if fr.face.interior.patch in space.dofs else "exterior"


def field_on_gamma(space: CurlSpace, coeffs, rule: GammaRule, side: str | None = None):
    """Field and curl values of a space function at the surface points."""
    A, C = [], []
    for fr in rule.faces:
        s = side or _default_side(space, fr)
        i, ref = _side(fr, s)
        a, c = space.evaluate(i, ref, coeffs)
        A.append(a)
        C.append(c)
    return np.concatenate(A), np.concatenate(C)


def dirichlet_trace(space: CurlSpace, coeffs, rule: GammaRule, side: str | None = None) -> np.ndarray:
    """``u x n`` at the surface points."""
    A, _ = field_on_gamma(space, coeffs, rule, side)
    return np.cross(A, rule.normals)


def neumann_trace(space: CurlSpace, coeffs, rule: GammaRule, side: str | None = None, nu=None) -> np.ndarray:
    """``(nu curl u) x n`` at the surface points (one-sided)."""
    out = []
    for fr in rule.faces:
        s = side or _default_side(space, fr)
        i, ref = _side(fr, s)
        _, c = space.evaluate(i, ref, coeffs)
        nu_i = space.domain.nu_of(i) if nu is None else nu
        out.append(np.cross(nu_i * c, fr.normals))
    return np.concatenate(out)


def _face_basis(space: CurlSpace, fr: FaceRule, side: str):
    i, ref = _side(fr, side)
    gid, sign, val, _ = space.local_basis(i, ref, want_curls=False)
    _, jac = space.domain.patches[i].evaluate(ref)
    phys = np.linalg.solve(np.transpose(jac, (0, 2, 1))[:, None], val[..., None])[..., 0]
    return gid, sign, phys * sign[..., None]


def surface_load(space: CurlSpace, rule: GammaRule, values: np.ndarray, side: str | None = None) -> np.ndarray:
    """``f_i = sum_q w_q values_q . b_i(x_q)`` over the surface points."""
    out = np.zeros(space.n_edges, dtype=np.result_type(values.dtype, np.float64))
    for fr, val in zip(rule.faces, rule.split(values)):
        s = side or _default_side(space, fr)
        gid, _, phys = _face_basis(space, fr, s)
        contrib = np.einsum("nlk,nk->nl", phys, val) * fr.weights[:, None]
        np.add.at(out, gid.ravel(), contrib.ravel())
    return out


def surface_mass(space: CurlSpace, rule: GammaRule, side: str | None = None) -> sp.csr_matrix:
    """``M_ij = int_Gamma (b_i)_t . (b_j)_t`` on the full dof range of ``space``."""
    rows, cols, vals = [], [], []
    for fr in rule.faces:
        s = side or _default_side(space, fr)
        gid, _, phys = _face_basis(space, fr, s)
        n = fr.normals
        phys_t = phys - np.einsum("nlk,nk->nl", phys, n)[..., None] * n[:, None, :]
        # group points by identical local dof sets (one surface element each)
        order = np.lexsort(gid.T[::-1])
        g_sorted = gid[order]
        brk = np.concatenate([[0], np.flatnonzero(np.any(np.diff(g_sorted, axis=0) != 0, axis=1)) + 1, [gid.shape[0]]])
        for a, b in zip(brk[:-1], brk[1:]):
            idx = order[a:b]
            F = phys_t[idx] * np.sqrt(fr.weights[idx])[:, None, None]
            Me = np.einsum("nlk,nmk->lm", F, F)
            g = gid[idx[0]]
            rows.append(np.repeat(g, g.size))
            cols.append(np.tile(g, g.size))
            vals.append(Me.ravel())
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(space.n_edges, space.n_edges))
    M.sum_duplicates()
    return M


def l2_project_surface(space: CurlSpace, rule: GammaRule, values: np.ndarray, dofs: np.ndarray,
                       side: str | None = None, rtol: float = 1e-12) -> np.ndarray:
    """Coefficients on ``dofs`` of the surface L2 projection of tangential ``values``.

    Other dofs are treated as zero.  Returns a full-length coefficient vector.
    """
    dofs = np.asarray(dofs, dtype=int)
    out = np.zeros(space.n_edges, dtype=np.result_type(values.dtype, np.float64))
    if dofs.size == 0:
        return out
    vt = tangential(values, rule.normals)
    M = surface_mass(space, rule, side)[dofs][:, dofs]
    f = surface_load(space, rule, vt, side)[dofs]
    if np.linalg.norm(f) == 0:
        return out
    fac = Factorization(M, rtol=rtol)
    out[dofs] = fac.solve(f)
    fac.free()
    return out


class TraceSpace:
    """Tangential trace space of a volume space on the separating surface."""

    def __init__(self, space: CurlSpace, rule: GammaRule, side: str | None = None):
        self.space = space
        self.rule = rule
        self.side = side
        faces = []
        for fr in rule.faces:
            s = side or _default_side(space, fr)
            faces.append(fr.face.interior if s == "interior" else fr.face.exterior)
        self.dofs = space.edges_on_faces(faces)
        n = self.dofs.size
        self.restriction = sp.csr_matrix((np.ones(n), (np.arange(n), self.dofs)), shape=(n, space.n_edges))

    @property
    def dim(self) -> int:
        return int(self.dofs.size)

    def restrict(self, coeffs) -> np.ndarray:
        return self.restriction @ np.asarray(coeffs)

    def extend(self, trace_coeffs) -> np.ndarray:
        return self.restriction.T @ np.asarray(trace_coeffs)

    def evaluate(self, trace_coeffs) -> np.ndarray:
        """``u x n`` at the surface points of the extension by zero."""
        return dirichlet_trace(self.space, self.extend(trace_coeffs), self.rule, self.side)

    def mass(self) -> sp.csr_matrix:
        M = surface_mass(self.space, self.rule, self.side)
        return (self.restriction @ M @ self.restriction.T).tocsr()


# -- reduced-degree surface space for the trace-mismatch experiment -----------------

def project_reduced_degree(rule: GammaRule, domain: MultipatchDomain, level: int, values: np.ndarray,
                           degree: int) -> np.ndarray:
    """Facewise L2 projection of tangential ``values`` onto a degree-``degree`` div-type surface space.

    On each face the space has reference components of degrees
    ``(degree, degree - 1)`` and ``(degree - 1, degree)`` (maximal smoothness
    inside the face, discontinuous across faces) and is mapped with the
    contravariant surface Piola transform.  Returns projected values at the
    surface points.
    """
    from .splines import KnotVector
    from .spaces import dir_eval

    if degree < 1:
        raise ValueError("reduced surface degree must be at least 1")
    out = np.zeros_like(values)
    for k, (fr, val) in enumerate(zip(rule.faces, rule.split(values))):
        fi = fr.face.interior
        a, b = fi.tangential
        div = domain.divisions[fi.patch]
        kva = KnotVector.uniform(level * div[a], degree)
        kvb = KnotVector.uniform(level * div[b], degree)
        _, jac = domain.patches[fi.patch].evaluate(fr.ref_int)
        ta, tb = jac[:, :, a], jac[:, :, b]
        js = np.linalg.norm(np.cross(ta, tb), axis=1)
        fa, Ba, _, Da = dir_eval(kva, fr.uv[:, 0])
        fb, Bb, _, Db = dir_eval(kvb, fr.uv[:, 1])
        na, nb = kva.n_basis, kvb.n_basis
        cols, phi = [], []
        # component along a: degree `degree` in a, `degree - 1` in b
        for comp, (fu, Bu, nu_, fv, Bv, nv_, t) in enumerate(
            [(fa, Ba, na, fb, Db, nb - 1, ta), (fa, Da, na - 1, fb, Bb, nb, tb)]
        ):
            iu = fu[:, None] + np.arange(Bu.shape[1])[None, :]
            iv = fv[:, None] + np.arange(Bv.shape[1])[None, :]
            base = 0 if comp == 0 else na * (nb - 1)
            idx = base + iu[:, :, None] * nv_ + iv[:, None, :]
            vals = Bu[:, :, None] * Bv[:, None, :]
            cols.append(idx.reshape(idx.shape[0], -1))
            phi.append(vals.reshape(vals.shape[0], -1)[..., None] * (t / js[:, None])[:, None, :])
        cols = np.concatenate(cols, axis=1)
        phi = np.concatenate(phi, axis=1)  # (N, Lf, 3)
        ndof = na * (nb - 1) + (na - 1) * nb
        w = fr.weights
        vt = tangential(val, fr.normals)
        rows_m = np.repeat(cols, cols.shape[1], axis=1).ravel()
        cols_m = np.tile(cols, (1, cols.shape[1])).ravel()
        Me = np.einsum("nlk,nmk,n->nlm", phi, phi, w).ravel()
        M = sp.csr_matrix((Me, (rows_m, cols_m)), shape=(ndof, ndof))
        f = np.zeros(ndof, dtype=vt.dtype)
        np.add.at(f, cols.ravel(), (np.einsum("nlk,nk->nl", phi, vt) * w[:, None]).ravel())
        fac = Factorization(M, rtol=1e-11)
        c = fac.solve(f)
        fac.free()
        out_face = np.einsum("nl,nlk->nk", c[cols], phi)
        sl = slice(sum(r.weights.size for r in rule.faces[:k]), sum(r.weights.size for r in rule.faces[:k + 1]))
        out[sl] = out_face
    return out


__all__ = [
    "FaceRule",
    "GammaRule",
    "gamma_rule",
    "tangential",
    "field_on_gamma",
    "dirichlet_trace",
    "neumann_trace",
    "surface_load",
    "surface_mass",
    "l2_project_surface",
    "TraceSpace",
    "project_reduced_degree",
    "covariant",
    "curl_map",
]
