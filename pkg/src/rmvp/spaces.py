"""Curl-conforming spline spaces on multipatch domains.

Each patch carries the tensor-product 1-form space of the discrete de Rham
sequence: component ``d`` uses degree ``p - 1`` (Curry-Schoenberg scaled) in
direction ``d`` and degree ``p`` in the other two.  Global vertices come from
identifying boundary control points (Greville images) across patches; every
1-form dof is the oriented edge between two vertices, so the discrete gradient
is the signed vertex-edge incidence matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .domain import Face, MultipatchDomain
from .quadrature import gauss_on_breaks
from .splines import KnotVector, basis_ders, derivative_scaling

_E = np.eye(3, dtype=int)


class SpaceError(ValueError):
    pass


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)

    def find(self, i: int) -> int:
        parent = self.parent
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb

    def roots(self) -> np.ndarray:
        return np.array([self.find(i) for i in range(self.parent.size)])


def dir_eval(kv: KnotVector, u: np.ndarray, nders: int = 1):
    """Spans, B-spline values/derivatives and scaled D-spline values at ``u``.

    Returns ``first`` (index of the first nonzero B-spline, which is also the
    first nonzero D-spline), ``B (N, p+1)``, ``dB (N, p+1)`` and ``D (N, p)``.
    """
    p, t = kv.degree, kv.knots
    spans, ders = kv.eval_many(u, nders)
    first = spans - p
    low = basis_ders(t, p - 1, spans, np.atleast_1d(u), 0)[0]
    scale = derivative_scaling(kv)
    idx = first[:, None] + np.arange(p)[None, :]
    D = low * scale[idx]
    dB = ders[1] if nders >= 1 else None
    return first, ders[0], dB, D


@dataclass
class PatchDofs:
    kvs: tuple[KnotVector, KnotVector, KnotVector]
    vertex: np.ndarray                 # (N0, N1, N2) global vertex ids
    edge: tuple[np.ndarray, ...]       # per component, global edge ids
    sign: tuple[np.ndarray, ...]       # per component, orientation signs


class CurlSpace:
    """Multipatch space ``S_p^1`` over a subset of the domain patches."""

    def __init__(self, domain: MultipatchDomain, degree: int, level: int = 1, patches=None,
                 regularity: int | None = None):
        if degree < 1:
            raise SpaceError("degree must be at least 1")
        if level < 1:
            raise SpaceError("refinement level must be at least 1")
        self.domain = domain
        self.p = int(degree)
        self.level = int(level)
        self.regularity = self.p - 1 if regularity is None else int(regularity)
        ids = sorted(range(len(domain.patches)) if patches is None else set(int(i) for i in patches))
        self.patch_ids = ids
        self._kvs = {}
        for i in ids:
            self._kvs[i] = tuple(
                KnotVector.uniform(self.level * domain.divisions[i][d], self.p, continuity=self.regularity)
                for d in range(3)
            )
        self._number_vertices()
        self._number_edges()
        self._classify_faces()

    # -- numbering -----------------------------------------------------------
    def _number_vertices(self):
        dom = self.domain
        tol = 1e-9 * dom.diameter
        blocks, owners = [], []
        offset = 0
        local_offset = {}
        for i in self.patch_ids:
            kvs = self._kvs[i]
            shape = tuple(kv.n_basis for kv in kvs)
            local_offset[i] = (offset, shape)
            g = [kv.greville() for kv in kvs]
            idx = np.indices(shape).reshape(3, -1).T
            bnd = np.any((idx == 0) | (idx == np.array(shape) - 1), axis=1)
            ref = np.stack([g[d][idx[bnd, d]] for d in range(3)], axis=1)
            pts, _ = dom.patches[i].evaluate(ref)
            blocks.append(pts)
            owners.append(offset + np.ravel_multi_index(idx[bnd].T, shape))
            offset += int(np.prod(shape))
        uf = _UnionFind(offset)
        pts = np.concatenate(blocks)
        own = np.concatenate(owners)
        for a, b in cKDTree(pts).query_pairs(tol, output_type="ndarray"):
            uf.union(int(own[a]), int(own[b]))
        roots = uf.roots()
        _, first_seen, inverse = np.unique(roots, return_index=True, return_inverse=True)
        # number classes in order of first appearance (patch order, then lexicographic local)
        order = np.argsort(first_seen)
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        gid = rank[inverse]
        self.n_vertices = int(order.size)
        self.dofs = {}
        self._vertex_points = None
        for i in self.patch_ids:
            off, shape = local_offset[i]
            self.dofs[i] = PatchDofs(self._kvs[i], gid[off:off + int(np.prod(shape))].reshape(shape), (), ())

    def _number_edges(self):
        keys, where = [], []
        for i in self.patch_ids:
            v = self.dofs[i].vertex
            for d in range(3):
                sl_a = [slice(None)] * 3
                sl_b = [slice(None)] * 3
                sl_a[d] = slice(0, -1)
                sl_b[d] = slice(1, None)
                va, vb = v[tuple(sl_a)], v[tuple(sl_b)]
                keys.append(np.stack([np.minimum(va, vb).ravel(), np.maximum(va, vb).ravel()], axis=1))
                where.append((i, d, va.shape, (va < vb)))
        allkeys = np.concatenate(keys)
        uniq, inverse = np.unique(allkeys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        self.edge_vertices = uniq  # (n_edges, 2): lower id, higher id
        self.n_edges = int(uniq.shape[0])
        pos = 0
        per_patch = {i: ([None] * 3, [None] * 3) for i in self.patch_ids}
        for (i, d, shape, forward), k in zip(where, keys):
            n = k.shape[0]
            per_patch[i][0][d] = inverse[pos:pos + n].reshape(shape)
            per_patch[i][1][d] = np.where(forward, 1.0, -1.0)
            pos += n
        for i in self.patch_ids:
            self.dofs[i].edge = tuple(per_patch[i][0])
            self.dofs[i].sign = tuple(per_patch[i][1])
        if np.any(self.edge_vertices[:, 0] == self.edge_vertices[:, 1]):
            raise SpaceError("degenerate edge: both endpoints identified")

    @property
    def n_dofs(self) -> int:
        return self.n_edges

    def _classify_faces(self):
        """Faces of the subdomain: ``gamma`` (shared with a patch outside), ``dirichlet`` or ``natural``."""
        inside = set(self.patch_ids)
        kinds = {}
        for itf in self.domain.interfaces:
            a, b = itf.first, itf.second
            ina, inb = a.patch in inside, b.patch in inside
            if ina and not inb:
                kinds[a] = "gamma"
            elif inb and not ina:
                kinds[b] = "gamma"
        for f in self.domain.boundary_faces:
            if f.patch in inside:
                kinds[f] = self.domain.boundary_kind(f)
        self.face_kinds = kinds

    def faces_of_kind(self, kind: str) -> list[Face]:
        return sorted((f for f, k in self.face_kinds.items() if k == kind),
                      key=lambda f: (f.patch, f.direction, f.side))

    def edges_on_face(self, face: Face) -> np.ndarray:
        """Global ids of edges tangential to ``face`` (both endpoints on it)."""
        pd = self.dofs[face.patch]
        out = []
        for d in range(3):
            if d == face.direction:
                continue
            arr = pd.edge[d]
            sl = [slice(None)] * 3
            sl[face.direction] = 0 if face.side == 0 else -1
            out.append(arr[tuple(sl)].ravel())
        return np.unique(np.concatenate(out))

    def vertices_on_face(self, face: Face) -> np.ndarray:
        v = self.dofs[face.patch].vertex
        sl = [slice(None)] * 3
        sl[face.direction] = 0 if face.side == 0 else -1
        return np.unique(v[tuple(sl)].ravel())

    def edges_on_faces(self, faces) -> np.ndarray:
        faces = list(faces)
        if not faces:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate([self.edges_on_face(f) for f in faces]))

    def dirichlet_dofs(self, include_gamma: bool = False) -> np.ndarray:
        faces = self.faces_of_kind("dirichlet") + (self.faces_of_kind("gamma") if include_gamma else [])
        return self.edges_on_faces(faces)

    def patch_edges(self, i: int) -> np.ndarray:
        pd = self.dofs[i]
        return np.unique(np.concatenate([e.ravel() for e in pd.edge]))

    def patch_vertices(self, i: int) -> np.ndarray:
        return np.unique(self.dofs[i].vertex.ravel())

    def element_count(self, patches=None) -> int:
        ids = self.patch_ids if patches is None else patches
        return int(sum(np.prod([kv.n_elements for kv in self._kvs[i]]) for i in ids))

    def max_element_diameter(self, patches=None, samples: int = 3) -> float:
        """Largest element diameter estimated from the physical images of element corners."""
        ids = self.patch_ids if patches is None else patches
        h = 0.0
        for i in ids:
            kvs = self._kvs[i]
            axes = [np.linspace(0, 1, kv.n_elements * (samples - 1) + 1) for kv in kvs]
            pts, _ = self.domain.patches[i].evaluate_grid(axes)
            step = samples - 1
            c = pts[::step, ::step, ::step]
            diag = [
                np.linalg.norm(c[1:, 1:, 1:] - c[:-1, :-1, :-1], axis=-1),
                np.linalg.norm(c[:-1, 1:, 1:] - c[1:, :-1, :-1], axis=-1),
                np.linalg.norm(c[1:, :-1, 1:] - c[:-1, 1:, :-1], axis=-1),
                np.linalg.norm(c[1:, 1:, :-1] - c[:-1, :-1, 1:], axis=-1),
            ]
            h = max(h, float(np.max(diag)))
        return h

    # -- discrete gradient --------------------------------------------------
    def gradient_matrix(self) -> sp.csr_matrix:
        """Incidence matrix ``G`` with ``grad(sum_v c_v B_v) = sum_e (G c)_e b_e``."""
        ev = self.edge_vertices
        n = self.n_edges
        rows = np.repeat(np.arange(n), 2)
        cols = ev.ravel()
        vals = np.tile([-1.0, 1.0], n)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, self.n_vertices))

    def scalar_coefficients(self, i: int, c: np.ndarray) -> np.ndarray:
        return np.asarray(c)[self.dofs[i].vertex]

    def eval_scalar(self, i: int, ref: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Degree-p scalar spline with global vertex coefficients ``c`` at reference points."""
        ref = np.atleast_2d(ref)
        kvs = self._kvs[i]
        p = self.p
        firsts, vals = [], []
        for d in range(3):
            f, B, _, _ = dir_eval(kvs[d], ref[:, d])
            firsts.append(f)
            vals.append(B)
        loc = self.scalar_coefficients(i, c)
        off = np.arange(p + 1)
        i0 = firsts[0][:, None, None, None] + off[None, :, None, None]
        i1 = firsts[1][:, None, None, None] + off[None, None, :, None]
        i2 = firsts[2][:, None, None, None] + off[None, None, None, :]
        coef = loc[i0, i1, i2]
        return np.einsum("nabc,na,nb,nc->n", coef, vals[0], vals[1], vals[2])

    # -- local basis at scattered points ------------------------------------------
    def local_basis(self, i: int, ref: np.ndarray, want_values: bool = True, want_curls: bool = True):
        """Nonzero basis functions at reference points of patch ``i``.

        Returns ``gid (N, L)``, ``sign (N, L)`` and reference-frame covariant
        values ``(N, L, 3)`` and reference curls ``(N, L, 3)`` (either may be
        ``None``).  The local ordering is component-major and identical for
        all points of one element.
        """
        ref = np.atleast_2d(np.asarray(ref, dtype=float))
        N = ref.shape[0]
        p = self.p
        pd = self.dofs[i]
        first, B, dB, D = [], [], [], []
        for d in range(3):
            f, b, db, dd = dir_eval(pd.kvs[d], ref[:, d])
            first.append(f)
            B.append(b)
            dB.append(db)
            D.append(dd)
        gids, signs, vals, curls = [], [], [], []
        for c in range(3):
            a, b = [d for d in range(3) if d != c]
            sizes = [p + 1, p + 1, p + 1]
            sizes[c] = p
            grids = []
            for d in range(3):
                shape = [1, 1, 1, 1]
                shape[d + 1] = sizes[d]
                grids.append(first[d].reshape(N, 1, 1, 1) + np.arange(sizes[d]).reshape(shape))
            gids.append(pd.edge[c][grids[0], grids[1], grids[2]].reshape(N, -1))
            signs.append(pd.sign[c][grids[0], grids[1], grids[2]].reshape(N, -1))
            f1 = [B[0], B[1], B[2]]
            f1[c] = D[c]
            if want_values:
                v = np.einsum("ni,nj,nk->nijk", f1[0], f1[1], f1[2]).reshape(N, -1)
                vv = np.zeros(v.shape + (3,))
                vv[..., c] = v
                vals.append(vv)
            if want_curls:
                # curl of u_c e_c: d_a u_c contributes to component b (sign by permutation)
                cc = np.zeros((N, gids[-1].shape[1], 3))
                for der in (a, b):
                    fac = list(f1)
                    fac[der] = dB[der]
                    t = np.einsum("ni,nj,nk->nijk", fac[0], fac[1], fac[2]).reshape(N, -1)
                    comp = 3 - c - der
                    eps = _levi(der, c, comp)  # curl_comp += eps * d_der u_c
                    cc[..., comp] += eps * t
                curls.append(cc)
        gid = np.concatenate(gids, axis=1)
        sign = np.concatenate(signs, axis=1)
        val = np.concatenate(vals, axis=1) if want_values else None
        curl = np.concatenate(curls, axis=1) if want_curls else None
        return gid, sign, val, curl

    def evaluate(self, i: int, ref: np.ndarray, coeffs: np.ndarray, chunk: int = 4096):
        """Physical field and curl at reference points of patch ``i``."""
        ref = np.atleast_2d(np.asarray(ref, dtype=float))
        coeffs = np.asarray(coeffs)
        dtype = np.result_type(coeffs.dtype, np.float64)
        A = np.zeros((ref.shape[0], 3), dtype=dtype)
        C = np.zeros((ref.shape[0], 3), dtype=dtype)
        patch = self.domain.patches[i]
        for s in range(0, ref.shape[0], chunk):
            r = ref[s:s + chunk]
            gid, sign, val, curl = self.local_basis(i, r)
            loc = coeffs[gid] * sign
            a_ref = np.einsum("nl,nlk->nk", loc, val)
            c_ref = np.einsum("nl,nlk->nk", loc, curl)
            _, jac = patch.evaluate(r)
            A[s:s + chunk], C[s:s + chunk] = covariant(jac, a_ref), curl_map(jac, c_ref)
        return A, C

    # -- tensor grids --------------------------------------------------------
    def local_tensors(self, i: int, coeffs: np.ndarray):
        pd = self.dofs[i]
        return [pd.sign[c] * np.asarray(coeffs)[pd.edge[c]] for c in range(3)]

    def evaluate_grid(self, i: int, axes, coeffs: np.ndarray, want_values: bool = False):
        """Physical curl (and optionally the field) on a tensor grid of reference points.

        Returns ``(points, curl, values, jac)`` with grid-shaped leading axes.
        """
        pd = self.dofs[i]
        p = self.p
        mats = []
        for d in range(3):
            kv = pd.kvs[d]
            u = np.asarray(axes[d], dtype=float)
            f, B, dB, D = dir_eval(kv, u)
            n = u.size
            rows = np.arange(n)[:, None]
            Bm = np.zeros((n, kv.n_basis))
            dBm = np.zeros((n, kv.n_basis))
            Dm = np.zeros((n, kv.n_basis - 1))
            Bm[rows, f[:, None] + np.arange(p + 1)] = B
            dBm[rows, f[:, None] + np.arange(p + 1)] = dB
            Dm[rows, f[:, None] + np.arange(p)] = D
            mats.append((Bm, dBm, Dm))
        loc = self.local_tensors(i, coeffs)

        def contract(T, m0, m1, m2):
            out = np.tensordot(m0, T, axes=(1, 0))
            out = np.tensordot(m1, out, axes=(1, 1)).transpose(1, 0, 2)
            out = np.tensordot(m2, out, axes=(1, 2)).transpose(1, 2, 0)
            return out

        shape = tuple(np.asarray(a).size for a in axes)
        dtype = np.result_type(np.asarray(coeffs).dtype, np.float64)
        curl_ref = np.zeros(shape + (3,), dtype=dtype)
        val_ref = np.zeros(shape + (3,), dtype=dtype) if want_values else None
        for c in range(3):
            for der in range(3):
                if der == c:
                    continue
                ms = [mats[d][2] if d == c else (mats[d][1] if d == der else mats[d][0]) for d in range(3)]
                comp = 3 - c - der
                curl_ref[..., comp] += _levi(der, c, comp) * contract(loc[c], *ms)
            if want_values:
                ms = [mats[d][2] if d == c else mats[d][0] for d in range(3)]
                val_ref[..., c] = contract(loc[c], *ms)
        pts, jac = self.domain.patches[i].evaluate_grid(axes)
        flat_j = jac.reshape(-1, 3, 3)
        curl = curl_map(flat_j, curl_ref.reshape(-1, 3)).reshape(shape + (3,))
        vals = covariant(flat_j, val_ref.reshape(-1, 3)).reshape(shape + (3,)) if want_values else None
        return pts, curl, vals, jac

    def quadrature_axes(self, i: int, n: int, extra_breaks=None):
        """Composite Gauss points/weights per direction (optionally on merged breakpoints)."""
        out = []
        for d in range(3):
            br = self._kvs[i][d].breakpoints
            if extra_breaks is not None:
                br = np.unique(np.concatenate([br, extra_breaks[d]]))
                br = br[np.concatenate([[True], np.diff(br) > 1e-13])]
            x, w = gauss_on_breaks(br, n)
            out.append((x.ravel(), w.ravel()))
        return out

    def knot_vectors(self, i: int):
        return self._kvs[i]

    # -- transfer between spaces on the same mesh --------------------------------
    def transfer_from(self, other: CurlSpace) -> sp.csr_matrix:
        """Matrix ``P`` with ``x_self = P x_other`` on the patches of ``other`` (same mesh)."""
        if other.p != self.p or other.level != self.level or other.regularity != self.regularity:
            raise SpaceError("spaces must share degree, level and regularity")
        rows, cols, vals = [], [], []
        for i in other.patch_ids:
            if i not in self.dofs:
                raise SpaceError(f"patch {i} missing from target space")
            for c in range(3):
                rows.append(self.dofs[i].edge[c].ravel())
                cols.append(other.dofs[i].edge[c].ravel())
                vals.append((self.dofs[i].sign[c] * other.dofs[i].sign[c]).ravel())
        r, c, v = (np.concatenate(a) for a in (rows, cols, vals))
        key = np.unique(np.stack([r, c, v], axis=1), axis=0)
        return sp.csr_matrix((key[:, 2], (key[:, 0].astype(int), key[:, 1].astype(int))),
                             shape=(self.n_edges, other.n_edges))

    def describe(self) -> dict:
        return {"degree": self.p, "level": self.level, "regularity_in_patch": self.regularity,
                "regularity_across_patches": 0, "dofs": self.n_edges, "elements": self.element_count()}


def _levi(i: int, j: int, k: int) -> int:
    """Permutation sign of (i, j, k) for distinct indices."""
    return 1 if (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)) else -1


def covariant(jac: np.ndarray, v_ref: np.ndarray) -> np.ndarray:
    """``DF^{-T} v`` for batches ``jac (N, 3, 3)`` and ``v (N, 3)``."""
    return np.linalg.solve(np.transpose(jac, (0, 2, 1)), v_ref[..., None])[..., 0]


def curl_map(jac: np.ndarray, c_ref: np.ndarray) -> np.ndarray:
    """``DF c / det DF``."""
    det = np.linalg.det(jac)
    return np.einsum("nij,nj->ni", jac, c_ref) / det[:, None]


def interpolate_gradient(space: CurlSpace, c: np.ndarray) -> np.ndarray:
    """Edge coefficients of the gradient of the scalar spline with vertex coefficients ``c``."""
    return space.gradient_matrix() @ np.asarray(c)
