"""Galerkin matrices and load vectors for curl-conforming spaces."""

from __future__ import annotations

from itertools import product

import numpy as np
import scipy.sparse as sp

from .spaces import CurlSpace, covariant, curl_map

_BATCH_FLOATS = 6_000_000


def element_batches(space: CurlSpace, i: int, nq: int, n_local: int):
    """Yield ``(ref (E, Q, 3), weights (E, Q))`` for the elements of patch ``i`` in lexicographic order."""
    axes = []
    for d in range(3):
        x, w = space.quadrature_axes(i, nq)[d]
        ne = space.knot_vectors(i)[d].n_elements
        axes.append((x.reshape(ne, nq), w.reshape(ne, nq)))
    ne = [a[0].shape[0] for a in axes]
    elems = np.array(list(product(*[range(n) for n in ne])))
    q = np.array(list(product(range(nq), repeat=3)))
    Q = q.shape[0]
    batch = max(1, _BATCH_FLOATS // (Q * n_local * 3))
    for s in range(0, elems.shape[0], batch):
        e = elems[s:s + batch]
        ref = np.stack([axes[d][0][e[:, d]][:, q[:, d]] for d in range(3)], axis=-1)
        w = np.prod([axes[d][1][e[:, d]][:, q[:, d]] for d in range(3)], axis=0)
        yield ref, w


def _assemble(space: CurlSpace, coef, kind: str, patches=None, nq=None) -> sp.csr_matrix:
    n = space.n_edges
    nq = space.p + 1 if nq is None else nq
    L = 3 * space.p * (space.p + 1) ** 2
    acc = _Accumulator(n)
    ids = space.patch_ids if patches is None else [i for i in space.patch_ids if i in set(patches)]
    for i in ids:
        c = float(coef(i))
        if c == 0.0:
            continue
        patch = space.domain.patches[i]
        for ref, w in element_batches(space, i, nq, L):
            E, Q = w.shape
            flat = ref.reshape(-1, 3)
            gid, sign, val, curl = space.local_basis(i, flat, want_values=(kind == "mass"),
                                                     want_curls=(kind == "curl"))
            _, jac = patch.evaluate(flat)
            det = np.abs(np.linalg.det(jac))
            if kind == "curl":
                # physical curls for every local function: (N, L, 3)
                phys = np.einsum("nij,nlj->nli", jac, curl) / np.linalg.det(jac)[:, None, None]
            else:
                phys = np.linalg.solve(np.transpose(jac, (0, 2, 1))[:, None], val[..., None])[..., 0]
            sw = np.sqrt(c * w.reshape(-1) * det)
            phys = phys * sw[:, None, None]
            Lloc = phys.shape[1]
            F = phys.reshape(E, Q, Lloc, 3).transpose(0, 2, 1, 3).reshape(E, Lloc, Q * 3)
            Ke = F @ F.transpose(0, 2, 1)
            g = gid.reshape(E, Q, Lloc)[:, 0]
            sg = sign.reshape(E, Q, Lloc)[:, 0]
            Ke *= sg[:, :, None] * sg[:, None, :]
            acc.add(g, Ke)
    return acc.result()


class _Accumulator:
    """Buffered COO accumulation in a fixed (patch, element) order."""

    LIMIT = 20_000_000

    def __init__(self, n: int):
        self.n = n
        self.total = sp.csr_matrix((n, n))
        self.buf = []
        self.count = 0

    def add(self, g: np.ndarray, Ke: np.ndarray):
        g = g.astype(np.int32)
        rows = np.broadcast_to(g[:, :, None], Ke.shape).ravel()
        cols = np.broadcast_to(g[:, None, :], Ke.shape).ravel()
        self.buf.append((rows, cols, Ke.ravel()))
        self.count += rows.size
        if self.count > self.LIMIT:
            self._flush()

    def _flush(self):
        if not self.buf:
            return
        r, c, v = (np.concatenate(x) for x in zip(*self.buf))
        self.buf, self.count = [], 0
        self.total = self.total + sp.csr_matrix((v, (r, c)), shape=(self.n, self.n))

    def result(self) -> sp.csr_matrix:
        self._flush()
        out = self.total.tocsr()
        out.sum_duplicates()
        out.sort_indices()
        return out


def assemble_curl_curl(space: CurlSpace, nu=None, patches=None, nq=None) -> sp.csr_matrix:
    """``K_ij = int nu curl b_i . curl b_j`` with ``nu`` per patch (default: domain materials)."""
    coef = space.domain.nu_of if nu is None else (nu if callable(nu) else (lambda i: nu))
    return _assemble(space, coef, "curl", patches, nq)


def assemble_sigma_mass(space: CurlSpace, sigma=None, patches=None, nq=None) -> sp.csr_matrix:
    """``M_ij = int sigma b_i . b_j`` with ``sigma`` per patch (default: domain materials)."""
    coef = space.domain.sigma_of if sigma is None else (sigma if callable(sigma) else (lambda i: sigma))
    return _assemble(space, coef, "mass", patches, nq)


def assemble_mass(space: CurlSpace, patches=None, nq=None) -> sp.csr_matrix:
    return _assemble(space, lambda i: 1.0, "mass", patches, nq)


def assemble_load(space: CurlSpace, field, patches=None, nq=None, counter=None) -> np.ndarray:
    """``f_i = int F . b_i`` for a vector field ``F(points (N, 3)) -> (N, 3)``."""
    nq = space.p + 1 if nq is None else nq
    L = 3 * space.p * (space.p + 1) ** 2
    out = None
    ids = space.patch_ids if patches is None else [i for i in space.patch_ids if i in set(patches)]
    for i in ids:
        patch = space.domain.patches[i]
        for ref, w in element_batches(space, i, nq, L):
            flat = ref.reshape(-1, 3)
            gid, sign, val, _ = space.local_basis(i, flat, want_curls=False)
            pts, jac = patch.evaluate(flat)
            F = np.asarray(field(pts))
            if out is None:
                out = np.zeros(space.n_edges, dtype=np.result_type(F.dtype, np.float64))
            phys = np.linalg.solve(np.transpose(jac, (0, 2, 1))[:, None], val[..., None])[..., 0]
            wd = w.reshape(-1) * np.abs(np.linalg.det(jac))
            contrib = np.einsum("nlk,nk->nl", phys, F) * (wd[:, None] * sign)
            np.add.at(out, gid.ravel(), contrib.ravel())
    if out is None:
        out = np.zeros(space.n_edges)
    return out


def integrate_volume(space: CurlSpace, fn, patches=None, nq=None) -> float:
    """``int fn(points)`` over patches using the element quadrature of ``space``."""
    nq = space.p + 2 if nq is None else nq
    ids = space.patch_ids if patches is None else patches
    total = 0.0
    for i in ids:
        axes = space.quadrature_axes(i, nq)
        pts, jac = space.domain.patches[i].evaluate_grid([a[0] for a in axes])
        w = np.einsum("i,j,k->ijk", axes[0][1], axes[1][1], axes[2][1])
        det = np.abs(np.linalg.det(jac.reshape(-1, 3, 3))).reshape(w.shape)
        total += float(np.sum(np.asarray(fn(pts.reshape(-1, 3))).reshape(w.shape) * w * det))
    return total


__all__ = [
    "assemble_curl_curl",
    "assemble_sigma_mass",
    "assemble_mass",
    "assemble_load",
    "integrate_volume",
    "element_batches",
    "covariant",
    "curl_map",
]
