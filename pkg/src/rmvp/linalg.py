"""Sparse direct solves: MKL PARDISO through ctypes when available, SuperLU otherwise."""

from __future__ import annotations

import ctypes
import ctypes.util
import logging
import os

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

_I32P = ctypes.POINTER(ctypes.c_int32)
_I64P = ctypes.POINTER(ctypes.c_int64)


class SolverError(RuntimeError):
    pass


def _load_mkl():
    names = [os.environ.get("RMVP_MKL", ""), "libmkl_rt.so.3", "libmkl_rt.so.2", "libmkl_rt.so", "/usr/local/lib/libmkl_rt.so.3"]
    found = ctypes.util.find_library("mkl_rt")
    if found:
        names.insert(1, found)
    for name in names:
        if not name:
            continue
        try:
            lib = ctypes.CDLL(name)
            fn = lib.pardiso
        except (OSError, AttributeError):
            continue
        fn.restype = None
        fn.argtypes = [_I64P, _I32P, _I32P, _I32P, _I32P, _I32P, ctypes.c_void_p, _I32P, _I32P,
                       _I32P, _I32P, _I32P, _I32P, ctypes.c_void_p, ctypes.c_void_p, _I32P]
        return fn
    return None


_PARDISO = _load_mkl() if os.environ.get("RMVP_SOLVER", "auto") != "superlu" else None


def _ptr(a):
    return a.ctypes.data_as(_I32P)


class _Pardiso:
    """Factorization of a symmetric matrix (real or complex) from its upper triangle."""

    def __init__(self, A: sp.spmatrix):
        self.complex = np.iscomplexobj(A.data)
        self.mtype = 6 if self.complex else -2
        U = sp.triu(A, format="csr")
        U.sum_duplicates()
        U.sort_indices()
        n = U.shape[0]
        self.n = n
        self.a = np.ascontiguousarray(U.data, dtype=np.complex128 if self.complex else np.float64)
        self.ia = (U.indptr + 1).astype(np.int32)
        self.ja = (U.indices + 1).astype(np.int32)
        self.pt = np.zeros(64, np.int64)
        self.iparm = np.zeros(64, np.int32)
        self.iparm[0] = 1
        self.iparm[1] = 2
        self.iparm[7] = 2
        self.iparm[9] = 8
        self._call(12, np.zeros(0, self.a.dtype), np.zeros(0, self.a.dtype), nrhs=1)
        self.alive = True

    def _call(self, phase, b, x, nrhs=1):
        err = np.zeros(1, np.int32)
        one = np.ones(1, np.int32)
        args = (
            self.pt.ctypes.data_as(_I64P), _ptr(one), _ptr(one), _ptr(np.array([self.mtype], np.int32)),
            _ptr(np.array([phase], np.int32)), _ptr(np.array([self.n], np.int32)), self.a.ctypes.data,
            _ptr(self.ia), _ptr(self.ja), _ptr(np.zeros(max(self.n, 1), np.int32)),
            _ptr(np.array([nrhs], np.int32)), _ptr(self.iparm), _ptr(np.zeros(1, np.int32)),
            b.ctypes.data if b.size else None, x.ctypes.data if x.size else None, _ptr(err),
        )
        _PARDISO(*args)
        if err[0] != 0:
            raise SolverError(f"PARDISO phase {phase} failed with error {int(err[0])}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        b2 = np.asfortranarray(np.asarray(b, dtype=self.a.dtype).reshape(self.n, -1))
        x = np.zeros_like(b2)
        self._call(33, b2, x, nrhs=b2.shape[1])
        return x.reshape(np.shape(b))

    def free(self):
        if self.alive:
            self._call(-1, np.zeros(0, self.a.dtype), np.zeros(0, self.a.dtype))
            self.alive = False

    def __del__(self):
        try:
            self.free()
        except Exception:  # interpreter shutdown
            pass


def _with_explicit_diagonal(U: sp.csr_matrix) -> sp.csr_matrix:
    n = U.shape[0]
    coo = U.tocoo()
    rows = np.concatenate([coo.row, np.arange(n)])
    cols = np.concatenate([coo.col, np.arange(n)])
    vals = np.concatenate([coo.data, np.zeros(n, dtype=coo.data.dtype)])
    out = sp.csr_matrix((vals, (rows, cols)), shape=U.shape)
    out.sum_duplicates()
    out.sort_indices()
    return out


class Factorization:
    """Direct factorization of a (complex) symmetric sparse matrix.

    ``solve`` checks the relative residual against ``rtol`` and applies a few
    steps of iterative refinement before giving up.
    """

    def __init__(self, A, rtol: float = 1e-10, symmetric: bool = True):
        A = sp.csr_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise SolverError("matrix must be square")
        self.A = A
        self.rtol = rtol
        self.backend = "superlu"
        self._impl = None
        if symmetric and _PARDISO is not None and A.shape[0] > 0:
            try:
                self._impl = _Pardiso(_with_explicit_diagonal(sp.triu(A, format="csr")))
                self.backend = "pardiso"
            except SolverError as exc:  # pragma: no cover - depends on MKL
                log.warning("PARDISO analysis failed (%s); falling back to SuperLU", exc)
                self._impl = None
        if self._impl is None and A.shape[0] > 0:
            try:
                self._lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc

    def _raw(self, b):
        if np.iscomplexobj(b) and not np.iscomplexobj(self.A.data):
            return self._raw(np.ascontiguousarray(b.real)) + 1j * self._raw(np.ascontiguousarray(b.imag))
        if self.backend == "pardiso":
            return self._impl.solve(b)
        return self._lu.solve(b)

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b)
        dtype = np.result_type(b.dtype, self.A.dtype, np.float64)
        b = b.astype(dtype)
        bn = np.linalg.norm(b)
        if self.A.shape[0] == 0 or bn == 0:
            self.last_residual = 0.0
            return np.zeros_like(b)
        x = self._raw(b)
        for _ in range(4):
            rel = np.linalg.norm(b - self.A @ x) / bn
            if rel <= self.rtol:
                break
            x = x + self._raw(b - self.A @ x)
        else:
            rel = np.linalg.norm(b - self.A @ x) / bn
            if rel > self.rtol:
                raise SolverError(f"relative residual {rel:.3e} exceeds {self.rtol:.1e}")
        self.last_residual = float(rel)
        return x

    def free(self):
        if self.backend == "pardiso" and self._impl is not None:
            self._impl.free()


def linear_solve(A, b, rtol: float = 1e-10) -> np.ndarray:
    """Solve ``A x = b`` for a symmetric sparse ``A`` with a residual check."""
    f = Factorization(A, rtol=rtol)
    try:
        return f.solve(b)
    finally:
        f.free()
