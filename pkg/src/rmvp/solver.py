"""Image, surface-current and reaction solves of the interface reduced vector potential method."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_curl_curl, assemble_load, assemble_mass, assemble_sigma_mass
from .domain import MU0, FrequencySettings, MultipatchDomain
from .gauge import Gauge, build_gauge
from .linalg import Factorization, SolverError
from .source import CoilSource, KernelRule, eval_A_s, eval_B_s
from .spaces import CurlSpace
from .traces import (GammaRule, field_on_gamma, gamma_rule, l2_project_surface, project_reduced_degree,
                     surface_load, tangential)

log = logging.getLogger(__name__)


@dataclass
class SystemMatrix:
    matrix: sp.csr_matrix
    complex_symmetric: bool

    def check_symmetry(self) -> float:
        A = self.matrix
        scale = abs(A).max() if A.nnz else 1.0
        return float(abs(A - A.T).max() / scale) if A.nnz else 0.0


@dataclass
class FieldSolution:
    space: CurlSpace
    coeffs: np.ndarray
    role: str
    gauge: Gauge | None = None
    stats: dict = field(default_factory=dict)

    def evaluate(self, patch: int, ref):
        return self.space.evaluate(patch, ref, self.coeffs)


@dataclass
class SurfaceCurrent:
    values: np.ndarray     # (N, 3) at the surface quadrature points
    method: str
    rule: GammaRule
    source_part: np.ndarray | None = None

    def tangentiality(self) -> float:
        n = self.rule.normals
        scale = max(np.abs(self.values).max(), 1e-300)
        return float(np.abs(np.einsum("nk,nk->n", self.values, n)).max() / scale)


def _solve_constrained(K: sp.csr_matrix, free: np.ndarray, fixed_vals: np.ndarray, rhs: np.ndarray,
                       rtol: float = 1e-10):
    """Solve ``K x = rhs`` on ``free`` with the other entries of ``x`` given by ``fixed_vals``."""
    x = fixed_vals.astype(np.result_type(fixed_vals.dtype, rhs.dtype, K.dtype)).copy()
    x[free] = 0.0
    b = rhs[free] - (K @ x)[free]
    Kff = K[free][:, free].tocsr()
    fac = Factorization(Kff, rtol=rtol)
    try:
        x[free] = fac.solve(b)
    except SolverError as exc:
        raise SolverError(f"constrained solve failed ({Kff.shape[0]} unknowns): {exc}") from exc
    finally:
        fac.free()
    return x, {"unknowns": int(free.size), "nnz": int(Kff.nnz), "residual": getattr(fac, "last_residual", 0.0),
               "backend": fac.backend}


def source_on_gamma(source: CoilSource, rule: GammaRule, kernel: KernelRule, counter=None):
    """A_s and B_s at the surface points (one kernel evaluation per point)."""
    pts = rule.points
    A = eval_A_s(source, kernel, pts, counter=counter, context="interface")
    B = eval_B_s(source, kernel, pts)
    return A, B


def solve_image(domain: MultipatchDomain, ext_space: CurlSpace, A_s_gamma: np.ndarray, rule: GammaRule,
                rtol: float = 1e-10) -> FieldSolution:
    """Magnetostatic image field in the exterior with ``gamma_D(A_m) = -gamma_D(A_s)`` on Gamma."""
    gamma_faces = ext_space.faces_of_kind("gamma")
    dir_dofs = ext_space.dirichlet_dofs()
    lift_dofs = np.setdiff1d(ext_space.edges_on_faces(gamma_faces), dir_dofs)
    x = l2_project_surface(ext_space, rule, -A_s_gamma, lift_dofs, side="exterior")
    fixed = np.union1d(dir_dofs, lift_dofs)
    gauge = build_gauge(ext_space, constrained=fixed)
    K = assemble_curl_curl(ext_space, nu=lambda i: 1.0 / MU0)
    if not np.any(x):
        return FieldSolution(ext_space, np.zeros(ext_space.n_edges), "image", gauge, {"unknowns": int(gauge.free.size)})
    x, stats = _solve_constrained(K, gauge.free, x, np.zeros(ext_space.n_edges), rtol)
    stats["lift_dofs"] = int(lift_dofs.size)
    return FieldSolution(ext_space, x, "image", gauge, stats)


def compute_K_g(rule: GammaRule, B_s_gamma: np.ndarray, image: FieldSolution, method: str = "direct-B",
                source: CoilSource | None = None, kernel: KernelRule | None = None,
                counter=None) -> SurfaceCurrent:
    """Pointwise ``K_g = nu0 curl(A_s + A_m) x n`` on the exterior side of Gamma."""
    _, curl_m = field_on_gamma(image.space, image.coeffs, rule, side="exterior")
    if method == "direct-B":
        curl_s = B_s_gamma
    elif method == "projected-A":
        if source is None or kernel is None:
            raise ValueError("projected-A needs the source and kernel rule")
        proj = project_source_volume(image.space, source, kernel, counter=counter)
        _, curl_s = field_on_gamma(image.space, proj, rule, side="exterior")
    else:
        raise ValueError(f"unknown surface-current method {method!r}")
    n = rule.normals
    Ks = np.cross(curl_s / MU0, n)
    Km = np.cross(curl_m / MU0, n)
    return SurfaceCurrent(Ks + Km, method, rule, source_part=Ks)


def project_source_volume(space: CurlSpace, source: CoilSource, kernel: KernelRule, counter=None) -> np.ndarray:
    """Volume L2 projection of A_s onto ``space`` (all its patches)."""
    f = assemble_load(space, lambda pts: eval_A_s(source, kernel, pts, counter=counter, context="volume"))
    M = assemble_mass(space)
    fac = Factorization(M, rtol=1e-10)
    try:
        return fac.solve(f)
    finally:
        fac.free()


def reaction_rhs(space: CurlSpace, rule: GammaRule, K_g: SurfaceCurrent, pairing: str = "variational",
                 image: FieldSolution | None = None, reduced_degree: int | None = None) -> np.ndarray:
    """Load vector ``<K_g, gamma_D(v)>`` over Gamma.

    ``pairing='pointwise'`` integrates the sampled surface current with the
    surface quadrature.  ``'variational'`` keeps the sampled source part but
    replaces the image part by its Galerkin Neumann trace
    ``-(nu0 curl A_m, curl v)`` over the exterior, which is exact against
    discrete gradients.  It needs ``image`` on the same mesh and degree as
    ``space``.  ``reduced_degree`` first projects the sampled surface current
    onto a facewise lower-degree surface space (pointwise pairing only).
    """
    if pairing == "pointwise":
        vals = K_g.values
        if reduced_degree is not None:
            vals = project_reduced_degree(rule, space.domain, space.level, vals, reduced_degree)
        return surface_load(space, rule, vals, side="interior")
    if pairing == "variational":
        if image is None:
            raise ValueError("variational pairing needs the image solution")
        if reduced_degree is not None:
            raise ValueError("reduced-degree projection is only defined for pointwise pairing")
        rhs = surface_load(space, rule, K_g.source_part, side="interior")
        P = space.transfer_from(image.space)
        ext = space.domain.exterior_patches
        K_ext = assemble_curl_curl(space, nu=lambda i: 1.0 / MU0, patches=ext)
        return rhs - K_ext @ (P @ image.coeffs)
    raise ValueError(f"unknown pairing {pairing!r}")


def solve_reaction(space: CurlSpace, rhs: np.ndarray, freq: FrequencySettings, rtol: float = 1e-10,
                   K: sp.csr_matrix | None = None, M: sp.csr_matrix | None = None) -> FieldSolution:
    """Gauged solve of ``(nu curl A, curl v) + s j omega (sigma A, v) = rhs`` with zero trace on Dirichlet faces."""
    dom = space.domain
    K = assemble_curl_curl(space) if K is None else K
    eddy = freq.omega > 0 and any(dom.sigma_of(i) > 0 for i in space.patch_ids)
    contract = [i for i in space.patch_ids if dom.sigma_of(i) > 0] if eddy else []
    dir_dofs = space.dirichlet_dofs()
    gauge = build_gauge(space, constrained=dir_dofs, contract_patches=contract)
    if eddy:
        M = assemble_sigma_mass(space) if M is None else M
        A = (K + (freq.sign * 1j * freq.omega) * M).tocsr()
    else:
        A = K.astype(np.float64)
    zero = np.zeros(space.n_edges, dtype=A.dtype)
    if not np.any(rhs):
        return FieldSolution(space, zero.astype(np.result_type(A.dtype, rhs.dtype)), "reaction", gauge,
                             {"unknowns": int(gauge.free.size)})
    x, stats = _solve_constrained(A, gauge.free, zero, rhs.astype(np.result_type(A.dtype, rhs.dtype)), rtol)
    stats["dofs"] = int(space.n_edges)
    return FieldSolution(space, x, "reaction", gauge, stats)


@dataclass
class RMVPResult:
    domain: MultipatchDomain
    space: CurlSpace
    ext_space: CurlSpace
    rule: GammaRule
    image: FieldSolution
    K_g: SurfaceCurrent
    reaction: FieldSolution
    source: CoilSource
    kernel: KernelRule
    A_s_gamma: np.ndarray
    B_s_gamma: np.ndarray


def solve_rmvp(domain: MultipatchDomain, source: CoilSource, degree: int, level: int, freq: FrequencySettings,
               kernel: KernelRule = KernelRule(), method: str = "direct-B", pairing: str = "variational",
               trace_degree: int | None = None, degraded: str = "neumann", counter=None,
               regularity: int | None = None, nq_surface: int | None = None) -> RMVPResult:
    """Full interface RMVP pipeline on one mesh level.

    ``trace_degree`` below ``degree`` represents ``K_g`` in a degraded trace
    space.  With ``degraded='neumann'`` the surface current is the Neumann
    trace of degree-``trace_degree`` fields (image solve and projected source
    both in the lower-degree exterior space), sampled and paired pointwise.
    ``degraded='projection'`` instead projects the matched ``K_g`` facewise onto
    a lower-degree surface space.
    """
    if trace_degree is not None and not 1 <= trace_degree <= degree:
        raise ValueError(f"trace degree must lie in [1, {degree}], got {trace_degree}")
    if trace_degree == degree:
        trace_degree = None
    space = CurlSpace(domain, degree, level, regularity=regularity)
    rule = gamma_rule(domain, level, (degree + 1) if nq_surface is None else nq_surface)
    A_s, B_s = source_on_gamma(source, rule, kernel, counter)
    if trace_degree is not None and degraded == "neumann":
        ext_space = CurlSpace(domain, trace_degree, level, patches=domain.exterior_patches)
        image = solve_image(domain, ext_space, A_s, rule)
        K_g = compute_K_g(rule, B_s, image, "projected-A", source, kernel, counter)
        rhs = reaction_rhs(space, rule, K_g, "pointwise")
    elif trace_degree is None or degraded == "projection":
        ext_space = CurlSpace(domain, degree, level, patches=domain.exterior_patches, regularity=regularity)
        image = solve_image(domain, ext_space, A_s, rule)
        K_g = compute_K_g(rule, B_s, image, method, source, kernel, counter)
        if trace_degree is None:
            rhs = reaction_rhs(space, rule, K_g, pairing, image)
        else:
            rhs = reaction_rhs(space, rule, K_g, "pointwise", reduced_degree=trace_degree)
    else:
        raise ValueError(f"unknown degraded-trace mode {degraded!r}")
    reaction = solve_reaction(space, rhs, freq)
    return RMVPResult(domain, space, ext_space, rule, image, K_g, reaction, source, kernel, A_s, B_s)


def total_field(result: RMVPResult, points, counter=None):
    """Total ``A`` and ``B`` at physical points (``None`` rows for points outside the domain)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dom = result.domain
    A = np.full((pts.shape[0], 3), np.nan + 0j)
    B = np.full((pts.shape[0], 3), np.nan + 0j)
    ext = set(dom.exterior_patches)
    for n, x in enumerate(pts):
        loc = dom.locate(x)
        if loc is None:
            continue
        i, ref = loc
        a, b = result.reaction.evaluate(i, ref[None])
        if i in ext:
            am, bm = result.image.evaluate(i, ref[None])
            a = a + am + eval_A_s(result.source, result.kernel, x[None], counter=counter, context="postprocessing")
            b = b + bm + eval_B_s(result.source, result.kernel, x[None])
        A[n], B[n] = a[0], b[0]
    return A, B
