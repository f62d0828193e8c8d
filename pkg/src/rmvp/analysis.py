"""Error norms, convergence orders, line sampling, energies and kernel-evaluation accounting."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .quadrature import gauss_on_breaks


@dataclass(frozen=True)
class ConvergenceRow:
    level: int
    h: float
    dofs: int
    error: float
    kind: str = "hcurl-seminorm"

    def __post_init__(self):
        if self.kind not in ("hcurl-seminorm", "hcurl-norm", "l2"):
            raise ValueError(f"unknown error kind {self.kind!r}")

    @property
    def dofs_cbrt(self) -> float:
        return float(self.dofs) ** (1.0 / 3.0)


class KernelCounter:
    """Thread-safe tally of Biot-Savart point evaluations per context."""

    CONTEXTS = ("interface", "volume", "postprocessing")

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = {c: 0 for c in self.CONTEXTS}

    def add(self, context: str, n: int = 1):
        if context not in self._counts:
            raise ValueError(f"unknown kernel context {context!r}")
        if n < 0:
            raise ValueError("counts are nondecreasing")
        with self._lock:
            self._counts[context] += int(n)

    def __getitem__(self, context: str) -> int:
        return self._counts[context]

    @property
    def counts(self) -> dict:
        with self._lock:
            return dict(self._counts)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _merged_axes(spaces, i, nq):
    axes = []
    for d in range(3):
        br = np.unique(np.concatenate([s.knot_vectors(i)[d].breakpoints for s in spaces]))
        br = br[np.concatenate([[True], np.diff(br) > 1e-13])]
        x, w = gauss_on_breaks(br, nq)
        axes.append((x.ravel(), w.ravel()))
    return axes


def _curl_sq_integral(sol_a, sol_b, patches, nq, field="curl"):
    total = 0.0
    spaces = [sol_a.space] + ([sol_b.space] if sol_b is not None and not callable(sol_b) else [])
    for i in patches:
        axes = _merged_axes(spaces, i, nq)
        pts, ca, va, jac = sol_a.space.evaluate_grid(i, [a[0] for a in axes], sol_a.coeffs, field == "value")
        fa = ca if field == "curl" else va
        if sol_b is None:
            diff = fa
        elif callable(sol_b):
            diff = fa - np.asarray(sol_b(pts.reshape(-1, 3))).reshape(fa.shape)
        else:
            _, cb, vb, _ = sol_b.space.evaluate_grid(i, [a[0] for a in axes], sol_b.coeffs, field == "value")
            diff = fa - (cb if field == "curl" else vb)
        w = np.einsum("i,j,k->ijk", axes[0][1], axes[1][1], axes[2][1])
        det = np.abs(np.linalg.det(jac.reshape(-1, 3, 3))).reshape(w.shape)
        total += float(np.sum(np.sum(np.abs(diff) ** 2, axis=-1) * w * det))
    return total


def hcurl_seminorm_diff(sol_a, sol_b=None, patches=None, nq: int | None = None) -> float:
    """``|| curl(A_a - A_b) ||_{L2}`` over ``patches``.

    ``sol_b`` may be another solution on the same patch layout, a callable
    returning the reference curl at physical points, or ``None`` (norm of
    ``sol_a``).  Integration uses the union of both meshes' breakpoints with
    ``p + 2`` Gauss points per direction.
    """
    patches = sol_a.space.patch_ids if patches is None else patches
    if nq is None:
        p = max(sol_a.space.p, getattr(getattr(sol_b, "space", None), "p", 0))
        nq = p + 2
    return float(np.sqrt(_curl_sq_integral(sol_a, sol_b, patches, nq, "curl")))


def l2_diff(sol_a, sol_b=None, patches=None, nq: int | None = None) -> float:
    patches = sol_a.space.patch_ids if patches is None else patches
    nq = sol_a.space.p + 2 if nq is None else nq
    return float(np.sqrt(_curl_sq_integral(sol_a, sol_b, patches, nq, "value")))


def eoc(rows, use: str = "h", last: int = 3):
    """Per-step orders and a least-squares order over the last ``last`` rows.

    ``use='h'`` fits ``error ~ h^k``; ``use='dofs'`` fits ``error ~ dofs^(-k/3)``.
    Rows with zero error are dropped.
    """
    rows = [r for r in rows if r.error > 0]
    if len(rows) < 2:
        return [], float("nan")
    x = np.array([r.h for r in rows]) if use == "h" else np.array([1.0 / r.dofs_cbrt for r in rows])
    e = np.array([r.error for r in rows])
    steps = list(np.log(e[:-1] / e[1:]) / np.log(x[:-1] / x[1:]))
    sel = slice(-last, None) if last else slice(None)
    lx, le = np.log(x[sel]), np.log(e[sel])
    if lx.size < 2:
        return steps, float(steps[-1])
    slope = np.polyfit(lx, le, 1)[0]
    return steps, float(slope)


def magnetic_energy(solution, patches=None, nq: int | None = None, scale: float = 1.0) -> float:
    """``(1/2) int nu |curl A|^2`` (peak-amplitude phasor convention)."""
    space = solution.space
    patches = space.patch_ids if patches is None else patches
    nq = space.p + 2 if nq is None else nq
    total = 0.0
    for i in patches:
        axes = _merged_axes([space], i, nq)
        _, c, _, jac = space.evaluate_grid(i, [a[0] for a in axes], solution.coeffs)
        w = np.einsum("i,j,k->ijk", axes[0][1], axes[1][1], axes[2][1])
        det = np.abs(np.linalg.det(jac.reshape(-1, 3, 3))).reshape(w.shape)
        total += 0.5 * space.domain.nu_of(i) * float(np.sum(np.sum(np.abs(c) ** 2, axis=-1) * w * det))
    return scale * total


def sample_B_line(evaluator, start, end, n: int):
    """``|B|`` at ``n`` equally spaced points of a segment.

    ``evaluator(points) -> (A, B)`` returns NaN rows for points outside the
    domain; those samples are flagged with ``inside = False``.
    """
    start, end = np.asarray(start, float), np.asarray(end, float)
    t = np.linspace(0.0, 1.0, n)
    pts = start[None] + t[:, None] * (end - start)[None]
    _, B = evaluator(pts)
    inside = ~np.any(np.isnan(B), axis=1)
    mag = np.where(inside, np.sqrt(np.sum(np.abs(np.nan_to_num(B)) ** 2, axis=1)), np.nan)
    return pts, mag, inside


@dataclass(frozen=True)
class KEReport:
    interface: int
    interface_with_exterior_output: int
    volume: int

    @property
    def ratio_interior(self) -> float:
        return self.interface / self.volume

    @property
    def ratio_full(self) -> float:
        return self.interface_with_exterior_output / self.volume

    @property
    def reduction_interior(self) -> float:
        return 100.0 * (1.0 - self.ratio_interior)

    @property
    def reduction_full(self) -> float:
        return 100.0 * (1.0 - self.ratio_full)

    def rows(self):
        return [
            ("interface", self.interface),
            ("interface+exterior_output", self.interface_with_exterior_output),
            ("volume", self.volume),
        ]


def ke_report(space, gamma_elements: int, q: int | None = None, counter: KernelCounter | None = None) -> KEReport:
    """Interface versus volume kernel-evaluation counts on one discretization.

    The volume count is what the original method needs (every element of the
    domain at ``q^3`` points); the interface count uses ``q^2`` points on every
    surface element, plus ``q^3`` points on exterior elements when the total
    field is wanted everywhere.  A recorded ``counter`` overrides the computed
    interface count.
    """
    q = space.p + 1 if q is None else q
    n_vol = space.element_count() * q**3
    n_ext = space.element_count(space.domain.exterior_patches) * q**3
    n_int = gamma_elements * q**2
    if counter is not None and counter["interface"]:
        n_int = counter["interface"]
    return KEReport(int(n_int), int(n_int + n_ext), int(n_vol))
