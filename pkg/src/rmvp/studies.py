"""The four reproducible studies: verify, quad, trace and helix.

Each study writes CSV files into the output directory.  Every file starts with
the resolved configuration as ``# ``-prefixed JSON lines, followed by a header
row and the data.  Output is deterministic for a given configuration (no
timings or timestamps are written).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (ConvergenceRow, KernelCounter, eoc, hcurl_seminorm_diff, ke_report, magnetic_energy,
                       sample_B_line)
from .config import StudyConfig
from .domain import FrequencySettings, build_cylinder_in_box
from .solver import solve_rmvp, total_field
from .source import (CoilSource, KernelRule, build_helicoidal_coil, circular_coil, eval_B_s, quadrature_study,
                     volume_rule)
from .traces import gamma_rule, tangential

log = logging.getLogger(__name__)

CONVERGENCE_FIELDS = ["level", "h", "dofs", "dofs_cbrt", "error", "kind"]


class CsvWriter:
    """CSV file with the resolved configuration as a comment header; rows are flushed immediately."""

    def __init__(self, path: Path, config: StudyConfig, fields: list[str]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        for line in config.header_lines():
            self._fh.write(line + "\n")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(fields)
        self._fh.flush()

    def row(self, values):
        self._w.writerow([_fmt(v) for v in values])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path) -> list[dict]:
    """Rows of a study CSV (comment lines skipped) as dicts of strings."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# -- builders --------------------------------------------------------------------

def make_domain(cfg: StudyConfig, symmetry: str | None = None):
    g = cfg.geometry
    return build_cylinder_in_box(g.r_cyl, g.h_cyl, g.r_interface, g.box_half_width,
                                 gamma_half_height=g.gamma_half_height, box_half_height=g.box_half_height,
                                 gamma_shape=g.gamma_shape, symmetry=g.symmetry if symmetry is None else symmetry,
                                 sigma=g.sigma, mu_r=g.mu_r, divisions=g.divisions)


def make_source(cfg: StudyConfig) -> CoilSource:
    c = cfg.coil
    if c.kind == "circle":
        return circular_coil(c.radius, c.current, c.turns, z=c.z)
    # a helix with no windings carries no current but keeps a valid curve
    current = c.current if c.turns else 0.0
    return build_helicoidal_coil(c.radius, c.pitch, max(c.turns, 1), current, center_z=c.z,
                                 points_per_turn=c.points_per_turn)


def make_frequency(cfg: StudyConfig) -> FrequencySettings:
    return FrequencySettings.from_hz(cfg.coil.frequency, sign=cfg.sign)


def kernel_nodes(cfg: StudyConfig) -> int:
    """Total kernel quadrature nodes: ``n_quad`` per winding of the coil."""
    turns = cfg.coil.turns if cfg.coil.kind == "helix" else 1
    return int(cfg.quadrature.n_quad) * max(int(turns), 1)


@dataclass
class AdaptiveResult:
    n_quad: int
    history: list = field(default_factory=list)   # (n, relative change)


def adaptive_kernel(source: CoilSource, points, normals, kind: str = "trapezoidal", n0: int = 16,
                    tol: float = 1e-10, n_max: int = 4096) -> AdaptiveResult:
    """Double the node count until the sampled source part of ``K_g`` changes by less than ``tol``.

    The change is measured as ``max |K(2n) - K(n)| / max |K(2n)|`` over the
    given surface points.
    """
    n = int(n0)
    prev = tangential(np.cross(eval_B_s(source, KernelRule(kind, n), points), normals), normals)
    history = []
    while True:
        if 2 * n > n_max:
            raise RuntimeError(f"adaptive quadrature did not reach tol={tol:g} with {n_max} nodes")
        n *= 2
        cur = tangential(np.cross(eval_B_s(source, KernelRule(kind, n), points), normals), normals)
        scale = np.abs(cur).max()
        change = float(np.abs(cur - prev).max() / scale) if scale > 0 else 0.0
        history.append((n, change))
        if change < tol:
            return AdaptiveResult(n, history)
        prev = cur


def resolve_kernel(cfg: StudyConfig, domain, source: CoilSource, level: int, degree: int) -> KernelRule:
    q = cfg.quadrature
    if not q.adaptive:
        return KernelRule(q.rule, kernel_nodes(cfg))
    rule = gamma_rule(domain, level, degree + 1)
    res = adaptive_kernel(source, rule.points, rule.normals, q.rule, n0=min(q.n_quad, 16),
                          tol=q.adaptive_tol, n_max=q.adaptive_max * max(cfg.coil.turns, 1))
    log.info("adaptive kernel quadrature: %d nodes (%s)", res.n_quad, res.history)
    return KernelRule(q.rule, res.n_quad)


def convergence_series(cfg, domain, source, freq, degree, levels, reference, kernel, writer=None, **kw):
    """Rows of one convergence curve against ``reference`` (a solution), measured over V_int."""
    scale = np.sqrt(domain.symmetry_factor)
    rows = []
    for m in levels:
        res = solve_rmvp(domain, source, degree, m, freq, kernel, method=cfg.method, pairing=cfg.pairing, **kw)
        err = scale * hcurl_seminorm_diff(res.reaction, reference, patches=domain.interior_patches)
        row = ConvergenceRow(m, res.space.max_element_diameter(), res.space.n_edges, err)
        rows.append(row)
        if writer is not None:
            writer.row([row.level, row.h, row.dofs, row.dofs_cbrt, row.error, row.kind])
        log.info("p=%d level=%d dofs=%d error=%.3e", degree, m, row.dofs, err)
    return rows


def reference_solution(cfg, domain, source, freq, degree, level, kernel):
    res = solve_rmvp(domain, source, degree, level, freq, kernel, method=cfg.method, pairing=cfg.pairing)
    return res.reaction


def _eoc_row(name, rows):
    _, k_h = eoc(rows, "h")
    _, k_n = eoc(rows, "dofs")
    return [name, k_h, k_n]


# -- studies ---------------------------------------------------------------------

def run_verify(cfg: StudyConfig, out) -> dict:
    """Self-convergence of the reaction field in V_int for every configured degree."""
    out = Path(out)
    domain, source, freq = make_domain(cfg), make_source(cfg), make_frequency(cfg)
    summary = {}
    with CsvWriter(out / "verify_eoc.csv", cfg, ["series", "eoc_h", "eoc_dofs"]) as ew:
        for p in cfg.degrees:
            kernel = resolve_kernel(cfg, domain, source, max(cfg.levels), p)
            ref = reference_solution(cfg, domain, source, freq, p + cfg.reference_degree_offset,
                             max(cfg.levels) + cfg.reference_extra_levels, kernel)
            with CsvWriter(out / f"verify_p{p}.csv", cfg, CONVERGENCE_FIELDS) as w:
                rows = convergence_series(cfg, domain, source, freq, p, cfg.levels, ref, kernel, w)
            ew.row(_eoc_row(f"p{p}", rows))
            summary[p] = rows
    return summary


def run_quad(cfg: StudyConfig, out) -> dict:
    """Kernel quadrature error table, then convergence curves for several node counts."""
    out = Path(out)
    q = cfg.quadrature
    domain, source, freq = make_domain(cfg), make_source(cfg), make_frequency(cfg)
    if cfg.coil.kind != "circle":
        raise ValueError("the quadrature study needs a circular coil (closed-form reference)")
    pts, w = volume_rule(domain, domain.interior_patches, q.volume_subdivisions, q.volume_order)
    qrows = quadrature_study(source, cfg.coil.radius, pts, w, ns=q.study_ns, center=(0.0, 0.0, cfg.coil.z))
    with CsvWriter(out / "quad_study.csv", cfg, ["rule", "n_quad", "l2_error"]) as wr:
        for r in qrows:
            wr.row([r.rule, r.n_quad, r.l2_error])
    curves = {}
    n_ref = max(q.convergence_ns)
    with CsvWriter(out / "quad_eoc.csv", cfg, ["series", "eoc_h", "eoc_dofs"]) as ew:
        for p in cfg.degrees:
            # degree p reference: the curves differ only by their kernel quadrature
            ref = reference_solution(cfg, domain, source, freq, p, max(cfg.levels) + cfg.reference_extra_levels,
                             KernelRule(q.rule, n_ref))
            for n in q.convergence_ns:
                with CsvWriter(out / f"quad_p{p}_n{n}.csv", cfg, CONVERGENCE_FIELDS) as w:
                    rows = convergence_series(cfg, domain, source, freq, p, cfg.levels, ref,
                                               KernelRule(q.rule, n), w)
                ew.row(_eoc_row(f"p{p}_n{n}", rows))
                curves[(p, n)] = rows
    return {"quadrature": qrows, "curves": curves}


def run_trace(cfg: StudyConfig, out) -> dict:
    """Matched versus degraded (degree p-1) trace space for the surface current."""
    out = Path(out)
    domain, source, freq = make_domain(cfg), make_source(cfg), make_frequency(cfg)
    result = {}
    with CsvWriter(out / "trace_eoc.csv", cfg, ["series", "eoc_h", "eoc_dofs"]) as ew:
        for p in cfg.degrees:
            if p < 2:
                raise ValueError("the trace study needs p >= 2 (no degree-0 trace space)")
            kernel = resolve_kernel(cfg, domain, source, max(cfg.levels), p)
            ref = reference_solution(cfg, domain, source, freq, p + cfg.reference_degree_offset,
                             max(cfg.levels) + cfg.reference_extra_levels, kernel)
            for name, td in (("matched", None), ("degraded", p - 1)):
                with CsvWriter(out / f"trace_p{p}_{name}.csv", cfg, CONVERGENCE_FIELDS) as w:
                    rows = convergence_series(cfg, domain, source, freq, p, cfg.levels, ref, kernel, w,
                                               trace_degree=td)
                ew.row(_eoc_row(f"p{p}_{name}", rows))
                result[(p, name)] = rows
    return result


def run_helix(cfg: StudyConfig, out) -> dict:
    """Helicoidal coil on the full domain: |B| along the x axis, kernel-evaluation counts, conductor energy."""
    out = Path(out)
    domain = make_domain(cfg, symmetry="none")
    source, freq = make_source(cfg), make_frequency(cfg)
    p, level = cfg.degrees[0], cfg.levels[0]
    kernel = resolve_kernel(cfg, domain, source, level, p)
    counter = KernelCounter()
    res = solve_rmvp(domain, source, p, level, freq, kernel, method=cfg.method, pairing=cfg.pairing,
                     counter=counter)
    log.info("helix: p=%d level=%d dofs=%d kernel nodes=%d", p, level, res.space.n_edges, kernel.n_quad)
    g = cfg.geometry
    xmax = np.nextafter(g.box_half_width, 0.0)
    pts, mag, inside = sample_B_line(lambda x: total_field(res, x, counter), [-xmax, 0.0, 0.0],
                                     [xmax, 0.0, 0.0], cfg.line_points)
    with CsvWriter(out / "helix_line.csv", cfg, ["x", "y", "z", "B_abs", "inside"]) as w:
        for x, b, ok in zip(pts, mag, inside):
            w.row([x[0], x[1], x[2], b, int(ok)])
    report = ke_report(res.space, res.rule.n_elements, p + 1, counter)
    with CsvWriter(out / "helix_ke.csv", cfg, ["context", "count"]) as w:
        for name, n in counter.counts.items():
            w.row([name, n])
        for name, n in report.rows():
            w.row([f"report_{name}", n])
    energy = magnetic_energy(res.reaction, domain.patches_with("conductor"))
    with CsvWriter(out / "helix_summary.csv", cfg, ["quantity", "value"]) as w:
        w.row(["dofs", res.space.n_edges])
        w.row(["kernel_nodes", kernel.n_quad])
        w.row(["ke_ratio_interior", report.ratio_interior])
        w.row(["ke_ratio_full", report.ratio_full])
        w.row(["ke_reduction_interior_percent", report.reduction_interior])
        w.row(["ke_reduction_full_percent", report.reduction_full])
        w.row(["conductor_energy_J", energy])
    return {"result": res, "line": (pts, mag, inside), "report": report, "energy": energy,
            "counts": counter.counts}


STUDY_RUNNERS = {"verify": run_verify, "quad": run_quad, "trace": run_trace, "helix": run_helix}
