"""Acceptance criteria, each at its stated tolerance.

Every criterion records one PASS/FAIL line; the lines are printed in the
terminal summary of the pytest run (and immediately with ``pytest -s``).
The convergence criteria solve overkill references and take several minutes.
"""

from pathlib import Path

import numpy as np
import pytest

from rmvp.analysis import eoc, hcurl_seminorm_diff, ke_report
from rmvp.assembly import assemble_curl_curl
from rmvp.config import config_from_dict, load_config
from rmvp.domain import MU0
from rmvp.source import KernelRule, circular_coil, eval_A_s, eval_B_s, quadrature_study, volume_rule
from rmvp.solver import FieldSolution, solve_image, solve_rmvp, source_on_gamma
from rmvp.spaces import CurlSpace, interpolate_gradient
from rmvp.splines import KnotVector
from rmvp.studies import (convergence_series, make_domain, make_frequency, make_source, reference_solution,
                          run_helix)
from rmvp.traces import dirichlet_trace, field_on_gamma, gamma_rule

ROOT = Path(__file__).resolve().parents[1]
RESULTS: dict[int, str] = {}

# plotted trapezoidal errors for n = 2, 4, ..., 128
PLOTTED_TRAPEZOIDAL = np.array([1.05, 0.23, 0.035, 2.1e-3, 2.23e-5, 6.81e-9, 1.7e-13])


def record(n: int, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok


@pytest.fixture(scope="module")
def verify_cfg():
    return config_from_dict({"degrees": [1, 2], "levels": [1, 2, 3, 4], "quadrature": {"n_quad": 128}})


@pytest.fixture(scope="module")
def setup(verify_cfg):
    return make_domain(verify_cfg), make_source(verify_cfg), make_frequency(verify_cfg)


@pytest.fixture(scope="module")
def references(verify_cfg, setup):
    """Degree p+1 two levels above the finest mesh, for p = 1 and p = 2."""
    domain, source, freq = setup
    kernel = KernelRule("trapezoidal", 128)
    top = max(verify_cfg.levels) + verify_cfg.reference_extra_levels
    return {p: reference_solution(verify_cfg, domain, source, freq, p + 1, top, kernel) for p in (1, 2)}


@pytest.fixture(scope="module")
def p2_curves(verify_cfg, setup, references):
    domain, source, freq = setup
    kernel = KernelRule("trapezoidal", 128)
    matched = convergence_series(verify_cfg, domain, source, freq, 2, verify_cfg.levels, references[2], kernel)
    degraded = convergence_series(verify_cfg, domain, source, freq, 2, verify_cfg.levels, references[2], kernel,
                                  trace_degree=1)
    return matched, degraded


def _fmt(rows):
    return "[" + ", ".join(f"{r.error:.3e}" for r in rows) + "]"


# -- 1 -----------------------------------------------------------------------------

def test_criterion_1_quadrature_spectral_decay():
    cfg = load_config(ROOT / "configs" / "quad.yaml")
    domain, source = make_domain(cfg), make_source(cfg)
    pts, w = volume_rule(domain, domain.interior_patches, cfg.quadrature.volume_subdivisions,
                         cfg.quadrature.volume_order)
    rows = quadrature_study(source, cfg.coil.radius, pts, w, ns=[2, 4, 8, 16, 32, 64, 128])
    tr = np.array([r.l2_error for r in rows if r.rule == "trapezoidal"])
    ga = np.array([r.l2_error for r in rows if r.rule == "gauss"])
    r16, r32 = tr[3] / tr[4], tr[4] / tr[5]
    # single normalization constant: minimax fit in log space
    logr = np.log(PLOTTED_TRAPEZOIDAL / tr)
    c = np.exp(0.5 * (logr.max() + logr.min()))
    factors = c * tr / PLOTTED_TRAPEZOIDAL
    worst = float(np.max(np.maximum(factors, 1 / factors)))
    gauss_gap = ga[4] / tr[4]
    ok = r16 >= 50 and r32 >= 1e3 and worst <= 5 and gauss_gap >= 10
    record(1, ok, f"e16/e32={r16:.1f} (>=50), e32/e64={r32:.3g} (>=1e3), worst factor={worst:.2f} (<=5, c={c:.3f}), "
                  f"gauss/trap at 32={gauss_gap:.1f} (>=10)")
    assert ok


# -- 2 -----------------------------------------------------------------------------

def test_criterion_2_optimal_rates(verify_cfg, setup, references, p2_curves):
    domain, source, freq = setup
    kernel = KernelRule("trapezoidal", 128)
    p1 = convergence_series(verify_cfg, domain, source, freq, 1, verify_cfg.levels, references[1], kernel)
    k1, k2 = eoc(p1)[1], eoc(p2_curves[0])[1]
    ok = k1 >= 0.8 and k2 >= 1.8 and len(p1) >= 3
    record(2, ok, f"EOC p=1 {k1:.3f} (>=0.8) {_fmt(p1)}; EOC p=2 {k2:.3f} (>=1.8) {_fmt(p2_curves[0])}")
    assert ok


# -- 3 -----------------------------------------------------------------------------

def test_criterion_3_trace_mismatch(p2_curves):
    matched, degraded = p2_curves
    km, kd = eoc(matched)[1], eoc(degraded)[1]
    ok = km >= 1.8 and 0.7 <= kd <= 1.3
    record(3, ok, f"matched EOC {km:.3f} (>=1.8); degraded EOC {kd:.3f} (in [0.7, 1.3]) {_fmt(degraded)}")
    assert ok


# -- 4 -----------------------------------------------------------------------------

def test_criterion_4_quadrature_limited_accuracy():
    cfg = load_config(ROOT / "configs" / "quad.yaml")
    domain, source, freq = make_domain(cfg), make_source(cfg), make_frequency(cfg)
    # degree-p reference: the curves differ only in the kernel quadrature
    ref = reference_solution(cfg, domain, source, freq, 3, max(cfg.levels) + cfg.reference_extra_levels,
                             KernelRule("trapezoidal", 128))
    curves = {n: convergence_series(cfg, domain, source, freq, 3, cfg.levels, ref, KernelRule("trapezoidal", n))
              for n in (26, 64, 128)}
    plateau = curves[26][-1].error / curves[64][-1].error
    agree = max(abs(a.error - b.error) / b.error for a, b in zip(curves[64], curves[128]))
    ok = plateau >= 1.5 and agree <= 0.02
    record(4, ok, f"e26/e64 at level {cfg.levels[-1]} = {plateau:.2f} (>=1.5); max |e64-e128|/e128 = {agree:.2e} "
                  f"(<=0.02); n26 {_fmt(curves[26])}, n64 {_fmt(curves[64])}")
    assert ok


# -- 5 -----------------------------------------------------------------------------

def test_criterion_5_kernel_evaluation_reduction(tmp_path):
    cfg = load_config(ROOT / "configs" / "helix.yaml")
    out = run_helix(cfg, tmp_path)
    rep, dofs = out["report"], out["result"].space.n_edges
    domain = make_domain(cfg, symmetry="none")
    p = cfg.degrees[0]
    ratios = []
    for level in range(1, cfg.levels[0] + 2):
        V = CurlSpace(domain, p, level)
        r = ke_report(V, gamma_rule(domain, level, p + 1).n_elements, p + 1)
        ratios.append((r.ratio_interior, r.ratio_full))
    ratios = np.array(ratios)
    monotone = bool(np.all(np.diff(ratios, axis=0) < 0))
    ok = 12_000 <= dofs <= 25_000 and rep.ratio_interior <= 0.15 and rep.ratio_full <= 0.5 and monotone
    record(5, ok, f"dofs={dofs}, interface={rep.interface}, volume={rep.volume}: ratio {rep.ratio_interior:.3f} "
                  f"(<=0.15), with exterior output {rep.ratio_full:.3f} (<=0.5), monotone under refinement={monotone}")
    assert ok


# -- 6 -----------------------------------------------------------------------------

def _ls_rate(hs, errs):
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def test_criterion_6_invariants(setup):
    domain, source, freq = setup
    checks = {}
    rng = np.random.default_rng(2024)

    # partition of unity
    worst = 0.0
    for p in (1, 2, 3):
        kv = KnotVector.uniform(5, p)
        _, ders = kv.eval_many(rng.random(200))
        worst = max(worst, float(np.abs(ders[0].sum(axis=-1) - 1).max()))
    checks["partition of unity"] = (worst <= 1e-13, f"{worst:.1e}")

    # curl-curl annihilates discrete gradients
    V = CurlSpace(domain, 2, 2)
    K = assemble_curl_curl(V)
    g = interpolate_gradient(V, rng.normal(size=V.n_vertices))
    kg = float(np.abs(K @ g).max() / (abs(K).max() * np.abs(g).max()))
    checks["K grad = 0"] = (kg <= 1e-11, f"{kg:.1e}")

    # gauge invariance of the seminorm
    u = rng.normal(size=V.n_edges)
    a, b = FieldSolution(V, u, "a"), FieldSolution(V, u + 5 * g, "b")
    gi = abs(hcurl_seminorm_diff(a) - hcurl_seminorm_diff(b)) / hcurl_seminorm_diff(a)
    checks["gauge invariance"] = (gi <= 1e-10, f"{gi:.1e}")

    # trace residual of A_m + A_s and tangential jump of the total field across Gamma
    kernel = KernelRule("trapezoidal", 256)
    levels = (2, 3, 4, 5)
    for p in (1, 2):
        hs, res_err, jump_err = [], [], []
        for m in levels:
            r = solve_rmvp(domain, source, p, m, freq, kernel, nq_surface=p + 3)
            rule = r.rule
            As_t = np.cross(r.A_s_gamma, rule.normals)
            resid = dirichlet_trace(r.ext_space, r.image.coeffs, rule, "exterior") + As_t
            inner = dirichlet_trace(r.space, r.reaction.coeffs, rule, "interior")
            outer = dirichlet_trace(r.space, r.reaction.coeffs, rule, "exterior") + resid
            l2 = lambda f: np.sqrt(np.sum(rule.weights * np.sum(np.abs(f) ** 2, axis=1)))
            hs.append(r.space.max_element_diameter())
            res_err.append(l2(resid))
            jump_err.append(l2(outer - inner))
        kr, kj = _ls_rate(hs, res_err), _ls_rate(hs, jump_err)
        dec = bool(np.all(np.diff(res_err) < 0) and np.all(np.diff(jump_err) < 0))
        checks[f"trace residual p={p}"] = (kr >= p and dec, f"rate {kr:.2f}")
        checks[f"total-field jump p={p}"] = (kj >= p and dec, f"rate {kj:.2f}")

    # source fields linear in the ampere-turns (exact in floating point for power-of-two factors)
    pts = rng.uniform(-0.02, 0.02, size=(50, 3))
    s1, s4 = circular_coil(0.025, 320.0), circular_coil(0.025, 1280.0)
    k64 = KernelRule("trapezoidal", 64)
    lin = max(float(np.abs(eval_A_s(s4, k64, pts) - 4 * eval_A_s(s1, k64, pts)).max()),
              float(np.abs(eval_B_s(s4, k64, pts) - 4 * eval_B_s(s1, k64, pts)).max()))
    checks["linearity in NI"] = (lin == 0.0, f"{lin:.1e}")

    # on-axis field of a loop
    z = np.linspace(-0.05, 0.05, 11)
    Bz = eval_B_s(s1, KernelRule("trapezoidal", 256), np.column_stack([0 * z, 0 * z, z]))[:, 2]
    exact = MU0 * 320.0 * 0.025**2 / (2 * (0.025**2 + z**2) ** 1.5)
    ax = float(np.abs(Bz / exact - 1).max())
    checks["on-axis B"] = (ax <= 1e-10, f"{ax:.1e}")

    ok = all(v[0] for v in checks.values())
    record(6, ok, "; ".join(f"{k} {'ok' if v[0] else 'FAIL'} ({v[1]})" for k, v in checks.items()))
    assert ok


# -- 7 -----------------------------------------------------------------------------

def test_criterion_7_documented_as_non_reproducible():
    text = (ROOT / "README.md").read_text()
    ok = "non-reproducible" in text.lower() and all(k in text for k in ("Bowler", "Flux", "wall-clock"))
    record(7, ok, "analytic Bowler error levels, the Flux energy comparison and wall-clock runtimes are out of "
                  "scope; README states this")
    assert ok
