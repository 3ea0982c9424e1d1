"""Fast invariant suite at n = 128, one row per acceptance criterion."""

from __future__ import annotations

import filecmp
import math
import os

import numpy as np

from . import curve as cv
from . import diagnostics, evolution, hedcore, linearized, potentials

N = 128
L = 2 * math.pi
STEP_LIMIT = 1000    # keeps a broken build from crawling


def _flat_spectrum():
    ops = potentials.assemble(cv.graph_to_curve(cv.PeriodicGraph(L, np.zeros(N))))
    lam = ops.N_eigs[0]
    m = np.arange(1, N // 4 + 1)
    exact = np.repeat(2.0 * m, 2)
    err = float(np.max(np.abs(lam[1:1 + exact.size] - exact) / exact))
    return err <= 1e-8, f"max rel error {err:.2e} for |m| <= {N // 4}"


def _linear_constants():
    rep = linearized.linear_chain_check(linearized.SpectralState.single_mode(L, N, 1, 0.01))
    err = abs(rep.sup_tE - linearized.SINGLE_MODE_PEAK)
    return rep.passed and err <= 1e-9, f"|sup tE/H0 - 1/(4e)| = {err:.2e}"


def _hed_saturation():
    s0 = linearized.SpectralState.single_mode(L, N, 3, 0.01)
    rep = linearized.linear_chain_check(s0)
    _, E, D, H, _ = linearized._moments(s0, rep.times)
    dev = float(np.max(np.abs(E / np.sqrt(H * D) - 0.5)))
    return dev <= 1e-12, f"max |ratio - 1/2| = {dev:.2e}"


def _linear_match():
    a, t_end = 1e-3, 0.5
    g = cv.PeriodicGraph.from_modes(L, N, [(1, a, 0.0)])
    cfg = evolution.StepperConfig(n=N, t_end=t_end, record_bmo=False, max_steps=STEP_LIMIT)
    try:
        trace = evolution.run(g, cfg)
    except (ValueError, RuntimeError) as err:
        return False, f"run failed: {err}"
    if trace.abort_reason:
        return False, f"run aborted: {trace.abort_reason}"
    lin = linearized.evolve_exact(linearized.SpectralState.from_heights(L, g.heights),
                                  t_end).heights()
    err = float(np.linalg.norm(trace.final_state.heights - lin) / np.linalg.norm(lin))
    return err <= 1e-3, f"relative error {err:.2e} at a = {a:g}"


def _static_hed(count=8):
    worst = math.inf
    for seed in range(count):
        g = evolution.multimode_graph(L, N, 0.15, seed=seed)
        st = evolution.evaluate(g.heights, L)
        c = st.curve
        H = diagnostics.squared_distance(c, st.ops)
        rep = diagnostics.hed_check(st.E, cv.nonoriented_excess(c), H, st.D,
                                    float(np.max(np.abs(c.angle))))
        worst = min(worst, rep.ebar_margin, rep.angle_margin)
    return worst >= -1e-8, f"worst margin {worst:.2e} over {count} graphs"


def _monitors():
    g = evolution.multimode_graph(L, N, 0.1, seed=1)
    trace = evolution.run(g, evolution.StepperConfig(n=N, t_end=0.5, record_bmo=False,
                                                        max_steps=STEP_LIMIT))
    names = sorted({e["monitor"] for e in trace.events})
    return trace.ok, (f"{trace.accepted} steps, events: {', '.join(names) or 'none'}"
                      + (f", aborted: {trace.abort_reason}" if trace.abort_reason else ""))


def _hessian():
    g = cv.PeriodicGraph.from_modes(L, N, [(1, 0.15, 0.0)])
    st = evolution.initial_state(g)
    coarse = evolution.hessian_probe(st, 4e-3)
    fine = evolution.hessian_probe(st, 2e-3)
    ok = fine.mismatch_V <= 0.05 and fine.mismatch_V < coarse.mismatch_V
    return ok, f"mismatch {coarse.mismatch_V:.2e} -> {fine.mismatch_V:.2e} under dt-halving"


def _toy_brezis():
    t = np.concatenate([[0.0], np.logspace(-3, 3, 200)])
    cert = hedcore.brezis_check(hedcore.toy_convex_flow(1.0, 0.5, t))
    margins = hedcore.toy_margins(1.0, 0.5, t)
    worst = min(float(np.min(v)) for v in margins.values())
    return cert.passed and worst >= 0, f"closed-form worst margin {worst:.2e}"


def _interpolation(fields=100, seed=0):
    rng = np.random.default_rng(seed)
    g = evolution.multimode_graph(L, N, 0.15, seed=seed)
    ops = potentials.assemble(cv.graph_to_curve(g, nodes="graph"))
    worst = math.inf
    for _ in range(fields):
        f = ops.meanzero_proj(rng.standard_normal(N) * np.arange(1, N + 1) ** -rng.uniform(0, 2))
        m = potentials.interpolation_margins(ops, f)
        worst = min(worst, m["INT1"], m["INT2"], m["INT4"])
    return worst >= 0, f"worst margin {worst:.2e} over {fields} fields"


def _determinism(out):
    g = evolution.multimode_graph(L, N, 0.1, seed=2)
    cfg = evolution.StepperConfig(n=N, t_end=0.05, record_bmo=False, max_steps=STEP_LIMIT)
    paths = []
    for k in range(2):
        path = os.path.join(out, f"selftest_trace_{k}.csv")
        diagnostics.write_csv(path, evolution.run(g, cfg).records)
        paths.append(path)
    same = filecmp.cmp(*paths, shallow=False)
    return same, "trace CSVs identical" if same else "trace CSVs differ"


CHECKS = (
    ("1 flat spectrum", _flat_spectrum),
    ("2 linear constants", _linear_constants),
    ("3 HED saturation", _hed_saturation),
    ("4 linear match", _linear_match),
    ("5 static HED", _static_hed),
    ("6 regime monitors", _monitors),
    ("7 Hessian probe", _hessian),
    ("8 toy Brezis chain", _toy_brezis),
    ("9 interpolation", _interpolation),
)


def run_selftest(out):
    """Run every check; returns ``(name, passed, detail)`` rows."""
    os.makedirs(out, exist_ok=True)
    rows = []
    for name, fn in CHECKS + (("10 determinism", lambda: _determinism(out)),):
        try:
            ok, detail = fn()
        except Exception as err:  # a crash is a failed row, not a crashed suite
            ok, detail = False, f"{type(err).__name__}: {err}"
        rows.append((name, bool(ok), detail))
    return rows
