"""Command-line entry point: ``msflow {linear,evolve,certify,sweep,selftest}``.

Configuration is a JSON file plus ``--set key=value`` overrides (dotted keys
reach into nested tables, values are parsed as JSON when possible).  Exit
codes: 0 pass, 1 failed scientific check or aborted run, 2 usage or config
error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from . import curve as cv
from . import diagnostics, evolution, hedcore, linearized, potentials

SCHEMA_VERSION = 1

DEFAULTS = {
    "n": 256,
    "period": 2 * math.pi,
    "seed": 0,
    "out": "msflow_out",
    "init": {"type": "multimode", "eps0": 0.1, "modes": list(range(1, 9)), "decay": 2.0},
    "t_end": 10.0,
    "dt_init": 1e-4,
    "dt_min": 1e-10,
    "dt_max": 0.05,
    "tol_edi": 1e-6,
    "probe_every": 0,
    "snapshot_every": 0,
    "alpha": 0.5,
    "margin": math.pi / 4,
    "record_bmo": True,
    "C_cfg": hedcore.C_THEOREM,
    "corollary": {"C": math.sqrt(2.0), "C_prime": 2.0},
    "linear_modes": [[1, 0.01, 0.0]],
    "times": 1000,
    "checks": ["brezis", "corollary", "theorem"],
    "sweep": {"kind": "amplitude", "amplitudes": [4e-4, 8e-4, 1.6e-3, 3.2e-3], "t": 0.5,
              "resolutions": [64, 128, 256, 512]},
}


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


@dataclass(frozen=True)
class RunConfig:
    mode: str
    n: int
    period: float
    seed: int
    out: str
    init: dict
    t_end: float
    dt_init: float
    dt_min: float
    dt_max: float
    tol_edi: float
    probe_every: int
    snapshot_every: int
    alpha: float
    margin: float
    record_bmo: bool
    C_cfg: float
    corollary: dict
    linear_modes: list
    times: int
    checks: list
    sweep: dict

    def stepper(self):
        try:
            return evolution.StepperConfig(
                n=self.n, period=self.period, t_end=self.t_end, dt_init=self.dt_init,
                dt_min=self.dt_min, dt_max=self.dt_max, tol_edi=self.tol_edi,
                probe_every=self.probe_every, snapshot_every=self.snapshot_every,
                alpha=self.alpha, margin=self.margin, record_bmo=self.record_bmo)
        except evolution.ConfigError as err:
            raise ConfigError(str(err).split()[0], str(err)) from None


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(cfg, key, value):
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(key, "is not a nested table")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(key, "unknown key")
    node[parts[-1]] = value


def load_config(mode, path=None, overrides=()):
    """Merge defaults, an optional JSON file and ``key=value`` overrides, then validate."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError("config", f"cannot read {path}: {err}") from None
        if not isinstance(user, dict):
            raise ConfigError("config", "top level must be a JSON object")
        for key, value in user.items():
            if key not in cfg:
                raise ConfigError(key, "unknown key")
            if isinstance(cfg[key], dict) and isinstance(value, dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, text = item.split("=", 1)
        _set_dotted(cfg, key.strip(), _parse_value(text))
    return validate(RunConfig(mode=mode, **cfg))


def validate(cfg):
    def need(field, ok, what):
        if not ok:
            raise ConfigError(field, f"must be {what}, got {getattr(cfg, field, None)!r}")

    need("n", isinstance(cfg.n, int) and cfg.n >= 16 and not cfg.n & (cfg.n - 1),
         "a power of two >= 16")
    need("period", isinstance(cfg.period, (int, float)) and cfg.period > 0, "positive")
    need("seed", isinstance(cfg.seed, int), "an integer")
    need("times", isinstance(cfg.times, int) and cfg.times >= 3, "an integer >= 3")
    need("C_cfg", isinstance(cfg.C_cfg, (int, float)) and cfg.C_cfg >= 0, "nonnegative")
    for key in ("t_end", "dt_init", "dt_min", "dt_max", "tol_edi", "alpha", "margin"):
        need(key, isinstance(getattr(cfg, key), (int, float)), "a number")
    for key in ("C", "C_prime"):
        v = cfg.corollary.get(key)
        if not isinstance(v, (int, float)) or v < 1:
            raise ConfigError(f"corollary.{key}", f"must be a number >= 1, got {v!r}")
    if not isinstance(cfg.linear_modes, list) or not cfg.linear_modes or not all(
            isinstance(m, list) and len(m) == 3 and isinstance(m[0], int) and m[0] >= 1
            for m in cfg.linear_modes):
        raise ConfigError("linear_modes", "must be a nonempty list of [m, amplitude, phase]")
    if any(2 * m[0] >= cfg.n for m in cfg.linear_modes):
        raise ConfigError("linear_modes", "mode numbers must stay below n/2")
    kind = cfg.init.get("type")
    if kind not in ("multimode", "modes", "flat", "file"):
        raise ConfigError("init.type", f"must be multimode, modes, flat or file, got {kind!r}")
    if kind == "multimode":
        eps0 = cfg.init.get("eps0")
        if not isinstance(eps0, (int, float)) or not 0 < eps0 < 1:
            raise ConfigError("init.eps0", f"must lie in (0, 1), got {eps0!r}")
    if kind == "modes" and not isinstance(cfg.init.get("modes"), list):
        raise ConfigError("init.modes", "must be a list of [m, amplitude, phase]")
    if kind == "file" and not isinstance(cfg.init.get("path"), str):
        raise ConfigError("init.path", "must name a height file")
    bad = [c for c in cfg.checks if c not in ("brezis", "corollary", "theorem")]
    if bad:
        raise ConfigError("checks", f"unknown checks {bad}")
    cfg.stepper()
    return cfg


def initial_graph(cfg):
    init = cfg.init
    kind = init["type"]
    if kind == "flat":
        return cv.PeriodicGraph(cfg.period, np.zeros(cfg.n), cfg.margin)
    if kind == "modes":
        return cv.PeriodicGraph.from_modes(cfg.period, cfg.n, [tuple(m) for m in init["modes"]],
                                           cfg.margin)
    if kind == "file":
        h = np.loadtxt(init["path"])
        return cv.PeriodicGraph(cfg.period, h - np.mean(h), cfg.margin)
    return evolution.multimode_graph(cfg.period, cfg.n, init["eps0"],
                                     modes=init.get("modes", range(1, 9)),
                                     decay=init.get("decay", 2.0), seed=cfg.seed,
                                     margin=cfg.margin)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, command, cfg, files, extra=None):
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "code_version": __version__,
        "config": asdict(cfg),
        "files": {os.path.relpath(p, out): sha256_file(p) for p in sorted(files)},
    }
    manifest.update(extra or {})
    path = os.path.join(out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, range):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


# commands


def cmd_linear(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    x = np.arange(cfg.n) * cfg.period / cfg.n
    h = sum(a * np.sin(2 * np.pi * m * x / cfg.period + p) for m, a, p in cfg.linear_modes)
    s0 = linearized.SpectralState.from_heights(cfg.period, h)
    times = linearized.default_times(s0, cfg.times)
    rep = linearized.linear_chain_check(s0, times)
    grid = np.concatenate([[0.0], times])
    trace_path = os.path.join(cfg.out, "linear_trace.csv")
    diagnostics.write_csv(trace_path, linearized.linear_records(s0, grid), model="linear")
    E, D, H, _ = linearized.quantities_at(s0, grid)
    tr = hedcore.GradientFlowTrace(grid, H, E, D, "linear")
    cert = hedcore.corollary_check(tr, cfg.corollary["C"], cfg.corollary["C_prime"])
    data = {
        "linear_chain": {
            "checks": rep.checks,
            "sup_tE_over_H0": rep.sup_tE,
            "sup_tE_time": rep.sup_tE_time,
            "sup_t2D_over_H0": rep.sup_t2D,
            "hed_ratio_max": rep.hed_ratio_max,
            "identity_residual": rep.identity_residual,
            "C1": rep.C1,
            "single_mode_peak": linearized.SINGLE_MODE_PEAK,
        },
        "corollary": cert.to_dict(),
    }
    cert_path = os.path.join(cfg.out, "certificate.json")
    _write_json(cert_path, data)
    passed = rep.passed and cert.passed
    write_manifest(cfg.out, "linear", cfg, [trace_path, cert_path], {"pass": passed})
    print(f"sup tE/H0 = {rep.sup_tE:.12g} (1/(4e) = {linearized.SINGLE_MODE_PEAK:.12g}), "
          f"C1 = {rep.C1:.10g}: {'pass' if passed else 'FAIL'}")
    return 0 if passed else 1


def cmd_evolve(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    step_cfg = cfg.stepper()
    try:
        g0 = initial_graph(cfg)
    except cv.LeftGraphRegime as err:
        write_manifest(cfg.out, "evolve", cfg, [],
                       {"abort_reason": "left graph regime", "detail": str(err), "pass": False})
        print(f"aborted: left graph regime ({err})", file=sys.stderr)
        return 1
    snap_dir = os.path.join(cfg.out, "snapshots") if cfg.snapshot_every else None
    trace = evolution.run(g0, step_cfg, snapshot_dir=snap_dir)
    trace_path = os.path.join(cfg.out, "trace.csv")
    diagnostics.write_csv(trace_path, trace.records)
    files = [trace_path] + list(trace.snapshots)
    probes = None
    if trace.probes:
        mono = evolution.dissipation_monotonicity_probe(trace)
        probes = {"dissipation_ratio_min": mono.min_ratio, "alpha": mono.alpha,
                  "passed": mono.passed,
                  "samples": [asdict(p) for p in trace.probes]}
        probe_path = os.path.join(cfg.out, "probes.json")
        _write_json(probe_path, probes)
        files.append(probe_path)
    c0 = cv.graph_to_curve(g0, nodes="graph")
    summary = trace.summary()
    summary.pop("config")
    ok = trace.ok
    write_manifest(cfg.out, "evolve", cfg, files,
                   {"curve_hash": cv.curve_hash(c0), "pass": ok, **summary})
    last = trace.records[-1]
    print(f"t = {last.t:.6g}, steps {trace.accepted} (+{trace.rejected} rejected), "
          f"E = {last.E:.6g}, eps = {last.eps:.6g}, events {len(trace.events)}"
          + (f", aborted: {trace.abort_reason}" if trace.abort_reason else ""))
    return 0 if ok else 1


def cmd_certify(cfg, trace_file):
    try:
        with open(trace_file) as fh:
            header = fh.readline().strip().split(",")
    except OSError as err:
        raise ConfigError("trace", f"cannot read {trace_file}: {err}") from None
    if header[:len(diagnostics.CSV_COLUMNS)] != list(diagnostics.CSV_COLUMNS):
        raise ConfigError("trace", f"schema mismatch: expected columns "
                                   f"{','.join(diagnostics.CSV_COLUMNS)}")
    try:
        records = diagnostics.read_csv(trace_file)
        tr = hedcore.GradientFlowTrace.from_records(records, os.path.basename(trace_file))
    except (ValueError, KeyError) as err:
        raise ConfigError("trace", str(err)) from None
    os.makedirs(cfg.out, exist_ok=True)
    out = {}
    if "brezis" in cfg.checks:
        out["brezis"] = hedcore.brezis_check(tr)
    if "corollary" in cfg.checks:
        out["corollary"] = hedcore.corollary_check(tr, cfg.corollary["C"],
                                                   cfg.corollary["C_prime"])
    skipped = []
    if "theorem" in cfg.checks:
        if tr.eps is None:
            skipped.append("theorem")
        else:
            out["theorem"] = hedcore.theorem_rate_check(tr, C_cfg=cfg.C_cfg)
    data = {k: v.to_dict() for k, v in out.items()}
    data["skipped"] = skipped
    path = os.path.join(cfg.out, "certificate.json")
    _write_json(path, data)
    for name, cert in out.items():
        status = "pass" if cert.passed else "FAIL"
        print(f"{name:10s} {status}")
        for c in cert.checks:
            if not c.passed:
                print(f"    {c.name}: margin {c.worst_margin:.3e} at t = {c.worst_t:.6g} {c.detail}")
    for name in skipped:
        print(f"{name:10s} skipped (trace has no eps column)")
    return 0 if all(c.passed for c in out.values()) else 1


def _amplitude_cell(args):
    n, period, amp, t_end = args
    try:
        g = cv.PeriodicGraph.from_modes(period, n, [(1, amp, 0.0)])
        cfg = evolution.StepperConfig(n=n, period=period, t_end=t_end, record_bmo=False)
        trace = evolution.run(g, cfg)
        lin = linearized.evolve_exact(linearized.SpectralState.from_heights(period, g.heights),
                                      t_end).heights()
        err = float(np.linalg.norm(trace.final_state.heights - lin) / np.linalg.norm(lin))
        return {"amplitude": amp, "n": n, "error": err, "status": trace.abort_reason or "ok"}
    except Exception as exc:  # recorded per cell
        return {"amplitude": amp, "n": n, "error": math.nan, "status": f"error: {exc}"}


def _resolution_cell(args):
    n, period = args
    try:
        c = cv.graph_to_curve(cv.PeriodicGraph(period, np.zeros(n)))
        lam, _ = potentials.assemble(c).N_eigs
        m = np.arange(1, n // 4 + 1)
        exact = np.repeat(2 * 2 * np.pi * m / period, 2)
        err = float(np.max(np.abs(lam[1:1 + exact.size] - exact) / exact))
        return {"n": n, "error": err, "status": "ok"}
    except Exception as exc:
        return {"n": n, "error": math.nan, "status": f"error: {exc}"}


def fitted_order(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = np.isfinite(y) & (y > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def cmd_sweep(cfg, jobs=1):
    sw = cfg.sweep
    kind = sw.get("kind")
    if kind == "amplitude":
        grid = [(cfg.n, cfg.period, float(a), float(sw.get("t", 0.5)))
                for a in sw.get("amplitudes", [])]
        worker = _amplitude_cell
    elif kind == "resolution":
        grid = [(int(n), cfg.period) for n in sw.get("resolutions", [])]
        worker = _resolution_cell
    else:
        raise ConfigError("sweep.kind", f"must be amplitude or resolution, got {kind!r}")
    if not grid:
        raise ConfigError(f"sweep.{'amplitudes' if kind == 'amplitude' else 'resolutions'}",
                          "empty sweep grid")
    os.makedirs(cfg.out, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(worker, grid))
    else:
        cells = [worker(a) for a in grid]
    path = os.path.join(cfg.out, "sweep_summary.csv")
    with open(path, "w") as fh:
        if kind == "amplitude":
            order = fitted_order([c["amplitude"] for c in cells], [c["error"] for c in cells])
            fh.write("amplitude,n,error,status\n")
            for c in cells:
                fh.write(f"{c['amplitude']:.17g},{c['n']},{c['error']:.17g},{c['status']}\n")
            fh.write(f"# fitted_order={order:.17g}\n")
            print(f"fitted nonlinear-vs-linear order {order:.4f}")
            summary = {"fitted_order": order}
        else:
            fh.write("n,error,status\n")
            for c in cells:
                fh.write(f"{c['n']},{c['error']:.17g},{c['status']}\n")
            summary = {"errors": {c["n"]: c["error"] for c in cells}}
            for c in cells:
                print(f"n = {c['n']:4d}: flat spectrum error {c['error']:.3e}")
    failed = [c for c in cells if c["status"] != "ok"]
    write_manifest(cfg.out, "sweep", cfg, [path], {"summary": summary, "failed_cells": failed})
    return 1 if failed else 0


def cmd_selftest(cfg, mutate=None):
    from .selftest import run_selftest

    os.makedirs(cfg.out, exist_ok=True)
    if mutate == "kappa-sign":
        with cv.kappa_sign_flip():
            rows = run_selftest(cfg.out)
    else:
        rows = run_selftest(cfg.out)
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{name:<{width}}  {'pass' if ok else 'FAIL'}  {detail}")
    return 0 if all(ok for _, ok, _ in rows) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="msflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"msflow {__version__}")
    sub = p.add_subparsers(dest="mode", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration value (repeatable)")
        sp.add_argument("--out", help="output directory")

    common(sub.add_parser("linear", help="exact linearized decay study"))
    common(sub.add_parser("evolve", help="nonlinear run with diagnostics"))
    sp = sub.add_parser("certify", help="certify a diagnostics trace CSV")
    sp.add_argument("trace")
    common(sp)
    sp = sub.add_parser("sweep", help="amplitude or resolution sweep")
    sp.add_argument("--jobs", type=int, default=1)
    common(sp)
    sp = sub.add_parser("selftest", help="invariant suite at n = 128")
    sp.add_argument("--mutate", choices=["kappa-sign"], help="inject a known defect")
    common(sp)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.out:
        overrides.append(f"out={json.dumps(args.out)}")
    try:
        cfg = load_config(args.mode, args.config, overrides)
        if args.mode == "selftest" and not any(o.startswith("n=") for o in overrides):
            cfg = validate(RunConfig(**{**asdict(cfg), "n": 128}))
        if args.mode == "linear":
            return cmd_linear(cfg)
        if args.mode == "evolve":
            return cmd_evolve(cfg)
        if args.mode == "certify":
            return cmd_certify(cfg, args.trace)
        if args.mode == "sweep":
            if args.jobs < 1:
                raise ConfigError("jobs", "must be >= 1")
            return cmd_sweep(cfg, args.jobs)
        return cmd_selftest(cfg, args.mutate)
    except ConfigError as err:
        print(f"msflow: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
