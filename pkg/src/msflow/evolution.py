"""Nonlinear flow ``V = N(kappa)`` for periodic graphs.

Graph heights move by ``h_t = -V sqrt(1 + h'^2)`` (points travel with velocity
``V nu`` and ``nu`` points down), whose linearization is
``d/dt h_k = -2 |k|^3 h_k``.  That stiff symbol is integrated exactly and the
remainder is advanced with Heun's method in the integrating-factor frame.
Steps are accepted when the trapezoidal energy balance
``E(t + dt) - E(t) + dt (D(t) + D(t + dt)) / 2`` is within ``tol_edi * E(t)``.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import diagnostics, fourier
from .curve import (DEFAULT_MARGIN, LeftGraphRegime, PeriodicGraph, bmo_normal,
                    excess_energy, graph_to_curve, nonoriented_excess, write_snapshot)
from .potentials import assemble, tangential_derivative

MONITOR_RTOL = 1e-10
CONVEXITY_TOL = 1e-8


class ConfigError(ValueError):
    """A stepper configuration value outside its admissible range."""


@dataclass(frozen=True)
class StepperConfig:
    n: int = 256
    period: float = 2 * math.pi
    t_end: float = 1.0
    dt_init: float = 1e-4
    dt_min: float = 1e-10
    dt_max: float = 0.05
    tol_edi: float = 1e-6
    probe_every: int = 0
    snapshot_every: int = 0
    alpha: float = 0.5
    F_alpha: float = 1.0
    margin: float = DEFAULT_MARGIN
    record_bmo: bool = True
    frozen_stage_ops: bool = False
    max_steps: int = 1_000_000

    def __post_init__(self):
        checks = [
            ("n", self.n >= 16 and not self.n & (self.n - 1), "a power of two >= 16"),
            ("period", self.period > 0, "positive"),
            ("t_end", self.t_end >= 0, "nonnegative"),
            ("dt_min", self.dt_min > 0, "positive"),
            ("dt_max", self.dt_max >= self.dt_min, "at least dt_min"),
            ("dt_init", self.dt_min <= self.dt_init <= self.dt_max,
             "between dt_min and dt_max"),
            ("tol_edi", self.tol_edi > 0, "positive"),
            ("probe_every", self.probe_every >= 0, "nonnegative"),
            ("snapshot_every", self.snapshot_every >= 0, "nonnegative"),
            ("alpha", 0 < self.alpha < 1, "in (0, 1)"),
            ("F_alpha", self.F_alpha > 0, "positive"),
            ("max_steps", self.max_steps >= 1, "positive"),
            ("margin", 0 < self.margin < math.pi / 2, "in (0, pi/2)"),
        ]
        for name, ok, what in checks:
            if not ok:
                raise ConfigError(f"{name} must be {what}, got {getattr(self, name)!r}")


@dataclass
class FlowState:
    """One evaluated configuration: geometry, operators, velocity and scalars."""

    t: float
    graph: PeriodicGraph
    curve: object
    ops: object
    V: np.ndarray
    kappa: np.ndarray
    E: float
    D: float
    h_t: np.ndarray

    @property
    def heights(self):
        return self.graph.heights


def evaluate(h, period, t=0.0, margin=DEFAULT_MARGIN, ops=None):
    """Build the flow state at heights ``h``; ``ops`` reuses operators from another curve."""
    g = PeriodicGraph(period, h, margin)
    c = graph_to_curve(g, nodes="graph")
    if ops is None:
        ops = assemble(c)
    kappa = c.curvature
    V = ops.apply_N(kappa)
    if ops.curve is not c:
        V = V - c.integrate(V) / c.period_arclength
    speed = c.weights * g.n / period
    E = excess_energy(c)
    D = max(c.integrate(kappa * V), 0.0)
    return FlowState(t, g, c, ops, V, kappa, E, D, -V * speed)


def initial_state(g):
    return evaluate(g.heights, g.period, 0.0, g.margin)


def normal_velocity(st):
    """``V = N(kappa)``, sigma-mean-zero."""
    return st.V


def _symbol(n, period):
    k = np.abs(fourier.wavenumbers(n, period))
    return 2.0 * k**3


def _remainder(st, sym):
    """Fourier coefficients of ``h_t`` minus the linear part ``-2|k|^3 h``."""
    r = np.fft.fft(st.h_t) + sym * np.fft.fft(st.heights)
    r[0] = 0.0
    return r


def _from_hat(hat):
    h = np.real(np.fft.ifft(hat))
    return h - np.mean(h)


def advance(st, dt, margin=DEFAULT_MARGIN, frozen=False, r0=None):
    """One integrating-factor Heun step of size ``dt`` (no acceptance test).

    Returns ``(new_state, mean_drift)``.
    """
    L = st.graph.period
    sym = _symbol(st.graph.n, L)
    ef = np.exp(-sym * dt)
    h0 = np.fft.fft(st.heights)
    r0 = _remainder(st, sym) if r0 is None else r0
    stage = evaluate(_from_hat(ef * (h0 + dt * r0)), L, st.t + dt, margin,
                     ops=st.ops if frozen else None)
    r1 = _remainder(stage, sym)
    hat = ef * h0 + 0.5 * dt * (ef * r0 + r1)
    drift = abs(hat[0].real) / st.graph.n
    hat[0] = 0.0
    return evaluate(_from_hat(hat), L, st.t + dt, margin), drift


def edi_residual(st0, st1):
    dt = st1.t - st0.t
    return abs(st1.E - st0.E + 0.5 * dt * (st0.D + st1.D))


@dataclass
class StepResult:
    state: FlowState
    dt_used: float
    dt_next: float
    residual: float
    rejected: int
    drift: float


class StepAbort(RuntimeError):
    def __init__(self, reason, state):
        super().__init__(reason)
        self.reason = reason
        self.state = state


def step(st, cfg, dt=None):
    """Advance by one accepted step, halving ``dt`` until the energy balance holds."""
    dt = cfg.dt_init if dt is None else dt
    rejected = 0
    breach = False
    while True:
        if dt < cfg.dt_min:
            raise StepAbort("left graph regime" if breach else "dt underflow", st)
        try:
            new, drift = advance(st, dt, cfg.margin, cfg.frozen_stage_ops)
        except LeftGraphRegime:
            breach = True
            rejected += 1
            dt *= 0.5
            continue
        resid = edi_residual(st, new)
        allowed = cfg.tol_edi * st.E
        if resid <= allowed or st.E == 0.0:
            break
        rejected += 1
        dt *= 0.5
    if resid == 0.0:
        grow = 2.0
    else:
        grow = min(2.0, max(1.0, 0.9 * (allowed / resid) ** (1.0 / 3.0)))
    return StepResult(new, dt, min(dt * grow, cfg.dt_max), resid, rejected, drift)


@dataclass(frozen=True)
class ProbeSample:
    index: int
    t: float
    grad_V_sq: float       # int |d_tau V|^2
    kappa2_V2: float       # int kappa^2 V^2
    MV_V2: float           # int M(V) V^2
    hessian_V: float       # grad_V_sq - kappa2_V2 - MV_V2
    hessian_W: float       # same expression for W = nu_2 z_2


@dataclass
class FlowTrace:
    config: StepperConfig
    records: list = field(default_factory=list)
    accepted: int = 0
    rejected: int = 0
    events: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    abort_reason: str | None = None
    max_mean_drift: float = 0.0
    edi_cumulative: float = 0.0
    final_state: FlowState | None = field(default=None, repr=False)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def ok(self):
        return self.abort_reason is None and not self.events

    def summary(self):
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "abort_reason": self.abort_reason,
            "events": self.events,
            "max_mean_drift": self.max_mean_drift,
            "edi_cumulative": self.edi_cumulative,
            "config": asdict(self.config),
        }


def hessian_rhs(st, W):
    """``int (|d_tau W|^2 - kappa^2 W^2 - M(V) W^2) dsigma`` and its three parts."""
    c = st.curve
    dW = tangential_derivative(c, W)
    grad = c.integrate(dW * dW)
    k2 = c.integrate(st.kappa**2 * W * W)
    mw = c.integrate(st.ops.apply_M(st.V) * W * W)
    return grad - k2 - mw, grad, k2, mw


def _probe(st, index):
    total_v, grad, k2, mv = hessian_rhs(st, st.V)
    W = diagnostics.distance_density(st.curve)
    W = W - st.curve.integrate(W) / st.curve.period_arclength
    total_w = hessian_rhs(st, W)[0]
    return ProbeSample(index, st.t, grad, k2, mv, total_v, total_w)


def _record(st, cfg, resid):
    c, ops = st.curve, st.ops
    H = diagnostics.squared_distance(c, ops)
    root = math.sqrt(H) * math.sqrt(st.D)
    return diagnostics.DiagnosticsRecord(
        t=st.t, E=st.E, Ebar=nonoriented_excess(c), D=st.D, H=H,
        eps=diagnostics.scale_invariant(st.E, st.D),
        F=diagnostics.auxiliary_F(st.t, H, st.E, st.D, cfg.F_alpha),
        b_sup=float(np.max(np.abs(c.angle))),
        bmo=bmo_normal(c) if cfg.record_bmo else math.nan,
        hed_ratio=st.E / root if root > 0 else 0.0,
        residual_edi=resid,
    )


def monitor_events(records, E0=None):
    """Regime monitors over a record list; each violation becomes an event dict."""
    events = []
    if len(records) < 2:
        return events
    t = np.array([r.t for r in records])
    E = np.array([r.E for r in records])
    D = np.array([r.D for r in records])
    eps = np.array([r.eps for r in records])
    E0 = E[0] if E0 is None else E0

    def first(name, bad, values):
        idx = np.flatnonzero(bad)
        if idx.size:
            i = int(idx[0])
            events.append({"monitor": name, "index": i + 1, "t": float(t[i + 1]),
                           "value": float(values[i]), "count": int(idx.size)})

    first("E_nonincreasing", E[1:] > E[:-1] * (1 + MONITOR_RTOL), E[1:] - E[:-1])
    first("D_nonincreasing", D[1:] > D[:-1] * (1 + MONITOR_RTOL), D[1:] - D[:-1])
    first("eps_nonincreasing", eps[1:] > eps[:-1] * (1 + MONITOR_RTOL), eps[1:] - eps[:-1])
    if len(records) >= 3:
        second = convexity_defects(t, E)
        first("E_convex", second[:] < -CONVEXITY_TOL * E0,
              np.concatenate([second, [0.0]])[:len(second)])
    return events


def convexity_defects(t, E):
    """``E_{i+1} - E_i - (dt_i / dt_{i-1})(E_i - E_{i-1})``; nonnegative for convex ``E``."""
    dt = np.diff(t)
    dE = np.diff(E)
    return dE[1:] - dt[1:] / dt[:-1] * dE[:-1]


def run(h0, cfg, snapshot_dir=None):
    """Integrate from ``h0`` to ``cfg.t_end``, recording diagnostics at every accepted step."""
    trace = FlowTrace(cfg)
    st = evaluate(h0.heights, h0.period, 0.0, cfg.margin)
    trace.records.append(_record(st, cfg, 0.0))
    if cfg.probe_every:
        trace.probes.append(_probe(st, 0))
    if snapshot_dir is not None and cfg.snapshot_every:
        _snapshot(trace, st, snapshot_dir)
    dt = cfg.dt_init
    while st.t < cfg.t_end * (1 - 1e-14):
        if trace.accepted + trace.rejected >= cfg.max_steps:
            trace.abort_reason = "step limit"
            break
        dt = min(dt, cfg.t_end - st.t)
        try:
            res = step(st, cfg, dt)
        except StepAbort as err:
            trace.abort_reason = err.reason
            break
        trace.rejected += res.rejected
        trace.accepted += 1
        trace.max_mean_drift = max(trace.max_mean_drift, res.drift)
        trace.edi_cumulative += res.residual
        st = res.state
        if cfg.t_end - st.t < 1e-12 * max(cfg.t_end, 1.0):
            st.t = cfg.t_end
        trace.records.append(_record(st, cfg, res.residual))
        if cfg.probe_every and trace.accepted % cfg.probe_every == 0:
            trace.probes.append(_probe(st, len(trace.records) - 1))
        if snapshot_dir is not None and cfg.snapshot_every and \
                trace.accepted % cfg.snapshot_every == 0:
            _snapshot(trace, st, snapshot_dir)
        dt = res.dt_next
    trace.final_state = st
    trace.events = monitor_events(trace.records)
    return trace


def _snapshot(trace, st, directory):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"snapshot_{len(trace.records) - 1:06d}.txt")
    write_snapshot(path, st.curve, st.t)
    trace.snapshots.append(path)


def centered_derivative(t, f, i):
    """Three-point derivative at interior index ``i`` on a nonuniform grid."""
    h1, h2 = t[i] - t[i - 1], t[i + 1] - t[i]
    return (-h2 / (h1 * (h1 + h2)) * f[i - 1] + (h2 - h1) / (h1 * h2) * f[i]
            + h1 / (h2 * (h1 + h2)) * f[i + 1])


@dataclass(frozen=True)
class HessianReport:
    t: float
    dt: float
    rhs_V: float
    fd_V: float            # -dD/dt / 2
    rhs_W: float
    fd_W: float            # -dH/dt / 2
    rhs_V_plus_M: float    # same expression with the opposite sign on M(V)
    inconclusive: bool

    @property
    def mismatch_V(self):
        return abs(self.fd_V - self.rhs_V) / abs(self.rhs_V)

    @property
    def mismatch_W(self):
        return abs(self.fd_W - self.rhs_W) / abs(self.rhs_W)


def hessian_probe(st, dt, margin=DEFAULT_MARGIN):
    """Compare the Hessian expression with centred differences of ``D`` and ``H``.

    Two fixed steps of size ``dt`` are taken from ``st``; both sides are
    evaluated at the middle state.
    """
    mid, _ = advance(st, dt, margin)
    end, _ = advance(mid, dt, margin)
    H = [diagnostics.squared_distance(s.curve, s.ops) for s in (st, mid, end)]
    fd_V = -(end.D - st.D) / (4.0 * dt)
    fd_W = -(H[2] - H[0]) / (4.0 * dt)
    rhs_V, grad, k2, mv = hessian_rhs(mid, mid.V)
    W = diagnostics.distance_density(mid.curve)
    W = W - mid.curve.integrate(W) / mid.curve.period_arclength
    rhs_W = hessian_rhs(mid, W)[0]
    noise = 1e-12 * max(st.D, 1e-300)
    inconclusive = abs(end.D - st.D) < 1e3 * noise or rhs_V == 0.0
    return HessianReport(mid.t, dt, rhs_V, fd_V, rhs_W, fd_W, grad - k2 + mv, inconclusive)


@dataclass(frozen=True)
class DtHReport:
    times: np.ndarray
    ratio: np.ndarray     # (dH/dt / 2 + 2E) / (H^2/5 E^13/15 D^11/15)
    sup_ratio: float
    sup_H_over_H0: float


def dtH_probe(trace):
    rec = trace.records if hasattr(trace, "records") else trace
    if len(rec) < 3:
        raise ValueError("dtH probe needs at least three records")
    t = np.array([r.t for r in rec])
    H = np.array([r.H for r in rec])
    E = np.array([r.E for r in rec])
    D = np.array([r.D for r in rec])
    times, ratio = [], []
    for i in range(1, len(rec) - 1):
        den = H[i] ** 0.4 * E[i] ** (13 / 15) * D[i] ** (11 / 15)
        if den <= 0:
            continue
        times.append(t[i])
        ratio.append((0.5 * centered_derivative(t, H, i) + 2.0 * E[i]) / den)
    ratio = np.array(ratio)
    return DtHReport(np.array(times), ratio, float(np.max(ratio)) if ratio.size else 0.0,
                     float(np.max(H) / H[0]) if H[0] > 0 else 0.0)


@dataclass(frozen=True)
class MonotonicityReport:
    times: np.ndarray
    ratio: np.ndarray     # (-dD/dt) / int |d_tau V|^2
    alpha: float

    @property
    def min_ratio(self):
        return float(np.min(self.ratio)) if self.ratio.size else math.inf

    @property
    def passed(self):
        return self.min_ratio >= 1.0 - self.alpha


def dissipation_monotonicity_probe(trace, alpha=None):
    alpha = trace.config.alpha if alpha is None else alpha
    t = trace.column("t")
    D = trace.column("D")
    times, ratio = [], []
    for p in trace.probes:
        i = p.index
        if 0 < i < len(t) - 1 and p.grad_V_sq > 0:
            times.append(p.t)
            ratio.append(-centered_derivative(t, D, i) / p.grad_V_sq)
    return MonotonicityReport(np.array(times), np.array(ratio), alpha)


def multimode_graph(period, n, eps0, modes=range(1, 9), decay=2.0, seed=0,
                    margin=DEFAULT_MARGIN):
    """Random-phase multimode graph with amplitudes ``m^-decay`` scaled to ``eps = eps0``."""
    rng = np.random.default_rng(seed)
    modes = list(modes)
    phases = rng.uniform(0.0, 2 * np.pi, len(modes))
    x = np.arange(n) * period / n
    shape = sum(m ** -decay * np.sin(2 * np.pi * m * x / period + p)
                for m, p in zip(modes, phases))
    shape = shape - np.mean(shape)
    shape /= np.max(np.abs(shape))

    def eps_of(a):
        st = evaluate(a * shape, period, 0.0, margin)
        return diagnostics.scale_invariant(st.E, st.D)

    hi = 1e-3
    while eps_of(hi) < eps0:
        hi *= 2.0
    a = brentq(lambda a: eps_of(a) - eps0, hi / 2 if hi > 1e-3 else 1e-8, hi, xtol=1e-15,
               rtol=1e-13)
    return PeriodicGraph(period, a * shape, margin)
