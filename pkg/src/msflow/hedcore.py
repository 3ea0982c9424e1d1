"""Certification of the H-E-D decay chain on arbitrary ``(t, H, E, D)`` traces.

The same checks apply to the simulator, the linearized solver and the toy
convex flow.  Every check stores its worst normalized margin and where it
occurred; a check passes when that margin is nonnegative.  Hypotheses that
involve time derivatives are tested on intervals with slack proportional to
trapezoid truncation estimates built from second divided differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import DiagnosticsRecord, auxiliary_F

C_THEOREM = 10.0
ROUNDOFF = 1e-10
TRUNCATION_SAFETY = 2.0
TINY = np.finfo(float).tiny


class TraceError(ValueError):
    """Trace data that cannot be certified."""


@dataclass(frozen=True)
class GradientFlowTrace:
    t: np.ndarray
    H: np.ndarray
    E: np.ndarray
    D: np.ndarray
    provenance: str = "unknown"
    eps: np.ndarray | None = None

    def __post_init__(self):
        for name in ("t", "H", "E", "D"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.eps is not None:
            object.__setattr__(self, "eps", np.asarray(self.eps, dtype=float))
        n = self.t.shape[0]
        if any(getattr(self, k).shape != (n,) for k in ("H", "E", "D")):
            raise TraceError("columns must have equal length")
        if n == 0 or self.t[0] != 0.0:
            raise TraceError("trace must start at t = 0")
        if np.any(np.diff(self.t) <= 0):
            i = int(np.flatnonzero(np.diff(self.t) <= 0)[0])
            raise TraceError(f"times not strictly increasing at index {i + 1}")
        for k in ("H", "E", "D"):
            if np.any(getattr(self, k) < 0):
                raise TraceError(f"{k} has negative entries")

    @classmethod
    def from_records(cls, records, provenance="simulation"):
        eps = np.array([r.eps for r in records])
        return cls(np.array([r.t for r in records]), np.array([r.H for r in records]),
                   np.array([r.E for r in records]), np.array([r.D for r in records]),
                   provenance, None if np.all(np.isnan(eps)) else eps)

    @property
    def H0(self):
        return float(self.H[0])

    @property
    def E0(self):
        return float(self.E[0])

    @property
    def D0(self):
        return float(self.D[0])

    @property
    def eps0(self):
        return (self.E0**2 * self.D0) ** (1.0 / 6.0)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    worst_margin: float
    worst_t: float
    detail: str = ""

    def to_dict(self):
        return {"check": self.name, "pass": bool(self.passed),
                "worst_margin": _finite(self.worst_margin), "worst_t": _finite(self.worst_t),
                "detail": self.detail}


def _finite(x):
    return x if math.isfinite(x) else None


@dataclass(frozen=True)
class RateCertificate:
    checks: tuple
    C: float
    C_prime: float
    provenance: str
    summary: dict = field(default_factory=dict)

    @property
    def C1(self):
        return corollary_constants(self.C, self.C_prime)[0]

    @property
    def C2(self):
        return corollary_constants(self.C, self.C_prime)[1]

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self):
        return [c.name for c in self.checks]

    def to_dict(self):
        return {
            "provenance": self.provenance,
            "pass": self.passed,
            "constants": {"C": self.C, "C_prime": self.C_prime, "C1": self.C1, "C2": self.C2},
            "checks": [c.to_dict() for c in self.checks],
            "summary": {k: _finite(v) if isinstance(v, float) else v
                        for k, v in self.summary.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def corollary_constants(C, C_prime):
    """``C1 = 1 / (2 C (C + C'))`` and ``C2 = 1 / C^2``."""
    return 1.0 / (2.0 * C * (C + C_prime)), 1.0 / (C * C)


def _rate(c, t, p=1):
    """``c / t^p`` with ``inf`` at ``t = 0`` (no constraint there), even when ``c = 0``."""
    with np.errstate(divide="ignore"):
        return np.where(t > 0, c / np.where(t > 0, t, 1.0) ** p, np.inf)


def _pointwise(name, t, value, bound, scale, detail=""):
    """Check ``value <= bound`` at every sample; margins are scaled by ``scale``."""
    ok = np.isfinite(bound)
    # subnormal values carry no relative precision
    bound = bound + TINY
    if not np.any(ok):
        return Check(name, True, math.inf, math.nan, detail or "no finite bound")
    margin = np.where(ok, (bound - value) / scale, np.inf)
    i = int(np.argmin(margin))
    passed = bool(margin[i] >= 0)
    if not passed and not detail:
        bad = int(np.flatnonzero(margin < 0)[0])
        detail = f"first violation at index {bad} (t = {t[bad]:.6g})"
    return Check(name, passed, float(margin[i]), float(t[i]), detail)


def _interval_check(name, t, excess, scale):
    """``excess_i <= 0`` on each interval ``[t_i, t_{i+1}]``; margins are ``-excess / scale``."""
    if excess.size == 0:
        return Check(name, True, math.inf, math.nan, "too few samples")
    margin = -(excess - TINY) / scale
    i = int(np.argmin(margin))
    passed = bool(margin[i] >= 0)
    detail = ""
    if not passed:
        bad = int(np.flatnonzero(margin < 0)[0])
        detail = f"first offending interval [{t[bad]:.6g}, {t[bad + 1]:.6g}] (index {bad})"
    return Check(name, passed, float(margin[i]), float(t[i]), detail)


def _second_derivative_bound(t, f):
    """Per-interval estimate of ``max |f''|`` from neighbouring second divided differences."""
    n = t.shape[0]
    if n < 3:
        return np.zeros(max(n - 1, 0))
    dd = np.abs(2.0 * (f[2:] - f[1:-1]) / ((t[2:] - t[1:-1]) * (t[2:] - t[:-2]))
                - 2.0 * (f[1:-1] - f[:-2]) / ((t[1:-1] - t[:-2]) * (t[2:] - t[:-2])))
    # interval i touches second differences centred at i and i + 1
    left = np.concatenate([[dd[0]], dd])
    right = np.concatenate([dd, [dd[-1]]])
    return np.maximum(left, right)


def _hypotheses(tr, C, C_prime, rtol):
    t, H, E, D = tr.t, tr.H, tr.E, tr.D
    dt = np.diff(t)
    checks = []

    # E' = -D: trapezoid balance on every interval
    resid = np.abs(np.diff(E) + 0.5 * dt * (D[1:] + D[:-1]))
    slack = (TRUNCATION_SAFETY * dt**3 / 12.0 * _second_derivative_bound(t, D)
             + rtol * E[:-1] + ROUNDOFF * (E[:-1] + dt * D[:-1]))
    checks.append(_interval_check("energy_identity", t, resid - slack, max(tr.E0, 1e-300)))

    # H'/2 + C^2 E <= 0, integrated over each interval
    trapE = 0.5 * (E[1:] + E[:-1])
    excess = 0.5 * np.diff(H) / dt + C * C * trapE
    slack = (C * C * TRUNCATION_SAFETY * dt**2 / 12.0 * _second_derivative_bound(t, E)
             + ROUNDOFF * (H[:-1] / dt + C * C * E[:-1]))
    checks.append(_interval_check("H_monotone_modulo", t, excess - slack,
                                  max(tr.E0 * C * C, 1e-300)))

    excess = np.diff(D) - ROUNDOFF * D[:-1]
    checks.append(_interval_check("D_monotone", t, excess, max(tr.D0, 1e-300)))

    root = np.sqrt(H) * np.sqrt(D) / C_prime
    checks.append(_pointwise("interpolation", t, E, root + ROUNDOFF * E,
                             max(tr.E0, 1e-300)))
    return checks


def _outputs(tr, C1, C2, prefix=""):
    t, H, E, D = tr.t, tr.H, tr.E, tr.D
    H0, E0, D0 = tr.H0, tr.E0, tr.D0
    eb = np.minimum(E0, _rate(C1 * H0, t))
    db = np.minimum(np.minimum(D0, _rate(E0, t)), _rate(C2 * H0, t, 2))
    return [
        _pointwise(prefix + "H_bound", t, H, np.full_like(H, H0), max(H0, 1e-300)),
        _pointwise(prefix + "decay_E", t, E, eb, max(E0, 1e-300)),
        _pointwise(prefix + "decay_D", t, D, db, max(D0, 1e-300)),
    ]


def _sups(tr):
    t, H, E, D = tr.t, tr.H, tr.E, tr.D
    out = {}
    if tr.H0 > 0:
        out["sup_tE_over_H0"] = float(np.max(t * E) / tr.H0)
        out["sup_t2D_over_H0"] = float(np.max(t * t * D) / tr.H0)
        out["sup_H_over_H0"] = float(np.max(H) / tr.H0)
    if tr.E0 > 0:
        out["sup_tD_over_E0"] = float(np.max(t * D) / tr.E0)
    return out


def corollary_check(tr, C, C_prime, rtol=1e-5):
    """Strengthened hypotheses and conclusions with constants ``C, C' >= 1``."""
    if C < 1 or C_prime < 1:
        raise ValueError("corollary constants must be >= 1")
    if tr.t.shape[0] < 3:
        raise TraceError("certification needs at least three samples")
    C1, C2 = corollary_constants(C, C_prime)
    checks = _hypotheses(tr, C, C_prime, rtol) + _outputs(tr, C1, C2)
    return RateCertificate(tuple(checks), C, C_prime, tr.provenance, _sups(tr))


def brezis_check(tr, rtol=1e-5):
    """The convex-case chain with ``C = C' = 1`` (so ``C1 = 1/4``, ``C2 = 1``)."""
    return corollary_check(tr, 1.0, 1.0, rtol)


def theorem_alpha(eps0, C_cfg):
    """``alpha`` with ``alpha^2 = 2 - C eps0^2 |log eps0|^2``; ``None`` when not positive."""
    if eps0 <= 0:
        return math.sqrt(2.0)
    a2 = 2.0 - C_cfg * eps0**2 * math.log(eps0) ** 2
    return math.sqrt(a2) if a2 > 0 else None


def t_star(F0, eps0):
    """Short/long-time split ``T* = F0^(3/4) / eps0^(3/2)``."""
    return F0 ** 0.75 / eps0 ** 1.5 if eps0 > 0 else math.inf


def theorem_rate_check(tr, eps0=None, C_cfg=C_THEOREM, from_t_star=False):
    """Nonlinear decay rates with ``eps0^2`` corrections.

    With ``from_t_star`` the rate bounds are only tested on ``[T*, t_end]``.
    """
    from .linearized import C1_SHARP

    eps0 = tr.eps0 if eps0 is None else eps0
    t, H, E, D = tr.t, tr.H, tr.E, tr.D
    H0, E0, D0 = tr.H0, tr.E0, tr.D0
    slack = C_cfg * eps0**2
    alpha = theorem_alpha(eps0, C_cfg)
    F = None
    T = math.nan
    if alpha is not None:
        F = np.array([auxiliary_F(ti, hi, ei, di, alpha) for ti, hi, ei, di in zip(t, H, E, D)])
        T = t_star(F[0], eps0)
    window = t >= T if (from_t_star and math.isfinite(T)) else np.ones_like(t, dtype=bool)
    checks = []
    ts = t[window]
    checks.append(_pointwise("eless", ts, E[window],
                             np.minimum(E0, _rate((C1_SHARP + slack) * H0, ts)),
                             max(E0, 1e-300)))
    checks.append(_pointwise(
        "dless", ts, D[window],
        np.minimum(np.minimum(D0, _rate(E0, ts)), _rate((0.5 + slack) * H0, ts, 2)),
        max(D0, 1e-300)))
    checks.append(_pointwise("Hbd", t, H, np.full_like(H, (1 + slack) * H0), max(H0, 1e-300)))
    checks.append(_interval_check("D_monotone", t, np.diff(D) - ROUNDOFF * D[:-1],
                                  max(D0, 1e-300)))
    if tr.eps is not None:
        checks.append(_interval_check("eps_monotone", t,
                                      np.diff(tr.eps) - ROUNDOFF * tr.eps[:-1],
                                      max(tr.eps[0], 1e-300)))
    if F is not None:
        bound = np.full_like(F, (1 + slack) * F[0])
        short = t <= T
        for name, mask in (("F_short", short), ("F_long", ~short)):
            if np.any(mask):
                checks.append(_pointwise(name, t[mask], F[mask], bound[mask], F[0]))
            else:
                checks.append(Check(name, True, math.inf, math.nan, "empty window"))

    summary = _sups(tr)
    summary.update({"eps0": eps0, "C_cfg": C_cfg, "T_star": T,
                    "alpha": alpha if alpha is not None else math.nan,
                    "window_start": float(t[window][0]) if np.any(window) else math.nan})
    if np.any(window) and H0 > 0:
        summary["sup_tE_over_H0_window"] = float(np.max(t[window] * E[window]) / H0)
        summary["sup_t2D_over_H0_window"] = float(np.max(t[window] ** 2 * D[window]) / H0)
    return RateCertificate(tuple(checks), math.sqrt(2.0), 2.0, tr.provenance, summary)


def toy_convex_flow(x0, y0, t_grid, y_star=0.0):
    """Exact gradient flow of ``E(x, y) = x^2 / 2`` towards the minimizer ``(0, y_star)``."""
    t = np.asarray(t_grid, dtype=float)
    if t.shape[0] == 0 or t[0] != 0 or np.any(np.diff(t) <= 0):
        raise TraceError("t_grid must increase strictly from 0")
    x2 = x0 * x0 * np.exp(-2.0 * t)
    return GradientFlowTrace(t, x2 + (y0 - y_star) ** 2, 0.5 * x2, x2, "toy")


def toy_margins(x0, y0, t, y_star=0.0):
    """Closed-form margins of the convex-case outputs for the toy flow.

    Returns ``bound - value`` for ``H <= H0``, ``E <= min(E0, H0/4t)`` and
    ``D <= min(D0, E0/t, H0/t^2)``.
    """
    t = np.asarray(t, dtype=float)
    c = (y0 - y_star) ** 2
    x2 = x0 * x0 * np.exp(-2.0 * t)
    H0, E0, D0 = x0 * x0 + c, 0.5 * x0 * x0, x0 * x0
    return {
        "H_bound": H0 - (x2 + c),
        "decay_E": np.minimum(E0, _rate(0.25 * H0, t)) - 0.5 * x2,
        "decay_D": np.minimum(np.minimum(D0, _rate(E0, t)), _rate(H0, t, 2)) - x2,
    }


def trace_records(tr):
    """Diagnostics rows for a bare trace; quantities it does not carry are NaN."""
    nan = math.nan
    eps = tr.eps if tr.eps is not None else np.full_like(tr.t, nan)
    rows = []
    for t, h, e, d, ep in zip(tr.t, tr.H, tr.E, tr.D, eps):
        root = math.sqrt(h) * math.sqrt(d)
        rows.append(DiagnosticsRecord(t=float(t), E=float(e), Ebar=nan, D=float(d), H=float(h),
                                      eps=float(ep), F=nan, b_sup=nan, bmo=nan,
                                      hed_ratio=e / root if root > 0 else 0.0,
                                      residual_edi=0.0))
    return rows
