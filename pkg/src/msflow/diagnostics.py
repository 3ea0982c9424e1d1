"""Scalar quantities of a curve and the static inequalities between them."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .curve import bmo_normal, excess_energy, nonoriented_excess

# Calibrated on single-mode and random multimode sweeps (see tests); the
# refined energy bound carries an unquantified universal constant.
C_REFINED_HED = 0.1
MEAN_TOL = 1e-8

CSV_COLUMNS = ("t", "E", "Ebar", "D", "H", "eps", "F", "b_sup", "bmo", "hed_ratio",
               "residual_edi")


class NeutralityError(ValueError):
    """The squared-distance density no longer integrates to zero."""


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    E: float
    Ebar: float
    D: float
    H: float
    eps: float
    F: float
    b_sup: float
    bmo: float
    hed_ratio: float
    residual_edi: float

    def row(self):
        return astuple(self)


def scale_invariant(E, D):
    """``eps = (E^2 D)^(1/6)``."""
    return (max(E, 0.0) ** 2 * max(D, 0.0)) ** (1.0 / 6.0)


def dissipation(c, ops):
    """``D = (kappa, N kappa)``."""
    kappa = c.curvature
    return max(c.integrate(kappa * ops.apply_N(kappa)), 0.0)


def dissipation_spectral(ops):
    """``D`` as ``|kappa|_1/2^2`` through the eigendecomposition."""
    kappa = ops.meanzero_proj(ops.curve.curvature)
    return ops.fractional_norm(kappa, 0.5) ** 2


def distance_density(c):
    """``W = nu_2 z_2``, the normal component of the vertical displacement."""
    return c.normal[:, 1] * c.positions[:, 1]


def _neutral_density(c):
    W = distance_density(c)
    drift = c.integrate(W)
    scale = math.sqrt(c.period_arclength) * c.l2(W)
    if abs(drift) > MEAN_TOL * scale:
        raise NeutralityError(f"distance density integrates to {drift:.3e} (scale {scale:.3e})")
    return W - drift / np.sum(c.weights)


def squared_distance(c, ops, path="quadratic"):
    """``H = |W|_{-1/2}^2``; ``path="spectral"`` uses the eigendecomposition."""
    W = _neutral_density(c)
    if path == "spectral":
        return ops.fractional_norm(W, -0.5) ** 2
    return max(c.integrate(W * (ops.S_mat @ W)), 0.0)


@dataclass(frozen=True)
class HedReport:
    ratio: float
    ebar_margin: float
    angle_margin: float | None
    refined_margin: float
    constant: float

    @property
    def ebar_ok(self):
        return self.ebar_margin >= 0.0

    @property
    def angle_ok(self):
        return None if self.angle_margin is None else self.angle_margin >= 0.0

    @property
    def refined_ok(self):
        return self.refined_margin >= 0.0

    @property
    def worst_margin(self):
        vals = [self.ebar_margin, self.refined_margin]
        if self.angle_margin is not None:
            vals.append(self.angle_margin)
        return min(vals)


def hed_check(E, Ebar, H, D, b_sup, constant=C_REFINED_HED):
    """Relative margins ``(rhs - lhs) / rhs`` of the three energy bounds by ``sqrt(HD)``.

    ``Ebar <= sqrt(HD)``, ``E <= sqrt(HD) / (1 + cos b_sup)`` (only for
    ``b_sup < pi``) and ``E <= (1/2 + C eps^2) sqrt(HD)``.
    """
    root = math.sqrt(max(H, 0.0)) * math.sqrt(max(D, 0.0))
    eps = scale_invariant(E, D)

    def margin(lhs, rhs):
        if rhs > 0:
            return (rhs - lhs) / rhs
        return 0.0 if lhs <= 0 else -math.inf

    angle = None
    if b_sup < math.pi:
        angle = margin(E, root / (1.0 + math.cos(b_sup)))
    return HedReport(
        ratio=E / root if root > 0 else 0.0,
        ebar_margin=margin(Ebar, root),
        angle_margin=angle,
        refined_margin=margin(E, (0.5 + constant * eps * eps) * root),
        constant=constant,
    )


@dataclass(frozen=True)
class CurvatureBounds:
    norms: dict      # order -> |kappa|_s
    scales: dict     # order -> matching power of E and D
    mean_drift: float

    @property
    def ratios(self):
        return {s: (self.norms[s] / v if v > 0 else 0.0) for s, v in self.scales.items()}


def curvature_bound_report(c, ops, E, D):
    """Norms of ``kappa`` of order -1, -1/2, 0, 1/2 against ``E^1/2, eps, (E D^2)^1/6, D^1/2``."""
    b_sup = float(np.max(np.abs(c.angle)))
    if b_sup >= 2 * math.pi:
        raise ValueError("curvature bounds need |b|_inf < 2 pi")
    drift = c.integrate(c.curvature)
    kappa = ops.meanzero_proj(c.curvature)
    norms = ops.fractional_norms(kappa, (-1.0, -0.5, 0.0, 0.5))
    scales = {
        -1.0: math.sqrt(E),
        -0.5: scale_invariant(E, D),
        0.0: (E * D * D) ** (1.0 / 6.0),
        0.5: math.sqrt(D),
    }
    return CurvatureBounds(norms, scales, drift)


@dataclass(frozen=True)
class ControlRatios:
    bmo_ratio: float
    angle_ratio: float
    flagged: bool


def flatness_control_check(bmo, b_sup, eps):
    """Ratios ``bmo / eps`` and ``b_sup / eps`` with the ``0/0 = 0`` convention."""
    def ratio(num):
        if eps > 0:
            return num / eps, False
        return (0.0, False) if num == 0 else (math.inf, True)

    r1, f1 = ratio(bmo)
    r2, f2 = ratio(b_sup)
    return ControlRatios(r1, r2, f1 or f2)


def auxiliary_F(t, H, E, D, alpha):
    """``F = H / (2 alpha) + t alpha E + t^2 alpha D / 2``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return H / (2.0 * alpha) + t * alpha * E + 0.5 * t * t * alpha * D


def record(c, ops, t=0.0, alpha=1.0, residual_edi=0.0, with_bmo=True):
    """All scalar diagnostics of one snapshot."""
    E = excess_energy(c)
    D = dissipation(c, ops)
    H = squared_distance(c, ops)
    root = math.sqrt(H) * math.sqrt(D)
    return DiagnosticsRecord(
        t=float(t),
        E=E,
        Ebar=nonoriented_excess(c),
        D=D,
        H=H,
        eps=scale_invariant(E, D),
        F=auxiliary_F(t, H, E, D, alpha),
        b_sup=float(np.max(np.abs(c.angle))),
        bmo=bmo_normal(c) if with_bmo else math.nan,
        hed_ratio=E / root if root > 0 else 0.0,
        residual_edi=float(residual_edi),
    )


def write_csv(path, records, model=None):
    """Write records with 17 significant digits; ``model`` adds a trailing label column."""
    header = list(CSV_COLUMNS) + (["model"] if model else [])
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for rec in records:
            row = [f"{v:.17g}" for v in rec.row()]
            out.writerow(row + ([model] if model else []))


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = [f.name for f in fields(DiagnosticsRecord)]
    return [DiagnosticsRecord(*(float(r[k]) for k in names)) for r in rows]
