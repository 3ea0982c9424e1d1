"""Exact Fourier solution of the linearized flow ``d/dt h_k = -2 |k|^3 h_k``.

Coefficients follow ``h_k = fft(h) / n`` so that Parseval reads
``int |h|^2 dx = L sum |h_k|^2``.  For ``h = a sin(kx)`` this gives
``E = a^2 k^2 L / 4``, ``D = a^2 k^5 L`` and ``H = a^2 L / (4k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import fourier
from .diagnostics import DiagnosticsRecord, auxiliary_F, scale_invariant

C1_SHARP = 1.0 / (4.0 * (math.sqrt(2.0) + 1.0))
SINGLE_MODE_PEAK = 1.0 / (4.0 * math.e)


@dataclass(frozen=True)
class SpectralState:
    """Fourier coefficients of a mean-zero periodic height in FFT order."""

    period: float
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        object.__setattr__(self, "coeffs", c)
        scale = max(np.max(np.abs(c)), 1e-300)
        if abs(c[0]) > 1e-14 * scale:
            raise ValueError("zero mode must vanish (neutrality)")
        n = c.shape[0]
        mirror = np.conj(c[(-np.arange(n)) % n])
        if np.max(np.abs(c - mirror)) > 1e-12 * scale:
            raise ValueError("coefficients are not conjugate symmetric")

    @property
    def n(self):
        return self.coeffs.shape[0]

    @property
    def wavenumbers(self):
        return fourier.wavenumbers(self.n, self.period)

    @classmethod
    def from_heights(cls, period, heights):
        h = np.asarray(heights, dtype=float)
        c = np.fft.fft(h) / h.shape[0]
        c[0] = 0.0
        return cls(period, c)

    @classmethod
    def single_mode(cls, period, n, m, amplitude, phase=0.0):
        """``a sin(2 pi m x / L + phase)`` with exact coefficients.

        Going through the FFT would leave roundoff on slower modes, which
        dominate the exact solution at late times.
        """
        if not 0 < m < n / 2:
            raise ValueError("mode number must lie in (0, n/2)")
        c = np.zeros(n, dtype=complex)
        c[m] = amplitude * np.exp(1j * phase) / 2j
        c[-m] = np.conj(c[m])
        return cls(period, c)

    def heights(self):
        return np.real(np.fft.ifft(self.coeffs * self.n))


def evolve_exact(s, t):
    if t < 0:
        raise ValueError("t must be nonnegative")
    k = np.abs(s.wavenumbers)
    return SpectralState(s.period, s.coeffs * np.exp(-2.0 * k**3 * t))


def _weights(s):
    k = np.abs(s.wavenumbers)
    p = np.abs(s.coeffs) ** 2
    nz = k > 0
    return k[nz], p[nz]


def linear_quantities(s):
    """``(E, D, H)`` of the linearized model."""
    k, p = _weights(s)
    L = s.period
    return (0.5 * L * np.sum(k**2 * p), 2.0 * L * np.sum(k**5 * p),
            0.5 * L * np.sum(p / k))


def _moments(s, times):
    """Mode sums normalized per time by the largest term, plus the log of that scale.

    Keeps ratios such as ``E / sqrt(H D)`` exact long after the raw sums underflow.
    """
    k, p = _weights(s)
    L = s.period
    times = np.asarray(times, dtype=float)
    active = p > 0
    k, p = k[active], p[active]
    logs = np.log(p)[None, :] - 4.0 * np.outer(times, k**3)
    shift = np.max(logs, axis=1)
    decay = np.exp(logs - shift[:, None])
    E = 0.5 * L * decay @ k**2
    D = 2.0 * L * decay @ k**5
    H = 0.5 * L * decay @ (1.0 / k)
    dH = -2.0 * L * decay @ k**2
    return shift, E, D, H, dH


def quantities_at(s, times):
    """``E, D, H`` and ``dH/dt`` along the exact solution, vectorized over ``times``."""
    shift, *vals = _moments(s, times)
    scale = np.exp(shift)
    return tuple(v * scale for v in vals)


def default_times(s, count=1000):
    """Log-spaced times over ``[1e-3, 1e3] / k1^3`` around the slowest active mode."""
    k, p = _weights(s)
    k1 = np.min(k[p > 0])
    return np.logspace(-3, 3, count) / k1**3


def _refined_sup(s, times, values, fn):
    """Sup of ``fn(t)`` refined by a bounded Brent search in ``log t`` around the grid maximum."""
    i = int(np.argmax(values))
    lo = math.log(times[max(i - 1, 0)])
    hi = math.log(times[min(i + 1, len(times) - 1)])
    if hi <= lo:
        return float(values[i]), float(times[i])
    res = minimize_scalar(lambda u: -fn(math.exp(u)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    if -res.fun >= values[i]:
        return float(-res.fun), float(math.exp(res.x))
    return float(values[i]), float(times[i])


@dataclass(frozen=True)
class LinearChainReport:
    times: np.ndarray
    E: np.ndarray
    D: np.ndarray
    H: np.ndarray
    identity_residual: float     # max |dH/dt / 2 + 2E| / E
    hed_ratio_max: float         # max E / sqrt(H D)
    D_monotone: bool
    sup_tE: float
    sup_tE_time: float
    sup_t2D: float
    C1: float
    H0: float

    @property
    def checks(self):
        H0 = self.H0
        tE = self.times * self.E / H0
        t2D = self.times**2 * self.D / H0
        return {
            "identity": self.identity_residual <= 1e-12,
            "hed": self.hed_ratio_max <= 0.5 + 1e-12,
            "D_monotone": self.D_monotone,
            "decay_E": bool(np.all(tE <= self.C1 + 1e-12)) and self.sup_tE <= self.C1,
            "decay_D": bool(np.all(t2D <= 0.5 + 1e-12)) and self.sup_t2D <= 0.5,
        }

    @property
    def passed(self):
        return all(self.checks.values())


def linear_chain_check(s0, times=None):
    """Evaluate the linear HED chain along the exact solution at the given times."""
    E0, D0, H0 = linear_quantities(s0)
    if H0 <= 0:
        raise ValueError("linear chain check needs a nonzero state")
    times = default_times(s0) if times is None else np.asarray(times, dtype=float)
    E, D, H, dH = quantities_at(s0, times)
    _, En, Dn, Hn, dHn = _moments(s0, times)
    resid = np.max(np.abs(0.5 * dHn + 2.0 * En) / En)
    hed = np.max(En / np.sqrt(Hn * Dn))

    def tE(t):
        return t * quantities_at(s0, [t])[0][0] / H0

    def t2D(t):
        return t * t * quantities_at(s0, [t])[1][0] / H0

    sup_tE, t_star = _refined_sup(s0, times, times * E / H0, tE)
    sup_t2D, _ = _refined_sup(s0, times, times**2 * D / H0, t2D)
    return LinearChainReport(times, E, D, H, float(resid), float(hed),
                             bool(np.all(np.diff(D) <= 0.0)), sup_tE, t_star, sup_t2D,
                             C1_SHARP, H0)


def linear_records(s0, times, alpha=1.0):
    """Diagnostics rows for the linear model; ``bmo`` is not defined there and left NaN."""
    E, D, H, _ = quantities_at(s0, times)
    k = s0.wavenumbers
    rows = []
    for t, e, d, hh in zip(times, E, D, H):
        hp = np.real(np.fft.ifft(1j * k * evolve_exact(s0, t).coeffs * s0.n))
        root = math.sqrt(hh) * math.sqrt(d)
        rows.append(DiagnosticsRecord(
            t=float(t), E=float(e), Ebar=float(2.0 * e), D=float(d), H=float(hh),
            eps=scale_invariant(e, d), F=auxiliary_F(t, hh, e, d, alpha),
            b_sup=float(np.max(np.abs(hp))), bmo=math.nan,
            hed_ratio=e / root if root > 0 else 0.0, residual_edi=0.0))
    return rows
