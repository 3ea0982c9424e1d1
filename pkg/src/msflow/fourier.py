"""Periodic spectral helpers shared by the curve, potential and stepping code."""

import numpy as np


def wavenumbers(n, period):
    """Angular wavenumbers in FFT ordering for ``n`` samples over ``period``."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=period / n)


def derivative(values, period, order=1):
    """Spectral derivative of periodic samples.

    The Nyquist coefficient is dropped for odd orders so that real data stay real.
    """
    n = values.shape[-1]
    k = wavenumbers(n, period)
    coef = np.fft.fft(values)
    mult = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[n // 2] = 0.0
    return np.real(np.fft.ifft(coef * mult))


def antiderivative(values, period):
    """Periodic part of the antiderivative, pinned to zero at the first sample.

    Returns ``(mean, P)`` with ``values = mean + P'`` and ``P[0] = 0``.
    """
    n = values.shape[-1]
    k = wavenumbers(n, period)
    coef = np.fft.fft(values)
    mean = np.real(coef[0]) / n
    pc = np.zeros_like(coef)
    nz = k != 0
    pc[nz] = coef[nz] / (1j * k[nz])
    if n % 2 == 0:
        pc[n // 2] = 0.0
    p = np.real(np.fft.ifft(pc))
    return mean, p - p[0]


class Interpolant:
    """Trigonometric interpolant of several sample vectors sharing one grid.

    Building the phase matrix once for a point set lets the arc-length Newton
    iteration evaluate height, slope and curvature from a single exponential.
    """

    def __init__(self, period, n):
        self.period = period
        self.n = n
        self.m = np.fft.fftfreq(n, d=1.0 / n)

    def phases(self, points):
        points = np.asarray(points, dtype=float)
        phase = np.exp(2j * np.pi * np.outer(points / self.period, self.m))
        if self.n % 2 == 0:
            phase[:, self.n // 2] = np.cos(np.pi * self.n * points / self.period)
        return phase

    def coefficients(self, values):
        return np.fft.fft(values, axis=-1) / self.n

    def evaluate(self, phase, coef):
        return np.real(phase @ coef.T).T
