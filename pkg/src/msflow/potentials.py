"""Layer potentials on a sampled periodic curve.

The single layer potential uses the L-periodic logarithmic kernel and Kress'
product quadrature for the logarithmic singularity, which is exact on
trigonometric densities up to the Nyquist band.  The Dirichlet-to-Neumann map
``N`` is the inverse of ``S`` on mean-zero densities.  Everything works in the
weighted inner product ``(f, g) = sum w f g``; internally the symmetric matrix
``B = W^1/2 S W^-1/2`` is compressed onto the orthogonal complement of
``sqrt(w)`` with a Householder reflection.
"""

from __future__ import annotations

import hashlib
import json
from functools import cached_property, lru_cache

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from . import fourier
from .curve import curve_hash

COND_MAX = 1e12
MEAN_RTOL = 1e-10
FOUR_PI = 4.0 * np.pi


class AssemblyError(RuntimeError):
    """The single layer matrix is too ill-conditioned to invert."""


class FlatnessError(ValueError):
    """The curve is outside the regime in which assembly is meaningful."""


class MeanZeroError(ValueError):
    """A density that must integrate to zero does not."""


def periodic_kernel(d1, d2, period):
    """``G_L = -(1/4 pi) log(cosh a - cos b)`` with ``a, b`` the scaled offsets.

    Written as ``log(2 sinh^2(a/2) + 2 sin^2(b/2))`` to keep full relative
    accuracy near the diagonal.
    """
    a = np.pi * d2 / period
    b = np.pi * d1 / period
    return -np.log(2.0 * np.sinh(a) ** 2 + 2.0 * np.sin(b) ** 2) / FOUR_PI


def periodic_kernel_gradient(d1, d2, period):
    """Gradient of ``G_L`` in its first argument."""
    a = 2.0 * np.pi * d2 / period
    b = 2.0 * np.pi * d1 / period
    q = 2.0 * np.sinh(0.5 * a) ** 2 + 2.0 * np.sin(0.5 * b) ** 2
    c = -1.0 / (2.0 * period)
    return c * np.sin(b) / q, c * np.sinh(a) / q


@lru_cache(maxsize=16)
def kress_weights(n):
    """Circulant weights ``R_d`` for ``int log(4 sin^2((t - tau)/2)) f(tau) dtau``.

    ``n = 2M`` equispaced nodes; ``R_d`` is the weight between nodes ``d`` apart.
    """
    if n % 2:
        raise ValueError("Kress quadrature needs an even node count")
    M = n // 2
    t = 2.0 * np.pi * np.arange(n) / n
    m = np.arange(1, M)
    r = -(2.0 * np.pi / M) * (np.cos(np.outer(t, m)) @ (1.0 / m))
    r -= (np.pi / M**2) * np.cos(M * t)
    r.setflags(write=False)
    return r


def _check_mean_zero(c, f, what="density"):
    total = float(np.dot(c.weights, f))
    scale = float(np.dot(c.weights, np.abs(f)))
    if abs(total) > MEAN_RTOL * max(scale, 1e-300) and abs(total) > 0.0:
        raise MeanZeroError(f"{what} is not mean-zero (integral {total:.3e}, scale {scale:.3e})")


class OperatorSet:
    """Assembled ``S``, ``K#`` and ``N`` on a fixed periodic curve.

    ``K#`` and the eigendecomposition of ``N`` are built on first use.  Instances
    are never mutated after construction apart from these caches.
    """

    def __init__(self, curve, S_mat, cond_max=COND_MAX):
        self.curve = curve
        self.S_mat = S_mat
        w = curve.weights
        self._sqrt_w = np.sqrt(w)
        u = self._sqrt_w / np.linalg.norm(self._sqrt_w)
        v = u.copy()
        v[0] -= 1.0
        self._v = v
        self._beta = 2.0 / np.dot(v, v)

        B = self._sqrt_w[:, None] * S_mat / self._sqrt_w[None, :]
        self.asymmetry = float(np.linalg.norm(B - B.T) / np.linalg.norm(B))
        B = 0.5 * (B + B.T)
        Bv = B @ v
        vBv = float(v @ Bv)
        beta = self._beta
        HBH = (B - beta * np.outer(v, Bv) - beta * np.outer(Bv, v)
               + beta * beta * vBv * np.outer(v, v))
        Sr = HBH[1:, 1:]
        self._Sr = 0.5 * (Sr + Sr.T)

        anorm = float(np.max(np.sum(np.abs(self._Sr), axis=0)))
        chol, info = lapack.dpotrf(self._Sr, lower=0)
        rcond = 0.0
        if info == 0:
            rcond, _ = lapack.dpocon(chol, anorm)
        if info != 0 or rcond < 1.0 / cond_max:
            mu = np.linalg.eigvalsh(self._Sr)
            raise AssemblyError(
                f"single layer matrix ill-conditioned: smallest eigenvalue {mu[0]:.3e}, "
                f"condition {mu[-1] / abs(mu[0]) if mu[0] else np.inf:.3e}")
        self._chol = (chol, False)
        self.condition = 1.0 / rcond

    # weighted <-> reduced coordinates

    def _reflect(self, x):
        return x - self._beta * np.outer(self._v, self._v @ x).reshape(x.shape)

    def _reduce(self, g):
        """Coordinates of ``g`` in an orthonormal basis of the mean-zero subspace."""
        return self._reflect(self._sqrt_w * g)[1:]

    def _expand(self, y):
        full = np.concatenate([[0.0], y]) if y.ndim == 1 else np.vstack([np.zeros(y.shape[1]), y])
        x = self._reflect(full)
        return x / (self._sqrt_w if y.ndim == 1 else self._sqrt_w[:, None])

    @cached_property
    def _eig(self):
        mu, U = np.linalg.eigh(self._Sr)
        return 1.0 / mu, U

    @property
    def N_eigs(self):
        """Eigenvalues of ``N`` (ascending, constants first) and weighted-orthonormal eigenvectors."""
        lam, U = self._eig
        order = np.argsort(lam)
        vals = np.concatenate([[0.0], lam[order]])
        const = np.full(self.curve.n, 1.0 / np.sqrt(np.sum(self.curve.weights)))
        vecs = np.column_stack([const, self._expand(U[:, order])])
        return vals, vecs

    @cached_property
    def Ksharp_mat(self):
        c = self.curve
        z = c.positions
        d1 = z[:, 0, None] - z[None, :, 0]
        d2 = z[:, 1, None] - z[None, :, 1]
        np.fill_diagonal(d1, 1.0)
        gx, gy = periodic_kernel_gradient(d1, d2, c.period)
        K = (c.normal[:, 0, None] * gx + c.normal[:, 1, None] * gy) * c.weights[None, :]
        np.fill_diagonal(K, c.curvature * c.weights / FOUR_PI)
        K.setflags(write=False)
        return K

    def meanzero_proj(self, f):
        """Remove the sigma-weighted mean."""
        return f - np.dot(self.curve.weights, f) / np.sum(self.curve.weights)

    def apply_S(self, f):
        _check_mean_zero(self.curve, f)
        return self.S_mat @ f

    def apply_N(self, g):
        g = np.asarray(g, dtype=float)
        if not np.all(np.isfinite(g)):
            raise ValueError("apply_N needs finite values")
        y = linalg.cho_solve(self._chol, self._reduce(g))
        return self._expand(y)

    def fractional_norm(self, g, s):
        """``|N^s g|_L2`` through the spectral calculus, zero mode excluded."""
        if not -1.0 <= s <= 1.0:
            raise ValueError(f"s must lie in [-1, 1], got {s}")
        g = np.asarray(g, dtype=float)
        if s < 0:
            _check_mean_zero(self.curve, g, "argument of a negative-order norm")
        lam, U = self._eig
        coef = U.T @ self._reduce(g)
        return float(np.linalg.norm(lam**s * coef))

    def fractional_norms(self, g, orders=(-1.0, -0.5, 0.0, 0.5, 1.0)):
        """Several norms of the same mean-zero field from one projection."""
        _check_mean_zero(self.curve, g, "argument of a negative-order norm")
        lam, U = self._eig
        coef = U.T @ self._reduce(g)
        return {s: float(np.linalg.norm(lam**s * coef)) for s in orders}

    def apply_M(self, f):
        _check_mean_zero(self.curve, f)
        return -(self.Ksharp_mat @ f)

    def apply_M_adjoint(self, g):
        """Adjoint of ``M`` in the weighted inner product, built from ``K``."""
        w = self.curve.weights
        return -(self.Ksharp_mat.T @ (w * g)) / w

    def ksharp_norm(self):
        """Operator norm of ``K#`` on weighted L2."""
        sw = self._sqrt_w
        return float(np.linalg.norm(sw[:, None] * self.Ksharp_mat / sw[None, :], 2))

    def dump(self, path):
        """Write ``S`` (and ``K#``) as row-major float64 with a JSON sidecar."""
        c = self.curve
        blob = np.concatenate([self.S_mat.ravel(), np.asarray(self.Ksharp_mat).ravel()])
        blob.astype("<f8").tofile(path)
        meta = {
            "n": c.n,
            "arrays": ["S_mat", "Ksharp_mat"],
            "dtype": "<f8",
            "order": "C",
            "curve_hash": curve_hash(c),
            "sha256": hashlib.sha256(blob.astype("<f8").tobytes()).hexdigest(),
        }
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


def load(path, curve):
    """Rebuild an :class:`OperatorSet` from :meth:`OperatorSet.dump` output."""
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    if meta["curve_hash"] != curve_hash(curve):
        raise ValueError("dump was assembled on a different curve")
    n = meta["n"]
    blob = np.fromfile(path, dtype=meta["dtype"])
    ops = OperatorSet(curve, blob[: n * n].reshape(n, n).copy())
    K = blob[n * n:].reshape(n, n).copy()
    K.setflags(write=False)
    ops.__dict__["Ksharp_mat"] = K
    return ops


def single_layer_matrix(c):
    """Kress product quadrature for ``S`` on nodes uniform in a periodic parameter."""
    if not c.periodic:
        raise FlatnessError("operators need a periodic curve")
    n, L = c.n, c.period
    z = c.positions
    d1 = z[:, 0, None] - z[None, :, 0]
    d2 = z[:, 1, None] - z[None, :, 1]
    np.fill_diagonal(d1, 1.0)
    G = periodic_kernel(d1, d2, L)
    idx = np.arange(n)
    lag = (idx[:, None] - idx[None, :]) % n
    with np.errstate(divide="ignore"):
        log4sin = np.log(4.0 * np.sin(np.pi * lag / n) ** 2)
    smooth = G + log4sin / FOUR_PI
    # |z'(t)| for the parameter t in [0, 2 pi)
    speed = c.weights * n / (2.0 * np.pi)
    np.fill_diagonal(smooth, -np.log(0.5 * (c.weights * n / L) ** 2) / FOUR_PI)
    R = kress_weights(n)[lag]
    return (-R / FOUR_PI + (2.0 * np.pi / n) * smooth) * speed[None, :]


def assemble(c, cond_max=COND_MAX):
    """Assemble the operator set on a periodic curve in the graph regime."""
    if not c.periodic:
        raise FlatnessError("operators need a periodic curve")
    b_sup = float(np.max(np.abs(c.angle)))
    if b_sup >= 0.5 * np.pi:
        raise FlatnessError(f"tangent angle {b_sup:.4f} leaves the graph regime")
    return OperatorSet(c, single_layer_matrix(c), cond_max)


def apply_S(ops, f):
    return ops.apply_S(f)


def apply_N(ops, g):
    return ops.apply_N(g)


def apply_M(ops, f):
    return ops.apply_M(f)


def fractional_norm(ops, g, s):
    return ops.fractional_norm(g, s)


def tangential_derivative(c, g):
    """Spectral derivative of ``g`` along the curve with respect to arc length."""
    return fourier.derivative(np.asarray(g, dtype=float), c.n) / c.weights


def tangential_derivative_norm(c, g):
    d = tangential_derivative(c, g)
    return float(np.sqrt(np.dot(c.weights, d * d)))


def interpolation_margins(ops, g):
    """Relative slack ``(rhs - lhs) / rhs`` of the interpolation inequalities for ``g``.

    Keys: ``INT1``, ``INT2``, ``INT4`` and the two building blocks ``EINS``
    (``|g|_1/2^2 <= |g|_0 |g|_1``) and ``ZWEI`` (``|g|_0^2 <= |g|_-1/2 |g|_1/2``).
    """
    nm = ops.fractional_norms(g)
    pairs = {
        "INT1": (nm[0.5], nm[-0.5] ** (1 / 3) * nm[1.0] ** (2 / 3)),
        "INT2": (nm[0.0], nm[-0.5] ** (2 / 3) * nm[1.0] ** (1 / 3)),
        "INT4": (nm[-0.5], nm[-1.0] ** (2 / 3) * nm[0.5] ** (1 / 3)),
        "EINS": (nm[0.5] ** 2, nm[0.0] * nm[1.0]),
        "ZWEI": (nm[0.0] ** 2, nm[-0.5] * nm[0.5]),
    }
    return {k: (rhs - lhs) / rhs if rhs > 0 else 0.0 for k, (lhs, rhs) in pairs.items()}


def sup_interpolation(c, g):
    """``(|g|_inf^2, 2 |g|_2 |d_tau g|_2)`` for the L-infinity interpolation bound.

    The sup is taken on the nodes; a mean-zero periodic field has a zero, which
    is the hypothesis of the bound.
    """
    lhs = float(np.max(np.abs(g))) ** 2
    rhs = 2.0 * c.l2(g) * tangential_derivative_norm(c, g)
    return lhs, rhs


def eqnorm_gap(ops, g):
    """``| |d_tau g| - |N g| / 2 | / |N g|``; zero on a line, small for flat curves."""
    dn = tangential_derivative_norm(ops.curve, g)
    ng = ops.curve.l2(ops.apply_N(g))
    return abs(dn - 0.5 * ng) / ng if ng > 0 else 0.0
