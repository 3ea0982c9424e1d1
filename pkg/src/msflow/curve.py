"""Periodic graph interfaces, their arc-length description, and flatness measures.

Conventions: the positive phase lies above the interface, the normal ``nu``
points out of it (downward for a flat line), and the curvature is positive
where the interface bends towards ``nu``.  In arc length ``z' = exp(i b)``,
``nu = -i z'`` and ``kappa = -b'``.
"""

from __future__ import annotations

import contextlib
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import fourier

DEFAULT_MARGIN = np.pi / 4

# Multiplier applied to curvature in graph_to_curve; flipped only by the
# self-test mutation hook.
_KAPPA_SIGN = 1.0


class GraphError(ValueError):
    """Height data that does not describe an admissible periodic graph."""


class LeftGraphRegime(GraphError):
    """Slope beyond the configured Lipschitz margin."""

    def __init__(self, slope, limit):
        super().__init__(f"left graph regime: max slope {slope:.6g} >= {limit:.6g}")
        self.slope = slope
        self.limit = limit


class HypothesisError(ValueError):
    """Input outside the hypothesis of an estimate."""


@contextlib.contextmanager
def kappa_sign_flip():
    """Mutation hook: compute curvature with the wrong sign inside the block."""
    global _KAPPA_SIGN
    old = _KAPPA_SIGN
    _KAPPA_SIGN = -old
    try:
        yield
    finally:
        _KAPPA_SIGN = old


@dataclass(frozen=True)
class PeriodicGraph:
    """Mean-zero heights ``h_j`` at ``x_j = j L / n`` on one period cell."""

    period: float
    heights: np.ndarray
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        object.__setattr__(self, "heights", h)
        n = h.shape[0]
        if h.ndim != 1:
            raise GraphError("heights must be one-dimensional")
        if not self.period > 0:
            raise GraphError(f"period must be positive, got {self.period}")
        if n < 16 or n & (n - 1):
            raise GraphError(f"sample count must be a power of two >= 16, got {n}")
        if not np.all(np.isfinite(h)):
            raise GraphError("heights must be finite")
        scale = max(np.max(np.abs(h)), 1.0)
        if abs(np.mean(h)) > 1e-12 * scale:
            raise GraphError(f"heights are not mean-zero (mean {np.mean(h):.3e})")
        limit = np.tan(np.pi / 2 - self.margin)
        slope = self.max_chord_slope
        if slope >= limit:
            raise LeftGraphRegime(slope, limit)

    @property
    def n(self):
        return self.heights.shape[0]

    @property
    def abscissae(self):
        return np.arange(self.n) * self.period / self.n

    @property
    def max_chord_slope(self):
        dh = np.diff(np.append(self.heights, self.heights[0]))
        return float(np.max(np.abs(dh)) / (self.period / self.n))

    @classmethod
    def from_modes(cls, period, n, modes, margin=DEFAULT_MARGIN):
        """Build ``h(x) = sum a sin(2 pi m x / L + phase)`` from ``(m, a, phase)`` triples."""
        x = np.arange(n) * period / n
        h = np.zeros(n)
        for m, a, phase in modes:
            h += a * np.sin(2 * np.pi * m * x / period + phase)
        h -= np.mean(h)
        return cls(period, h, margin)


@dataclass(frozen=True)
class SampledCurve:
    """Interface sampled at arc-length nodes.

    ``period`` is the horizontal period ``L`` for periodic curves and ``None``
    for open fixtures; ``abscissae`` holds the horizontal coordinate of each node
    when the curve came from a graph.
    """

    nodes: np.ndarray
    positions: np.ndarray
    angle: np.ndarray
    curvature: np.ndarray
    normal: np.ndarray
    weights: np.ndarray
    period_arclength: float
    period: float | None = None
    abscissae: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self):
        return self.nodes.shape[0]

    @property
    def periodic(self):
        return self.period is not None

    @property
    def uniform(self):
        return np.ptp(self.weights) <= 1e-14 * np.max(self.weights)

    def integrate(self, values):
        return float(np.dot(self.weights, values))

    def mean(self, values):
        return self.integrate(values) / float(np.sum(self.weights))

    def l2(self, values):
        return float(np.sqrt(np.dot(self.weights, values * values)))

    def invariant_errors(self):
        """Deviations from the structural invariants (all should be tiny)."""
        nu = self.normal
        tangent = np.column_stack([np.cos(self.angle), np.sin(self.angle)])
        rotated = np.column_stack([tangent[:, 1], -tangent[:, 0]])
        return {
            "unit_normal": float(np.max(np.abs(np.hypot(nu[:, 0], nu[:, 1]) - 1.0))),
            "normal_rotation": float(np.max(np.abs(nu - rotated))),
            "weight_sum": float(abs(np.sum(self.weights) - self.period_arclength)
                                / self.period_arclength),
        }


def _normals(b):
    return np.column_stack([np.sin(b), -np.cos(b)])


def arclength_map(g):
    """Arc length along the graph as ``s(x) = rate * x + P(x)``.

    Returns ``(rate, P)`` with ``P`` sampled on the graph grid and ``P(0) = 0``;
    the period arc length is ``rate * L``.
    """
    hp = fourier.derivative(g.heights, g.period)
    return fourier.antiderivative(np.sqrt(1.0 + hp * hp), g.period)


def graph_geometry(hp, hpp):
    """Tangent angle and curvature of a graph from its first two derivatives."""
    b = np.arctan(hp)
    kappa = _KAPPA_SIGN * -hpp / (1.0 + hp * hp) ** 1.5
    return b, kappa


def graph_to_curve(g, nodes="arclength", tol=1e-12, max_iter=60):
    """Sample a periodic graph as a curve.

    With ``nodes="arclength"`` (the default) the graph is resampled at uniform
    arc length: Newton iteration on the spectrally interpolated arc-length map
    locates the abscissae of the nodes, and heights, slopes and curvature are
    evaluated there from the graph's trigonometric interpolant.  With
    ``nodes="graph"`` the original abscissae are kept and the weights carry the
    local speed instead; both layouts are uniform in some periodic parameter,
    which is all the operator quadrature needs.
    """
    n, L = g.n, g.period
    h = g.heights
    hp = fourier.derivative(h, L)
    hpp = fourier.derivative(h, L, order=2)
    speed = np.sqrt(1.0 + hp * hp)
    rate, P = fourier.antiderivative(speed, L)
    total = rate * L

    if nodes == "graph":
        x = g.abscissae
        b, kappa = graph_geometry(hp, hpp)
        return SampledCurve(
            nodes=rate * x + P,
            positions=np.column_stack([x, h]),
            angle=b,
            curvature=kappa,
            normal=_normals(b),
            weights=speed * (L / n),
            period_arclength=total,
            period=L,
            abscissae=x,
        )
    if nodes != "arclength":
        raise ValueError(f"unknown node layout {nodes!r}")

    sigma = np.arange(n) * total / n
    itp = fourier.Interpolant(L, n)
    coef = itp.coefficients(np.vstack([P, h, hp, hpp]))
    xs = sigma / rate
    for _ in range(max_iter):
        ph = itp.phases(xs)
        p_val, _, hp_val, _ = itp.evaluate(ph, coef)
        resid = rate * xs + p_val - sigma
        xs = xs - resid / np.sqrt(1.0 + hp_val * hp_val)
        if np.max(np.abs(resid)) <= tol * total:
            break
    else:
        raise GraphError("arc-length resampling did not converge")
    ph = itp.phases(xs)
    _, h_val, hp_val, hpp_val = itp.evaluate(ph, coef)

    b, kappa = graph_geometry(hp_val, hpp_val)
    return SampledCurve(
        nodes=sigma,
        positions=np.column_stack([xs, h_val]),
        angle=b,
        curvature=kappa,
        normal=_normals(b),
        weights=np.full(n, total / n),
        period_arclength=total,
        period=L,
        abscissae=xs,
    )


def curve_to_graph(c, n=None, tol=1e-13, max_iter=60):
    """Project a periodic curve back to heights on a uniform abscissa grid."""
    if not c.periodic:
        raise GraphError("curve_to_graph needs a periodic curve")
    L, total = c.period, c.period_arclength
    m = c.n
    n = m if n is None else n
    s = c.nodes
    if not c.uniform:
        raise GraphError("curve_to_graph expects arc-length nodes")
    q = c.positions[:, 0] - s * L / total
    qp = fourier.derivative(q, total)
    itp = fourier.Interpolant(total, m)
    coef = itp.coefficients(np.vstack([q, qp, c.positions[:, 1]]))
    target = np.arange(n) * L / n
    ss = target * total / L
    for _ in range(max_iter):
        ph = itp.phases(ss)
        q_val, qp_val, _ = itp.evaluate(ph, coef)
        resid = ss * L / total + q_val - target
        ss = ss - resid / (L / total + qp_val)
        if np.max(np.abs(resid)) <= tol * L:
            break
    ph = itp.phases(ss)
    return itp.evaluate(ph, coef)[2]


def excess_energy(c):
    """Excess length ``sum w (1 + nu . e2)``, evaluated as ``2 sin^2(b/2)`` to avoid cancellation."""
    return c.integrate(2.0 * np.sin(0.5 * c.angle) ** 2)


def nonoriented_excess(c):
    """Non-oriented excess ``sum w (1 - (nu . e2)^2) = sum w sin^2 b``."""
    return c.integrate(np.sin(c.angle) ** 2)


def angle_constant(b_sup):
    """``C(b) = |b|_inf^2 / (1 - cos |b|_inf)``, equal to 2 at zero and increasing."""
    if b_sup == 0.0:
        return 2.0
    return b_sup * b_sup / (2.0 * np.sin(0.5 * b_sup) ** 2)


@dataclass(frozen=True)
class AngleBound:
    b_l2_sq: float
    bound: float
    constant: float
    holds: bool

    @property
    def ratio(self):
        return self.b_l2_sq / self.bound if self.bound > 0 else 0.0


def angle_bound_check(c, E, rtol=1e-6):
    """Check ``|b|_2^2 <= C(b) E`` for curves with ``|b|_inf < 2 pi``."""
    b_sup = float(np.max(np.abs(c.angle)))
    if b_sup >= 2 * np.pi:
        raise HypothesisError(f"|b|_inf = {b_sup:.6g} >= 2 pi; angle lemma does not apply")
    cb = angle_constant(b_sup)
    l2 = c.integrate(c.angle ** 2)
    bound = cb * E
    return AngleBound(l2, bound, cb, bool(l2 <= bound * (1 + rtol) + 1e-300))


def _displacements(c):
    """Pairwise displacement components ``x_i - x_j`` (minimum image when periodic)."""
    z = c.positions
    dx = z[:, None, 0] - z[None, :, 0]
    dy = z[:, None, 1] - z[None, :, 1]
    if c.periodic:
        L = c.period
        dx = dx - L * np.round(dx / L)
    return dx, dy


def dyadic_radii(c):
    """Window half-widths ``(Lambda / n) 2^m`` up to ``Lambda / 2``."""
    base = c.period_arclength / c.n
    radii = []
    r = base
    while r <= 0.5 * c.period_arclength * (1 + 1e-12):
        radii.append(r)
        r *= 2.0
    return np.array(radii)


@dataclass(frozen=True)
class BmoProfile:
    radii: np.ndarray
    oscillation: np.ndarray  # sup over centers, per radius
    skipped: int

    @property
    def value(self):
        osc = self.oscillation[np.isfinite(self.oscillation)]
        return float(np.max(osc)) if osc.size else 0.0


def bmo_profile(c, min_nodes=4):
    """L2 mean oscillation of the normal over centred surface balls at every node.

    Balls with fewer than ``min_nodes`` samples are skipped and counted.
    """
    dx, dy = _displacements(c)
    dist = np.hypot(dx, dy)
    w = c.weights
    nu = c.normal
    # oscillation measured from the centre normal: |nu_j - nu_i|^2 = 4 sin^2((b_j - b_i)/2)
    # avoids the cancellation in E|nu|^2 - |E nu|^2 = 1 - |E nu|^2
    chord2 = 4.0 * np.sin(0.5 * (c.angle[None, :] - c.angle[:, None])) ** 2
    radii = dyadic_radii(c)
    osc = np.full(radii.shape, np.nan)
    skipped = 0
    for i, r in enumerate(radii):
        mask = (dist < r).astype(float)
        count = mask.sum(axis=1)
        ok = count >= min_nodes
        skipped += int(np.sum(~ok))
        if not np.any(ok):
            continue
        mass = mask @ w
        shift = (mask @ (w[:, None] * nu)) / mass[:, None] - nu
        sq = ((mask * chord2) @ w) / mass
        var = np.maximum(sq - np.sum(shift * shift, axis=1), 0.0)
        osc[i] = float(np.sqrt(np.max(var[ok])))
    return BmoProfile(radii, osc, skipped)


def bmo_normal(c):
    """Estimate of ``|nu|_BMO`` by the L2 oscillation over dyadic centred windows."""
    return bmo_profile(c).value


@dataclass(frozen=True)
class Tilt:
    value: float
    count: int

    @property
    def empty(self):
        return self.count == 0


def _cylinder_mask(c, y, r, e):
    dx, dy = _displacements(c)
    ex, ey = e
    along = dx[y] * ex + dy[y] * ey
    across = np.hypot(dx[y] - along * ex, dy[y] - along * ey)
    return (np.abs(along) < r) & (across < r)


def _oriented_integrand(c, e):
    e = np.asarray(e, dtype=float)
    if np.allclose(e, (0.0, -1.0)):
        return 2.0 * np.sin(0.5 * c.angle) ** 2
    return 1.0 - c.normal @ e


def tilt_excess(c, y, r, e=(0.0, -1.0)):
    """Oriented tilt excess ``r^-1 sum_{C_r(y, e)} w |nu - e|^2 / 2`` at node index ``y``."""
    if not r > 0:
        raise ValueError("radius must be positive")
    mask = _cylinder_mask(c, y, r, e)
    count = int(np.sum(mask))
    if count == 0:
        return Tilt(0.0, 0)
    integrand = _oriented_integrand(c, e)
    return Tilt(float(np.dot(c.weights[mask], integrand[mask]) / r), count)


def nonoriented_tilt_excess(c, y, r, e=(0.0, -1.0)):
    mask = _cylinder_mask(c, y, r, e)
    proj = c.normal @ np.asarray(e, dtype=float)
    return float(np.dot(c.weights[mask], (1.0 - proj * proj)[mask]) / r)


def ball_measure(c, r):
    """Arc length of ``B_r(x_i) n Gamma`` for each node, assuming the slice is one arc.

    Crossings of the sphere are located by linear interpolation of the distance
    between neighbouring nodes.
    """
    n = c.n
    z = c.positions
    h = c.period_arclength / n
    half = n // 2 if c.periodic else n
    out = np.empty(n)
    for i in range(n):
        total = 0.0
        for sign in (1, -1):
            prev_d = 0.0
            reached = None
            for k in range(1, half + 1):
                j = i + sign * k
                if c.periodic:
                    shift, jj = divmod(j, n)
                    p = z[jj] + np.array([shift * c.period, 0.0])
                elif 0 <= j < n:
                    p = z[j]
                else:
                    break
                d = float(np.hypot(*(p - z[i])))
                if d >= r:
                    reached = (k - 1 + (r - prev_d) / (d - prev_d)) * h
                    break
                prev_d = d
            if reached is None:
                reached = (k if c.periodic else (k - 1) + 0.5) * h
            total += reached
        out[i] = total
    return out


def density_deviation(c, r):
    """``sup_x |sigma(Delta(x, r)) / (2 r) - 1|`` over node centres."""
    return float(np.max(np.abs(ball_measure(c, r) / (2 * r) - 1.0)))


@dataclass(frozen=True)
class AllardReport:
    radius: float
    density_dev: float
    tilt: float
    curvature: float
    curvature_full: float
    eta: tuple
    is_graph: bool


def allard_graph_check(c, E, D, eta=(0.1, 0.1, 0.1)):
    """Evaluate the three Allard quantities at ``R = (E / D)^(1/3)``.

    The density ratio, the non-oriented tilt excess with respect to ``-e2`` and
    ``R^(1/2) |kappa|_{L2(B_R)}`` are maximised over node centres;
    ``curvature_full`` uses the whole period instead of the ball.
    """
    if D <= 0:
        return AllardReport(np.inf, 0.0, 0.0, 0.0, 0.0, tuple(eta), True)
    R = (E / D) ** (1.0 / 3.0)
    dens = density_deviation(c, R)
    dx, dy = _displacements(c)
    along = -dy
    across = np.abs(dx)
    sin2 = np.sin(c.angle) ** 2
    cyl = (np.abs(along) < R) & (across < R)
    tilt = float(np.max(cyl.astype(float) @ (c.weights * sin2)) / R)
    ball = (np.hypot(dx, dy) < R).astype(float)
    k2 = ball @ (c.weights * c.curvature ** 2)
    curv = float(np.sqrt(R) * np.sqrt(np.max(k2)))
    full = float(np.sqrt(R) * c.l2(c.curvature))
    ok = dens <= eta[0] and tilt <= eta[1] and curv <= eta[2]
    return AllardReport(R, dens, tilt, curv, full, tuple(eta), bool(ok))


@dataclass(frozen=True)
class FlatnessReport:
    bmo_normal: float
    b_sup: float
    tilt: dict
    density_dev: float
    allard: AllardReport | None


def flatness_report(c, E=None, D=None):
    radii = dyadic_radii(c)
    tilt = {}
    for r in radii:
        tilt[float(r)] = max(tilt_excess(c, y, r).value for y in range(c.n))
    dens = max(density_deviation(c, r) for r in radii if r >= 4 * c.period_arclength / c.n)
    allard = allard_graph_check(c, E, D) if E is not None and D is not None else None
    return FlatnessReport(bmo_normal(c), float(np.max(np.abs(c.angle))), tilt, dens, allard)


SPIRAL_EPS_MAX = 1.0 / (3.0 * np.log(1.5))


def spiral_fixture(eps, window, n):
    """Truncated spiral with tangent angle ``b(s) = eps log|s|`` on ``[-window, window]``.

    Nodes sit at cell midpoints so ``s = 0`` is never sampled; positions use
    the exact antiderivative ``z(s) = sign(s) |s|^(1 + i eps) / (1 + i eps)``.
    """
    if not 0 < eps < SPIRAL_EPS_MAX:
        raise ValueError(f"eps must lie in (0, {SPIRAL_EPS_MAX:.4f}), got {eps}")
    ds = 2.0 * window / n
    s = -window + (np.arange(n) + 0.5) * ds
    a = np.abs(s)
    b = eps * np.log(a)
    z = np.sign(s) * a * np.exp(1j * b) / (1 + 1j * eps)
    return SampledCurve(
        nodes=s,
        positions=np.column_stack([z.real, z.imag]),
        angle=b,
        curvature=-eps / s,
        normal=_normals(b),
        weights=np.full(n, ds),
        period_arclength=2.0 * window,
        period=None,
    )


def curve_hash(c):
    return hashlib.sha256(np.ascontiguousarray(c.positions, dtype="<f8").tobytes()).hexdigest()


def write_snapshot(path, c, t=0.0):
    """Columnar text snapshot: ``# L=.. n=.. t=..`` then ``s z1 z2 b kappa w`` rows."""
    L = c.period if c.periodic else float("nan")
    lines = [f"# L={L:.17g} n={c.n} t={t:.17g}"]
    for row in zip(c.nodes, c.positions[:, 0], c.positions[:, 1], c.angle,
                   c.curvature, c.weights):
        lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(curve, t)``."""
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        meta = dict(item.split("=", 1) for item in header)
        data = np.loadtxt(fh, ndmin=2)
    L = float(meta["L"])
    s, z1, z2, b, kappa, w = data.T
    curve = SampledCurve(
        nodes=s,
        positions=np.column_stack([z1, z2]),
        angle=b,
        curvature=kappa,
        normal=_normals(b),
        weights=w,
        period_arclength=float(np.sum(w)),
        period=None if np.isnan(L) else L,
        abscissae=z1,
    )
    return curve, float(meta["t"])
