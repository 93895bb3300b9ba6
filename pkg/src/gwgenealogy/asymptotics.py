"""Large-horizon limits of the ancestral partition process.

Supercritical trees: the limit is expressed through phi, the Laplace transform
of the martingale limit W = lim N_T e^{-(m-1)T}.  phi is obtained from the
identity phi(v) = F_t(phi(v e^{-(m-1)t})) by seeding phi(u) ~ 1 - u at a tiny
u and flowing forward.

Critical trees: a universal limit in rescaled time, given by integrals of
rational functions.

Subcritical trees: the quasi-stationary generating function C(s) replaces the
top level of the finite-horizon formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .genfun import OffspringSpec, extinction_probability, flow_complement, survival_tail
from .jets import TaylorJet
from .laws import LevelProducts, _as_f, _flow_at, _start, check_mesh
from .partitions import Chain, breakage_numbers, merger_numbers
from .quadrature import DEFAULT, QuadratureResult, Tolerance, integrate, integrate_half_line


class RegimeError(ValueError):
    """Operation called for an offspring law in the wrong growth regime."""


class StabilityError(RuntimeError):
    """A limit failed to settle within its internal consistency budget."""


def _need(spec: OffspringSpec, regime: str):
    if spec.regime != regime:
        names = {"super": "m > 1", "crit": "m = 1", "sub": "m < 1"}
        raise RegimeError(f"regime: this operation needs {names[regime]}")


# ---------------------------------------------------------------------------
# supercritical


@dataclass
class LaplaceTransform:
    """phi(v) = E exp(-v W) for a supercritical law.

    The seed point for argument v is u <= eps / max(1, v); the first-order seed
    error is then about eps * E[W^2] / 2 whatever the size of v.  Horizons are
    rounded up to a grid of four decades so one flow serves a whole batch.  The
    stability check reruns with every horizon lengthened by ln 2 / r, which
    halves every seed.
    """

    spec: OffspringSpec
    eps: float = 1e-10
    halving_tol: float = 1e-9

    def __post_init__(self):
        _need(self.spec, "super")

    @property
    def at_infinity(self) -> float:
        return extinction_probability(self.spec)

    def _complement(self, v: np.ndarray, order: int, eps: float, extra: float = 0.0) -> np.ndarray:
        r = self.spec.growth_rate
        if not v.size:
            return np.zeros(v.shape + (order + 1,))
        # horizons rounded up to a grid of four decades; one flow reports every grid time
        step = math.log(1e4) / r
        need = np.log(np.maximum(v * np.maximum(1.0, v), 1.0) / eps) / r
        groups = np.ceil(need / step - 1e-9).astype(int)
        uniq = np.unique(groups)
        scale = np.exp(-r * (step * groups + extra))
        W0 = np.zeros(v.shape + (order + 1,))
        W0[:, 0] = v * scale
        if order >= 1:
            W0[:, 1] = scale
        # tiny seeds need an absolute tolerance below their own size
        atol = np.maximum(1e-30 * scale, 1e-300)[:, None]
        flowed = flow_complement(self.spec, W0, [float(g * step + extra) for g in uniq], atol=atol)
        return flowed[np.searchsorted(uniq, groups), np.arange(len(v))]

    def complement_jets(self, v, order: int = 0, check: bool = True) -> np.ndarray:
        """Jets in v of 1 - phi, shape (len(v), order + 1)."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if np.any(v < 0):
            raise ValueError("phi is evaluated at v >= 0")
        W = self._complement(v, order, self.eps)
        if check:
            # the same grid shifted by ln 2 / r halves every seed
            W2 = self._complement(v, 0, self.eps, math.log(2.0) / self.spec.growth_rate)
            drift = float(np.max(np.abs(W2[..., 0] - W[..., 0]))) if v.size else 0.0
            if drift >= self.halving_tol:
                raise StabilityError(f"halving the seed threshold moved phi by {drift:.3g}")
        return W

    def jets(self, v, order: int = 0, check: bool = True) -> np.ndarray:
        return _as_f(self.complement_jets(v, order, check))


def martingale_laplace(lt: LaplaceTransform, v: float, order: int) -> TaylorJet:
    return TaylorJet(float(v), lt.jets([v], order)[0])


def super_fdd_table(
    spec: OffspringSpec,
    k: int,
    mesh: Sequence[float],
    chains: Sequence[Chain],
    tol: Tolerance = DEFAULT,
    lt: LaplaceTransform | None = None,
) -> list[QuadratureResult]:
    """Limit law of the forward partition process for a supercritical tree."""
    _need(spec, "super")
    mesh = tuple(float(t) for t in mesh)
    if not mesh or mesh[0] <= 0 or any(b <= a for a, b in zip(mesh, mesh[1:])):
        raise ValueError("mesh must be strictly increasing and positive")
    lt = lt or LaplaceTransform(spec)
    n = len(mesh)
    r = spec.growth_rate
    pts = (0.0, *mesh)
    durations = [pts[i + 1] - pts[i] for i in range(n - 1 + 1)][:n]
    # levels 0..n-1 use F_{dt_i}; the last level uses derivatives of phi itself
    level_orders, last_orders = [], []
    for ch in chains:
        if ch.k != k or ch.n != n or ch.coalescent:
            raise ValueError("chains must be forward chains on {1..k} matching the mesh")
        b = breakage_numbers(ch)
        level_orders.append([tuple(b[i].values()) for i in range(n)])
        last_orders.append(tuple(len(G) for G in ch.parts[-1].blocks))
    top = max(max(max(x) for x in per) for per in level_orders)
    q = lt.at_infinity
    pref = (-1) ** k * math.exp(-k * r * mesh[-1]) / (1.0 - q) / math.factorial(k - 1)
    shrink = [math.exp(-r * t) for t in mesh]

    def integrand(v):
        N = len(v)
        pts_v = np.concatenate([v * c for c in shrink])
        W = lt.complement_jets(pts_v, k).reshape(n, N, k + 1)
        out = np.ones((N, len(chains)))
        if n > 1 or durations:
            starts = np.stack([_start(W[i, :, 0], top) for i in range(n)])
            uniq = sorted(set(durations))
            flowed = flow_complement(spec, starts, uniq)
            outer = [_as_f(flowed[uniq.index(d), i]) for i, d in enumerate(durations)]
            for c, per in enumerate(level_orders):
                for i, orders in enumerate(per):
                    for bb in orders:
                        out[:, c] *= math.factorial(bb) * outer[i][:, bb]
        phi_last = _as_f(W[n - 1])
        for c, orders in enumerate(last_orders):
            for g in orders:
                out[:, c] *= math.factorial(g) * phi_last[:, g]
        return out * (pref * v ** (k - 1))[:, None]

    res = integrate_half_line(integrand, tol)
    return res if isinstance(res, list) else [res]


def super_fdd(spec, k, mesh, chain, tol: Tolerance = DEFAULT, lt=None) -> QuadratureResult:
    return super_fdd_table(spec, k, mesh, [chain], tol, lt)[0]


def supercritical_pair_tail(spec: OffspringSpec, t: float, tol: Tolerance = DEFAULT, lt=None) -> QuadratureResult:
    """Limit of P(tau > t, survival) for a sampled pair, as a single integral in v."""
    _need(spec, "super")
    lt = lt or LaplaceTransform(spec)
    c = math.exp(-spec.growth_rate * t)

    def integrand(v):
        inner = lt.jets(v * c, 2)
        outer = lt.jets(v, 1)
        return v * c * (2 * inner[:, 2]) / inner[:, 1] * outer[:, 1]

    return integrate_half_line(integrand, tol)


def tech_lemma_check(spec: OffspringSpec, v: float, t: float, j: int, T: float, lt=None):
    """Scaled derivative of F_{T-t} at exp(-v e^{-(m-1)T}) against its phi limit."""
    _need(spec, "super")
    if not 0 <= t <= T:
        raise ValueError("need 0 <= t <= T")
    r = spec.growth_rate
    w = -math.expm1(-v * math.exp(-r * T))
    W = flow_complement(spec, _start(np.array([w]), j), [T - t])[0, 0]
    F = _as_f(W)
    finite = math.exp(-j * r * T) * math.factorial(j) * F[j]
    lt = lt or LaplaceTransform(spec)
    phi = lt.jets([v * math.exp(-r * t)], j)[0]
    limit = (-1) ** j * math.exp(-j * r * t) * math.factorial(j) * phi[j]
    return float(finite), float(limit), float(abs(finite - limit))


# ---------------------------------------------------------------------------
# critical


def _critical_levels(k: int, mesh: Sequence[float], chain: Chain):
    b = breakage_numbers(chain)
    sizes = [1] + [len(p) for p in chain.parts] + [k]
    pts = (0.0, *mesh, 1.0)
    const = 1.0
    for level in b:
        for x in level.values():
            const *= math.factorial(x)
    levels = []
    for i in range(len(pts) - 1):
        levels.append((pts[i], pts[i + 1], sizes[i + 1] - sizes[i], sizes[i + 1] + sizes[i]))
    return const, levels


def critical_fdd_table(
    k: int, mesh: Sequence[float], chains: Sequence[Chain], tol: Tolerance = DEFAULT
) -> list[QuadratureResult]:
    """Universal limit law of the rescaled partition process for critical trees.

    Level i contributes dt_i^(|g_{i+1}| - |g_i|) times the ratio
    (1 + (1 - t_{i+1}) th) / (1 + (1 - t_i) th) raised to |g_{i+1}| + |g_i|,
    one power b + 1 per block with b its breakage number.
    """
    mesh = check_mesh(mesh, 1.0)
    specs = []
    for ch in chains:
        if ch.k != k or ch.n != len(mesh) or ch.coalescent:
            raise ValueError("chains must be forward chains on {1..k} matching the mesh")
        specs.append(_critical_levels(k, mesh, ch))
    norm = math.factorial(k - 1)

    def integrand(th):
        out = np.empty((len(th), len(specs)))
        for c, (const, levels) in enumerate(specs):
            val = const * th ** (k - 1) / norm
            for a, b, e_dt, e_ratio in levels:
                val = val * (b - a) ** e_dt * ((1 + (1 - b) * th) / (1 + (1 - a) * th)) ** e_ratio
            out[:, c] = val
        return out

    res = integrate_half_line(integrand, tol)
    return res if isinstance(res, list) else [res]


def critical_fdd(k: int, mesh: Sequence[float], chain: Chain, tol: Tolerance = DEFAULT) -> QuadratureResult:
    return critical_fdd_table(k, mesh, [chain], tol)[0]


def critical_pair_tail(u) -> np.ndarray:
    """Closed-form limit of P(tau/T >= u | N_T >= 2) for critical trees."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 2 * (1 - u) / u**2 * (-np.log1p(-u) - u)
    return np.where(u == 0, 1.0, np.where(u >= 1, 0.0, val))


def critical_split_density(k: int, u: Sequence[float], tol: Tolerance = Tolerance(1e-12, 1e-11)) -> float:
    """Density of the k - 1 split times in the critical limit, as a symmetric function."""
    u = np.asarray(u, dtype=float)
    if len(u) != k - 1:
        raise ValueError("need k - 1 split times")

    def integrand(th):
        val = k * th ** (k - 1) / (1 + th) ** 2
        for x in u:
            val = val / (1 + th * (1 - x)) ** 2
        return val

    return integrate_half_line(integrand, tol).value


def critical_scaling_check(spec: OffspringSpec, a: float, b: float, theta: float, j: int, T: float):
    """Rescaled derivative of F_{aT} at F_{bT}(exp(-theta/cT)) against its limit."""
    _need(spec, "crit")
    if a <= 0 or b < 0 or j < 1:
        raise ValueError("need a > 0, b >= 0, j >= 1")
    c = spec.second_factorial_moment / 2
    w = -math.expm1(-theta / (c * T))
    inner = flow_complement(spec, _start(np.array([w]), 0), [b * T])[0]
    outer = _as_f(flow_complement(spec, _start(inner[..., 0], j), [a * T])[0, 0])
    finite = (c * T) ** (-(j - 1)) * math.factorial(j) * outer[j]
    limit = a ** (j - 1) * math.factorial(j) * ((1 + theta * b) / (1 + theta * (a + b))) ** (j + 1)
    return float(finite), float(limit), float(abs(finite - limit))


def yaglom_constants(spec: OffspringSpec, T: float):
    """(c, T * P(N_T > 0), |T * P(N_T > 0) - 1/c|)."""
    _need(spec, "crit")
    c = spec.second_factorial_moment / 2
    scaled = T * survival_tail(spec, T, 1)
    return c, scaled, abs(scaled - 1 / c)


def yaglom_tail(spec: OffspringSpec, T: float, x: float = 1.0) -> float:
    """P(N_T > x c T | N_T > 0) from the exact pmf up to x c T."""
    _need(spec, "crit")
    c = spec.second_factorial_moment / 2
    jmax = int(math.floor(x * c * T))
    W = flow_complement(spec, _start(np.array([1.0]), jmax), [T], atol=1e-16)[0, 0]
    alive = W[0]
    # P(N_T > jmax) = P(N_T > 0) - sum_{1..jmax} P(N_T = j), with W[j] = -P(N_T = j)
    return float((alive + W[1:].sum()) / alive)


# ---------------------------------------------------------------------------
# subcritical


@dataclass
class QuasiStationary:
    """Limit law of N_T given survival, through C(s) = sum c_j s^j."""

    spec: OffspringSpec
    horizon: float
    coeffs: np.ndarray  # c_0 = 0, c_1, ..., c_jmax
    history: list = field(default_factory=list)

    def _alive(self) -> float:
        return float(flow_complement(self.spec, _start(np.array([1.0]), 0), [self.horizon])[0, 0, 0])

    def jets(self, x, order: int) -> np.ndarray:
        """Jets of C at the points x, shape (len(x), order + 1)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.jets_from_complement(1.0 - x, order)

    def jets_from_complement(self, w, order: int) -> np.ndarray:
        w = np.atleast_1d(np.asarray(w, dtype=float))
        W = flow_complement(self.spec, _start(w, order), [self.horizon])[0]
        out = -W / self._alive()
        out[..., 0] += 1.0
        return out

    def head_mass(self, k: int) -> float:
        """sum_{j < k} c_j."""
        return float(self.coeffs[1:k].sum())


def quasi_stationary(
    spec: OffspringSpec,
    jmax: int = 40,
    start: float = 20.0,
    cap: float = 640.0,
    tol: float = 1e-9,
) -> QuasiStationary:
    """Double the horizon until the coefficients of C stop moving."""
    _need(spec, "sub")

    def coeffs(T):
        W = flow_complement(spec, _start(np.array([1.0]), jmax), [T])[0, 0]
        c = -W / W[0]
        c[0] = 0.0
        return c

    T = start
    prev = coeffs(T)
    history = []
    while T < cap:
        T2 = 2 * T
        cur = coeffs(T2)
        change = float(np.max(np.abs(cur - prev)))
        history.append((T, T2, change))
        if change < tol:
            return QuasiStationary(spec, T2, cur, history)
        T, prev = T2, cur
    raise StabilityError(f"quasi-stationary coefficients still moving at horizon {T:g}")


def sub_fdd_table(
    spec: OffspringSpec,
    k: int,
    mesh: Sequence[float],
    chains: Sequence[Chain],
    tol: Tolerance = DEFAULT,
    qs: QuasiStationary | None = None,
) -> list[QuadratureResult]:
    """Limit law of the coalescent (time-reversed) partition process for subcritical trees."""
    _need(spec, "sub")
    mesh = tuple(float(t) for t in mesh)
    if not mesh or mesh[0] <= 0 or any(b <= a for a, b in zip(mesh, mesh[1:])):
        raise ValueError("mesh must be strictly increasing and positive")
    qs = qs or quasi_stationary(spec)
    n = len(mesh)
    pts = (0.0, *mesh)
    inner = [pts[j - 1] for j in range(1, n + 1)]
    dur = [pts[j] - pts[j - 1] for j in range(1, n + 1)]
    orders, tops = [], []
    for ch in chains:
        if not ch.coalescent or ch.k != k or ch.n != n:
            raise ValueError("chains must be coalescent chains on {1..k} matching the mesh")
        m = merger_numbers(ch)
        orders.append([tuple(m[j].values()) for j in range(1, n + 1)])
        tops.append(len(ch.parts[-1]))
    eng = LevelProducts(spec, inner, dur, orders)
    top = max(tops)
    pref = math.exp(-spec.growth_rate * mesh[-1]) / (1.0 - qs.head_mass(k)) / math.factorial(k - 1)

    def integrand(w):
        vals = eng.values(w)
        at_tn = _flow_at(spec, _start(w, 0), [mesh[-1]])[0]
        C = qs.jets_from_complement(at_tn[:, 0], top)
        for c, g in enumerate(tops):
            vals[:, c] *= math.factorial(g) * C[:, g]
        return vals * (pref * w ** (k - 1))[:, None]

    res = integrate(integrand, 0.0, 1.0, tol)
    return res if isinstance(res, list) else [res]


def sub_fdd(spec, k, mesh, chain, tol: Tolerance = DEFAULT, qs=None) -> QuadratureResult:
    return sub_fdd_table(spec, k, mesh, [chain], tol, qs)[0]


def sub_k2_cdf(spec: OffspringSpec, t: float, tol: Tolerance = DEFAULT, qs: QuasiStationary | None = None) -> QuadratureResult:
    """Limit of P(T - tau < t | N_T >= 2) for a sampled pair of a subcritical tree."""
    _need(spec, "sub")
    if t < 0:
        raise ValueError("need t >= 0")
    qs = qs or quasi_stationary(spec)
    c1 = float(qs.coeffs[1])

    def integrand(w):
        F = _flow_at(spec, _start(w, 2), [t])[0]
        F = _as_f(F)
        C = qs.jets_from_complement(w, 1)
        return w * (2 * F[:, 2]) / F[:, 1] * C[:, 1]

    res = integrate(integrand, 0.0, 1.0, tol)
    return QuadratureResult(res.value / (1 - c1), res.abs_error / (1 - c1), res.evaluations)
