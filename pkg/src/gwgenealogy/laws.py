"""Exact fixed-horizon laws of the ancestral partition process.

Every law is a one-dimensional integral over s in [0, 1] of products of
semigroup derivatives evaluated at composed arguments.  The integration
variable is the complement w = 1 - s so that nodes crowding against s = 1
keep their precision.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import legendre

from . import jets
from .genfun import OffspringSpec, flow_complement, survival_tail
from .partitions import (
    Block,
    Chain,
    Partition,
    PartitionError,
    breakage_numbers,
    enumerate_chains,
    is_maximal,
    merger_numbers,
)
from .quadrature import DEFAULT, QuadratureResult, Tolerance, integrate


class DegenerateKernel(ArithmeticError):
    """The conditional transition kernel is 0/0 at this point."""


def check_mesh(mesh: Sequence[float], T: float) -> tuple[float, ...]:
    mesh = tuple(float(t) for t in mesh)
    if not mesh:
        raise ValueError("mesh must contain at least one time")
    pts = (0.0, *mesh, float(T))
    if any(b <= a for a, b in zip(pts, pts[1:])):
        raise ValueError("mesh must satisfy 0 < t_1 < ... < t_n < T")
    return mesh


@dataclass(frozen=True)
class LawQuery:
    spec: OffspringSpec
    T: float
    k: int
    mesh: tuple[float, ...]
    chain: Chain
    tol: Tolerance | None = None

    def __post_init__(self):
        object.__setattr__(self, "mesh", check_mesh(self.mesh, self.T))
        if self.chain.k != self.k:
            raise ValueError("chain ground set does not match k")
        if self.chain.n != len(self.mesh):
            raise ValueError("chain length does not match the mesh")


def _tolerance(tol: Tolerance | None, mass: float) -> Tolerance:
    if tol is not None:
        return tol
    return DEFAULT.scaled(min(1.0, mass))


def _start(w: np.ndarray, order: int) -> np.ndarray:
    W = np.zeros(w.shape + (order + 1,))
    W[..., 0] = w
    if order >= 1:
        W[..., 1] = -1.0
    return W


def _as_f(W: np.ndarray) -> np.ndarray:
    F = -W
    F[..., 0] += 1.0
    return F


def _flow_at(spec: OffspringSpec, W0: np.ndarray, times: Sequence[float]) -> list[np.ndarray]:
    """Flow a batch to several times, returning one array per requested time."""
    uniq = sorted(set(float(t) for t in times))
    out = flow_complement(spec, W0, uniq)
    return [out[uniq.index(float(t))] for t in times]


class LevelProducts:
    """Products over levels of F^(b)_{duration}(F_{inner}(s)), for many chains.

    ``orders[c][l]`` lists the derivative orders (one per block) used by chain
    c at level l.  With ``inner_order = j`` every factor is carried as an
    order-j jet in s so that s-derivatives of the product come out exactly.
    """

    def __init__(self, spec, inner_times, durations, orders, inner_order=0):
        self.spec = spec
        self.inner_times = list(inner_times)
        self.durations = list(durations)
        self.inner_order = inner_order
        self.top = max(max(max(b) for b in per) for per in orders) + inner_order
        self.counts = [[Counter(b) for b in per] for per in orders]

    def outer(self, w: np.ndarray):
        inner = _flow_at(self.spec, _start(w, self.inner_order), self.inner_times)
        stacked = np.stack([_start(W[..., 0], self.top) for W in inner])
        uniq = sorted(set(self.durations))
        flowed = flow_complement(self.spec, stacked, uniq)
        outer = [_as_f(flowed[uniq.index(d), l]) for l, d in enumerate(self.durations)]
        return outer, [_as_f(W) for W in inner]

    def values(self, w: np.ndarray) -> np.ndarray:
        """Plain products, shape (len(w), n_chains)."""
        outer, _ = self.outer(w)
        res = np.ones((len(w), len(self.counts)))
        for c, per in enumerate(self.counts):
            for l, cnt in enumerate(per):
                for b, e in cnt.items():
                    res[:, c] *= (math.factorial(b) * outer[l][:, b]) ** e
        return res

    def derivative(self, w: np.ndarray) -> np.ndarray:
        """inner_order-th s-derivative of each product, shape (len(w), n_chains)."""
        j = self.inner_order
        outer, inner = self.outer(w)
        res = np.empty((len(w), len(self.counts)))
        for c, per in enumerate(self.counts):
            acc = np.zeros((len(w), j + 1))
            acc[:, 0] = 1.0
            for l, cnt in enumerate(per):
                for b, e in cnt.items():
                    fac = jets.compose(jets.shift(outer[l], b)[:, : j + 1], inner[l])
                    for _ in range(e):
                        acc = jets.mul(acc, fac)
            res[:, c] = math.factorial(j) * acc[:, j]
        return res


def _forward_levels(T: float, mesh: Sequence[float]):
    pts = (0.0, *mesh, T)
    inner = [T - pts[i + 1] for i in range(len(mesh) + 1)]
    dur = [pts[i + 1] - pts[i] for i in range(len(mesh) + 1)]
    return inner, dur


def _breakage_orders(chain: Chain) -> list[tuple[int, ...]]:
    return [tuple(level.values()) for level in breakage_numbers(chain)]


def fdd_table(
    spec: OffspringSpec,
    T: float,
    k: int,
    mesh: Sequence[float],
    chains: Sequence[Chain],
    tol: Tolerance | None = None,
    extra: int = 0,
) -> list[QuadratureResult]:
    """P(pi_{t_i} = gamma_i for all i, N_T >= k + extra) for each chain.

    ``extra = j > 0`` gives the projected law of a k-sample taken from k + j.
    """
    mesh = check_mesh(mesh, T)
    for ch in chains:
        if ch.k != k or ch.n != len(mesh) or ch.coalescent:
            raise ValueError("chains must be forward chains on {1..k} matching the mesh")
    inner, dur = _forward_levels(T, mesh)
    eng = LevelProducts(spec, inner, dur, [_breakage_orders(c) for c in chains], extra)
    kk = k + extra
    norm = math.factorial(kk - 1)

    def integrand(w):
        vals = eng.derivative(w) if extra else eng.values(w)
        return vals * (w ** (kk - 1) / norm)[:, None]

    tol = _tolerance(tol, survival_tail(spec, T, kk))
    res = integrate(integrand, 0.0, 1.0, tol)
    return res if isinstance(res, list) else [res]


def fdd_probability(q: LawQuery) -> QuadratureResult:
    return fdd_table(q.spec, q.T, q.k, q.mesh, [q.chain], q.tol)[0]


def projection_fdd(
    spec: OffspringSpec,
    T: float,
    k: int,
    j: int,
    mesh: Sequence[float],
    chain: Chain,
    tol: Tolerance | None = None,
) -> QuadratureResult:
    """P(chain for the first k of a uniform (k+j)-sample, N_T >= k + j)."""
    if j < 0:
        raise ValueError("j must be nonnegative")
    if j == 0:
        # same engine, order-0 jets
        mesh = check_mesh(mesh, T)
        inner, dur = _forward_levels(T, mesh)
        eng = LevelProducts(spec, inner, dur, [_breakage_orders(chain)], 0)
        norm = math.factorial(k - 1)
        tol = _tolerance(tol, survival_tail(spec, T, k))
        return integrate(lambda w: eng.derivative(w)[:, 0] * w ** (k - 1) / norm, 0.0, 1.0, tol)
    return fdd_table(spec, T, k, mesh, [chain], tol, extra=j)[0]


def reversed_fdd_table(
    spec: OffspringSpec,
    T: float,
    k: int,
    mesh: Sequence[float],
    chains: Sequence[Chain],
    tol: Tolerance | None = None,
) -> list[QuadratureResult]:
    """P(rho_{t_i} = gamma_i for all i, N_T >= k) for coalescent chains.

    rho is the time reversal of pi, so blocks merge as t grows; level j of the
    product uses merger numbers with the duration t_j - t_{j-1}.
    """
    mesh = check_mesh(mesh, T)
    pts = (0.0, *mesh, T)
    inner = [pts[j - 1] for j in range(1, len(pts))]
    dur = [pts[j] - pts[j - 1] for j in range(1, len(pts))]
    orders = []
    for ch in chains:
        if not ch.coalescent or ch.k != k or ch.n != len(mesh):
            raise ValueError("chains must be coalescent chains on {1..k} matching the mesh")
        m = merger_numbers(ch)
        orders.append([tuple(m[j].values()) for j in range(1, len(pts))])
    eng = LevelProducts(spec, inner, dur, orders)
    norm = math.factorial(k - 1)
    tol = _tolerance(tol, survival_tail(spec, T, k))
    res = integrate(lambda w: eng.values(w) * (w ** (k - 1) / norm)[:, None], 0.0, 1.0, tol)
    return res if isinstance(res, list) else [res]


def _jets_at(spec, w, times, order):
    return [_as_f(W) for W in _flow_at(spec, _start(w, order), times)]


def lambert_tail(spec: OffspringSpec, t: float, T: float, tol: Tolerance | None = None) -> QuadratureResult:
    """P(tau >= t, N_T >= 2) where tau is the death time of the pair's last common ancestor."""
    if not 0 <= t <= T:
        raise ValueError("need 0 <= t <= T")

    def integrand(w):
        Fr, FT = _jets_at(spec, w, [T - t, T], 2)
        return w * (2 * Fr[:, 2] / Fr[:, 1]) * FT[:, 1]

    return integrate(integrand, 0.0, 1.0, _tolerance(tol, survival_tail(spec, T, 2)))


def kmrca_tail(spec: OffspringSpec, k: int, t: float, T: float, tol: Tolerance | None = None) -> QuadratureResult:
    """P(all k sampled particles share an ancestor alive at t, N_T >= k)."""
    if not 0 <= t <= T:
        raise ValueError("need 0 <= t <= T")
    norm = math.factorial(k - 1)

    def integrand(w):
        Fr, FT = _jets_at(spec, w, [T - t, T], k)
        return w ** (k - 1) / norm * FT[:, 1] / Fr[:, 1] * math.factorial(k) * Fr[:, k]

    return integrate(integrand, 0.0, 1.0, _tolerance(tol, survival_tail(spec, T, k)))


def mixture_density(spec: OffspringSpec, T: float, k: int, s) -> np.ndarray:
    """Density in s of the mixing measure behind the Markov representation."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    F = _jets_at(spec, 1.0 - s, [T], k)[0]
    mass = survival_tail(spec, T, k)
    return (1.0 - s) ** (k - 1) * math.factorial(k) * F[:, k] / (math.factorial(k - 1) * mass)


def markov_transition(
    spec: OffspringSpec,
    T: float,
    s: float,
    gamma: Partition,
    Gamma: Block,
    delta: Partition,
    t1: float,
    t2: float,
) -> float:
    """Probability that block Gamma of gamma at t1 has broken into delta by t2, given s."""
    if not 0 <= t1 <= t2 < T:
        raise ValueError("need 0 <= t1 <= t2 < T")
    if tuple(Gamma) not in gamma.blocks:
        raise PartitionError("Gamma is not a block of gamma")
    if set(delta.elements) != set(Gamma):
        raise PartitionError("delta must partition Gamma")
    nG, nd = len(Gamma), len(delta)
    top = max(nG, max(len(D) for D in delta.blocks), nd)
    w = np.array([1.0 - s])
    inner_t2, whole = _jets_at(spec, w, [T - t2, T - t1], top)
    outer = _as_f(flow_complement(spec, _start(1.0 - inner_t2[:, 0], nd), [t2 - t1])[0])
    num = math.factorial(nd) * outer[0, nd]
    for D in delta.blocks:
        num *= math.factorial(len(D)) * inner_t2[0, len(D)]
    den = math.factorial(nG) * whole[0, nG]
    if den == 0.0:
        raise DegenerateKernel("denominator vanishes at this s")
    return float(num / den)


def faa_di_bruno_check(spec: OffspringSpec, T: float, k: int, mesh: Sequence[float], s: float):
    """Compare F^(k)_T(s) with its expansion over all chains on the mesh."""
    mesh = check_mesh(mesh, T)
    chains = enumerate_chains(k, len(mesh))
    inner, dur = _forward_levels(T, mesh)
    eng = LevelProducts(spec, inner, dur, [_breakage_orders(c) for c in chains])
    w = np.array([1.0 - s])
    rhs = float(eng.values(w).sum())
    lhs = float(math.factorial(k) * _jets_at(spec, w, [T], k)[0][0, k])
    gap = abs(lhs - rhs) / abs(lhs) if lhs else abs(rhs)
    return lhs, rhs, gap


def beta_inversion_check(k: int, pmf: Sequence[float], tol: Tolerance = DEFAULT):
    """Integral of (1-s)^(k-1)/(k-1)! E[N^(k) s^(N-k)] against P(N >= k)."""
    p = np.asarray(pmf, dtype=float)
    n = np.arange(len(p))
    falling = np.array([math.perm(int(x), k) for x in n], dtype=float)
    norm = math.factorial(k - 1)

    def integrand(w):
        s = 1.0 - w
        powers = np.where(n[None, :] >= k, s[:, None] ** np.maximum(n - k, 0)[None, :], 0.0)
        return w ** (k - 1) / norm * (powers * (p * falling)[None, :]).sum(axis=1)

    integral = integrate(integrand, 0.0, 1.0, tol).value
    direct = float(p[k:].sum())
    return integral, direct, abs(integral - direct)


# ---------------------------------------------------------------------------
# split times


def _split_sizes(path: Sequence[Partition]) -> tuple[int, ...]:
    ok, q = is_maximal(path)
    if not ok:
        raise PartitionError("split-time laws need a maximal chain")
    ground = path[0].elements
    if len(path[0]) != 1 or len(path[-1]) != len(ground):
        raise PartitionError("a maximal chain runs from one block to singletons")
    return q


def _split_factor(spec, F, q):
    """f^(q)(F) * F'^(q-1) from an order-1 jet of F."""
    return spec.pgf_derivative(F[..., 0], q) * F[..., 1] ** (q - 1)


def split_density(
    spec: OffspringSpec,
    T: float,
    k: int,
    path: Sequence[Partition],
    u: Sequence[float],
    tol: Tolerance | None = None,
) -> QuadratureResult:
    """Joint density of the split times along one maximal chain, jointly with N_T >= k."""
    q = _split_sizes(path)
    if path[0].k != k:
        raise ValueError("chain ground set does not match k")
    u = check_mesh(u, T)
    if len(u) != len(q):
        raise ValueError("need one split time per step of the chain")
    norm = math.factorial(k - 1)
    times = [T - x for x in u] + [T]

    def integrand(w):
        Fs = _jets_at(spec, w, times, 1)
        out = w ** (k - 1) / norm * Fs[-1][:, 1]
        for F, qi in zip(Fs[:-1], q):
            out = out * _split_factor(spec, F, qi)
        return out

    return integrate(integrand, 0.0, 1.0, _tolerance(tol, survival_tail(spec, T, k)))


@dataclass
class _PanelGrid:
    edges: np.ndarray  # panel boundaries
    m: int = 12
    nodes: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        x, wts = legendre.leggauss(self.m)
        V = legendre.legvander(x, self.m - 1)
        coef = np.linalg.inv(V)
        integ = np.empty((self.m, self.m))
        for p in range(self.m):
            e = np.zeros(self.m)
            e[p] = 1.0
            integ[:, p] = legendre.legval(x, legendre.legint(e, lbnd=-1))
        S = integ @ coef  # S[j, l] = int_{-1}^{x_j} L_l
        half = 0.5 * np.diff(self.edges)
        mid = 0.5 * (self.edges[1:] + self.edges[:-1])
        self.nodes = mid[:, None] + half[:, None] * x[None, :]
        self.weights = half[:, None] * wts[None, :]
        self.cumulative = half[:, None, None] * S[None, :, :]

    def forward(self, g: np.ndarray) -> np.ndarray:
        """Running integral from the left edge, evaluated at every node. g: (..., P, m)."""
        inside = np.einsum("pjl,...pl->...pj", self.cumulative, g)
        totals = (g * self.weights).sum(axis=-1)
        offset = np.cumsum(totals, axis=-1) - totals
        return offset[..., None] + inside

    def backward(self, g: np.ndarray) -> np.ndarray:
        """Running integral up to the right edge, evaluated at every node."""
        inside = np.einsum("pjl,...pl->...pj", self.cumulative, g)
        totals = (g * self.weights).sum(axis=-1)
        after = np.cumsum(totals[..., ::-1], axis=-1)[..., ::-1] - totals
        return after[..., None] + (totals[..., None] - inside)

    def panel_integrals(self, g: np.ndarray) -> np.ndarray:
        return (g * self.weights).sum(axis=-1)


def _split_factors_on_grid(spec, w, T, q, grid: _PanelGrid):
    """Prefactor per s and the per-step factor arrays h_i(u, s) on the grid."""
    u = grid.nodes.ravel()
    times = list(T - u) + [T]
    Fs = _flow_at(spec, _start(w, 1), times)
    FT = _as_f(Fs[-1])
    stack = _as_f(np.stack(Fs[:-1], axis=1))  # (N, len(u), 2)
    h = [_split_factor(spec, stack, qi).reshape(len(w), *grid.nodes.shape) for qi in q]
    return FT[:, 1], h


def _refined(edges: np.ndarray, sub: int) -> np.ndarray:
    out = [np.linspace(a, b, sub + 1)[:-1] for a, b in zip(edges[:-1], edges[1:])]
    return np.append(np.concatenate(out), edges[-1])


def _split_integral(spec, T, k, path, edges, reducer, tol, max_sub=16):
    """Outer s-quadrature of a reduction over split-time grids, refining the grid until stable."""
    q = _split_sizes(path)
    if path[0].k != k:
        raise ValueError("chain ground set does not match k")
    norm = math.factorial(k - 1)
    mass = survival_tail(spec, T, k)
    tol = _tolerance(tol, mass)
    prev = None
    sub = 1
    while True:
        grid = _PanelGrid(_refined(np.asarray(edges, dtype=float), sub))

        def integrand(w):
            pre, h = _split_factors_on_grid(spec, w, T, q, grid)
            vals = reducer(h, grid, sub)
            return vals * (w ** (k - 1) / norm * pre)[:, None]

        res = integrate(integrand, 0.0, 1.0, tol)
        vals = np.array([r.value for r in res])
        if prev is not None and np.max(np.abs(vals - prev)) <= max(tol.abs, tol.rel * np.abs(vals).max()):
            return res
        if sub >= max_sub:
            return res
        prev = vals
        sub *= 2


def split_window_probability(
    spec: OffspringSpec,
    T: float,
    k: int,
    path: Sequence[Partition],
    windows: Sequence[tuple[float, float]],
    tol: Tolerance | None = None,
) -> QuadratureResult:
    """P(i-th split time in [a_i, b_i] for every i along this chain, N_T >= k)."""
    q = _split_sizes(path)
    if len(windows) != len(q):
        raise ValueError("need one window per split")
    flat = [x for ab in windows for x in ab]
    if flat[0] < 0 or flat[-1] > T or any(b < a for a, b in zip(flat, flat[1:])):
        raise ValueError("windows must be ordered, non-overlapping and inside [0, T]")
    if any(a == b for a, b in windows):
        return QuadratureResult(0.0, 0.0, 0)
    # one panel block per window; the integrand factorises across windows for fixed s
    edges = np.array(sorted(set(flat)))
    idx = [(int(np.searchsorted(edges, a)), int(np.searchsorted(edges, b))) for a, b in windows]

    def reducer(h, grid, sub):
        out = np.ones(h[0].shape[0])
        for (i0, i1), hi in zip(idx, h):
            panels = grid.panel_integrals(hi)[:, i0 * sub : i1 * sub]
            out = out * panels.sum(axis=1)
        return out[:, None]

    return _split_integral(spec, T, k, path, edges, reducer, tol)[0]


def split_simplex_probability(
    spec: OffspringSpec, T: float, k: int, path: Sequence[Partition], tol: Tolerance | None = None
) -> QuadratureResult:
    """Total mass of the split-time density of one chain over 0 < u_1 < ... < u_n < T."""

    def reducer(h, grid, sub):
        acc = np.ones_like(h[0])
        for hi in h[:-1]:
            acc = grid.forward(hi * acc)
        return grid.panel_integrals(h[-1] * acc).sum(axis=-1)[:, None]

    return _split_integral(spec, T, k, path, np.array([0.0, T]), reducer, tol, max_sub=32)[0]


def split_bin_probabilities(
    spec: OffspringSpec,
    T: float,
    k: int,
    path: Sequence[Partition],
    edges: Sequence[float],
    index: int = 0,
    tol: Tolerance | None = None,
) -> np.ndarray:
    """P(split number ``index`` falls in each bin, N_T >= k), other splits integrated out."""
    edges = np.asarray(edges, dtype=float)
    if edges[0] != 0.0 or edges[-1] != T or np.any(np.diff(edges) <= 0):
        raise ValueError("bins must partition [0, T]")
    n = len(_split_sizes(path))
    if not 0 <= index < n:
        raise ValueError("split index out of range")
    nb = len(edges) - 1

    def reducer(h, grid, sub):
        before = np.ones_like(h[0])
        for hi in h[:index]:
            before = grid.forward(hi * before)
        after = np.ones_like(h[0])
        for hi in reversed(h[index + 1 :]):
            after = grid.backward(hi * after)
        dens = before * h[index] * after
        panels = grid.panel_integrals(dens)
        return panels.reshape(len(panels), nb, sub).sum(axis=-1)

    res = _split_integral(spec, T, k, path, edges, reducer, tol)
    return np.array([r.value for r in res])
