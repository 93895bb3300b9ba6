"""Exact simulation of Galton-Watson trees with genealogy and sampled partition paths.

Lineages evolve independently, so a tree is grown depth first without a global
event queue: each particle draws an Exp(1) lifetime and, if it dies before T,
an offspring count.  Every attempt gets its own PCG64 stream derived from the
master seed and the attempt index, which keeps ensembles reproducible for any
worker count.
"""

from __future__ import annotations

import csv
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numba as nb
import numpy as np

from .genfun import OffspringSpec, survival_tail
from .partitions import MAX_GROUND, Chain, Partition, refines

GENERATOR = "numpy PCG64 via SeedSequence(master, spawn_key=(attempt,))"
DEFAULT_CAP = 10**7
DEFAULT_FLOOR = 1e-4


class TreeTooLarge(RuntimeError):
    """The particle count exceeded the safety cap (runaway supercritical run)."""


class AcceptanceFloorError(RuntimeError):
    """Conditioning by rejection would accept too rarely to be practical."""


def stream(seed: int, attempt: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(attempt,))))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def _grow(rng, T, cdf, geom_p, cap, parent, death, stack_t, stack_id):
    """Fill parent/death for one tree; returns the particle count, -1 on full buffers, -2 past cap."""
    size = parent.size
    parent[0] = -1
    stack_t[0] = 0.0
    stack_id[0] = 0
    sp = 1
    n = 1
    log_q = math.log1p(-geom_p) if geom_p > 0 else 0.0
    while sp > 0:
        sp -= 1
        v = stack_id[sp]
        d = stack_t[sp] + rng.standard_exponential()
        if d >= T:
            death[v] = np.inf
            continue
        death[v] = d
        if geom_p > 0:
            L = int(math.floor(math.log(1.0 - rng.random()) / log_q))
        else:
            u = rng.random()
            L = 0
            while cdf[L] <= u and L < cdf.size - 1:
                L += 1
        if n + L > cap:
            return -2
        if n + L > size:
            return -1
        for c in range(L):
            parent[n] = v
            stack_t[sp] = d
            stack_id[sp] = n
            sp += 1
            n += 1
    return n


@nb.njit(cache=True)
def _sample_deaths(rng, parent, death, n, k):
    """Draw k distinct survivors in order and return their MRCA death-time matrix (or None)."""
    leaves = np.flatnonzero(np.isinf(death[:n]))
    m = leaves.size
    if m < k:
        return np.empty((0, 0))
    for i in range(k):
        j = i + int(rng.integers(0, m - i))
        leaves[i], leaves[j] = leaves[j], leaves[i]
    depth = np.zeros(k, np.int64)
    for i in range(k):
        v = leaves[i]
        while v >= 0:
            depth[i] += 1
            v = parent[v]
    lineage = np.empty((k, depth.max()), np.int64)
    for i in range(k):
        v = leaves[i]
        for d in range(depth[i] - 1, -1, -1):
            lineage[i, d] = v
            v = parent[v]
    D = np.full((k, k), np.inf)
    for i in range(k):
        for j in range(i + 1, k):
            m = 0
            while m < depth[i] and m < depth[j] and lineage[i, m] == lineage[j, m]:
                m += 1
            D[i, j] = D[j, i] = death[lineage[i, m - 1]]
    return D


class _Workspace:
    """Reusable buffers; fresh large arrays per tree cost more than the simulation."""

    def __init__(self, size: int = 1 << 14):
        self.resize(size)

    def resize(self, size: int):
        self.parent = np.empty(size, np.int64)
        self.death = np.empty(size)
        self.stack_t = np.empty(size)
        self.stack_id = np.empty(size, np.int64)

    def grow(self, spec: OffspringSpec, T: float, rng: np.random.Generator, cap: int) -> int:
        cdf, geom_p = _offspring_args(spec)
        state = rng.bit_generator.state
        while True:
            n = _grow(rng, float(T), cdf, geom_p, int(cap), self.parent, self.death, self.stack_t, self.stack_id)
            if n >= 0:
                return n
            if n == -2:
                raise TreeTooLarge(f"tree exceeded {cap} particles before T={T:g}")
            self.resize(min(2 * self.parent.size, int(cap) + 1))
            rng.bit_generator.state = state


    def attempt(self, spec: OffspringSpec, T: float, rng: np.random.Generator, k: int, cap: int):
        """Grow one tree and sample k survivors; returns (tree size, MRCA death matrix or empty)."""
        cdf, geom_p = _offspring_args(spec)
        state = rng.bit_generator.state
        while True:
            n, D = _grow_and_sample(
                rng, float(T), cdf, geom_p, int(cap), self.parent, self.death, self.stack_t, self.stack_id, k
            )
            if n >= 0:
                return n, D
            if n == -2:
                raise TreeTooLarge(f"tree exceeded {cap} particles before T={T:g}")
            self.resize(min(2 * self.parent.size, int(cap) + 1))
            rng.bit_generator.state = state


@nb.njit(cache=True)
def _grow_and_sample(rng, T, cdf, geom_p, cap, parent, death, stack_t, stack_id, k):
    n = _grow(rng, T, cdf, geom_p, cap, parent, death, stack_t, stack_id)
    if n < 0:
        return n, np.empty((0, 0))
    return n, _sample_deaths(rng, parent, death, n, k)


_WORKSPACE = _Workspace()


def _offspring_args(spec: OffspringSpec):
    if spec.kind == "geom":
        return np.ones(1), float(spec.params[0])
    return spec.sample_cdf(), 0.0


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Genealogy:
    """A simulated tree on [0, T]; particle 0 is the root, survivors have death = inf."""

    T: float
    parent: np.ndarray
    death: np.ndarray

    @property
    def size(self) -> int:
        return len(self.parent)

    @property
    def birth(self) -> np.ndarray:
        b = np.zeros(self.size)
        b[1:] = self.death[self.parent[1:]]
        return b

    @property
    def n_children(self) -> np.ndarray:
        return np.bincount(self.parent[1:], minlength=self.size)

    def leaves_at(self, t: float) -> np.ndarray:
        if not 0 <= t <= self.T:
            raise ValueError("t must lie in [0, T]")
        alive = (self.birth <= t) & (self.death > t)
        return np.flatnonzero(alive)

    def population(self, t: float) -> int:
        return int(self.leaves_at(t).size)

    @property
    def events(self) -> list[tuple[float, int, int, tuple[int, ...]]]:
        """Death events (time, parent id, offspring count, child ids) in time order."""
        dead = np.flatnonzero(np.isfinite(self.death))
        dead = dead[np.argsort(self.death[dead], kind="stable")]
        children: dict[int, list[int]] = {}
        for c in range(1, self.size):
            children.setdefault(int(self.parent[c]), []).append(c)
        return [(float(self.death[v]), int(v), len(children.get(int(v), ())), tuple(children.get(int(v), ()))) for v in dead]


@dataclass(frozen=True)
class PartitionPath:
    """A right-continuous piecewise-constant partition path on [0, T].

    Forward paths start at one block and break; coalescent paths start at
    singletons and merge.  ``jumps`` lists (time, value after the jump).
    """

    k: int
    T: float
    jumps: tuple[tuple[float, Partition], ...]
    coalescent: bool = False

    @property
    def initial(self) -> Partition:
        ground = range(1, self.k + 1)
        return Partition.singletons(ground) if self.coalescent else Partition.single_block(ground)

    @property
    def split_times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.jumps)

    @property
    def is_binary(self) -> bool:
        return len(self.jumps) == self.k - 1

    def value_at(self, t: float) -> Partition:
        value = self.initial
        for tj, p in self.jumps:
            if tj > t:
                break
            value = p
        return value

    def chain_at(self, mesh: Sequence[float]) -> Chain:
        return Chain(tuple(self.value_at(t) for t in mesh), self.coalescent)

    def validate(self):
        values = [self.initial] + [p for _, p in self.jumps]
        times = self.split_times
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("jump times must increase")
        for a, b in zip(values, values[1:]):
            if a == b or not (refines(b, a) if self.coalescent else refines(a, b)):
                raise ValueError(f"{a} -> {b} is not a valid jump")


def simulate_tree(spec: OffspringSpec, T: float, seed, cap: int = DEFAULT_CAP) -> Genealogy:
    if T < 0:
        raise ValueError("T must be nonnegative")
    ws = _WORKSPACE
    n = ws.grow(spec, T, _rng(seed), cap)
    return Genealogy(float(T), ws.parent[:n].copy(), ws.death[:n].copy())


@lru_cache(maxsize=1 << 16)
def _values_for_ranks(k: int, ranks: tuple[int, ...]) -> tuple[Partition, ...]:
    """Partitions after each distinct MRCA death, given the rank pattern of the pair deaths."""
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    out = []
    for level in range(max(ranks) + 1):
        labels = list(range(k))
        for (i, j), r in zip(pairs, ranks):
            if r > level:
                a, b = labels[i], labels[j]
                labels = [a if x == b else x for x in labels]
        blocks: dict[int, list[int]] = {}
        for i, lab in enumerate(labels):
            blocks.setdefault(lab, []).append(i + 1)
        out.append(Partition.of(*blocks.values()))
    return tuple(out)


def _path_from_deaths(D: np.ndarray, T: float) -> PartitionPath:
    k = D.shape[0]
    upper = D[np.triu_indices(k, 1)]
    times, ranks = np.unique(upper, return_inverse=True)
    values = _values_for_ranks(k, tuple(ranks.tolist()))
    return PartitionPath(k, T, tuple(zip(times.tolist(), values)))


def sample_partition_path(g: Genealogy, k: int, seed) -> PartitionPath | None:
    """Pick k distinct survivors uniformly (labelled in draw order) and read off their path."""
    if not 1 <= k <= MAX_GROUND:
        raise ValueError(f"k must lie in 1..{MAX_GROUND}")
    D = _sample_deaths(_rng(seed), g.parent, g.death, g.size, k)
    return _path_from_deaths(D, g.T) if D.size else None


def reverse_path(p: PartitionPath) -> PartitionPath:
    """rho_t = pi_{(T - t)-}: jump at T - tau_j to the value held just before tau_j."""
    before = [p.initial] + [v for _, v in p.jumps[:-1]]
    jumps = tuple((p.T - t, v) for (t, _), v in zip(reversed(p.jumps), reversed(before)))
    return PartitionPath(p.k, p.T, jumps, not p.coalescent)


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class Ensemble:
    """Accepted paths of a conditioned run, in attempt order."""

    spec: OffspringSpec
    T: float
    k: int
    seed: int
    paths: list[PartitionPath] = field(default_factory=list)
    attempts: int = 0
    largest_tree: int = 0

    @property
    def acceptance_rate(self) -> float:
        return len(self.paths) / self.attempts if self.attempts else float("nan")

    def __iter__(self) -> Iterator[PartitionPath]:
        return iter(self.paths)

    def __len__(self) -> int:
        return len(self.paths)

    def reversed(self) -> list[PartitionPath]:
        return [reverse_path(p) for p in self.paths]


def _attempt_block(args):
    spec, T, k, seed, start, stop, cap = args
    out = []
    largest = 0
    ws = _WORKSPACE
    for a in range(start, stop):
        rng = stream(seed, a)
        n, D = ws.attempt(spec, T, rng, k, cap)
        largest = max(largest, n)
        out.append(_path_from_deaths(D, T) if D.size else None)
    return out, largest


def default_workers() -> int:
    return max(1, int(os.environ.get("GWGENEALOGY_WORKERS", "1")))


def conditioned_ensemble(
    spec: OffspringSpec,
    T: float,
    k: int,
    replicates: int,
    seed: int,
    *,
    workers: int | None = None,
    floor: float = DEFAULT_FLOOR,
    cap: int = DEFAULT_CAP,
    block: int = 20000,
) -> Ensemble:
    """Sample paths conditioned on N_T >= k by rejection.

    Attempt a uses stream(seed, a); the accepted set is the first ``replicates``
    successes in attempt order, whatever the worker count.
    """
    if replicates < 0:
        raise ValueError("replicates must be nonnegative")
    ens = Ensemble(spec, float(T), k, int(seed))
    if replicates == 0:
        return ens
    target = survival_tail(spec, T, k)
    if target < floor:
        raise AcceptanceFloorError(
            f"acceptance floor: P(N_T >= {k}) = {target:.3g} is below {floor:g} at T={T:g}"
        )
    workers = workers or default_workers()
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        start = 0
        while len(ens.paths) < replicates:
            need = replicates - len(ens.paths)
            size = min(int(1.1 * need / target) + 16, block)
            bounds = np.linspace(start, start + size, workers + 1).astype(int)
            jobs = [(spec, T, k, seed, int(a), int(b), cap) for a, b in zip(bounds, bounds[1:]) if b > a]
            results = pool.map(_attempt_block, jobs) if pool else map(_attempt_block, jobs)
            for paths, largest in results:
                ens.largest_tree = max(ens.largest_tree, largest)
                for p in paths:
                    if len(ens.paths) == replicates:
                        break
                    ens.attempts += 1
                    if p is not None:
                        ens.paths.append(p)
            start += size
            if ens.attempts >= 100 / floor and ens.acceptance_rate < floor:
                raise AcceptanceFloorError(
                    f"acceptance floor: observed rate {ens.acceptance_rate:.3g} below {floor:g}"
                )
    finally:
        if pool:
            pool.shutdown()
    return ens


def empirical_fdd(ensemble: Iterable[PartitionPath], mesh: Sequence[float]) -> dict[Chain, float]:
    paths = list(ensemble)
    if paths:
        T = paths[0].T
        if any(b <= a for a, b in zip(mesh, mesh[1:])) or not 0 < mesh[0] or not mesh[-1] < T:
            raise ValueError("mesh must be strictly increasing inside (0, T)")
    counts = Counter(p.chain_at(mesh) for p in paths)
    total = sum(counts.values())
    return {c: n / total for c, n in counts.items()}


@dataclass(frozen=True)
class SplitHistogram:
    edges: np.ndarray
    counts: np.ndarray  # (k - 1, bins): row i counts the (i + 1)-th split time
    binary_fraction: float
    n_binary: int


def split_time_histogram(ensemble: Iterable[PartitionPath], bins: Sequence[float]) -> SplitHistogram:
    paths = list(ensemble)
    edges = np.asarray(bins, dtype=float)
    if not paths:
        return SplitHistogram(edges, np.zeros((0, len(edges) - 1), int), float("nan"), 0)
    k, T = paths[0].k, paths[0].T
    if edges[0] != 0 or edges[-1] != T or np.any(np.diff(edges) <= 0):
        raise ValueError("bins must partition [0, T]")
    binary = [p for p in paths if p.is_binary]
    counts = np.zeros((k - 1, len(edges) - 1), dtype=int)
    if binary:
        times = np.array([p.split_times for p in binary])
        for i in range(k - 1):
            counts[i] = np.histogram(times[:, i], edges)[0]
    return SplitHistogram(edges, counts, len(binary) / len(paths), len(binary))


def write_event_log(trees: Iterable[Genealogy], fh) -> int:
    """CSV rows (replicate, time, parent, n_children); returns the row count."""
    w = csv.writer(fh)
    w.writerow(["replicate", "time", "parent", "n_children"])
    rows = 0
    for r, g in enumerate(trees):
        for t, v, L, _ in g.events:
            w.writerow([r, repr(t), v, L])
            rows += 1
    return rows
