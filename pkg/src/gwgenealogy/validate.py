"""Monte Carlo and convergence checks of the exact laws.

A Monte Carlo comparison passes when the chi-square p-value exceeds 0.001 and
the total-variation distance stays below its threshold; chi-square alone
over-rejects when some expected cells are tiny.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import asymptotics as asy
from .genfun import OffspringSpec, survival_tail
from .laws import fdd_table, kmrca_tail, split_bin_probabilities
from .partitions import Chain, Partition, enumerate_chains, maximal_paths
from .treesim import GENERATOR, conditioned_ensemble, empirical_fdd, split_time_histogram

P_VALUE_FLOOR = 1e-3
MIN_EXPECTED = 5.0


def tv_threshold(outcomes: int, replicates: int) -> float:
    return 3.0 * math.sqrt(outcomes / replicates)


@dataclass
class ValidationReport:
    law: str
    spec: str
    replicates: int
    acceptance_rate: float
    outcomes: list[tuple[str, float, float]]  # (label, expected prob, observed freq)
    tv: float
    tv_threshold: float
    chi2: float
    dof: int
    p_value: float
    seed: int
    runtime: float = field(default=0.0, compare=False)
    pooled: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.p_value > P_VALUE_FLOOR and self.tv <= self.tv_threshold

    def rows(self) -> list[list]:
        """One row per outcome plus a summary row; runtime is left out so reruns compare equal."""
        out = [["outcome", o, repr(e), repr(f)] for o, e, f in self.outcomes]
        out.append(
            [
                "summary",
                self.law,
                f"tv={self.tv!r};tv_threshold={self.tv_threshold!r};chi2={self.chi2!r};dof={self.dof};"
                f"p={self.p_value!r};acceptance={self.acceptance_rate!r};pass={int(self.passed)}",
                "",
            ]
        )
        return out

    def metadata(self) -> dict[str, str]:
        return {
            "law": self.law,
            "spec": self.spec,
            "replicates": str(self.replicates),
            "seed": str(self.seed),
            "generator": GENERATOR,
            "p_value_floor": repr(P_VALUE_FLOOR),
            "min_expected_count": repr(MIN_EXPECTED),
            "pooled": "|".join(self.pooled),
        }

    def write_csv(self, fh):
        for key, val in self.metadata().items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh)
        w.writerow(["kind", "label", "expected", "observed"])
        w.writerows(self.rows())


def compare(
    law: str,
    spec: OffspringSpec,
    labels: Sequence[str],
    expected: Sequence[float],
    counts: Sequence[int],
    seed: int,
    acceptance_rate: float,
    tv_limit: float | None = None,
    runtime: float = 0.0,
) -> ValidationReport:
    """Chi-square with pooling of cells expected below MIN_EXPECTED, plus TV over all cells."""
    expected = np.asarray(expected, dtype=float)
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if abs(expected.sum() - 1.0) > 1e-6:
        raise ValueError(f"expected probabilities sum to {expected.sum():.9g}, not 1")
    observed = counts / n
    tv = 0.5 * float(np.abs(observed - expected).sum())
    small = expected * n < MIN_EXPECTED
    exp_cells = list(expected[~small] * n)
    obs_cells = list(counts[~small])
    if small.any():
        exp_cells.append(expected[small].sum() * n)
        obs_cells.append(counts[small].sum())
    if len(exp_cells) > 1:
        exp_cells = np.array(exp_cells)
        exp_cells *= n / exp_cells.sum()
        chi2, p = stats.chisquare(obs_cells, exp_cells)
        dof = len(exp_cells) - 1
    else:
        chi2, p, dof = 0.0, 1.0, 0
    outcomes = [(lab, float(e), float(o)) for lab, e, o in zip(labels, expected, observed)]
    pooled = tuple(lab for lab, s in zip(labels, small) if s)
    limit = tv_threshold(len(labels), int(n)) if tv_limit is None else tv_limit
    return ValidationReport(
        law, str(spec), int(n), acceptance_rate, outcomes, tv, limit, float(chi2), dof, float(p), seed, runtime, pooled
    )


def validate_fdd(
    spec: OffspringSpec,
    T: float,
    k: int,
    mesh: Sequence[float],
    replicates: int,
    seed: int,
    tv_limit: float | None = None,
    workers: int | None = None,
) -> ValidationReport:
    """Empirical chain frequencies against the exact conditioned finite-dimensional law."""
    if replicates < 1000:
        raise ValueError("validate_fdd needs at least 1000 replicates")
    start = time.perf_counter()
    chains = enumerate_chains(k, len(mesh))
    mass = survival_tail(spec, T, k)
    exact = [r.value / mass for r in fdd_table(spec, T, k, mesh, chains)]
    keep = [i for i, e in enumerate(exact) if e > 0]
    ens = conditioned_ensemble(spec, T, k, replicates, seed, workers=workers)
    freq = empirical_fdd(ens, mesh)
    unexpected = set(freq) - {chains[i] for i in keep}
    if unexpected:
        raise RuntimeError(f"observed chains with zero exact mass: {sorted(map(str, unexpected))}")
    counts = [round(freq.get(chains[i], 0.0) * len(ens)) for i in keep]
    expected = np.array([exact[i] for i in keep])
    expected /= expected.sum()
    return compare(
        f"fdd k={k} T={T:g} mesh={','.join(f'{t:g}' for t in mesh)}",
        spec,
        [str(chains[i]) for i in keep],
        expected,
        counts,
        seed,
        ens.acceptance_rate,
        tv_limit,
        time.perf_counter() - start,
    )


def expected_split_bins(spec: OffspringSpec, T: float, k: int, edges: Sequence[float], index: int = 0) -> np.ndarray:
    """P(split number ``index`` in each bin | N_T >= k), summed over all binary maximal paths."""
    total = sum(split_bin_probabilities(spec, T, k, path, edges, index) for path in maximal_paths(k, binary_only=True))
    return total / survival_tail(spec, T, k)


def validate_split_times(
    spec: OffspringSpec,
    T: float,
    k: int,
    bins: int | Sequence[float],
    replicates: int,
    seed: int,
    index: int = 0,
    tv_limit: float | None = None,
    workers: int | None = None,
) -> ValidationReport:
    """Histogram of one ordered split time against the exact split-time law."""
    if not spec.is_binary:
        raise ValueError("binary splits: validate_split_times needs offspring counts in {0, 1, 2}")
    start = time.perf_counter()
    edges = np.linspace(0.0, T, bins + 1) if isinstance(bins, int) else np.asarray(bins, dtype=float)
    expected = expected_split_bins(spec, T, k, edges, index)
    ens = conditioned_ensemble(spec, T, k, replicates, seed, workers=workers)
    hist = split_time_histogram(ens, edges)
    if hist.binary_fraction != 1.0:
        raise RuntimeError(f"birth-death ensemble has binary fraction {hist.binary_fraction}")
    labels = [f"[{a:g},{b:g})" for a, b in zip(edges, edges[1:])]
    return compare(
        f"split k={k} T={T:g} index={index}",
        spec,
        labels,
        expected,
        hist.counts[index],
        seed,
        ens.acceptance_rate,
        tv_limit,
        time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# convergence to limit laws


@dataclass
class LimitTable:
    regime: str
    spec: str
    k: int
    rows: list[tuple[float, float, float, float, float]]  # (T, probe, finite, limit, gap)

    def max_gap(self, T: float) -> float:
        return max(r[4] for r in self.rows if r[0] == T)

    @property
    def horizons(self) -> list[float]:
        return sorted({r[0] for r in self.rows})

    @property
    def shrinking(self) -> bool:
        hs = self.horizons
        return self.max_gap(hs[-1]) < self.max_gap(hs[0])


def _single_block(k: int, coalescent: bool = False) -> Chain:
    p = Partition.single_block(range(1, k + 1))
    return Chain((p,), coalescent)


def validate_limit(
    regime: str,
    spec: OffspringSpec,
    k: int,
    T_list: Sequence[float],
    probes: Sequence[float],
) -> LimitTable:
    """Compare finite-T MRCA laws with their limits.

    super: P(tau > t | N_T >= k) at times t.
    crit:  P(tau / T >= u | N_T >= k) at fractions u.
    sub:   P(T - tau < t | N_T >= k) at look-back times t.
    """
    if spec.regime != regime:
        raise asy.RegimeError(f"regime: spec is {spec.regime}, not {regime}")
    if regime == "super":
        lt = asy.LaplaceTransform(spec)
        limits = [asy.super_fdd(spec, k, [t], _single_block(k), lt=lt).value for t in probes]
    elif regime == "crit":
        if k == 2:
            limits = [float(asy.critical_pair_tail(u)) for u in probes]
        else:
            limits = [asy.critical_fdd(k, [u], _single_block(k)).value for u in probes]
    elif regime == "sub":
        qs = asy.quasi_stationary(spec)
        if k == 2:
            limits = [asy.sub_k2_cdf(spec, t, qs=qs).value for t in probes]
        else:
            limits = [asy.sub_fdd(spec, k, [t], _single_block(k, True), qs=qs).value for t in probes]
    else:
        raise ValueError(f"unknown regime {regime!r}")
    rows = []
    for T in T_list:
        mass = survival_tail(spec, T, k)
        for x, lim in zip(probes, limits):
            at = {"super": x, "crit": x * T, "sub": T - x}[regime]
            finite = kmrca_tail(spec, k, at, T).value / mass
            rows.append((float(T), float(x), finite, lim, abs(finite - lim)))
    return LimitTable(regime, str(spec), k, rows)
