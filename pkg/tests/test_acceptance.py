"""Acceptance criteria 1-13, one PASS/FAIL line each.

Run under pytest (lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.  Tolerances are the acceptance tolerances;
a criterion that misses them fails.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES  # noqa: E402

from gwgenealogy import asymptotics as asy  # noqa: E402
from gwgenealogy.genfun import (  # noqa: E402
    birth_death_closed_form,
    parse_spec,
    population_pmf,
    semigroup_coeffs,
    survival_tail,
)
from gwgenealogy.laws import (  # noqa: E402
    LawQuery,
    beta_inversion_check,
    faa_di_bruno_check,
    fdd_probability,
    fdd_table,
    lambert_tail,
    markov_transition,
    mixture_density,
    projection_fdd,
    split_simplex_probability,
)
from gwgenealogy.partitions import (  # noqa: E402
    Chain,
    Partition,
    enumerate_chains,
    enumerate_partitions,
    maximal_paths,
    parse_partition,
    project,
)
from gwgenealogy.quadrature import integrate  # noqa: E402
from gwgenealogy.treesim import conditioned_ensemble  # noqa: E402
from gwgenealogy.validate import validate_fdd, validate_limit, validate_split_times  # noqa: E402

YULE = parse_spec("bd:0,1")
CRITICAL = parse_spec("pmf:0:0.5,2:0.5")
GEOMETRIC = parse_spec("geom:0.6")
THREE = {"yule": YULE, "critical": CRITICAL, "geom(0.6)": GEOMETRIC}
BIRTH_DEATH = [(0.0, 1.0), (0.25, 0.75), (0.75, 0.25)]
SEED = 42


def _single(k: int, coalescent: bool = False) -> Chain:
    return Chain((Partition.single_block(range(1, k + 1)),), coalescent)


def c1():
    """Kolmogorov ODE against the birth-death closed form, derivatives 0..4."""
    start = time.perf_counter()
    times = np.round(np.arange(1, 51) * 0.1, 10)
    s = np.round(np.arange(11) * 0.1, 10)
    fact = np.array([math.factorial(j) for j in range(5)], dtype=float)
    worst, where, fails = 0.0, None, 0
    for a, b in BIRTH_DEATH:
        spec = parse_spec(f"bd:{a},{b}")
        ode = semigroup_coeffs(spec, times, s=s, order=4) * fact
        for i, t in enumerate(times):
            for j, x in enumerate(s):
                ref = birth_death_closed_form(a, b, t, x, 4).coeffs * fact
                err = np.abs(ode[i, j] - ref)
                fails += int(np.sum(err > 1e-8))
                if err.max() > worst:
                    worst, where = float(err.max()), (a, b, float(t), float(x), int(err.argmax()))
    runtime = time.perf_counter() - start
    ok = worst <= 1e-8 and runtime < 5
    return ok, f"max abs error {worst:.3g} at (alpha, beta, t, s, order)={where}; {fails} entries above 1e-8; {runtime:.2f}s"


def c2():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for spec in (*THREE.values(), *(parse_spec(f"bd:{a},{b}") for a, b in BIRTH_DEATH[1:])):
        t1, t2 = rng.uniform(0, 3.0, (2, 100))
        x = rng.uniform(0, 1, 100)
        for a, b, s in zip(t1, t2, x):
            inner = semigroup_coeffs(spec, [b], s=[s])[0, 0, 0]
            lhs = semigroup_coeffs(spec, [a], s=[inner])[0, 0, 0]
            rhs = semigroup_coeffs(spec, [a + b], s=[s])[0, 0, 0]
            worst = max(worst, abs(lhs - rhs))
    return worst <= 1e-8, f"max |F_t1(F_t2(s)) - F_(t1+t2)(s)| = {worst:.3g} over 5 x 100 triples"


def c3():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for spec in THREE.values():
        for k in range(1, 5):
            for n in (1, 2):
                for _ in range(20):
                    T = rng.uniform(0.5, 3.0)
                    mesh = np.sort(rng.uniform(0.02, 0.98, n)) * T
                    s = rng.uniform(0, 1)
                    worst = max(worst, faa_di_bruno_check(spec, T, k, mesh, s)[2])
    return worst <= 1e-8, f"max relative gap {worst:.3g} over 3 laws x k<=4 x n<=2 x 20 meshes"


def c4():
    gaps = {}
    for k in (2, 3):
        integral, direct, gap = beta_inversion_check(k, [0, 0, 0, 1.0])
        gaps[f"N=3,k={k}"] = max(gap, abs(integral - 1.0))
        gaps[f"yule T=1,k={k}"] = beta_inversion_check(k, population_pmf(YULE, 1.0, 80))[2]
        gaps[f"critical T=2,k={k}"] = beta_inversion_check(k, population_pmf(CRITICAL, 2.0, 80))[2]
    worst = max(gaps.values())
    return worst <= 1e-6, f"max gap {worst:.3g} ({', '.join(f'{n}: {g:.2g}' for n, g in gaps.items())})"


def c5():
    mix = fdd = row = 0.0
    for spec in THREE.values():
        for T in (1.0, 2.0):
            for k in (2, 3):
                res = integrate(lambda x: mixture_density(spec, T, k, x), 0.0, 1.0)
                mix = max(mix, abs(res.value - 1.0))
                total = sum(r.value for r in fdd_table(spec, T, k, [0.4 * T], enumerate_chains(k, 1)))
                fdd = max(fdd, abs(total - survival_tail(spec, T, k)))
            gamma = parse_partition("1,2,3|4", 4)
            for s in (0.1, 0.5, 0.9):
                total = sum(
                    markov_transition(spec, T, s, gamma, (1, 2, 3), d, 0.2 * T, 0.7 * T) for d in enumerate_partitions(3)
                )
                row = max(row, abs(total - 1.0))
    ok = mix <= 1e-6 and fdd <= 1e-6 and row <= 1e-8
    return ok, f"mixture mass gap {mix:.3g}, single-time fdd sum gap {fdd:.3g}, kernel row-sum gap {row:.3g}"


def c6():
    ext_gap = zero_gap = 0.0
    negative = 0.0
    for spec in THREE.values():
        for mesh in ([0.5], [0.3, 0.7]):
            big = enumerate_chains(3, len(mesh))
            big_vals = fdd_table(spec, 1.0, 3, mesh, big)
            for chain in enumerate_chains(2, len(mesh)):
                proj = projection_fdd(spec, 1.0, 2, 1, mesh, chain).value
                ext = sum(
                    r.value for c, r in zip(big, big_vals) if all(project(p, (1, 2)) == q for p, q in zip(c.parts, chain.parts))
                )
                ext_gap = max(ext_gap, abs(proj - ext))
                base = fdd_probability(LawQuery(spec, 1.0, 2, tuple(mesh), chain)).value
                vals = [projection_fdd(spec, 1.0, 2, j, mesh, chain).value for j in range(4)]
                zero_gap = max(zero_gap, abs(vals[0] - base))
                negative = min(negative, min(a - b for a, b in zip(vals, vals[1:])))
    ok = ext_gap <= 1e-6 and zero_gap <= 1e-10 and negative >= 0
    return ok, f"extension gap {ext_gap:.3g}, j=0 gap {zero_gap:.3g}, most negative exact-size difference {negative:.3g}"


def c7():
    rep = validate_fdd(YULE, 1.5, 3, [0.5, 1.0], 100_000, SEED, tv_limit=0.01)
    ok = rep.passed and rep.runtime <= 300
    return ok, f"TV {rep.tv:.4f} (limit 0.01), chi2 p {rep.p_value:.3g} on {rep.dof} dof, {rep.runtime:.0f}s"


def c8():
    bd = parse_spec("bd:0.25,0.75")
    reps = [
        validate_split_times(YULE, 1.0, 2, 20, 100_000, SEED),
        validate_split_times(bd, 2.0, 3, 10, 100_000, SEED, index=0),
        validate_split_times(bd, 2.0, 3, 10, 100_000, SEED, index=1),
    ]
    gaps = []
    for spec, T, k in ((YULE, 1.0, 2), (bd, 2.0, 3)):
        paths = maximal_paths(k, binary_only=True)
        one = split_simplex_probability(spec, T, k, paths[0]).value
        gaps.append(abs(one * len(paths) - survival_tail(spec, T, k)))
    ok = all(r.passed for r in reps) and max(gaps) <= 1e-3
    hist = "; ".join(f"{r.law}: TV {r.tv:.4f}/{r.tv_threshold:.4f}, p {r.p_value:.3g}" for r in reps)
    return ok, f"{hist}; simplex x topologies gap {max(gaps):.3g}"


def c9():
    table = validate_limit("crit", CRITICAL, 2, [200.0], [0.25, 0.5, 0.75])
    gap = table.max_gap(200.0)
    eq = float(asy.critical_pair_tail(0.5))
    eq_gap = abs(eq - 4 * (math.log(2) - 0.5))
    dens = asy.critical_split_density(2, [0.0])
    ok = gap <= 0.02 and eq_gap <= 1e-12 and abs(dens - 1 / 3) <= 1e-8
    return ok, f"T=200 max gap {gap:.4f}; limit at 0.5 = {eq:.10f}; split density at 0 = {dens:.12f}"


def c10():
    c, scaled, _ = asy.yaglom_constants(CRITICAL, 400.0)
    return abs(scaled - 2) <= 0.1, f"T P(N_T > 0) = {scaled:.6f} at T=400 (1/c = {1 / c:g})"


def c11():
    lt = asy.LaplaceTransform(YULE)
    v = np.round(np.arange(1, 101) * 0.1, 10)
    phi_gap = float(np.max(np.abs(lt.jets(v, 0)[:, 0] - 1 / (1 + v))))
    sums = []
    for k in (2, 3):
        sums.append(abs(sum(r.value for r in asy.super_fdd_table(YULE, k, [1.0], enumerate_chains(k, 1), lt=lt)) - 1))
    tau_gap = 0.0
    for t in (0.5, 1.0, 2.0):
        a = asy.super_fdd(YULE, 2, [t], _single(2), lt=lt).value
        b = asy.supercritical_pair_tail(YULE, t, lt=lt).value
        tau_gap = max(tau_gap, abs(a - b))
    limit = asy.super_fdd(YULE, 2, [1.0], _single(2), lt=lt).value
    ens = conditioned_ensemble(YULE, 10.0, 2, 100_000, SEED)
    hits = sum(p.split_times[0] > 1.0 for p in ens)
    freq = hits / len(ens)
    sigma = math.sqrt(limit * (1 - limit) / len(ens))
    ok = phi_gap <= 1e-6 and max(sums) <= 1e-5 and tau_gap <= 1e-8 and abs(freq - limit) <= 3 * sigma
    return ok, (
        f"phi gap {phi_gap:.3g}; table sum gap {max(sums):.3g}; tau-limit agreement {tau_gap:.3g}; "
        f"MC P(tau > 1) {freq:.4f} vs {limit:.4f} ({abs(freq - limit) / sigma:.2f} sigma)"
    )


def c12():
    spec = parse_spec("bd:0.75,0.25")
    qs = asy.quasi_stationary(spec)
    change = {(a, b): c for a, b, c in qs.history}.get((40.0, 80.0), math.inf)
    mass = survival_tail(spec, 40.0, 2)
    cdf_gap = 0.0
    for t in (0.5, 1.0, 2.0, 4.0):
        finite = lambert_tail(spec, 40.0 - t, 40.0).value / mass
        cdf_gap = max(cdf_gap, abs(finite - asy.sub_k2_cdf(spec, t, qs=qs).value))
    sums = []
    for k in (2, 3):
        table = asy.sub_fdd_table(spec, k, [1.0], enumerate_chains(k, 1, coalescent=True), qs=qs)
        sums.append(abs(sum(r.value for r in table) - 1))
    ok = change < 1e-9 and cdf_gap <= 1e-3 and max(sums) <= 1e-5
    return ok, f"jet change 40->80 {change:.3g}; T=40 cdf gap {cdf_gap:.3g}; table sum gap {max(sums):.3g}"


def c13():
    lt = asy.LaplaceTransform(YULE)
    tech = [asy.tech_lemma_check(YULE, 1.0, 0.5, 2, T, lt=lt)[2] for T in (5.0, 10.0, 20.0, 40.0)]
    crit = [asy.critical_scaling_check(CRITICAL, 1.0, 0.5, 1.0, 2, T)[2] for T in (50.0, 100.0, 200.0)]

    def shrinking(g):
        return all(b < a for a, b in zip(g, g[1:]))

    ok = shrinking(tech) and shrinking(crit) and tech[-1] <= 1e-5 and crit[-1] <= 0.02
    return ok, (
        f"technical lemma gaps {', '.join(f'{g:.2g}' for g in tech)}; "
        f"critical scaling gaps {', '.join(f'{g:.2g}' for g in crit)}"
    )


CRITERIA = {n: globals()[f"c{n}"] for n in range(1, 14)}


def run_criterion(n: int) -> tuple[bool, str]:
    start = time.perf_counter()
    ok, detail = CRITERIA[n]()
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - start:.1f}s) {detail}"
    ACCEPTANCE_LINES[n] = line
    return ok, line


@pytest.mark.slow
@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n):
    ok, line = run_criterion(n)
    assert ok, line


if __name__ == "__main__":
    results = [run_criterion(n) for n in sorted(CRITERIA)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
