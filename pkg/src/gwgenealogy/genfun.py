"""Offspring laws and the generating-function semigroup F_t(s) = E[s^N_t].

F_t solves dF/dt = f(F) - F with F_0(s) = s.  Near s = 1 the values crowd
against 1 and lose every significant digit, so the flow is integrated for the
complement W = 1 - F instead:

    dW/dt = h(W),   h(w) = 1 - f(1 - w) - w.

h has no constant term, and all of its coefficients come from sums of
nonnegative numbers, so W keeps full relative precision even when it is
1e-18 or smaller.  Jets in s ride along: the same ODE acting on jet
coefficients yields every s-derivative at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import DOP853
from scipy.optimize import brentq

from . import jets
from .jets import TaylorJet

RTOL = 1e-11
ATOL = 1e-30
MAX_STEPS = 10**6
MAX_ORDER = 12


class SpecError(ValueError):
    """Offspring law that is malformed or violates a standing hypothesis."""


class StepControlError(RuntimeError):
    """The adaptive integrator could not keep the step size above underflow."""


@dataclass(frozen=True)
class OffspringSpec:
    kind: str  # "pmf", "bd" or "geom"
    params: tuple[float, ...]
    probs: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.kind == "geom":
            (p,) = self.params
            if not 0.0 < p < 1.0:
                raise SpecError("geometric parameter must lie in (0, 1)")
            return
        if self.kind == "bd":
            a, b = self.params
            probs = (a, 0.0, b)
        elif self.kind == "pmf":
            probs = tuple(self.params)
        else:
            raise SpecError(f"unknown offspring kind {self.kind!r}")
        if any(p < 0 for p in probs):
            raise SpecError("negative offspring probability")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise SpecError("offspring probabilities must sum to 1")
        object.__setattr__(self, "probs", tuple(float(p) for p in probs))
        if not any(p > 0 for p in probs[2:]):
            raise SpecError("non-triviality: need P(L >= 2) > 0 so that f''(1) > 0")

    def __str__(self) -> str:
        if self.kind == "pmf":
            return "pmf:" + ",".join(f"{j}:{p:g}" for j, p in enumerate(self.probs) if p > 0)
        return f"{self.kind}:" + ",".join(f"{x:g}" for x in self.params)

    # moments ------------------------------------------------------------
    @property
    def mean(self) -> float:
        if self.kind == "geom":
            p = self.params[0]
            return (1 - p) / p
        return sum(j * p for j, p in enumerate(self.probs))

    @property
    def second_factorial_moment(self) -> float:
        if self.kind == "geom":
            p = self.params[0]
            return 2 * (1 - p) ** 2 / p**2
        return sum(j * (j - 1) * p for j, p in enumerate(self.probs))

    @property
    def growth_rate(self) -> float:
        """m - 1, computed without cancellation for finite supports."""
        if self.kind == "geom":
            p = self.params[0]
            return (1 - 2 * p) / p
        return sum((j - 1) * p for j, p in enumerate(self.probs))

    @property
    def regime(self) -> str:
        r = self.growth_rate
        if abs(r) <= 1e-12:
            return "crit"
        return "super" if r > 0 else "sub"

    @property
    def is_binary(self) -> bool:
        """True when no particle has three or more children, so every split is binary."""
        return self.kind != "geom" and all(p == 0 for p in self.probs[3:])

    # the pgf itself ----------------------------------------------------------
    def pgf(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "geom":
            p = self.params[0]
            return p / (1 - (1 - p) * s)
        return np.polynomial.polynomial.polyval(s, self.probs)

    def pgf_derivative(self, s, r: int):
        """f^(r)(s) for r >= 0."""
        s = np.asarray(s, dtype=float)
        if self.kind == "geom":
            p = self.params[0]
            return math.factorial(r) * p * (1 - p) ** r / (1 - (1 - p) * s) ** (r + 1)
        c = np.polynomial.polynomial.polyder(np.array(self.probs), r) if r else np.array(self.probs)
        if c.size == 0:
            return np.zeros_like(s)
        return np.polynomial.polynomial.polyval(s, c)

    def sample_cdf(self) -> np.ndarray:
        """Cumulative offspring probabilities for inverse-cdf sampling (finite kinds)."""
        if self.kind == "geom":
            raise SpecError("geometric offspring has no finite cdf table")
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    # complement drift --------------------------------------------------------
    def _complement_coeffs(self) -> np.ndarray:
        coeffs = self.__dict__.get("_hc")
        if coeffs is None:
            probs = self.probs
            D = len(probs) - 1
            coeffs = np.zeros(D + 1)
            coeffs[1] = self.growth_rate
            for r in range(2, D + 1):
                coeffs[r] = (-1) ** (r + 1) * sum(math.comb(j, r) * probs[j] for j in range(r, D + 1))
            object.__setattr__(self, "_hc", coeffs)
        return coeffs

    def complement_drift(self, W: np.ndarray) -> np.ndarray:
        """Jet of h(W) = 1 - f(1 - W) - W for a batch of jets W."""
        if self.kind == "geom":
            p = self.params[0]
            num = -(1 - p) * W
            num[..., 0] += 1 - 2 * p
            den = (1 - p) * W
            den[..., 0] += p
            return jets.mul(W, jets.div(num, den))
        c = self._complement_coeffs()
        return jets.mul(W, jets.poly(c[1:], W))


def birth_death(alpha: float, beta: float) -> OffspringSpec:
    return OffspringSpec("bd", (float(alpha), float(beta)))


def geometric(p: float) -> OffspringSpec:
    return OffspringSpec("geom", (float(p),))


def finite_pmf(probs: Sequence[float] | dict[int, float]) -> OffspringSpec:
    if isinstance(probs, dict):
        top = max(probs)
        probs = [float(probs.get(j, 0.0)) for j in range(top + 1)]
    return OffspringSpec("pmf", tuple(float(p) for p in probs))


YULE = "bd:0,1"
CRITICAL_BINARY = "pmf:0:0.5,2:0.5"


def parse_spec(text: str) -> OffspringSpec:
    """Parse ``bd:a,b``, ``geom:p`` or ``pmf:j:p,j:p,...``."""
    try:
        kind, _, rest = text.strip().partition(":")
        if kind == "bd":
            a, b = (float(x) for x in rest.split(","))
            return birth_death(a, b)
        if kind == "geom":
            return geometric(float(rest))
        if kind == "pmf":
            table: dict[int, float] = {}
            for item in rest.split(","):
                j, p = item.split(":")
                if int(j) < 0 or int(j) in table:
                    raise SpecError(f"bad offspring index {j}")
                table[int(j)] = float(p)
            return finite_pmf(table)
    except SpecError:
        raise
    except (ValueError, TypeError) as exc:
        raise SpecError(f"cannot parse offspring spec {text!r}") from exc
    raise SpecError(f"unknown offspring kind in {text!r}")


def pgf_on_jet(spec: OffspringSpec, x: TaylorJet) -> TaylorJet:
    if spec.kind == "geom":
        p = spec.params[0]
        den = -(1 - p) * x.coeffs
        den[0] += 1.0
        return TaylorJet(x.center, p * jets.recip(den))
    return TaylorJet(x.center, jets.poly(spec.probs, np.asarray(x.coeffs, dtype=float)))


def extinction_probability(spec: OffspringSpec) -> float:
    if spec.growth_rate <= 0:
        return 1.0
    p0 = float(spec.pgf(0.0))
    if p0 == 0.0:
        return 0.0
    g = lambda s: float(spec.pgf(s)) - s
    # f(s) - s is convex with a minimum where f'(s) = 1
    turn = brentq(lambda s: float(spec.pgf_derivative(s, 1)) - 1.0, 0.0, 1.0, xtol=1e-15)
    return brentq(g, 0.0, turn, xtol=1e-15, rtol=4 * np.finfo(float).eps)


# ---------------------------------------------------------------------------
# integration of the complement flow

_A = DOP853.A
_B = DOP853.B
_E3 = DOP853.E3
_E5 = DOP853.E5
_STAGES = DOP853.n_stages


def _error_ratio(y, y_new, K, h, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    e5 = np.tensordot(_E5, K, axes=(0, 0)) * h / scale
    e3 = np.tensordot(_E3, K, axes=(0, 0)) * h / scale
    denom = np.sqrt(e5 * e5 + 0.01 * e3 * e3)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = np.where(denom > 0, e5 * e5 / denom, 0.0)
    worst = float(np.max(est)) if est.size else 0.0
    # a trial step that overflowed is rejected like any other oversized step
    return worst if math.isfinite(worst) else math.inf


def flow_complement(
    spec: OffspringSpec,
    w0: np.ndarray,
    times: Sequence[float],
    rtol: float = RTOL,
    atol: float | np.ndarray = ATOL,
    max_steps: int = MAX_STEPS,
) -> np.ndarray:
    """Push a batch of complement jets forward under the branching flow.

    ``w0`` holds jets of 1 - G for some map G; the result at time t holds the
    jets of 1 - F_t(G).  Output shape is ``(len(times),) + w0.shape``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("output times must be nonnegative and nondecreasing")
    y = np.array(w0, dtype=float)
    out = np.empty((len(times),) + y.shape)
    if y.size == 0:
        return out
    rhs = spec.complement_drift
    t = 0.0
    h = 1e-2
    K = np.empty((_STAGES + 1,) + y.shape)
    f0 = rhs(y)
    steps = 0
    for idx, target in enumerate(times):
        if target - t <= 1e-13 * max(1.0, target):
            t = max(t, target)
        while t < target:
            h = min(h, target - t)
            last = h == target - t
            while True:
                if h < 1e-14 * max(1.0, t):
                    raise StepControlError(f"step size underflow at t={t:.6g}")
                K[0] = f0
                with np.errstate(over="ignore", invalid="ignore"):
                    for s in range(1, _STAGES):
                        dy = np.tensordot(_A[s, :s], K[:s], axes=(0, 0)) * h
                        K[s] = rhs(y + dy)
                    y_new = y + h * np.tensordot(_B, K[:_STAGES], axes=(0, 0))
                    y_new[..., 0] = np.clip(y_new[..., 0], 0.0, 1.0)
                    f_new = rhs(y_new)
                    K[-1] = f_new
                    err = _error_ratio(y, y_new, K, h, rtol, atol)
                steps += 1
                if steps > max_steps:
                    raise StepControlError("maximum number of steps exceeded")
                if err <= 1.0:
                    break
                h *= max(0.2, 0.9 * err ** (-1 / 8))
                last = False
            t = target if last else t + h
            if target - t <= 1e-13 * max(1.0, target):
                t = target
            y, f0 = y_new, f_new
            factor = 10.0 if err == 0 else min(10.0, max(0.2, 0.9 * err ** (-1 / 8)))
            h *= factor
        out[idx] = y
    return out


def _start_jets(w, order: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    W = np.zeros(w.shape + (order + 1,))
    W[..., 0] = w
    if order >= 1:
        W[..., 1] = -1.0
    return W


def semigroup_coeffs(
    spec: OffspringSpec,
    times: Sequence[float],
    s=None,
    order: int = 0,
    *,
    w=None,
    complement: bool = False,
    **kw,
) -> np.ndarray:
    """Taylor coefficients of F_t at each point, for every t in ``times``.

    Points are given either as ``s`` or as complements ``w = 1 - s`` (the
    latter keeps precision when s is within rounding of 1).  With
    ``complement=True`` the coefficients of 1 - F_t are returned instead.
    Output shape ``(len(times), len(points), order + 1)``.
    """
    if (s is None) == (w is None):
        raise ValueError("give exactly one of s or w")
    if w is None:
        w = 1.0 - np.asarray(s, dtype=float)
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("points must lie in [0, 1]")
    W = flow_complement(spec, _start_jets(w, order), np.atleast_1d(times), **kw)
    if complement:
        return W
    F = -W
    F[..., 0] += 1.0
    return F


def semigroup_jet(spec: OffspringSpec, t: float, s: float, order: int) -> TaylorJet:
    if order > MAX_ORDER:
        raise ValueError(f"jet order is capped at {MAX_ORDER}")
    c = semigroup_coeffs(spec, [t], s=[s], order=order)[0, 0]
    return TaylorJet(float(s), c)


def birth_death_closed_form(alpha: float, beta: float, t: float, s: float, order: int) -> TaylorJet:
    """Jet of the explicit birth-death generating function."""
    if abs(alpha + beta - 1.0) > 1e-12:
        raise SpecError("closed form needs alpha + beta = 1")
    x = jets.variable(s, order)
    one_minus = -x
    one_minus[0] += 1.0
    if abs(beta - alpha) < 1e-14:
        den = beta * t * one_minus
        den[0] += 1.0
        c = -jets.div(one_minus, den)
        c[0] += 1.0
        return TaylorJet(float(s), c)
    e = math.exp((beta - alpha) * t)
    num = alpha * e * one_minus + beta * x
    num[0] -= alpha
    den = beta * e * one_minus + beta * x
    den[0] -= alpha
    assert den[0] != 0.0
    return TaylorJet(float(s), jets.div(num, den))


def population_pmf(spec: OffspringSpec, T: float, jmax: int, **kw) -> np.ndarray:
    """P(N_T = j) for j = 0..jmax."""
    W = semigroup_coeffs(spec, [T], w=[1.0], order=jmax, complement=True, **kw)[0, 0]
    out = -W
    out[0] = 1.0 - W[0]
    return out


def survival_tail(spec: OffspringSpec, T: float, k: int) -> float:
    """P(N_T >= k), summed in a way that stays accurate when it is tiny."""
    W = semigroup_coeffs(spec, [T], w=[1.0], order=max(k - 1, 0), complement=True)[0, 0]
    # W[0] = P(N_T > 0) and W[j] = -P(N_T = j)
    return float(max(W[0] + W[1:k].sum(), 0.0))
