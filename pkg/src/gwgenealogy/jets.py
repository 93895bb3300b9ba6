"""Truncated Taylor series ("jets") and batched jet arithmetic.

A jet of order d at a point x stores c_0..c_d with c_r = g^(r)(x)/r!.  The
batched helpers work on arrays whose last axis holds the coefficients, so a
whole quadrature grid of jets is pushed through one numpy call.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

# beyond this order the dense product matrix gets large; fall back to convolve
_DENSE_MAX = 31


@lru_cache(maxsize=None)
def _product_matrix(d: int) -> np.ndarray:
    n = d + 1
    P = np.zeros((n * n, n))
    for i in range(n):
        for j in range(n - i):
            P[i * n + j, i + j] = 1.0
    return P


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Truncated product of two batches of jets of equal order."""
    a, b = np.broadcast_arrays(a, b)
    n = a.shape[-1]
    if n == 1:
        return a * b
    if n - 1 <= _DENSE_MAX:
        outer = a[..., :, None] * b[..., None, :]
        return outer.reshape(*a.shape[:-1], n * n) @ _product_matrix(n - 1)
    flat_a = a.reshape(-1, n)
    flat_b = b.reshape(-1, n)
    out = np.empty_like(flat_a)
    for r in range(flat_a.shape[0]):
        out[r] = np.convolve(flat_a[r], flat_b[r])[:n]
    return out.reshape(a.shape)


def recip(a: np.ndarray) -> np.ndarray:
    """Truncated 1/a; the constant term must be nonzero."""
    out = np.empty_like(a, dtype=float)
    inv0 = 1.0 / a[..., 0]
    out[..., 0] = inv0
    for r in range(1, a.shape[-1]):
        acc = np.einsum("...i,...i->...", a[..., 1 : r + 1], out[..., r - 1 :: -1][..., :r])
        out[..., r] = -inv0 * acc
    return out


def div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return mul(a, recip(b))


def poly(coeffs, x: np.ndarray) -> np.ndarray:
    """Evaluate the polynomial sum coeffs[i] * x**i on a batch of jets (Horner)."""
    coeffs = list(coeffs)
    out = np.zeros_like(x, dtype=float)
    out[..., 0] = coeffs[-1]
    for c in reversed(coeffs[:-1]):
        out = mul(out, x)
        out[..., 0] += c
    return out


def compose(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Jet of g(h(.)) given the jet of g at h(x0) and the jet of h at x0."""
    delta = inner.copy()
    delta[..., 0] = 0.0
    out = np.zeros(np.broadcast_shapes(outer.shape, inner.shape))
    out[..., 0] = outer[..., -1]
    for r in range(outer.shape[-1] - 2, -1, -1):
        out = mul(out, delta)
        out[..., 0] += outer[..., r]
    return out


def shift(c: np.ndarray, b: int) -> np.ndarray:
    """Coefficients of the b-th derivative, truncated to the remaining order."""
    d = c.shape[-1] - 1
    if b > d:
        raise ValueError("derivative order exceeds jet order")
    r = np.arange(d - b + 1)
    scale = np.array([factorial(i + b) / factorial(i) for i in r])
    return c[..., b:] * scale


def derivatives(c: np.ndarray) -> np.ndarray:
    """Convert Taylor coefficients to plain derivatives g^(r) = r! c_r."""
    fact = np.array([float(factorial(r)) for r in range(c.shape[-1])])
    return c * fact


def variable(x, order: int) -> np.ndarray:
    """Jets of the identity map at the points ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (order + 1,))
    out[..., 0] = x
    if order >= 1:
        out[..., 1] = 1.0
    return out


@dataclass(frozen=True)
class TaylorJet:
    center: float
    coeffs: np.ndarray

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def value(self) -> float:
        return float(self.coeffs[0])

    def derivative(self, r: int) -> float:
        return float(factorial(r) * self.coeffs[r])

    def derivatives(self) -> np.ndarray:
        return derivatives(self.coeffs)

    def __add__(self, other: "TaylorJet") -> "TaylorJet":
        return TaylorJet(self.center, self.coeffs + other.coeffs)

    def __mul__(self, other: "TaylorJet") -> "TaylorJet":
        return TaylorJet(self.center, mul(self.coeffs, other.coeffs))

    def compose(self, inner: "TaylorJet") -> "TaylorJet":
        """Treat self as the jet of g at inner.value and return the jet of g(inner)."""
        return TaylorJet(inner.center, compose(self.coeffs, inner.coeffs))
