"""Shared numerical building blocks.

Special functions are thin guards over :mod:`scipy.special`; quadrature is a
composite Gauss-Legendre rule with panel doubling; every random draw goes
through an :class:`RngStream`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import special


class ConvergenceError(RuntimeError):
    """Raised when an iterative numerical procedure misses its tolerance."""


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------

def bessel_i0(x):
    """Modified Bessel function of the first kind, order zero.

    Accepts scalars or arrays with ``x >= 0``. Raises ``OverflowError`` when
    the result leaves the double range (x above roughly 713).
    """
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < 0):
        raise ValueError("bessel_i0 requires finite, non-negative arguments")
    out = special.i0(x)
    if np.any(np.isinf(out)):
        raise OverflowError("I0(x) exceeds the floating-point range")
    return out[()] if out.ndim == 0 else out


def bessel_k(order: int, x):
    """Modified Bessel function of the second kind for order 0 or 1."""
    if order not in (0, 1):
        raise ValueError("only orders 0 and 1 are supported")
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("bessel_k is defined for x > 0 only")
    out = special.k0(x) if order == 0 else special.k1(x)
    return out[()] if out.ndim == 0 else out


def i0_ratio(z, kappa: float):
    """Return ``I0(sqrt(z)) / I0(kappa)`` for complex ``z`` and real ``kappa >= 0``.

    I0 is even, so the branch of the square root is irrelevant. Exponentially
    scaled Bessel functions keep the ratio finite for large arguments.
    """
    w = np.sqrt(np.asarray(z, dtype=complex))
    scale = np.exp(np.abs(w.real) - kappa)
    return special.ive(0, w) * scale / special.i0e(kappa)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre settings.

    ``panel_count`` is the upper limit reached by panel doubling.
    """

    node_count: int = 64
    panel_count: int = 1024
    abs_tol: float = 1e-10
    rel_tol: float = 0.0

    def __post_init__(self):
        if self.node_count < 2:
            raise ValueError("node_count must be at least 2")
        if self.panel_count < 1:
            raise ValueError("panel_count must be positive")
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.abs_tol == 0 and self.rel_tol == 0:
            raise ValueError("abs_tol and rel_tol cannot both be zero")

    def accepts(self, delta: float, scale: float) -> bool:
        return delta <= max(self.abs_tol, self.rel_tol * scale)


DEFAULT_QUAD = QuadratureSpec()


@lru_cache(maxsize=32)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def composite_nodes(a: float, b: float, panels: int, node_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of an equal-panel composite Gauss-Legendre rule on [a, b]."""
    x, w = _legendre(node_count)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def integrate_1d(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                 spec: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Integrate a vectorised real integrand over [a, b].

    Panels double from one until two successive estimates agree within the
    spec tolerances; failing that at ``spec.panel_count`` panels raises
    :class:`ConvergenceError`.
    """
    if not a < b:
        raise ValueError("integration interval must satisfy a < b")
    prev = None
    panels = 1
    while panels <= spec.panel_count:
        nodes, weights = composite_nodes(a, b, panels, spec.node_count)
        vals = np.asarray(f(nodes), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("integrand is not finite on the interval")
        est = float(np.dot(weights, vals))
        if prev is not None and spec.accepts(abs(est - prev), abs(est)):
            return est
        prev = est
        panels *= 2
    raise ConvergenceError(
        f"quadrature on [{a}, {b}] did not converge within {spec.panel_count} panels")


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Value-like handle on a reproducible random stream.

    Calling :meth:`generator` twice yields two generators that produce the
    same sequence; derive independent streams with :meth:`child`.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= v <= _U64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, index: int) -> "RngStream":
        mix = np.random.SeedSequence(entropy=(self.stream_id, int(index)))
        lo, hi = mix.generate_state(2, dtype=np.uint32)
        return RngStream(self.master_seed, (int(hi) << 32) | int(lo))


def cgauss(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric unit-variance complex Gaussian draws."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    z = rng.standard_normal(shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


def sample_cgauss(stream: RngStream, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return cgauss(stream.generator(), (n,))


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def hermitian_eig(m: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues descending.

    Rejects inputs whose anti-Hermitian part exceeds ``tol`` relative to the
    Frobenius norm.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    norm = np.linalg.norm(m)
    if norm > 0 and np.linalg.norm(m - m.conj().T) > tol * norm:
        raise ValueError("matrix is not Hermitian")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.conj().T))
    return vals[::-1], vecs[:, ::-1]
