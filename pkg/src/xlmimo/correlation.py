"""Spatial correlation matrices of a cluster seen by a ULA.

The near-field matrix integrates ``b(theta) b(theta)^H`` against a Von Mises
angular density; the far-field matrix has a closed form in I0. The trace
helpers describe how the squared steering-vector norm departs from the
element count for clusters close to a large array.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize, special
from scipy.linalg import blas
from scipy.linalg import toeplitz

from .geometry import ArrayGeometry, ClusterCenter, DistanceMode, element_offsets, steering_matrix
from .numerics import DEFAULT_QUAD, ConvergenceError, QuadratureSpec, RngStream, composite_nodes, i0_ratio

# Density below 1e-16 of its peak is dropped from the angular window.
_LOG_DENSITY_FLOOR = 16 * np.log(10.0)
_NODE_CHUNK = 2048
_GRADE_FLOOR = 1e-9


@dataclass(frozen=True)
class AngularSpread:
    """Von Mises angular spread; ``concentration_inv`` is the width parameter rho."""

    mean_angle: float
    concentration_inv: float

    def __post_init__(self):
        if not (np.isfinite(self.concentration_inv) and self.concentration_inv > 0):
            raise ValueError("concentration_inv must be positive and finite")

    @property
    def kappa(self) -> float:
        return 1.0 / self.concentration_inv


class CorrelationMatrix:
    """Hermitian PSD correlation matrix with a lazily computed eigen-system."""

    def __init__(self, matrix: np.ndarray, check: bool = True):
        m = np.asarray(matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("correlation matrix must be square")
        if check:
            norm = np.linalg.norm(m)
            if norm == 0 or np.linalg.norm(m - m.conj().T) > 1e-10 * norm:
                raise ValueError("correlation matrix must be non-zero and Hermitian")
        self.matrix = 0.5 * (m + m.conj().T)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    @cached_property
    def _eig(self):
        vals, vecs = np.linalg.eigh(self.matrix)
        return vals[::-1].copy(), vecs[:, ::-1].copy()

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eig[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eig[1]

    def is_psd(self, tol: float = 1e-8) -> bool:
        vals = self.eigenvalues
        return bool(vals[-1] >= -tol * max(vals[0], 0.0) and vals[0] > 0)

    def sqrt_factor(self, rel_cut: float = 1e-13) -> np.ndarray:
        """Return ``U Lambda^(1/2)`` restricted to eigenvalues above ``rel_cut * max``.

        Small negative eigenvalues from quadrature noise are clamped; anything
        below ``-1e-8 * max`` is rejected.
        """
        if not self.is_psd():
            raise ValueError("correlation matrix is not positive semi-definite")
        vals, vecs = self.eigenvalues, self.eigenvectors
        keep = vals > rel_cut * vals[0]
        return vecs[:, keep] * np.sqrt(vals[keep])

    def dominant(self) -> tuple[float, np.ndarray]:
        return float(self.eigenvalues[0]), self.eigenvectors[:, 0]

    def rank1_ratio(self) -> float:
        vals = self.eigenvalues
        return float(vals[1] / vals[0]) if vals.size > 1 else 0.0


# ---------------------------------------------------------------------------
# Von Mises density
# ---------------------------------------------------------------------------

def vmd_pdf(theta, spread: AngularSpread):
    k = spread.kappa
    # i0e keeps the normaliser finite for very concentrated spreads
    return np.exp(k * (np.cos(np.asarray(theta) - spread.mean_angle) - 1.0)) / (2 * np.pi * special.i0e(k))


def sample_vmd(stream: RngStream, spread: AngularSpread, n: int) -> np.ndarray:
    """Von Mises draws wrapped to [-pi, pi)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    draws = stream.generator().vonmises(spread.mean_angle, spread.kappa, size=n)
    return (draws + np.pi) % (2 * np.pi) - np.pi


def angular_window(spread: AngularSpread) -> tuple[float, float]:
    """Interval around the mean angle outside which the density is negligible."""
    k = spread.kappa
    if 2 * k <= _LOG_DENSITY_FLOOR:
        half = np.pi
    else:
        half = float(np.arccos(1 - _LOG_DENSITY_FLOOR / k))
    return spread.mean_angle - half, spread.mean_angle + half


# ---------------------------------------------------------------------------
# Correlation matrices
# ---------------------------------------------------------------------------

def _weighted_gram(geom, distance, nodes, weights, rows, mode) -> np.ndarray:
    """``sum_k w_k b_k b_k^H`` restricted to ``rows`` (all rows when None).

    The full matrix goes through a Hermitian rank-k update, which fills the
    upper triangle only; weights are non-negative.
    """
    n = geom.n_elements
    out = np.zeros((n if rows is None else len(rows), n), dtype=complex, order="F")
    for start in range(0, nodes.size, _NODE_CHUNK):
        sl = slice(start, start + _NODE_CHUNK)
        b = steering_matrix(geom, distance, nodes[sl], mode)
        if rows is None:
            out = blas.zherk(1.0, b * np.sqrt(weights[sl]), beta=1.0, c=out, overwrite_c=True)
        else:
            out += (b[rows] * weights[sl]) @ b.conj().T
    if rows is None:
        out = np.triu(out) + np.triu(out, 1).conj().T
    return out


def _window_nodes(lo: float, hi: float, panels: int, node_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule on [lo, hi] with breaks and geometric grading at +-pi/2.

    At endfire a scatterer at the cluster distance can sit next to an element
    of a long array, where ``1/D_n`` peaks sharply; panels halve towards the
    break until they are narrower than ``_GRADE_FLOOR``.
    """
    cuts = [c for c in (-np.pi / 2, np.pi / 2) if lo < c < hi]
    if not cuts:
        return composite_nodes(lo, hi, panels, node_count)
    edges = [lo, *cuts, hi]
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, int(np.ceil(panels * (b - a) / (hi - lo))))
        grid = np.linspace(a, b, k + 1)
        step = grid[1] - grid[0]
        layers = max(0, int(np.ceil(np.log2(step / _GRADE_FLOOR))))
        fine = step * 0.5 ** np.arange(1, layers + 1)
        pts = [grid]
        if a in cuts:
            pts.append(a + fine)
        if b in cuts:
            pts.append(b - fine)
        grid = np.unique(np.concatenate(pts))
        for u, v in zip(grid[:-1], grid[1:]):
            out.append(composite_nodes(u, v, 1, node_count))
    return np.concatenate([x for x, _ in out]), np.concatenate([w for _, w in out])


def nearfield_corr(geom: ArrayGeometry, center: ClusterCenter, spread: AngularSpread,
                   quad: QuadratureSpec = DEFAULT_QUAD, distance_mode: DistanceMode = "fresnel",
                   ) -> CorrelationMatrix:
    """Near-field correlation ``E{b(theta) b(theta)^H}`` over the Von Mises density.

    The cluster distance is held at ``center.distance``; ``spread.mean_angle``
    sets the angular centre. Panel doubling is judged on the first, middle and
    last rows, which carry the fastest-oscillating entries, plus the rows
    nearest the cluster distance.
    """
    lo, hi = angular_window(spread)
    n = geom.n_elements
    eta = element_offsets(geom)
    # the element nearest the cluster distance carries the sharpest endfire peak
    near = {int(np.argmin(np.abs(eta - s * center.distance))) for s in (-1, 1)}
    probe = sorted({0, n // 2, n - 1} | near)
    prev = None
    panels = 1
    while panels <= quad.panel_count:
        nodes, w = _window_nodes(lo, hi, panels, quad.node_count)
        weights = w * vmd_pdf(nodes, spread)
        est = _weighted_gram(geom, center.distance, nodes, weights, probe, distance_mode)
        if prev is not None:
            scale = np.max(np.abs(est))
            if quad.accepts(float(np.max(np.abs(est - prev))), scale):
                full = _weighted_gram(geom, center.distance, nodes, weights, None, distance_mode)
                return CorrelationMatrix(full)
        prev = est
        panels *= 2
    raise ConvergenceError(f"near-field correlation did not converge within {quad.panel_count} panels")


def farfield_corr(geom: ArrayGeometry, spread: AngularSpread) -> CorrelationMatrix:
    """Closed-form plane-wave correlation; Toeplitz with unit diagonal."""
    k = spread.kappa
    lags = np.arange(geom.n_elements) * geom.spacing
    s = np.sin(spread.mean_angle)

    def entry(delta_eta):
        b = 1j * geom.wavenumber * delta_eta
        return i0_ratio(k * k + b * b + 2 * b * k * s, k)

    col = entry(lags)    # (n, 0): eta_n - eta_0 = +lag
    row = entry(-lags)   # (0, n)
    col[0] = row[0] = 1.0
    return CorrelationMatrix(toeplitz(col, row))


def mean_corr(mats: Sequence[CorrelationMatrix]) -> CorrelationMatrix:
    if not mats:
        raise ValueError("need at least one matrix")
    size = mats[0].size
    if any(m.size != size for m in mats):
        raise ValueError("correlation matrices differ in dimension")
    return CorrelationMatrix(sum(m.matrix for m in mats) / len(mats))


# ---------------------------------------------------------------------------
# Trace analysis
# ---------------------------------------------------------------------------

def _arctan_terms(geom: ArrayGeometry, distance, angle):
    cos = np.cos(angle)
    half = geom.aperture / (2 * distance * cos)
    tan = np.tan(angle)
    return distance / (geom.spacing * cos), half - tan, half + tan


def corr_trace_delta(geom: ArrayGeometry, center: ClusterCenter) -> float:
    """Continuum approximation of ``||b||^2`` for a point cluster."""
    return float(delta_map(geom, center.distance, center.angle))


def delta_map(geom: ArrayGeometry, distance, angle):
    """Vectorised form of :func:`corr_trace_delta` over distances and angles."""
    scale, i1, i2 = _arctan_terms(geom, np.asarray(distance, float), np.asarray(angle, float))
    return scale * (np.arctan(i1) + np.arctan(i2))


def delta_alt(geom: ArrayGeometry, center: ClusterCenter) -> float:
    """Second arctan form; only valid while ``2d > N d_A |sin theta|``."""
    d, th = center.distance, center.angle
    num = geom.aperture * np.cos(th)
    i3 = num / (2 * d - geom.aperture * np.sin(th))
    i4 = num / (2 * d + geom.aperture * np.sin(th))
    return float(d / (geom.spacing * np.cos(th)) * (np.arctan(i3) + np.arctan(i4)))


def delta_direct(geom: ArrayGeometry, center: ClusterCenter, distance_mode: DistanceMode = "exact") -> float:
    """Exact ``sum_n 1 / c_n^2`` for a point cluster."""
    b = steering_matrix(geom, center.distance, center.angle, distance_mode)
    return float(np.sum(np.abs(b) ** 2))


def delta_limit(geom: ArrayGeometry, center: ClusterCenter) -> float:
    """Saturation value of the trace as the array grows without bound."""
    return float(np.pi * center.distance / (geom.spacing * np.cos(center.angle)))


class ZeroCrossings(NamedTuple):
    theta1: float
    theta2: float


SCAN_LIMIT = 1.45
SCAN_POINTS = 2000


def delta_zero_crossings(geom: ArrayGeometry, distance: float, rel_tol: float = 1e-3) -> ZeroCrossings | None:
    """Angles on either side of broadside where ``Delta - N`` changes sign.

    Excursions smaller than ``rel_tol * N`` count as zero, so a distant
    cluster whose trace never leaves the element count reports ``None``.
    """
    n = geom.n_elements

    def gap(theta):
        return delta_map(geom, distance, theta) - n

    grid = np.linspace(-SCAN_LIMIT, SCAN_LIMIT, SCAN_POINTS)
    vals = gap(grid)
    band = rel_tol * n
    if vals.max() <= band or vals.min() >= -band:
        return None
    flips = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    left = [i for i in flips if grid[i + 1] <= 0]
    right = [i for i in flips if grid[i] >= 0]
    if not left or not right:
        return None
    i, j = left[-1], right[0]
    t1 = optimize.bisect(gap, grid[i], grid[i + 1], xtol=1e-10)
    t2 = optimize.bisect(gap, grid[j], grid[j + 1], xtol=1e-10)
    return ZeroCrossings(float(t1), float(t2))
