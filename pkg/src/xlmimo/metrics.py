"""Ergodic spectral efficiency and MRC outage: Monte-Carlo and closed forms."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Iterable, Union

import numpy as np
from scipy import special, stats

from .channel import ChannelRealization, CorrCache, LinkModel, dominant_modes
from .numerics import DEFAULT_QUAD, QuadratureSpec, integrate_1d

LN2 = np.log(2.0)


@dataclass(frozen=True)
class SnrGrid:
    """Strictly ascending positive linear SNR values."""

    values: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size == 0:
            raise ValueError("SNR grid is empty")
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("SNR values must be positive and finite")
        if np.any(np.diff(v) <= 0):
            raise ValueError("SNR values must be strictly ascending")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def from_db(cls, db_values) -> "SnrGrid":
        return cls(tuple(10 ** (np.asarray(db_values, float) / 10)))

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    trials: int


@dataclass(frozen=True)
class OutageEstimate:
    probability: float
    stderr: float
    wilson_low: float
    wilson_high: float
    trials: int

    @property
    def wilson_halfwidth(self) -> float:
        return 0.5 * (self.wilson_high - self.wilson_low)


# ---------------------------------------------------------------------------
# Monte-Carlo estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GramSpectrum:
    """Eigenvalues of ``H^H H`` per trial (non-zero part), shape ``(trials, r)``."""

    values: np.ndarray


Source = Union[GramSpectrum, ChannelRealization, np.ndarray, Iterable]


def _as_batches(source) -> Iterable[np.ndarray]:
    if isinstance(source, (ChannelRealization, np.ndarray)):
        source = [source]
    for item in source:
        h = item.matrix if isinstance(item, ChannelRealization) else np.asarray(item)
        if h.ndim == 2:
            h = h[None]
        yield h


def gram_spectrum(source: Source) -> GramSpectrum:
    """Descending eigenvalues of the smaller Gram matrix of every realization."""
    if isinstance(source, GramSpectrum):
        return source
    parts = []
    for h in _as_batches(source):
        if not np.all(np.isfinite(h)):
            raise ValueError("realization has non-finite entries")
        if h.shape[1] <= h.shape[2]:
            g = h @ np.conj(np.swapaxes(h, 1, 2))
        else:
            g = np.conj(np.swapaxes(h, 1, 2)) @ h
        vals = np.linalg.eigvalsh(g)[:, ::-1]
        parts.append(np.clip(vals, 0.0, None))
    if not parts:
        raise ValueError("need at least one realization")
    return GramSpectrum(np.concatenate(parts))


def se_samples(spectrum: GramSpectrum, gamma: float) -> np.ndarray:
    return np.sum(np.log2(1.0 + gamma * spectrum.values), axis=1)


def _estimate(samples: np.ndarray) -> McEstimate:
    n = samples.size
    se = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return McEstimate(float(np.mean(samples)), se, n)


def ergodic_se_mc(source: Source, gamma: float) -> McEstimate:
    """Sample mean of ``log2 det(I + gamma H H^H)`` with its standard error."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return _estimate(se_samples(gram_spectrum(source), gamma))


def outage_mc(source: Source, gamma_bar: float, gamma_th: float) -> OutageEstimate:
    """Fraction of trials with ``lambda_max(H^H H) <= gamma_th / gamma_bar`` and its Wilson interval."""
    if not (gamma_bar > 0 and gamma_th > 0):
        raise ValueError("gamma_bar and gamma_th must be positive")
    lam_max = gram_spectrum(source).values[:, 0]
    n = lam_max.size
    k = int(np.count_nonzero(lam_max <= gamma_th / gamma_bar))
    p = k / n
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    return OutageEstimate(p, float(np.sqrt(p * (1 - p) / n)), float(ci.low), float(ci.high), n)


# ---------------------------------------------------------------------------
# Product of two exponentials
# ---------------------------------------------------------------------------

def _scaled_k1_term(x):
    """``x K1(x)`` with its limit 1 at ``x = 0``."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    pos = x > 0
    out[pos] = x[pos] * special.k1(x[pos])
    return out


def _product_cdf_unit(z):
    """``Pr(XY <= z)`` for independent unit exponentials."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 1e-8
    zs = z[small]
    # leading terms of 1 - 2 sqrt(z) K1(2 sqrt(z)); avoids cancellation near 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out[small] = np.where(zs > 0, -zs * (np.log(zs) + 2 * np.euler_gamma - 1), 0.0)
    big = ~small
    out[big] = 1.0 - _scaled_k1_term(2 * np.sqrt(z[big]))
    return np.clip(out, 0.0, 1.0)


def product_exp_cdf(z, lam1: float, lam2: float):
    """CDF of ``XY`` with ``X ~ Exp(lam1)``, ``Y ~ Exp(lam2)`` independent."""
    if not (lam1 > 0 and lam2 > 0):
        raise ValueError("rates must be positive")
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be non-negative")
    out = _product_cdf_unit(np.where(np.isinf(z), 0.0, lam1 * lam2 * z))
    out = np.where(np.isinf(z), 1.0, out)
    return out[()] if out.ndim == 0 else out


def product_exp_pdf(z, lam1: float, lam2: float):
    if not (lam1 > 0 and lam2 > 0):
        raise ValueError("rates must be positive")
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("density is defined for z > 0")
    lam = lam1 * lam2
    out = 2 * lam * special.k0(2 * np.sqrt(lam * z))
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Specular-scattering closed forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SsLinkSummary:
    """Per-path factors of a rank-one-cluster link.

    ``lam_rx`` and ``lam_tx`` are eigenvalues of ``Pi^H Pi``; they are paired
    with the paths in descending order of ``|alpha|^2 chi_R chi_T``.
    """

    alpha_sq: np.ndarray
    chi_rx: np.ndarray
    chi_tx: np.ndarray
    lam_rx: np.ndarray
    lam_tx: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(getattr(self, f), dtype=float))
                for f in ("alpha_sq", "chi_rx", "chi_tx", "lam_rx", "lam_tx")]
        if len({a.size for a in arrs}) != 1:
            raise ValueError("per-path arrays must share one length")
        if any(np.any(a < 0) or np.any(~np.isfinite(a)) for a in arrs):
            raise ValueError("per-path factors must be finite and non-negative")
        for f, a in zip(("alpha_sq", "chi_rx", "chi_tx", "lam_rx", "lam_tx"), arrs):
            object.__setattr__(self, f, a)

    @property
    def paths(self) -> int:
        return self.alpha_sq.size

    @property
    def varpi(self) -> np.ndarray:
        return self.alpha_sq * self.chi_rx * self.chi_tx * self.lam_rx * self.lam_tx

    @classmethod
    def from_link(cls, link: LinkModel, corr: CorrCache, force_rank1: bool = False) -> "SsLinkSummary":
        if link.coupling.sparsity_tag != "diagonal":
            raise ValueError("closed forms for rank-one clusters need diagonal-like coupling")
        chi_r, pi_r = dominant_modes(corr.rx, force_rank1)
        chi_t, pi_t = dominant_modes(corr.tx, force_rank1)
        paths = link.coupling.paths()
        lr = [p[0] for p in paths]
        lt = [p[1] for p in paths]
        a2 = np.array([abs(p[2]) ** 2 for p in paths])
        order = np.argsort(-(a2 * chi_r[lr] * chi_t[lt]), kind="stable")
        lam_r = _gram_eigs(pi_r[:, lr])
        lam_t = _gram_eigs(pi_t[:, lt])
        return cls(a2[order], chi_r[lr][order], chi_t[lt][order], lam_r, lam_t)


def _gram_eigs(pi: np.ndarray) -> np.ndarray:
    vals = np.linalg.eigvalsh(pi.conj().T @ pi)[::-1]
    return np.clip(vals, 0.0, None)


# Beyond t = 15.5 the K0(2t) weight is below 1e-14 of its scale.
_T_MAX = 15.5
_LOG_SPAN = 40.0


def _se_single(a: float, quad: QuadratureSpec) -> float:
    """``E{log2(1 + a X Y)}`` for unit exponentials X, Y.

    Integrates ``2 log2(1 + a g) K0(2 sqrt g)`` over ``g = t^2`` with
    ``t = exp(u)`` so the log knee at ``t ~ a^(-1/2)`` stays well resolved.
    """
    if a <= 0:
        return 0.0

    def f(u):
        t = np.exp(u)
        return 4 * t * t * np.log1p(a * t * t) / LN2 * special.k0(2 * t)

    hi = np.log(_T_MAX)
    lo = min(hi - _LOG_SPAN, -0.5 * np.log(a) - _LOG_SPAN / 2)
    return integrate_1d(f, lo, hi, quad)


def se_ss_approx(summary: SsLinkSummary, gamma: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Closed-form-style ergodic SE of the rank-one-cluster link."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return float(sum(_se_single(gamma * w, quad) for w in summary.varpi))


def se_ss_upper(summary: SsLinkSummary, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return float(np.sum(np.log2(1.0 + gamma * summary.varpi)))


def op_ss_approx(summary: SsLinkSummary, gamma_bar: float, gamma_th: float) -> float:
    """Product over paths of the product-exponential CDF at ``gamma_th / (gamma_bar varpi)``."""
    if not (gamma_bar > 0 and gamma_th >= 0):
        raise ValueError("gamma_bar must be positive and gamma_th non-negative")
    w = summary.varpi
    if np.any(w <= 0):
        raise ValueError("every path factor must be positive")
    return float(np.clip(np.prod(product_exp_cdf(gamma_th / (gamma_bar * w), 1.0, 1.0)), 0.0, 1.0))


# ---------------------------------------------------------------------------
# Double-scattering upper bound
# ---------------------------------------------------------------------------

def elementary_symmetric(values) -> np.ndarray:
    """``e_0 .. e_n`` of ``values``: sums of products over all k-subsets."""
    e = np.zeros(len(values) + 1)
    e[0] = 1.0
    for i, v in enumerate(values, start=1):
        e[1:i + 1] = e[1:i + 1] + v * e[0:i]
    return e


@lru_cache(maxsize=None)
def _fact_sq(k: int) -> float:
    return float(factorial(k)) ** 2


def se_ds_upper(lam_rx, lam_tx, lam_c, gamma: float, max_dim: int = 12) -> float:
    """Jensen upper bound on the double-scattering ergodic SE.

    Each determinant sum over index subsets of a diagonal factor is an
    elementary symmetric polynomial of its eigenvalues.
    """
    lam_rx, lam_tx, lam_c = (np.asarray(x, dtype=float).ravel() for x in (lam_rx, lam_tx, lam_c))
    if max(lam_rx.size, lam_tx.size, lam_c.size) > max_dim:
        raise ValueError(f"dimensions above {max_dim} make the bound impractical; "
                         "estimate the ergodic SE by Monte-Carlo instead")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    r = min(lam_rx.size, lam_tx.size, lam_c.size)
    er, et, ec = (elementary_symmetric(x) for x in (lam_rx, lam_tx, lam_c))
    total = sum(_fact_sq(k) * gamma ** k * er[k] * ec[k] * et[k] for k in range(r + 1))
    return float(np.log2(total))
