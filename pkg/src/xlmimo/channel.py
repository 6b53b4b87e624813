"""Cluster-coupled MIMO channel synthesis.

Four routes produce ``N_R x N_T`` realizations of the same link:

* ``oracle``: scatterer-level sum with explicit per-ray gains and phases;
* ``analytical``: per-cluster Karhunen-Loeve vectors coupled through ``A``;
* ``ss_equivalent``: rank-one clusters, ``Pi_R Lambda_R A Lambda_T^H Pi_T^H``;
* ``ds_equivalent``: double-scattering form with averaged correlations.

Synthesis is batched. Trials are split into fixed-size chunks, each drawing
from its own child stream, so a result depends only on the master stream
and the trial count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Literal, Sequence

import numpy as np

from .correlation import AngularSpread, CorrelationMatrix, farfield_corr, mean_corr, nearfield_corr
from .geometry import ArrayGeometry, ClusterCenter, DistanceMode, steering_matrix
from .numerics import DEFAULT_QUAD, QuadratureSpec, RngStream, cgauss

CHUNK_TRIALS = 256

Provenance = Literal["oracle", "analytical", "ss_equivalent", "ds_equivalent"]


@dataclass(frozen=True)
class ClusterSpec:
    """Cluster centre plus the width parameter of its Von Mises spread."""

    center: ClusterCenter
    concentration_inv: float

    @property
    def spread(self) -> AngularSpread:
        return AngularSpread(self.center.angle, self.concentration_inv)


class CouplingMatrix:
    """Cluster-to-cluster amplitude matrix with unit Frobenius norm."""

    def __init__(self, entries, tol: float = 1e-10):
        a = np.atleast_2d(np.asarray(entries, dtype=complex))
        if a.ndim != 2:
            raise ValueError("coupling matrix must be two-dimensional")
        if abs(np.sum(np.abs(a) ** 2) - 1.0) > tol:
            raise ValueError("coupling power must sum to one")
        self.entries = a

    @classmethod
    def normalized(cls, entries) -> "CouplingMatrix":
        a = np.atleast_2d(np.asarray(entries, dtype=complex))
        return cls(a / np.linalg.norm(a))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def sparsity_tag(self) -> str:
        nz = np.abs(self.entries) > 0
        if nz.sum(axis=0).max() <= 1 and nz.sum(axis=1).max() <= 1:
            return "diagonal"
        return "dense"

    def paths(self) -> list[tuple[int, int, complex]]:
        """Non-zero ``(rx_cluster, tx_cluster, alpha)`` entries in row-major order."""
        rows, cols = np.nonzero(np.abs(self.entries) > 0)
        return [(int(r), int(c), complex(self.entries[r, c])) for r, c in zip(rows, cols)]


@dataclass(frozen=True)
class LinkModel:
    tx_geom: ArrayGeometry
    rx_geom: ArrayGeometry
    tx_clusters: tuple[ClusterSpec, ...]
    rx_clusters: tuple[ClusterSpec, ...]
    coupling: CouplingMatrix
    path_loss_linear: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tx_clusters", tuple(self.tx_clusters))
        object.__setattr__(self, "rx_clusters", tuple(self.rx_clusters))
        if self.coupling.shape != (len(self.rx_clusters), len(self.tx_clusters)):
            raise ValueError("coupling must be L_R x L_T")
        if not self.path_loss_linear > 0:
            raise ValueError("path loss must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rx_geom.n_elements, self.tx_geom.n_elements


@dataclass
class CorrCache:
    """Per-cluster correlation matrices of one link, immutable once built."""

    rx: list[CorrelationMatrix]
    tx: list[CorrelationMatrix]
    _factors: dict = field(default_factory=dict, repr=False)

    def factor(self, side: str, index: int) -> np.ndarray:
        key = (side, index)
        if key not in self._factors:
            mats = self.rx if side == "rx" else self.tx
            self._factors[key] = mats[index].sqrt_factor()
        return self._factors[key]


def link_correlations(link: LinkModel, model: Literal["nearfield", "farfield"] = "nearfield",
                      quad: QuadratureSpec = DEFAULT_QUAD, distance_mode: DistanceMode = "fresnel") -> CorrCache:
    def build(geom, cl: ClusterSpec):
        if model == "farfield":
            return farfield_corr(geom, cl.spread)
        return nearfield_corr(geom, cl.center, cl.spread, quad, distance_mode)

    return CorrCache(rx=[build(link.rx_geom, c) for c in link.rx_clusters],
                     tx=[build(link.tx_geom, c) for c in link.tx_clusters])


@dataclass
class ChannelRealization:
    """A batch of channel matrices, shape ``(trials, N_R, N_T)``."""

    matrix: np.ndarray
    provenance: Provenance
    seed_info: RngStream

    def __post_init__(self):
        if self.matrix.ndim == 2:
            self.matrix = self.matrix[None]
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("channel realization has non-finite entries")

    @property
    def trials(self) -> int:
        return self.matrix.shape[0]


def _chunks(trials: int, chunk: int) -> list[tuple[int, int]]:
    return [(i, min(chunk, trials - i * chunk)) for i in range((trials + chunk - 1) // chunk)]


def _run_chunks(draw: Callable[[RngStream, int], np.ndarray], stream: RngStream, trials: int,
                threads: int = 1, chunk: int = CHUNK_TRIALS) -> list[np.ndarray]:
    jobs = _chunks(trials, chunk)

    def job(spec):
        idx, count = spec
        return draw(stream.child(idx), count)

    if threads <= 1 or len(jobs) == 1:
        return [job(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, jobs))


# ---------------------------------------------------------------------------
# Scatterer-level oracle
# ---------------------------------------------------------------------------

def oracle_channel(link: LinkModel, rx_angles, tx_angles, rx_gains, tx_gains, phases,
                   distance_mode: DistanceMode = "fresnel") -> np.ndarray:
    """One scatterer-level realization from explicit per-scatterer draws.

    ``rx_angles[l]`` and ``rx_gains[l]`` hold the ``Q_R`` angles and complex
    gains of Rx cluster ``l`` (likewise for Tx); ``phases[(lr, lt)]`` is the
    ``Q_R x Q_T`` array of pair phases for every coupled cluster pair.
    """
    n_r, n_t = link.shape
    h = np.zeros((n_r, n_t), dtype=complex)
    for lr, lt, alpha in link.coupling.paths():
        b_r = steering_matrix(link.rx_geom, link.rx_clusters[lr].center.distance, rx_angles[lr], distance_mode)
        b_t = steering_matrix(link.tx_geom, link.tx_clusters[lt].center.distance, tx_angles[lt], distance_mode)
        q_r, q_t = b_r.shape[1], b_t.shape[1]
        inner = rx_gains[lr][:, None] * np.exp(1j * np.asarray(phases[(lr, lt)])) * tx_gains[lt][None, :]
        h += alpha / np.sqrt(q_r * q_t) * (b_r @ inner @ b_t.conj().T)
    return np.sqrt(link.path_loss_linear) * h


def synth_oracle(link: LinkModel, q_per_cluster: int, stream: RngStream, trials: int = 1,
                 distance_mode: DistanceMode = "fresnel", threads: int = 1) -> ChannelRealization:
    """Scatterer-level synthesis with Von Mises angles at the cluster distance."""
    if q_per_cluster < 1:
        raise ValueError("need at least one scatterer per cluster")
    q = q_per_cluster
    paths = link.coupling.paths()

    def draw(sub: RngStream, count: int) -> np.ndarray:
        rng = sub.generator()
        out = np.empty((count,) + link.shape, dtype=complex)
        for t in range(count):
            rx_angles = [rng.vonmises(c.center.angle, c.spread.kappa, q) for c in link.rx_clusters]
            tx_angles = [rng.vonmises(c.center.angle, c.spread.kappa, q) for c in link.tx_clusters]
            rx_gains = [cgauss(rng, q) for _ in link.rx_clusters]
            tx_gains = [cgauss(rng, q) for _ in link.tx_clusters]
            phases = {(lr, lt): rng.uniform(-np.pi, np.pi, (q, q)) for lr, lt, _ in paths}
            out[t] = oracle_channel(link, rx_angles, tx_angles, rx_gains, tx_gains, phases, distance_mode)
        return out

    return ChannelRealization(np.concatenate(_run_chunks(draw, stream, trials, threads)), "oracle", stream)


# ---------------------------------------------------------------------------
# Analytical model and its equivalents
# ---------------------------------------------------------------------------

def _cluster_vectors(factors: Sequence[np.ndarray], rng: np.random.Generator, count: int) -> np.ndarray:
    """Stack ``Theta_l^(1/2) g_l`` column-wise: shape ``(count, N, L)``."""
    cols = []
    for f in factors:
        g = cgauss(rng, (count, f.shape[1]))
        cols.append(g @ f.T)
    return np.stack(cols, axis=-1)


def synth_analytical(link: LinkModel, corr: CorrCache, stream: RngStream, trials: int = 1,
                     threads: int = 1) -> ChannelRealization:
    """``H = sqrt(PL) H_R A H_T^H`` with Karhunen-Loeve cluster vectors."""
    f_r = [corr.factor("rx", i) for i in range(len(link.rx_clusters))]
    f_t = [corr.factor("tx", i) for i in range(len(link.tx_clusters))]
    a = link.coupling.entries
    amp = np.sqrt(link.path_loss_linear)

    def draw(sub: RngStream, count: int) -> np.ndarray:
        rng = sub.generator()
        h_r = _cluster_vectors(f_r, rng, count)
        h_t = _cluster_vectors(f_t, rng, count)
        return amp * (h_r @ a) @ np.conj(np.swapaxes(h_t, 1, 2))

    return ChannelRealization(np.concatenate(_run_chunks(draw, stream, trials, threads)), "analytical", stream)


def dominant_modes(mats: Sequence[CorrelationMatrix], force_rank1: bool = False,
                   max_ratio: float = 1e-2) -> tuple[np.ndarray, np.ndarray]:
    """Largest eigenvalues and their eigenvectors (as columns) of each matrix."""
    chis, vecs = [], []
    for m in mats:
        if not force_rank1 and m.rank1_ratio() > max_ratio:
            raise ValueError(f"correlation matrix is not rank one (eigenvalue ratio {m.rank1_ratio():.3g})")
        chi, u = m.dominant()
        chis.append(chi)
        vecs.append(u)
    return np.array(chis), np.stack(vecs, axis=1)


def synth_ss(link: LinkModel, corr: CorrCache, stream: RngStream, trials: int = 1,
             force_rank1: bool = False, threads: int = 1) -> ChannelRealization:
    """Specular-scattering equivalent ``Pi_R Lambda_R A Lambda_T^H Pi_T^H``."""
    if link.coupling.sparsity_tag != "diagonal":
        raise ValueError("the specular-scattering route needs at most one path per row and column")
    chi_r, pi_r = dominant_modes(corr.rx, force_rank1)
    chi_t, pi_t = dominant_modes(corr.tx, force_rank1)
    a = link.coupling.entries
    amp = np.sqrt(link.path_loss_linear)

    def draw(sub: RngStream, count: int) -> np.ndarray:
        rng = sub.generator()
        lam_r = np.sqrt(chi_r) * cgauss(rng, (count, chi_r.size))
        lam_t = np.sqrt(chi_t) * cgauss(rng, (count, chi_t.size))
        core = lam_r[:, :, None] * a[None] * lam_t.conj()[:, None, :]
        return amp * (pi_r @ core) @ pi_t.conj().T

    return ChannelRealization(np.concatenate(_run_chunks(draw, stream, trials, threads)), "ss_equivalent", stream)


def synth_ds(link: LinkModel, mean_rx: CorrelationMatrix, mean_tx: CorrelationMatrix, stream: RngStream,
             trials: int = 1, threads: int = 1) -> ChannelRealization:
    """Double-scattering equivalent built from cluster-averaged correlations."""
    f_r = mean_rx.sqrt_factor()
    f_t = mean_tx.sqrt_factor()
    a = link.coupling.entries
    l_r, l_t = a.shape
    amp = np.sqrt(link.path_loss_linear)

    def draw(sub: RngStream, count: int) -> np.ndarray:
        rng = sub.generator()
        w_r = cgauss(rng, (count, f_r.shape[1], l_r))
        w_t = cgauss(rng, (count, f_t.shape[1], l_t))
        left = f_r @ (w_r @ a)
        right = f_t @ w_t
        return amp * left @ np.conj(np.swapaxes(right, 1, 2))

    return ChannelRealization(np.concatenate(_run_chunks(draw, stream, trials, threads)), "ds_equivalent", stream)


def ds_mean_correlations(corr: CorrCache) -> tuple[CorrelationMatrix, CorrelationMatrix]:
    return mean_corr(corr.rx), mean_corr(corr.tx)


def realization_batches(route: Provenance, link: LinkModel, corr: CorrCache, stream: RngStream, trials: int,
                        threads: int = 1, batch: int = 2048, **kwargs) -> Iterator[ChannelRealization]:
    """Yield realizations in batches of ``batch`` trials to bound memory.

    Each batch draws from its own child stream of ``stream``.
    """
    if route == "ds_equivalent":
        means = ds_mean_correlations(corr)
    for i, count in _chunks(trials, batch):
        sub = stream.child(i)
        if route == "analytical":
            yield synth_analytical(link, corr, sub, count, threads=threads)
        elif route == "ss_equivalent":
            yield synth_ss(link, corr, sub, count, threads=threads, **kwargs)
        elif route == "ds_equivalent":
            yield synth_ds(link, *means, sub, count, threads=threads)
        else:
            raise ValueError(f"unsupported route {route!r}")


# ---------------------------------------------------------------------------
# Second-order structure
# ---------------------------------------------------------------------------

def eigenmodes(link: LinkModel, corr: CorrCache) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Transmit and receive eigenmodes ``(U_T, Lambda_T, U_R, Lambda_R)``.

    The Tx side diagonalises ``sum |alpha|^2 Tr(Theta_R) Theta_T`` and the Rx
    side ``sum |alpha|^2 Tr(Theta_T) Theta_R``; eigenvalues are descending.
    """
    p = np.abs(link.coupling.entries) ** 2
    tr_r = np.array([m.trace for m in corr.rx])
    tr_t = np.array([m.trace for m in corr.tx])
    w_t = p.T @ tr_r          # weight of each Tx cluster
    w_r = p @ tr_t            # weight of each Rx cluster
    s_t = sum(w * m.matrix for w, m in zip(w_t, corr.tx))
    s_r = sum(w * m.matrix for w, m in zip(w_r, corr.rx))
    lt, ut = np.linalg.eigh(s_t)
    lr, ur = np.linalg.eigh(s_r)
    return ut[:, ::-1], lt[::-1], ur[:, ::-1], lr[::-1]


def kron_joint_corr(theta_r, theta_t) -> np.ndarray:
    """Joint correlation ``E{vec(H) vec(H)^H}`` of one cluster pair.

    ``vec`` stacks rows (index ``n_R * N_T + n_T``). With ``H = h_R h_T^H``
    the Tx factor enters conjugated.
    """
    r = theta_r.matrix if isinstance(theta_r, CorrelationMatrix) else np.asarray(theta_r)
    t = theta_t.matrix if isinstance(theta_t, CorrelationMatrix) else np.asarray(theta_t)
    return np.kron(r, t.conj())
