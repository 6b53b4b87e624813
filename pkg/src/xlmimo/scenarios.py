"""Practical-system comparisons and the desk-scale analysis links.

The system layer maps a carrier, array sizes and bandwidth to a random
multi-cluster link (UMi path loss, frequency-dependent cluster count, five
rays per cluster) and collects capacity and receive-SNR distributions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .channel import ClusterSpec, CouplingMatrix, LinkModel, link_correlations, synth_analytical
from .geometry import ArrayGeometry, ClusterCenter, DistanceMode, wavelength_from_ghz
from .metrics import gram_spectrum
from .numerics import DEFAULT_QUAD, QuadratureSpec, RngStream, cgauss

CouplingMode = Literal["diagonal", "dense"]

# Ray angles stay clear of endfire, where the array geometry degenerates.
_ANGLE_LIMIT = np.pi / 2 - 1e-3


def umi_path_loss_db(d_tr: float, f_c: float) -> float:
    """Urban-micro path loss in dB for a distance in metres and a carrier in GHz."""
    if not (d_tr > 0 and f_c > 0):
        raise ValueError("distance and carrier must be positive")
    return float(32.4 + 21 * np.log10(d_tr) + 20 * np.log10(f_c))


def cluster_count_value(f_c: float) -> float:
    """Mean cluster count at carrier ``f_c`` GHz (unrounded)."""
    if f_c < 0:
        raise ValueError("carrier must be non-negative")
    return float(3.41 * np.exp(-0.17 * f_c) + 1.86)


def cluster_count(f_c: float) -> int:
    """Cluster count used for synthesis: nearest integer, at least one."""
    return max(1, int(np.floor(cluster_count_value(f_c) + 0.5)))


@dataclass(frozen=True)
class SystemSetup:
    """One practical configuration.

    Large arrays can be longer than the cluster distance, where the
    second-order distance expansion breaks down; exact element distances are
    the default here.
    """

    name: str
    carrier_ghz: float
    n_tx: int
    n_rx: int
    bandwidth_mhz: float
    coupling_mode: CouplingMode = "diagonal"
    tx_rx_distance_m: float = 20.0
    cluster_distance_m: tuple[float, float] = (10.0, 15.0)
    cluster_angle_rad: tuple[float, float] = (-np.pi / 3, np.pi / 3)
    rays_per_cluster: int = 5
    ray_concentration_inv: float = 0.01
    distance_mode: DistanceMode = "exact"

    def __post_init__(self):
        if not 1.0 <= self.carrier_ghz <= 100.0:
            raise ValueError("carrier must lie in [1, 100] GHz")
        if self.n_tx < 1 or self.n_rx < 1 or self.rays_per_cluster < 1:
            raise ValueError("array sizes and ray count must be positive")
        if not (self.bandwidth_mhz > 0 and self.tx_rx_distance_m > 0 and self.ray_concentration_inv > 0):
            raise ValueError("bandwidth, distance and angular spread must be positive")
        lo, hi = self.cluster_distance_m
        if not 0 < lo <= hi:
            raise ValueError("cluster distance range must be positive and ordered")
        a, b = self.cluster_angle_rad
        if not -np.pi / 2 < a <= b < np.pi / 2:
            raise ValueError("cluster angle range must lie inside (-pi/2, pi/2)")
        if self.coupling_mode not in ("diagonal", "dense"):
            raise ValueError("coupling_mode must be 'diagonal' or 'dense'")
        if self.distance_mode not in ("exact", "fresnel"):
            raise ValueError("distance_mode must be 'exact' or 'fresnel'")

    @property
    def wavelength(self) -> float:
        return wavelength_from_ghz(self.carrier_ghz)

    @property
    def path_loss_db(self) -> float:
        return umi_path_loss_db(self.tx_rx_distance_m, self.carrier_ghz)


def table2_setups(setup2_coupling: CouplingMode = "dense") -> list[SystemSetup]:
    """The sub-6 GHz, mid-band (three Tx sizes) and mmWave configurations."""
    out = [SystemSetup("setup1", 3.5, 32, 4, 100.0, "diagonal")]
    out += [SystemSetup(f"setup2_nt{n}", 7.0, n, 8, 500.0, setup2_coupling) for n in (128, 256, 1024)]
    out.append(SystemSetup("setup3", 28.0, 512, 16, 1600.0, "dense"))
    return out


def _side_clusters(setup: SystemSetup, rng: np.random.Generator, clusters: int) -> list[ClusterSpec]:
    d = rng.uniform(*setup.cluster_distance_m, clusters)
    theta = rng.uniform(*setup.cluster_angle_rad, clusters)
    kappa = 1.0 / setup.ray_concentration_inv
    out = []
    for dist, ang in zip(d, theta):
        rays = np.clip(rng.vonmises(ang, kappa, setup.rays_per_cluster), -_ANGLE_LIMIT, _ANGLE_LIMIT)
        out += [ClusterSpec(ClusterCenter(float(dist), float(r)), setup.ray_concentration_inv) for r in rays]
    return out


def dense_coupling(rng: np.random.Generator, l_r: int, l_t: int | None = None) -> CouplingMatrix:
    """``A_w A_w^H`` from a complex Gaussian ``A_w``, scaled to unit Frobenius norm."""
    l_t = l_r if l_t is None else l_t
    if l_r != l_t:
        raise ValueError("the Gram construction needs a square coupling matrix")
    a_w = cgauss(rng, (l_r, l_r))
    return CouplingMatrix.normalized(a_w @ a_w.conj().T)


def build_link(setup: SystemSetup, stream: RngStream) -> LinkModel:
    """Random cluster layout and coupling for one drop of ``setup``.

    All geometry is drawn before any array-size dependent work, so setups
    that differ only in array size see the same clusters for one stream.
    """
    rng = stream.generator()
    n_cl = cluster_count(setup.carrier_ghz)
    rays = setup.rays_per_cluster
    rx = _side_clusters(setup, rng, n_cl)
    tx = _side_clusters(setup, rng, n_cl)
    if setup.coupling_mode == "diagonal":
        gains = np.repeat(cgauss(rng, n_cl), rays) / np.sqrt(rays)
        phases = np.exp(1j * rng.uniform(-np.pi, np.pi, n_cl * rays))
        coupling = CouplingMatrix.normalized(np.diag(gains * phases))
    else:
        coupling = dense_coupling(rng, n_cl * rays)
    lam = setup.wavelength
    return LinkModel(ArrayGeometry.half_wavelength(setup.n_tx, lam), ArrayGeometry.half_wavelength(setup.n_rx, lam),
                     tx, rx, coupling, 10 ** (-setup.path_loss_db / 10))


@dataclass
class SetupOutcome:
    capacity_bps: np.ndarray
    receive_snr_db: np.ndarray


def ecdf(samples) -> tuple[np.ndarray, np.ndarray]:
    """Sorted sample values and their empirical CDF levels ``i / n``."""
    x = np.sort(np.asarray(samples, dtype=float))
    return x, np.arange(1, x.size + 1) / x.size


def ecdf_at(samples, grid) -> np.ndarray:
    x = np.sort(np.asarray(samples, dtype=float))
    return np.searchsorted(x, np.asarray(grid, dtype=float), side="right") / x.size


@dataclass
class ComparisonResult:
    outcomes: dict[str, SetupOutcome]
    trials: int
    seed: int
    drops: int
    setups: list[SystemSetup] = field(default_factory=list)

    def capacity_cdf(self, name: str):
        return ecdf(self.outcomes[name].capacity_bps)

    def snr_cdf(self, name: str):
        return ecdf(self.outcomes[name].receive_snr_db)


def _split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (i < extra) for i in range(parts)]


def run_comparison(setups: Sequence[SystemSetup], trials: int, transmit_power_db: float, stream: RngStream,
                   drops: int = 20, threads: int = 1, quad: QuadratureSpec = DEFAULT_QUAD) -> ComparisonResult:
    """Capacity and MRC receive-SNR samples for every setup.

    Trials are spread over ``drops`` independent cluster layouts; within a
    drop the small-scale gains are redrawn per trial. Drop ``k`` of every
    setup uses the same child stream, so setups sharing a carrier share
    their layouts. Noise variance is one; the transmit power is split
    equally over the Tx antennas for capacity.
    """
    if trials < 100:
        raise ValueError("at least 100 trials are required")
    if not 1 <= drops <= trials:
        raise ValueError("drops must lie in [1, trials]")
    p_tx = 10 ** (transmit_power_db / 10)
    outcomes = {}
    for setup in setups:
        cap, snr = [], []
        for k, count in enumerate(_split(trials, drops)):
            link = build_link(setup, stream.child(2 * k))
            corr = link_correlations(link, quad=quad, distance_mode=setup.distance_mode)
            h = synth_analytical(link, corr, stream.child(2 * k + 1), count, threads=threads)
            vals = gram_spectrum(h).values
            cap.append(setup.bandwidth_mhz * 1e6 * np.sum(np.log2(1 + p_tx / setup.n_tx * vals), axis=1))
            snr.append(10 * np.log10(p_tx * vals[:, 0]))
        outcomes[setup.name] = SetupOutcome(np.concatenate(cap), np.concatenate(snr))
    return ComparisonResult(outcomes, trials, stream.master_seed, drops, list(setups))


# ---------------------------------------------------------------------------
# Desk-scale analysis links
# ---------------------------------------------------------------------------

def _analysis_clusters(rng, count: int, d_range: tuple[float, float], lam: float, rho: float,
                       angles: np.ndarray | None) -> list[ClusterSpec]:
    d = rng.uniform(d_range[0] * lam, d_range[1] * lam, count)
    theta = rng.uniform(-np.pi / 3, np.pi / 3, count) if angles is None else np.asarray(angles, float)
    return [ClusterSpec(ClusterCenter(float(a), float(b)), rho) for a, b in zip(d, theta)]


RX_RANGE = (200.0, 400.0)
TX_RANGE = (50.0, 100.0)


def ss_analysis_link(n_rx: int, n_tx: int, paths: int, stream: RngStream, carrier_ghz: float = 7.0,
                     concentration_inv: float = 1e-8, rx_angles=None, tx_angles=None) -> LinkModel:
    """Rank-one clusters with diagonal coupling of equal power and random phases.

    Distances are uniform in [200, 400] wavelengths at the Rx and [50, 100]
    at the Tx; angles are uniform in [-pi/3, pi/3] unless given.
    """
    rng = stream.generator()
    lam = wavelength_from_ghz(carrier_ghz)
    rx = _analysis_clusters(rng, paths, RX_RANGE, lam, concentration_inv, rx_angles)
    tx = _analysis_clusters(rng, paths, TX_RANGE, lam, concentration_inv, tx_angles)
    a = np.diag(np.exp(1j * rng.uniform(-np.pi, np.pi, paths)) / np.sqrt(paths))
    return LinkModel(ArrayGeometry.half_wavelength(n_tx, lam), ArrayGeometry.half_wavelength(n_rx, lam),
                     tx, rx, CouplingMatrix.normalized(a))


def ds_analysis_link(n_rx: int, n_tx: int, clusters: int, stream: RngStream, carrier_ghz: float = 7.0,
                     concentration_inv: float = 0.01, coupling: CouplingMode = "dense") -> LinkModel:
    """Spread clusters, same layout ranges as the rank-one link.

    Coupling is ``A_w A_w^H`` normalised (dense) or equal-power random-phase
    paths (diagonal).
    """
    rng = stream.generator()
    lam = wavelength_from_ghz(carrier_ghz)
    rx = _analysis_clusters(rng, clusters, RX_RANGE, lam, concentration_inv, None)
    tx = _analysis_clusters(rng, clusters, TX_RANGE, lam, concentration_inv, None)
    if coupling == "dense":
        a = dense_coupling(rng, clusters)
    else:
        a = CouplingMatrix.normalized(np.diag(np.exp(1j * rng.uniform(-np.pi, np.pi, clusters))))
    return LinkModel(ArrayGeometry.half_wavelength(n_tx, lam), ArrayGeometry.half_wavelength(n_rx, lam),
                     tx, rx, a)
