"""ULA layout, scatterer-to-element distances and near-field steering vectors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

DistanceMode = Literal["exact", "fresnel"]


def wavelength_from_ghz(carrier_ghz: float) -> float:
    return SPEED_OF_LIGHT / (carrier_ghz * 1e9)


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array centred on the origin."""

    n_elements: int
    spacing: float
    wavelength: float

    def __post_init__(self):
        if self.n_elements < 1:
            raise ValueError("n_elements must be positive")
        if not self.spacing > 0 or not self.wavelength > 0:
            raise ValueError("spacing and wavelength must be positive")

    @classmethod
    def half_wavelength(cls, n_elements: int, wavelength: float) -> "ArrayGeometry":
        return cls(n_elements, wavelength / 2, wavelength)

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def aperture(self) -> float:
        return self.n_elements * self.spacing


@dataclass(frozen=True)
class ClusterCenter:
    distance: float
    angle: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("cluster distance must be positive")
        if not -np.pi / 2 < self.angle < np.pi / 2:
            raise ValueError("cluster angle must lie strictly inside (-pi/2, pi/2)")


@dataclass(frozen=True)
class ScattererParam:
    distance: float
    angle: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("scatterer distance must be positive")


def element_offsets(geom: ArrayGeometry) -> np.ndarray:
    n = np.arange(1, geom.n_elements + 1)
    return (n - (geom.n_elements + 1) / 2) * geom.spacing


def exact_distance(distance, angle, eta):
    """Euclidean distance from the point at polar (distance, angle) to offset ``eta``.

    All arguments broadcast.
    """
    d = np.asarray(distance, dtype=float)
    return np.sqrt(d * d - 2 * eta * d * np.sin(angle) + eta * eta)


def fresnel_distance(distance, angle, eta):
    """Second-order expansion of :func:`exact_distance` in ``eta / distance``."""
    d = np.asarray(distance, dtype=float)
    s = np.sin(angle)
    return d - eta * s + eta * eta * (1 - s * s) / (2 * d)


def element_distance(distance, angle, eta, mode: DistanceMode = "fresnel"):
    if mode == "exact":
        return exact_distance(distance, angle, eta)
    if mode == "fresnel":
        return fresnel_distance(distance, angle, eta)
    raise ValueError(f"unknown distance mode {mode!r}")


def nonstationarity_coeff(distance, angle, eta, mode: DistanceMode = "exact"):
    """Per-element amplitude divisor ``D_n / d`` (proportionality constant one)."""
    return element_distance(distance, angle, eta, mode) / np.asarray(distance, dtype=float)


def steering_matrix(geom: ArrayGeometry, distance: float, angles, mode: DistanceMode = "fresnel") -> np.ndarray:
    """Near-field steering vectors for every angle in ``angles``, one per column.

    Entry ``n`` of a column is ``exp(-j k D_n) / c_n``.
    """
    eta = element_offsets(geom)[:, None]
    theta = np.atleast_1d(np.asarray(angles, dtype=float))[None, :]
    dist = element_distance(distance, theta, eta, mode)
    return np.exp(-1j * geom.wavenumber * dist) * (distance / dist)


def steering_vector(geom: ArrayGeometry, center: ClusterCenter, distance_mode: DistanceMode = "fresnel") -> np.ndarray:
    return steering_matrix(geom, center.distance, center.angle, distance_mode)[:, 0]
