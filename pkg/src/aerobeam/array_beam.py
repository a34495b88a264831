"""Beamforming math for a free-floating antenna array.

Elements are isotropic radiators at arbitrary 3-D positions. Phase
alignment toward a target uses exact per-element distances (spherical
wavefront), so nothing here assumes the far-field plane-wave limit.
Amplitude decay over distance is handled by the link-budget layer, not
by the array factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

SPEED_OF_LIGHT = 2.99792458e8  # m/s


def wavelength_for(frequency_hz: float) -> float:
    """Free-space wavelength in meters for a carrier frequency in Hz."""
    if frequency_hz <= 0.0:
        raise ValueError(f"carrier frequency must be positive, got {frequency_hz}")
    return SPEED_OF_LIGHT / frequency_hz


def wrap_phase(phi):
    """Wrap angles to the canonical interval [-pi, pi)."""
    return np.mod(np.asarray(phi, dtype=float) + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class ElementLayout:
    """Positions of the radiating elements and the carrier wavelength.

    positions: (K, 3) element coordinates in meters, K >= 1.
    wavelength: carrier wavelength in meters.
    """

    positions: np.ndarray
    wavelength: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[0] < 1 or pos.shape[1] != 3:
            raise ValueError(f"positions must have shape (K, 3) with K >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if not (np.isfinite(self.wavelength) and self.wavelength > 0.0):
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")
        object.__setattr__(self, "positions", pos)

    @property
    def n_elements(self) -> int:
        return self.positions.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)


@dataclass(frozen=True)
class BeamConfig:
    """Per-element excitation: amplitude weights in [0, 1] and phases in [-pi, pi)."""

    weights: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        p = np.asarray(self.phases, dtype=float)
        if w.ndim != 1 or p.shape != w.shape:
            raise ValueError(f"weights and phases must be matching 1-D arrays, got {w.shape} and {p.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(p))):
            raise ValueError("weights and phases must be finite")
        if np.any(w < 0.0) or np.any(w > 1.0):
            raise ValueError("weights must lie in [0, 1]")
        if np.any(p < -np.pi) or np.any(p >= np.pi):
            raise ValueError("phases must lie in [-pi, pi)")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "phases", p)


def element_distances(layout: ElementLayout, point) -> np.ndarray:
    """Euclidean distance from every element to a 3-D point, shape (K,)."""
    point = np.asarray(point, dtype=float)
    diff = layout.positions - point
    return np.sqrt(np.sum(diff * diff, axis=1))


def steering_phases(layout: ElementLayout, target) -> np.ndarray:
    """Conjugate-phase excitation aligning all element signals at `target`.

    Each element is advanced by its own propagation phase 2*pi*d_k/lambda so
    the K signals arrive at the target in phase. Returned phases are wrapped
    to [-pi, pi).
    """
    d = element_distances(layout, target)
    if np.any(d <= 0.0):
        raise GeometryError("target coincides with an array element")
    return wrap_phase(2.0 * np.pi / layout.wavelength * d)


def array_factor(layout: ElementLayout, beam: BeamConfig, rx_point) -> complex:
    """Complex array factor at a receiver point: sum_k w_k exp(j(phi_k - 2 pi d_k / lambda)).

    Pure phasor sum; amplitude path loss is applied elsewhere.
    """
    if beam.weights.shape[0] != layout.n_elements:
        raise ValueError(
            f"beam has {beam.weights.shape[0]} entries for {layout.n_elements} elements"
        )
    d = element_distances(layout, rx_point)
    if np.any(d <= 0.0):
        raise GeometryError("receiver point coincides with an array element")
    phase = beam.phases - 2.0 * np.pi / layout.wavelength * d
    return complex(np.sum(beam.weights * np.exp(1j * phase)))


def beam_pattern(layout: ElementLayout, beam: BeamConfig, azimuths, elevations,
                 radius: float) -> np.ndarray:
    """|AF|^2 sampled on a spherical grid centered on the array centroid.

    azimuths: angles in the xy-plane from +x, radians.
    elevations: angles from the xy-plane toward +z, radians.
    radius: evaluation sphere radius; must exceed the largest
        element-to-centroid distance.

    Returns an (n_az, n_el) array in row-major grid order: row i is
    azimuths[i], column j is elevations[j].
    """
    if beam.weights.shape[0] != layout.n_elements:
        raise ValueError(
            f"beam has {beam.weights.shape[0]} entries for {layout.n_elements} elements"
        )
    az = np.atleast_1d(np.asarray(azimuths, dtype=float))
    el = np.atleast_1d(np.asarray(elevations, dtype=float))
    center = layout.centroid
    spread = element_distances(layout, center)
    if radius <= float(np.max(spread)):
        raise GeometryError(
            f"evaluation radius {radius} must exceed the array spread {np.max(spread)}"
        )

    # Grid points: rows sweep azimuth, columns sweep elevation.
    az_g, el_g = np.meshgrid(az, el, indexing="ij")
    dirs = np.stack(
        [np.cos(el_g) * np.cos(az_g), np.cos(el_g) * np.sin(az_g), np.sin(el_g)],
        axis=-1,
    )
    points = center + radius * dirs  # (n_az, n_el, 3)

    diff = points[None, :, :, :] - layout.positions[:, None, None, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))  # (K, n_az, n_el)
    phase = beam.phases[:, None, None] - 2.0 * np.pi / layout.wavelength * dist
    af = np.sum(beam.weights[:, None, None] * np.exp(1j * phase), axis=0)
    return np.abs(af) ** 2
