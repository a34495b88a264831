"""Free-space link budget and wiretap secrecy rate.

Line-of-sight only: received power follows the Friis law applied to the
coherent array gain, rates are Shannon capacities, and the secrecy rate
is the clipped difference between the legitimate and eavesdropper rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import GeometryError


@dataclass(frozen=True)
class ChannelParams:
    """Transmit power per element (W), receiver noise power (W), wavelength (m)."""

    element_tx_power: float
    noise_power: float
    wavelength: float

    def __post_init__(self):
        for name in ("element_tx_power", "noise_power", "wavelength"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class LinkBudget:
    """One receiver's view of the transmission."""

    af_magnitude: float
    distance: float
    rx_power: float
    snr: float
    rate: float


def received_power(params: ChannelParams, af_magnitude: float, distance: float) -> float:
    """Friis received power: P_t * |AF|^2 * (lambda / (4 pi d))^2."""
    if distance <= 0.0:
        raise GeometryError(f"receiver distance must be positive, got {distance}")
    if af_magnitude < 0.0:
        raise ValueError(f"array factor magnitude must be non-negative, got {af_magnitude}")
    spreading = params.wavelength / (4.0 * math.pi * distance)
    return params.element_tx_power * af_magnitude * af_magnitude * spreading * spreading


def achievable_rate(snr: float) -> float:
    """Shannon rate log2(1 + snr) in bit/s/Hz."""
    if snr < 0.0:
        raise ValueError(f"snr must be non-negative, got {snr}")
    return math.log2(1.0 + snr)


def secrecy_rate(rate_main: float, rate_tap: float) -> float:
    """Wiretap secrecy rate [rate_main - rate_tap]^+ in bit/s/Hz."""
    return max(0.0, rate_main - rate_tap)


def link_budget(params: ChannelParams, af_magnitude: float, distance: float) -> LinkBudget:
    """Assemble the full received-power / SNR / rate chain for one receiver."""
    p_rx = received_power(params, af_magnitude, distance)
    snr = p_rx / params.noise_power
    return LinkBudget(
        af_magnitude=af_magnitude,
        distance=distance,
        rx_power=p_rx,
        snr=snr,
        rate=achievable_rate(snr),
    )
