"""Ground-mover kinematics and rotary-wing propulsion energy.

The wandering ground node follows a first-order Gauss-Markov process on
speed and heading; the aircraft are displacement-controlled with a hard
speed limit and axis-aligned box bounds. Propulsion power uses the
standard rotary-wing decomposition (blade profile + induced + parasite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .array_beam import wrap_phase

# Heading noise scale, radians of heading kick per unit of speed-noise sigma.
HEADING_NOISE_SCALE = math.pi / 8.0


@dataclass(frozen=True)
class GaussMarkovParams:
    """Mean speed (m/s), memory coefficient alpha in [0, 1], speed-noise sigma."""

    mean_speed: float
    alpha: float
    sigma: float

    def __post_init__(self):
        if self.mean_speed < 0.0:
            raise ValueError(f"mean_speed must be >= 0, got {self.mean_speed}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class MoverState:
    """2-D position (m), scalar speed (m/s) >= 0, heading in [-pi, pi)."""

    position: np.ndarray
    speed: float
    heading: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (2,) or not np.all(np.isfinite(pos)):
            raise ValueError(f"position must be a finite 2-vector, got {self.position}")
        if not (math.isfinite(self.speed) and self.speed >= 0.0):
            raise ValueError(f"speed must be >= 0, got {self.speed}")
        if not -math.pi <= self.heading < math.pi:
            raise ValueError(f"heading must lie in [-pi, pi), got {self.heading}")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class EnergyModel:
    """Rotary-wing power-curve constants, all strictly positive.

    Defaults describe a small quad-rotor: blade profile power and induced
    power in hover (W), rotor tip speed (m/s), mean induced velocity in
    hover (m/s), fuselage drag ratio, air density (kg/m^3), rotor solidity,
    and rotor disc area (m^2).
    """

    blade_profile_power: float = 79.86
    induced_power: float = 88.63
    tip_speed: float = 120.0
    hover_induced_velocity: float = 4.03
    drag_ratio: float = 0.6
    air_density: float = 1.225
    rotor_solidity: float = 0.05
    disc_area: float = 0.503

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    @property
    def hover_power(self) -> float:
        """Power draw at zero ground speed (W)."""
        return self.blade_profile_power + self.induced_power


def reflect_into(value: float, lo: float, hi: float) -> float:
    """Mirror a scalar back into [lo, hi] (repeatedly, for large overshoots)."""
    if hi <= lo:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    for _ in range(64):
        if lo <= value <= hi:
            return value
        value = 2.0 * lo - value if value < lo else 2.0 * hi - value
    # Overshoot beyond 64 folds cannot happen at sane speeds; clamp.
    return min(max(value, lo), hi)


def gauss_markov_step(state: MoverState, params: GaussMarkovParams, dt: float,
                      noise, mean_heading: float, bounds=None) -> MoverState:
    """Advance the mover one step of duration dt.

    noise: two independent standard-normal draws (speed kick, heading kick).
    mean_heading: the episode-fixed mean direction the heading relaxes to.
    bounds: optional ((lo_x, lo_y), (hi_x, hi_y)) box; the position is
        reflected back inside. Heading is left to the AR(1) recursion.

    Speed and heading follow x' = a*x + (1-a)*mean + s*sqrt(1-a^2)*n, with
    the heading noise scale shrunk to sigma*pi/8. Speed is clamped at zero.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    n_speed, n_heading = float(noise[0]), float(noise[1])
    a = params.alpha
    kick = math.sqrt(max(0.0, 1.0 - a * a))
    speed = a * state.speed + (1.0 - a) * params.mean_speed + params.sigma * kick * n_speed
    speed = max(0.0, speed)
    heading = (a * state.heading + (1.0 - a) * mean_heading
               + params.sigma * HEADING_NOISE_SCALE * kick * n_heading)
    if not -math.pi <= heading < math.pi:
        heading = float(wrap_phase(heading))
    x = state.position[0] + speed * dt * math.cos(heading)
    y = state.position[1] + speed * dt * math.sin(heading)
    if bounds is not None:
        (lo_x, lo_y), (hi_x, hi_y) = bounds
        x = reflect_into(x, lo_x, hi_x)
        y = reflect_into(y, lo_y, hi_y)
    return MoverState(position=np.array([x, y]), speed=speed, heading=heading)


def move_uav(position, displacement, bounds, v_max: float, dt: float):
    """Apply a commanded displacement under a speed limit and box bounds.

    Returns (new_position, speed_violation, applied_displacement). The
    displacement is rescaled to magnitude v_max*dt when it exceeds the
    limit (speed_violation=True), then the target position is clamped
    componentwise into bounds. The returned displacement is the
    speed-clipped one, before the boundary clamp.
    """
    position = np.asarray(position, dtype=float)
    displacement = np.asarray(displacement, dtype=float)
    if not np.all(np.isfinite(displacement)):
        raise ValueError(f"displacement must be finite, got {displacement}")
    if v_max <= 0.0 or dt <= 0.0:
        raise ValueError(f"v_max and dt must be positive, got {v_max}, {dt}")
    limit = v_max * dt
    norm = float(np.sqrt(np.sum(displacement * displacement)))
    violation = norm > limit
    if violation:
        displacement = displacement * (limit / norm)
    lo, hi = bounds
    new_position = np.minimum(np.maximum(position + displacement, lo), hi)
    return new_position, violation, displacement


def propulsion_power(speed: float, model: EnergyModel) -> float:
    """Rotary-wing power draw (W) at a given ground speed (m/s).

    blade profile: P0 * (1 + 3 v^2 / U_tip^2)
    induced:       Pi * (sqrt(1 + v^4/(4 v0^4)) - v^2/(2 v0^2))^(1/2)
    parasite:      d0 * rho * s * A * v^3 / 2

    The induced term is evaluated as sqrt(1/(sqrt(1+x^2)+x)), x = v^2/(2 v0^2),
    which is the same quantity without the subtractive cancellation.
    """
    if speed < 0.0:
        raise ValueError(f"speed must be >= 0, got {speed}")
    v2 = speed * speed
    blade = model.blade_profile_power * (1.0 + 3.0 * v2 / (model.tip_speed * model.tip_speed))
    x = v2 / (2.0 * model.hover_induced_velocity * model.hover_induced_velocity)
    induced = model.induced_power * math.sqrt(1.0 / (math.sqrt(1.0 + x * x) + x))
    parasite = (0.5 * model.drag_ratio * model.air_density * model.rotor_solidity
                * model.disc_area * v2 * speed)
    return blade + induced + parasite


def step_energy(speeds, model: EnergyModel, dt: float) -> float:
    """Total propulsion energy (J) for one step across all aircraft."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return float(sum(propulsion_power(float(v), model) * dt for v in np.atleast_1d(speeds)))
