"""Satellite/receiver geometry and the victim-side antenna feed combiner.

Satellites default to static ECEF positions per scenario epoch (a frozen
sky); per-satellite Doppler comes from explicit velocities or a circular
orbit, never from ephemeris modeling.  Atmospheric delays are zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import signals
from .seeds import derive_seed
from .signals import (
    CHIP_RATE_HZ,
    CODE_LENGTH,
    IqBuffer,
    SatelliteSignalSpec,
    SignalDomainError,
    add_awgn,
    nav_bit_stream,
    synthesize_baseband,
)

SPEED_OF_LIGHT = 299792458.0
VISIBILITY_ELEVATION_DEG = 5.0


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class EcefPosition:
    x: float
    y: float
    z: float

    def __post_init__(self):
        v = (self.x, self.y, self.z)
        if not all(math.isfinite(c) for c in v):
            raise GeometryError("position components must be finite")
        if math.sqrt(sum(c * c for c in v)) >= 1e8:
            raise GeometryError("position magnitude must be below 1e8 m")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "EcefPosition":
        a = np.asarray(a, dtype=np.float64)
        return EcefPosition(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class CircularOrbit:
    """Circular orbit in a plane inclined about the +x axis."""

    radius_m: float
    inclination_rad: float
    phase_rad: float
    angular_rate_rad_s: float

    def position_at(self, t: float) -> np.ndarray:
        th = self.phase_rad + self.angular_rate_rad_s * t
        ci, si = math.cos(self.inclination_rad), math.sin(self.inclination_rad)
        return self.radius_m * np.array(
            [math.cos(th), math.sin(th) * ci, math.sin(th) * si]
        )

    def velocity_at(self, t: float) -> np.ndarray:
        th = self.phase_rad + self.angular_rate_rad_s * t
        ci, si = math.cos(self.inclination_rad), math.sin(self.inclination_rad)
        return self.radius_m * self.angular_rate_rad_s * np.array(
            [-math.sin(th), math.cos(th) * ci, math.cos(th) * si]
        )


@dataclass
class SatelliteOrbitSpec:
    """Static position (with optional velocity) or a circular orbit."""

    prn_id: int
    position: EcefPosition | None = None
    velocity_mps: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orbit: CircularOrbit | None = None
    cn0_dbhz: float = 45.0  # received power relative to the noise density
    has_l2: bool = True

    def __post_init__(self):
        if (self.position is None) == (self.orbit is None):
            raise GeometryError("specify exactly one of position or orbit")
        r = (
            np.linalg.norm(self.position.as_array())
            if self.position is not None
            else self.orbit.radius_m
        )
        if r <= 2e7:
            raise GeometryError("satellite must sit above LEO (|position| > 2e7 m)")

    def position_at(self, t: float) -> np.ndarray:
        if self.orbit is not None:
            return self.orbit.position_at(t)
        return self.position.as_array()

    def velocity_at(self, t: float) -> np.ndarray:
        if self.orbit is not None:
            return self.orbit.velocity_at(t)
        return np.asarray(self.velocity_mps, dtype=np.float64)


@dataclass
class Scene:
    """The frozen sky plus the two ground locations of the relay.

    ``noise_floor`` is a noise power density (linear power per Hz); a render
    at sample rate fs draws complex noise of variance noise_floor * fs, so
    carrier-to-noise-density ratios are independent of the render rate.
    Satellite cn0_dbhz is measured against ``amplitude_reference`` (normally
    equal to noise_floor; it stays nonzero when the noise is switched off so
    noiseless renders keep their signal levels).
    """

    satellites: list[SatelliteOrbitSpec]
    sampler_location: EcefPosition
    victim_location: EcefPosition
    noise_floor: float = 1e-6
    amplitude_reference: float = 1e-6

    def __post_init__(self):
        if self.noise_floor < 0:
            raise GeometryError("noise_floor must be nonnegative")
        if self.amplitude_reference <= 0:
            raise GeometryError("amplitude_reference must be positive")
        ids = [s.prn_id for s in self.satellites]
        if len(set(ids)) != len(ids):
            raise GeometryError("duplicate prn_id in scene")

    def prn_ids(self) -> list[int]:
        return [s.prn_id for s in self.satellites]

    def satellite(self, prn_id: int) -> SatelliteOrbitSpec:
        for s in self.satellites:
            if s.prn_id == prn_id:
                return s
        raise GeometryError(f"no satellite with prn {prn_id}")


@dataclass
class AntennaFeedPlan:
    """Power-combiner weights for the three feeds entering one antenna port."""

    gain_legitimate: float = 1.0
    gain_replay: float = 1.0
    gain_jam: float = 1.0
    band: str = "L1"

    def __post_init__(self):
        if min(self.gain_legitimate, self.gain_replay, self.gain_jam) < 0:
            raise GeometryError("combiner gains must be nonnegative")
        if self.band not in ("L1", "L2"):
            raise GeometryError("band must be L1 or L2")


def geometric_range(sat_pos: EcefPosition, rx_pos: EcefPosition) -> float:
    """Euclidean distance in meters."""
    return float(np.linalg.norm(sat_pos.as_array() - rx_pos.as_array()))


def true_pseudorange(
    range_m: float,
    rx_clock_bias_s: float = 0.0,
    sat_clock_bias_s: float = 0.0,
    extra_path_delay_s: float = 0.0,
) -> float:
    """range + c * (rx bias - sat bias + extra path delay)."""
    return range_m + SPEED_OF_LIGHT * (
        rx_clock_bias_s - sat_clock_bias_s + extra_path_delay_s
    )


def doppler_of(
    sat: SatelliteOrbitSpec,
    rx_pos: EcefPosition,
    carrier_hz: float = signals.L1_CARRIER_HZ,
    t: float = 0.0,
) -> float:
    """Carrier Doppler for a static receiver; approach raises frequency.

    f_d = -(range rate) / c * carrier, with range rate the time derivative
    of |sat - rx|.
    """
    los = rx_pos.as_array() - sat.position_at(t)
    dist = np.linalg.norm(los)
    if dist == 0:
        raise GeometryError("satellite and receiver coincide")
    range_rate = -float(np.dot(sat.velocity_at(t), los / dist))
    return -range_rate / SPEED_OF_LIGHT * carrier_hz


def elevation_deg(sat_pos: np.ndarray, rx_pos: EcefPosition) -> float:
    """Elevation above the local horizon, spherical-Earth approximation."""
    rx = rx_pos.as_array()
    up = rx / np.linalg.norm(rx)
    los = sat_pos - rx
    return math.degrees(math.asin(float(np.dot(los / np.linalg.norm(los), up))))


def visible_satellites(scene: Scene, location: EcefPosition, t: float = 0.0) -> list[SatelliteOrbitSpec]:
    return [
        s
        for s in scene.satellites
        if elevation_deg(s.position_at(t), location) > VISIBILITY_ELEVATION_DEG
    ]


def signal_spec_for(
    sat: SatelliteOrbitSpec,
    location: EcefPosition,
    scene: Scene,
    seed: int,
    t: float = 0.0,
    horizon_s: float = 120.0,
) -> SatelliteSignalSpec:
    """Per-satellite baseband parameters as seen at a location.

    The code phase offset is the propagation delay expressed in chips,
    (rho / c) * chip_rate mod 1023; carrier phase is the matching carrier
    delay.  Amplitude follows from cn0_dbhz against the scene noise density.
    """
    rho = true_pseudorange(geometric_range(EcefPosition.from_array(sat.position_at(t)), location))
    delay_s = rho / SPEED_OF_LIGHT
    code_phase = (delay_s * CHIP_RATE_HZ) % CODE_LENGTH
    amplitude = math.sqrt(scene.amplitude_reference * 10.0 ** (sat.cn0_dbhz / 10.0))
    carrier_phase = (-2.0 * np.pi * signals.L1_CARRIER_HZ * delay_s) % (2.0 * np.pi)
    n_bits = int(np.ceil(horizon_s * signals.NAV_BIT_RATE_HZ)) + 4
    return SatelliteSignalSpec(
        prn_id=sat.prn_id,
        amplitude=amplitude,
        code_phase_offset=code_phase,
        doppler_hz=doppler_of(sat, location, t=t),
        carrier_phase=carrier_phase,
        nav_bits=nav_bit_stream(seed, sat.prn_id, n_bits),
    )


def render_antenna_feed(
    scene: Scene,
    location: EcefPosition,
    plan: AntennaFeedPlan,
    window: tuple[float, float],
    sample_rate: float,
    replay_feed: IqBuffer | None = None,
    jam_feed: IqBuffer | None = None,
    seed: int = 0,
    horizon_s: float = 120.0,
) -> IqBuffer:
    """Composite antenna feed: legitimate sky + replay + jamming + noise.

    The optional feeds must cover the window at the render sample rate; the
    combiner is a weighted sample-wise sum (the power-combiner model).
    """
    start, duration = window
    if duration <= 0:
        raise GeometryError("window duration must be positive")
    for name, feat in (("replay_feed", replay_feed), ("jam_feed", jam_feed)):
        if feat is None:
            continue
        if abs(feat.sample_rate - sample_rate) > 1e-6:
            raise GeometryError(f"{name} sample rate does not match render rate")
        if feat.start_time > start + 1e-12 or feat.end_time < start + duration - 1e-12:
            raise GeometryError(f"{name} does not cover the render window")

    sats = visible_satellites(scene, location)
    if plan.band == "L2":
        sats = [s for s in sats if s.has_l2]
    specs = [
        signal_spec_for(s, location, scene, seed=seed, horizon_s=horizon_s) for s in sats
    ]
    out = synthesize_baseband(specs, sample_rate, duration, start_time=start)
    if plan.gain_legitimate != 1.0:
        out.samples *= plan.gain_legitimate

    n = len(out)
    for gain, feat in ((plan.gain_replay, replay_feed), (plan.gain_jam, jam_feed)):
        if feat is None or gain == 0.0:
            continue
        i0 = int(round((start - feat.start_time) * sample_rate))
        out.samples += gain * feat.samples[i0 : i0 + n]

    noise_var = scene.noise_floor * sample_rate
    if noise_var > 0:
        out = add_awgn(out, noise_var, derive_seed(seed, f"feednoise/{plan.band}/{start:.6f}"))
    return out
