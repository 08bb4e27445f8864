"""GPS L1 C/A-style baseband signal synthesis and sample quantization.

Everything is complex baseband: the L1 carrier is never generated, Doppler
and carrier phase appear as a complex rotation.  Code phase follows the
delay convention used throughout this package: a signal with
``code_phase_offset`` of x chips is the zero-offset signal delayed by
x / 1.023e6 seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CHIP_RATE_HZ = 1.023e6
CODE_LENGTH = 1023
CODE_PERIOD_S = CODE_LENGTH / CHIP_RATE_HZ  # 1 ms
NAV_BIT_RATE_HZ = 50.0
CODE_PERIODS_PER_BIT = 20
CHIPS_PER_NAV_BIT = CODE_LENGTH * CODE_PERIODS_PER_BIT
L1_CARRIER_HZ = 1.57542e9
SUPPORTED_BITS = (4, 8, 12, 16)

# G2 output tap pairs per PRN (1-indexed register stages).
_G2_TAPS = {
    1: (2, 6), 2: (3, 7), 3: (4, 8), 4: (5, 9), 5: (1, 9), 6: (2, 10),
    7: (1, 8), 8: (2, 9), 9: (3, 10), 10: (2, 3), 11: (3, 4), 12: (5, 6),
    13: (6, 7), 14: (7, 8), 15: (8, 9), 16: (9, 10), 17: (1, 4), 18: (2, 5),
    19: (3, 6), 20: (4, 7), 21: (5, 8), 22: (6, 9), 23: (1, 3), 24: (4, 6),
    25: (5, 7), 26: (6, 8), 27: (7, 9), 28: (8, 10), 29: (1, 6), 30: (2, 7),
    31: (3, 8), 32: (4, 9),
}


class SignalDomainError(ValueError):
    """Raised when an operation is called outside its domain."""


@dataclass(frozen=True)
class PrnCode:
    """A 1023-chip spreading code, chips in {+1, -1}."""

    prn_id: int
    chips: np.ndarray

    def __post_init__(self):
        chips = np.asarray(self.chips, dtype=np.int8)
        if chips.shape != (CODE_LENGTH,):
            raise SignalDomainError(f"code must have {CODE_LENGTH} chips")
        if not np.all(np.abs(chips) == 1):
            raise SignalDomainError("chips must be +1 or -1")
        object.__setattr__(self, "chips", chips)


@dataclass
class IqBuffer:
    """A timestamped block of complex baseband samples."""

    samples: np.ndarray
    sample_rate: float
    start_time: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.sample_rate <= 0:
            raise SignalDomainError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2)) if len(self) else 0.0


@dataclass
class SatelliteSignalSpec:
    """One satellite's contribution to a baseband mixture."""

    prn_id: int
    amplitude: float
    code_phase_offset: float = 0.0  # chips, [0, 1023)
    doppler_hz: float = 0.0
    carrier_phase: float = 0.0  # radians at scenario time 0
    nav_bits: np.ndarray | None = None  # +/-1 at 50 b/s; None = constant +1

    def __post_init__(self):
        if self.amplitude < 0:
            raise SignalDomainError("amplitude must be nonnegative")
        if not 0 <= self.code_phase_offset < CODE_LENGTH:
            raise SignalDomainError("code_phase_offset must lie within one code period")
        if self.nav_bits is not None:
            self.nav_bits = np.asarray(self.nav_bits, dtype=np.int8)


@dataclass
class QuantizedBuffer:
    """Interleaved I/Q integer words at a fixed bit depth."""

    bits: int
    words: np.ndarray  # int32, interleaved I0, Q0, I1, Q1, ...
    sample_rate: float
    start_time: float = 0.0
    saturated_words: int = 0

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise SignalDomainError(f"bits must be one of {SUPPORTED_BITS}")
        self.words = np.asarray(self.words, dtype=np.int32)
        if len(self.words) % 2:
            raise SignalDomainError("words must come in I/Q pairs")
        lo, hi = -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        if len(self.words) and (self.words.min() < lo or self.words.max() > hi):
            raise SignalDomainError(f"words outside signed {self.bits}-bit range")

    @property
    def sample_count(self) -> int:
        return len(self.words) // 2

    def slice_samples(self, start: int, count: int) -> "QuantizedBuffer":
        return QuantizedBuffer(
            bits=self.bits,
            words=self.words[2 * start : 2 * (start + count)],
            sample_rate=self.sample_rate,
            start_time=self.start_time + start / self.sample_rate,
        )


_code_cache: dict[int, PrnCode] = {}


def generate_ca_code(prn_id: int) -> PrnCode:
    """Generate the C/A Gold code for a PRN via the two 10-stage registers.

    Binary 0 maps to chip +1 and binary 1 to chip -1.
    """
    if not isinstance(prn_id, (int, np.integer)) or not 1 <= prn_id <= 32:
        raise SignalDomainError(f"prn_id must be in 1..32, got {prn_id!r}")
    prn_id = int(prn_id)
    if prn_id in _code_cache:
        return _code_cache[prn_id]

    t1, t2 = _G2_TAPS[prn_id]
    g1 = [1] * 10
    g2 = [1] * 10
    bits = np.empty(CODE_LENGTH, dtype=np.int8)
    for i in range(CODE_LENGTH):
        bits[i] = g1[9] ^ g2[t1 - 1] ^ g2[t2 - 1]
        fb1 = g1[2] ^ g1[9]
        fb2 = g2[1] ^ g2[2] ^ g2[5] ^ g2[7] ^ g2[8] ^ g2[9]
        g1 = [fb1] + g1[:9]
        g2 = [fb2] + g2[:9]

    code = PrnCode(prn_id=prn_id, chips=(1 - 2 * bits).astype(np.int8))
    _code_cache[prn_id] = code
    return code


def synthesize_baseband(
    specs: list[SatelliteSignalSpec],
    sample_rate: float,
    duration: float,
    start_time: float = 0.0,
) -> IqBuffer:
    """Sum of spread, nav-modulated, Doppler-rotated satellite signals.

    Noiseless and additive: the output for a union of specs equals the
    sample-wise sum of the individual outputs.  Time is the scenario clock,
    so consecutive windows concatenate into one continuous signal.
    """
    if sample_rate < CHIP_RATE_HZ:
        raise SignalDomainError("sample_rate must be at least one sample per chip")
    if duration <= 0:
        raise SignalDomainError("duration must be positive")

    n = int(round(duration * sample_rate))
    out = np.zeros(n, dtype=np.complex128)
    t = start_time + np.arange(n) / sample_rate
    for spec in specs:
        code = generate_ca_code(spec.prn_id).chips
        # a delay of x chips retards the code: chip index = t*chip_rate - x,
        # so time-shifting the waveform composes with the offset correctly
        chips_elapsed = t * CHIP_RATE_HZ - spec.code_phase_offset
        chip_idx = np.floor(chips_elapsed).astype(np.int64) % CODE_LENGTH
        signal = code[chip_idx].astype(np.float64)
        if spec.nav_bits is not None and len(spec.nav_bits):
            _apply_nav_bits(signal, chips_elapsed, spec.nav_bits)
        if spec.doppler_hz == 0.0:
            carrier = np.exp(1j * spec.carrier_phase)  # scalar phasor
        else:
            carrier = np.exp(1j * (2.0 * np.pi * spec.doppler_hz * t + spec.carrier_phase))
        out += (spec.amplitude * carrier) * signal
    return IqBuffer(samples=out, sample_rate=sample_rate, start_time=start_time)


def _apply_nav_bits(signal: np.ndarray, chips_elapsed: np.ndarray, nav_bits: np.ndarray):
    """Multiply the 50 b/s bit overlay in place.

    Bit edges land every 20 code periods of the (delayed) signal timeline;
    there are only a handful per render window, so the overlay is applied
    per stretch instead of gathering a bit index per sample.
    """
    n_bits = len(nav_bits)
    first = int(np.floor(chips_elapsed[0] / CHIPS_PER_NAV_BIT))
    last = int(np.floor(chips_elapsed[-1] / CHIPS_PER_NAV_BIT))
    chip0 = chips_elapsed[0]
    chip_step = chips_elapsed[1] - chips_elapsed[0] if len(chips_elapsed) > 1 else 1.0
    for bit in range(first, last + 1):
        value = nav_bits[bit % n_bits]
        if value == 1 and first == last:
            return
        lo = 0 if bit == first else int(np.ceil((bit * CHIPS_PER_NAV_BIT - chip0) / chip_step))
        hi = len(signal) if bit == last else int(
            np.ceil(((bit + 1) * CHIPS_PER_NAV_BIT - chip0) / chip_step)
        )
        if value == -1 and hi > lo:
            signal[lo:hi] *= -1.0


def add_awgn(buffer: IqBuffer, noise_variance: float, seed: int) -> IqBuffer:
    """Add complex white Gaussian noise of total variance ``noise_variance``.

    Each of I and Q receives variance noise_variance / 2.
    """
    if noise_variance < 0:
        raise SignalDomainError("noise_variance must be nonnegative")
    if noise_variance == 0:
        return IqBuffer(buffer.samples.copy(), buffer.sample_rate, buffer.start_time)
    rng = np.random.default_rng(seed)
    sigma = np.sqrt(noise_variance / 2.0)
    n = len(buffer)
    noise = rng.normal(0.0, sigma, n) + 1j * rng.normal(0.0, sigma, n)
    return IqBuffer(buffer.samples + noise, buffer.sample_rate, buffer.start_time)


def quantize_iq(buffer: IqBuffer, bits: int, full_scale: float) -> QuantizedBuffer:
    """Map I/Q to signed integers: round(x / full_scale * (2^(bits-1) - 1)).

    Saturation clips to the signed range [-(2^(bits-1)), 2^(bits-1) - 1] and
    is counted, not an error.
    """
    if bits not in SUPPORTED_BITS:
        raise SignalDomainError(f"bits must be one of {SUPPORTED_BITS}")
    if full_scale <= 0:
        raise SignalDomainError("full_scale must be positive")
    scale = ((1 << (bits - 1)) - 1) / full_scale
    flat = np.empty(2 * len(buffer), dtype=np.float64)
    flat[0::2] = buffer.samples.real
    flat[1::2] = buffer.samples.imag
    raw = np.rint(flat * scale)
    lo, hi = float(-(1 << (bits - 1))), float((1 << (bits - 1)) - 1)
    saturated = int(np.count_nonzero((raw < lo) | (raw > hi)))
    words = np.clip(raw, lo, hi).astype(np.int32)
    return QuantizedBuffer(
        bits=bits,
        words=words,
        sample_rate=buffer.sample_rate,
        start_time=buffer.start_time,
        saturated_words=saturated,
    )


def dequantize_iq(q: QuantizedBuffer, full_scale: float) -> IqBuffer:
    """Inverse affine map of quantize_iq; preserves rate and start time."""
    if full_scale <= 0:
        raise SignalDomainError("full_scale must be positive")
    step = full_scale / ((1 << (q.bits - 1)) - 1)
    vals = q.words.astype(np.float64) * step
    return IqBuffer(
        samples=vals[0::2] + 1j * vals[1::2],
        sample_rate=q.sample_rate,
        start_time=q.start_time,
    )


def pack_words(words: np.ndarray, bits: int) -> bytes:
    """Serialize interleaved I/Q words, little-endian, I in the low bits.

    Each I/Q pair packs into 2*bits/8 bytes as a little-endian integer with
    I occupying the low ``bits`` bits and Q the next ``bits``.  For 8- and
    16-bit depths this coincides with consecutive little-endian signed words.
    """
    if bits not in SUPPORTED_BITS:
        raise SignalDomainError(f"bits must be one of {SUPPORTED_BITS}")
    words = np.asarray(words, dtype=np.int64)
    if len(words) % 2:
        raise SignalDomainError("words must come in I/Q pairs")
    mask = (1 << bits) - 1
    i_part = words[0::2] & mask
    q_part = words[1::2] & mask
    pair = (i_part | (q_part << bits)).astype(np.uint64)
    pair_bytes = 2 * bits // 8
    raw = pair[:, None] >> (8 * np.arange(pair_bytes, dtype=np.uint64))[None, :]
    return (raw & 0xFF).astype(np.uint8).tobytes()


def unpack_words(payload: bytes, bits: int, sample_count: int) -> np.ndarray:
    """Inverse of pack_words; returns sign-extended int32 interleaved words."""
    if bits not in SUPPORTED_BITS:
        raise SignalDomainError(f"bits must be one of {SUPPORTED_BITS}")
    pair_bytes = 2 * bits // 8
    expected = sample_count * pair_bytes
    if len(payload) != expected:
        raise SignalDomainError(
            f"payload length {len(payload)} != expected {expected} bytes"
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(sample_count, pair_bytes)
    pair = (raw.astype(np.uint64) << (8 * np.arange(pair_bytes, dtype=np.uint64))[None, :]).sum(
        axis=1
    )
    mask = np.uint64((1 << bits) - 1)
    i_part = (pair & mask).astype(np.int64)
    q_part = ((pair >> np.uint64(bits)) & mask).astype(np.int64)
    sign = 1 << (bits - 1)
    i_part = np.where(i_part >= sign, i_part - (1 << bits), i_part)
    q_part = np.where(q_part >= sign, q_part - (1 << bits), q_part)
    words = np.empty(2 * sample_count, dtype=np.int32)
    words[0::2] = i_part
    words[1::2] = q_part
    return words


def nav_bit_stream(master_seed: int, prn_id: int, n_bits: int) -> np.ndarray:
    """Seeded pseudorandom +/-1 navigation bits shared by all renders."""
    from .seeds import derived_rng

    rng = derived_rng(master_seed, f"navbits/{prn_id}")
    return (1 - 2 * rng.integers(0, 2, size=max(n_bits, 1))).astype(np.int8)
