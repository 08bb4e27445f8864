"""Sampler-to-forwarder wire protocol and virtual link emulation.

Frame layout, all integers little-endian:

    offset  size  field
    0       4     magic "MEAC"
    4       1     version (1)
    5       8     sequence (u64)
    13      8     start_time, ns since scenario epoch (u64)
    21      4     sample_rate, Hz (u32)
    25      1     quantization bits (u8)
    26      4     sample_count (u32)
    30      4     crc32 over bytes 4..30 plus payload
    34      ...   payload: interleaved I/Q words (see signals.pack_words)

The link is simulated in virtual time as an arrival-time calculator; a
thin real-socket adapter lives in livelink.py for demos.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .signals import QuantizedBuffer, SUPPORTED_BITS, pack_words, unpack_words

MAGIC = b"MEAC"
VERSION = 1
HEADER_BYTES = 34
_HEADER_FMT = "<4sBQQIBI"  # up to and excluding crc

RELIABLE_STREAM = "reliable"
LOSSY_DATAGRAM = "lossy"


class FrameError(ValueError):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class CrcMismatch(FrameError):
    pass


class Truncated(FrameError):
    pass


class LinkModelError(ValueError):
    pass


@dataclass(frozen=True)
class StreamConfig:
    sample_rate: float
    quantization_bits: int
    frame_samples: int = 4096

    def __post_init__(self):
        if self.quantization_bits not in SUPPORTED_BITS:
            raise LinkModelError(f"bits must be one of {SUPPORTED_BITS}")
        if self.frame_samples <= 0:
            raise LinkModelError("frame_samples must be positive")
        if self.quantization_bits == 4 and self.frame_samples % 2:
            raise LinkModelError("frame_samples must be even in 4-bit mode")
        if self.sample_rate <= 0:
            raise LinkModelError("sample_rate must be positive")

    @property
    def frame_duration(self) -> float:
        return self.frame_samples / self.sample_rate

    @property
    def payload_bytes(self) -> int:
        return self.frame_samples * self.quantization_bits * 2 // 8


@dataclass(frozen=True)
class SampleFrame:
    sequence: int
    start_time_ns: int
    sample_rate: int
    bits: int
    sample_count: int
    payload: bytes

    def words(self) -> np.ndarray:
        return unpack_words(self.payload, self.bits, self.sample_count)

    def to_quantized(self) -> QuantizedBuffer:
        return QuantizedBuffer(
            bits=self.bits,
            words=self.words(),
            sample_rate=float(self.sample_rate),
            start_time=self.start_time_ns * 1e-9,
        )


@dataclass(frozen=True)
class LinkModel:
    """Emulated network path between the adversarial nodes."""

    bandwidth_bps: float
    base_latency_s: float = 0.0
    jitter_stddev_s: float = 0.0
    mode: str = RELIABLE_STREAM
    loss_prob: float = 0.0
    congestion_episodes: tuple = ()  # (start_s, duration_s, bandwidth_factor)
    send_buffer_limit_bytes: int = 4 * 1024 * 1024

    def __post_init__(self):
        if self.bandwidth_bps <= 0:
            raise LinkModelError("bandwidth must be positive")
        if self.mode not in (RELIABLE_STREAM, LOSSY_DATAGRAM):
            raise LinkModelError(f"unknown link mode {self.mode!r}")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise LinkModelError("loss_prob must be within [0, 1]")
        for ep in self.congestion_episodes:
            start, duration, factor = ep
            if duration <= 0:
                raise LinkModelError("episode duration must be positive")
            if not 0.0 <= factor <= 1.0:
                raise LinkModelError("episode factor must be within [0, 1]")
        eps = sorted(self.congestion_episodes)
        for (s0, d0, _), (s1, _, _) in zip(eps, eps[1:]):
            if s1 < s0 + d0:
                raise LinkModelError("congestion episodes must not overlap")
        object.__setattr__(self, "congestion_episodes", tuple(eps))


@dataclass
class FrameDelivery:
    sequence: int
    send_time: float
    enqueue_time: float
    arrival_time: float | None  # None = dropped
    size_bytes: int
    queue_depth_bytes: int
    data: bytes = b""

    @property
    def dropped(self) -> bool:
        return self.arrival_time is None


@dataclass
class DeliverySchedule:
    deliveries: list[FrameDelivery]
    stall_intervals: list[tuple[float, float]] = field(default_factory=list)
    peak_queue_depth_bytes: int = 0

    @property
    def stall_seconds(self) -> float:
        return sum(b - a for a, b in self.stall_intervals)

    def delivered(self) -> list[FrameDelivery]:
        return [d for d in self.deliveries if not d.dropped]

    def trace_rows(self) -> list[tuple]:
        rows = []
        for d in self.deliveries:
            stalled = d.enqueue_time - d.send_time
            rows.append(
                (
                    d.send_time,
                    "" if d.arrival_time is None else d.arrival_time,
                    stalled if stalled > 1e-12 else 0.0,
                    d.queue_depth_bytes,
                )
            )
        return rows


def required_data_rate(cfg: StreamConfig) -> float:
    """Payload bit rate: sample_rate * quantization_bits * 2."""
    return cfg.sample_rate * cfg.quantization_bits * 2


def framed_data_rate(cfg: StreamConfig) -> float:
    """Payload rate scaled by the per-frame header overhead."""
    return required_data_rate(cfg) * (1.0 + HEADER_BYTES / cfg.payload_bytes)


def encode_frame(q: QuantizedBuffer, sequence: int) -> bytes:
    """Serialize a quantized slice into one wire frame."""
    import struct

    if q.sample_count > 0xFFFFFFFF:
        raise FrameError("sample_count exceeds u32")
    payload = pack_words(q.words, q.bits)
    head = struct.pack(
        _HEADER_FMT,
        MAGIC,
        VERSION,
        sequence,
        int(round(q.start_time * 1e9)),
        int(round(q.sample_rate)),
        q.bits,
        q.sample_count,
    )
    crc = zlib.crc32(head[4:] + payload) & 0xFFFFFFFF
    return head + crc.to_bytes(4, "little") + payload


def decode_frame(data: bytes) -> SampleFrame:
    """Parse one frame; raises a typed FrameError on malformed input."""
    import struct

    if len(data) < HEADER_BYTES:
        raise Truncated(f"frame shorter than the {HEADER_BYTES}-byte header")
    magic, version, sequence, t_ns, rate, bits, count = struct.unpack(
        _HEADER_FMT, data[: HEADER_BYTES - 4]
    )
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    if bits not in SUPPORTED_BITS:
        raise CrcMismatch(f"unsupported bit depth {bits}")  # corrupt header field
    expected_payload = count * bits * 2 // 8
    payload = data[HEADER_BYTES : HEADER_BYTES + expected_payload]
    if len(payload) < expected_payload:
        raise Truncated("frame payload truncated")
    crc = int.from_bytes(data[HEADER_BYTES - 4 : HEADER_BYTES], "little")
    actual = zlib.crc32(data[4 : HEADER_BYTES - 4] + payload) & 0xFFFFFFFF
    if crc != actual:
        raise CrcMismatch(f"crc {crc:#010x} != computed {actual:#010x}")
    return SampleFrame(
        sequence=sequence,
        start_time_ns=t_ns,
        sample_rate=rate,
        bits=bits,
        sample_count=count,
        payload=payload,
    )


class _RateProfile:
    """Piecewise-constant serialization rate bandwidth * factor(t)."""

    def __init__(self, link: LinkModel):
        self.bandwidth = link.bandwidth_bps
        self.episodes = list(link.congestion_episodes)

    def advance(self, start: float, bits: float) -> float:
        """Time when ``bits`` finish serializing if started at ``start``."""
        t = start
        remaining = float(bits)
        if remaining <= 0:
            return t
        for ep_start, ep_dur, factor in self.episodes:
            ep_end = ep_start + ep_dur
            if ep_end <= t:
                continue
            # full-rate stretch before this episode
            if t < ep_start:
                can = (ep_start - t) * self.bandwidth
                if remaining <= can:
                    return t + remaining / self.bandwidth
                remaining -= can
                t = ep_start
            # inside the episode
            rate = self.bandwidth * factor
            if rate <= 0.0:
                t = ep_end
                continue
            can = (ep_end - t) * rate
            if remaining <= can:
                return t + remaining / rate
            remaining -= can
            t = ep_end
        return t + remaining / self.bandwidth


def link_transmit(
    link: LinkModel,
    offered: list[tuple[float, bytes]],
    seed: int = 0,
) -> DeliverySchedule:
    """Compute the delivery schedule for frames offered at given send times.

    ReliableStream serializes frames FIFO through the rate profile; queued
    bytes above the send buffer limit block the sender (stall intervals
    recorded) and nothing is dropped.  LossyDatagram drops each frame
    independently with loss_prob and never blocks the sender.
    """
    for (t0, _), (t1, _) in zip(offered, offered[1:]):
        if t1 < t0:
            raise LinkModelError("send times must be nondecreasing")
    rng = np.random.default_rng(seed)
    profile = _RateProfile(link)
    reliable = link.mode == RELIABLE_STREAM

    deliveries: list[FrameDelivery] = []
    stalls: list[tuple[float, float]] = []
    pending: list[tuple[float, int]] = []  # (finish_time, bytes) not yet drained
    finish_prev = -np.inf
    enqueue_floor = -np.inf
    last_arrival = -np.inf
    peak_queue = 0

    for seq, (t_send, data) in enumerate(offered):
        nbytes = len(data)
        if not reliable and link.loss_prob > 0 and rng.random() < link.loss_prob:
            deliveries.append(
                FrameDelivery(seq, t_send, t_send, None, nbytes, 0, data)
            )
            continue

        t_ready = max(t_send, enqueue_floor)
        t_enq = t_ready
        if reliable:
            pending = [(f, b) for f, b in pending if f > t_enq]
            while sum(b for _, b in pending) + nbytes > link.send_buffer_limit_bytes and pending:
                t_enq = min(f for f, _ in pending)
                pending = [(f, b) for f, b in pending if f > t_enq]
            if t_enq > t_ready + 1e-12:
                stalls.append((t_ready, t_enq))
            enqueue_floor = t_enq

        start = max(t_enq, finish_prev)
        finish = profile.advance(start, nbytes * 8)
        finish_prev = finish

        jitter = rng.normal(0.0, link.jitter_stddev_s) if link.jitter_stddev_s > 0 else 0.0
        arrival = finish + link.base_latency_s + jitter
        if reliable:
            arrival = max(arrival, last_arrival)
            last_arrival = arrival
            pending.append((finish, nbytes))
            depth = sum(b for _, b in pending)
        else:
            depth = 0
        peak_queue = max(peak_queue, depth)
        deliveries.append(
            FrameDelivery(seq, t_send, t_enq, arrival, nbytes, depth, data)
        )

    return DeliverySchedule(
        deliveries=deliveries,
        stall_intervals=stalls,
        peak_queue_depth_bytes=peak_queue,
    )


def apply_congestion_episode(
    link: LinkModel, start: float, duration: float, factor: float
) -> LinkModel:
    """Return a copy of the link with one more congestion episode."""
    episodes = link.congestion_episodes + ((start, duration, factor),)
    return replace(link, congestion_episodes=episodes)
