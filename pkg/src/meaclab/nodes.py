"""The two colluding nodes: sampler (capture, quantize, frame, stream) and
forwarder (jitter-buffer replay plus Gaussian jammer), with the phase
sequencer that drives jam/replay timing.

The forwarder's playhead pauses on underrun and resumes when the next
sample arrives: nothing is skipped, so a starved link stretches the replay
timeline instead of dropping content.  Underruns emit silence.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .geometry import AntennaFeedPlan, EcefPosition, Scene, render_antenna_feed
from .seeds import derive_seed
from .signals import IqBuffer, SignalDomainError, add_awgn, quantize_iq
from .wire import (
    DeliverySchedule,
    FrameError,
    SampleFrame,
    StreamConfig,
    decode_frame,
    encode_frame,
)

PHASE_IDLE = "Idle"
PHASE_JAM_ALL = "JamAll"
PHASE_REPLAY_L1_JAM_OTHERS = "ReplayL1_JamOthers"
PHASE_REJAM_PULSE = "RejamPulse"
PHASE_REPLAY_ONLY = "ReplayOnly"
PHASE_STOP = "Stop"
ALL_PHASES = (
    PHASE_IDLE,
    PHASE_JAM_ALL,
    PHASE_REPLAY_L1_JAM_OTHERS,
    PHASE_REJAM_PULSE,
    PHASE_REPLAY_ONLY,
    PHASE_STOP,
)


class NodeError(ValueError):
    pass


@dataclass
class SamplerNode:
    cfg: StreamConfig
    location: EcefPosition
    full_scale: float
    clock_skew: float = 0.0  # dimensionless rate offset of the node clock


@dataclass
class JammerConfig:
    bands: tuple[str, ...] = ("L1", "L2")
    noise_power: float = 1.0  # complex variance at the render sample rate
    enabled_intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        for b in self.bands:
            if b not in ("L1", "L2"):
                raise NodeError(f"unknown band {b!r}")
        if self.noise_power < 0:
            raise NodeError("noise_power must be nonnegative")
        ivals = sorted(self.enabled_intervals)
        for (s0, e0), (s1, e1) in zip(ivals, ivals[1:]):
            if s1 < e0:
                raise NodeError("jammer intervals must not overlap")
        for s, e in ivals:
            if e <= s:
                raise NodeError("jammer interval must have positive length")
        self.enabled_intervals = tuple(ivals)


@dataclass
class ForwarderNode:
    jitter_buffer_target_s: float = 0.25
    replay_gain: float = 1.0
    underrun_policy: str = "EmitSilence"
    jammer: JammerConfig = field(default_factory=JammerConfig)

    def __post_init__(self):
        if self.jitter_buffer_target_s < 0:
            raise NodeError("jitter_buffer_target must be nonnegative")
        if self.replay_gain < 0:
            raise NodeError("replay_gain must be nonnegative")
        if self.underrun_policy != "EmitSilence":
            raise NodeError("only the EmitSilence underrun policy exists")


@dataclass(frozen=True)
class ScriptPhase:
    phase: str
    start: float
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class AttackScript:
    phases: list[ScriptPhase]

    def __post_init__(self):
        prev_end = -np.inf
        seen_jam_all = False
        for p in self.phases:
            if p.phase not in ALL_PHASES:
                raise NodeError(f"unknown phase {p.phase!r}")
            if p.duration <= 0:
                raise NodeError("phase duration must be positive")
            if p.start < prev_end - 1e-12:
                raise NodeError("phases must be time-ordered and non-overlapping")
            if p.phase == PHASE_JAM_ALL:
                seen_jam_all = True
            if p.phase == PHASE_REPLAY_L1_JAM_OTHERS and not seen_jam_all and p.start > 0:
                raise NodeError(
                    "ReplayL1_JamOthers requires a prior JamAll unless it starts at t=0"
                )
            prev_end = p.end

    @property
    def end(self) -> float:
        return max((p.end for p in self.phases), default=0.0)

    def phase_at(self, t: float) -> str:
        for p in self.phases:
            if p.start <= t < p.end:
                return p.phase
        return PHASE_IDLE

    def intervals_where(self, predicate) -> list[tuple[float, float]]:
        return [(p.start, p.end) for p in self.phases if predicate(p.phase)]


@dataclass(frozen=True)
class SequencerOutputs:
    jam_l1: bool
    jam_l2: bool
    replay_on: bool


_PHASE_OUTPUTS = {
    PHASE_IDLE: SequencerOutputs(False, False, False),
    PHASE_JAM_ALL: SequencerOutputs(True, True, False),
    PHASE_REPLAY_L1_JAM_OTHERS: SequencerOutputs(False, True, True),
    PHASE_REJAM_PULSE: SequencerOutputs(True, True, False),
    PHASE_REPLAY_ONLY: SequencerOutputs(False, False, True),
    PHASE_STOP: SequencerOutputs(False, False, False),
}


def attack_sequencer(script: AttackScript, t: float) -> SequencerOutputs:
    """Piecewise-constant control outputs for the forwarder at time t."""
    return _PHASE_OUTPUTS[script.phase_at(t)]


def jam_intervals(script: AttackScript, band: str) -> list[tuple[float, float]]:
    key = {"L1": "jam_l1", "L2": "jam_l2"}[band]
    return script.intervals_where(lambda ph: getattr(_PHASE_OUTPUTS[ph], key))


def replay_intervals(script: AttackScript) -> list[tuple[float, float]]:
    return script.intervals_where(lambda ph: _PHASE_OUTPUTS[ph].replay_on)


@dataclass
class LogRow:
    t: float
    event: str
    detail: str = ""

    def as_tuple(self):
        return (self.t, self.event, self.detail)


_CHUNK_FRAMES = 256  # render granularity; bounds peak memory


def sampler_run(
    node: SamplerNode,
    scene: Scene,
    window: tuple[float, float],
    seed: int,
    horizon_s: float | None = None,
) -> tuple[list[tuple[float, bytes]], list[LogRow]]:
    """Capture the legitimate sky at the sampler, quantize, and frame it.

    Returns (offered frames, capture log); each frame is offered at the end
    of its capture interval (real-time pacing against the node clock).  The
    window start must fall on a frame boundary; rendering happens in
    frame-aligned chunks so arbitrarily long windows stay within memory.
    """
    start, duration = window
    cfg = node.cfg
    if horizon_s is None:
        horizon_s = start + duration
    start_samples = start * cfg.sample_rate
    if abs(start_samples / cfg.frame_samples - round(start_samples / cfg.frame_samples)) > 1e-9:
        raise NodeError("window start must align with a frame boundary")
    seq0 = int(round(start_samples)) // cfg.frame_samples
    n_total = int(round(duration * cfg.sample_rate))
    n_frames = (n_total + cfg.frame_samples - 1) // cfg.frame_samples
    capture_seed = derive_seed(seed, "sampler/capture")
    plan = AntennaFeedPlan(gain_legitimate=1.0, gain_replay=0.0, gain_jam=0.0)

    offered = []
    log = []
    for c0 in range(0, n_frames, _CHUNK_FRAMES):
        frames_here = min(_CHUNK_FRAMES, n_frames - c0)
        chunk_start = start + c0 * cfg.frame_samples / cfg.sample_rate
        chunk_samples = min(frames_here * cfg.frame_samples, n_total - c0 * cfg.frame_samples)
        feed = render_antenna_feed(
            scene,
            node.location,
            plan,
            (chunk_start, chunk_samples / cfg.sample_rate),
            cfg.sample_rate,
            seed=capture_seed,
            horizon_s=horizon_s,
        )
        q = quantize_iq(feed, cfg.quantization_bits, node.full_scale)
        for i in range(frames_here):
            lo = i * cfg.frame_samples
            count = min(cfg.frame_samples, q.sample_count - lo)
            if count <= 0:
                break
            seq = seq0 + c0 + i
            frame_bytes = encode_frame(q.slice_samples(lo, count), sequence=seq)
            capture_end = chunk_start + (lo + count) / cfg.sample_rate
            send_time = capture_end * (1.0 + node.clock_skew)
            offered.append((send_time, frame_bytes))
            log.append(LogRow(send_time, "frame_sent", f"seq={seq} bytes={len(frame_bytes)}"))
    return offered, log


def jammer_generate(
    cfg: JammerConfig,
    band: str,
    window: tuple[float, float],
    sample_rate: float,
    seed: int,
) -> IqBuffer:
    """Gaussian noise of the configured power inside enabled intervals."""
    if band not in cfg.bands:
        raise NodeError(f"band {band!r} not configured on this jammer")
    start, duration = window
    n = int(round(duration * sample_rate))
    out = IqBuffer(np.zeros(n, dtype=np.complex128), sample_rate, start)
    if cfg.noise_power == 0:
        return out
    for k, (s, e) in enumerate(cfg.enabled_intervals):
        lo = max(s, start)
        hi = min(e, start + duration)
        if hi <= lo:
            continue
        i0 = int(round((lo - start) * sample_rate))
        i1 = int(round((hi - start) * sample_rate))
        if i1 <= i0:
            continue
        seg = IqBuffer(np.zeros(i1 - i0, dtype=np.complex128), sample_rate)
        noisy = add_awgn(
            seg, cfg.noise_power, derive_seed(seed, f"jam/{band}/{k}/{lo:.9f}")
        )
        out.samples[i0:i1] = noisy.samples
    return out


@dataclass
class EmissionSegment:
    """One contiguous stretch of replayed stream content."""

    emit_sample: int  # victim-clock sample index of the first emitted sample
    stream_pos: int  # sample index within the captured stream
    count: int
    frame: SampleFrame | None  # None = hole (lost content), emitted as silence


@dataclass
class EmissionPlan:
    segments: list[EmissionSegment]
    sample_rate: float
    playback_start: float | None
    underruns: list[tuple[float, float]]
    log: list[LogRow]

    def delay_at(self, t: float) -> float | None:
        """Replay staleness: victim time minus stream time at victim time t."""
        if not self.segments:
            return None
        starts = [s.emit_sample / self.sample_rate for s in self.segments]
        i = bisect.bisect_right(starts, t) - 1
        if i < 0:
            return None
        seg = self.segments[i]
        t0 = seg.emit_sample / self.sample_rate
        if t > t0 + seg.count / self.sample_rate:
            # inside an underrun gap: the playhead is frozen at segment end
            return None
        offset = min(t - t0, seg.count / self.sample_rate)
        stream_t = seg.stream_pos / self.sample_rate + offset
        return t - stream_t


def build_emission_plan(
    node: ForwarderNode,
    schedule: DeliverySchedule,
    frame_samples_hint: int | None = None,
) -> EmissionPlan:
    """Derive the replay emission timeline from frame arrivals.

    Playback starts once jitter_buffer_target seconds of contiguous stream
    head content has arrived; on underrun the playhead waits for the next
    frame (silence in between); holes from lost frames play as silence of
    the missing duration.
    """
    decoded: list[tuple[float, SampleFrame]] = []
    log: list[LogRow] = []
    for d in schedule.delivered():
        try:
            frame = decode_frame(d.data)
        except FrameError as exc:
            log.append(LogRow(d.arrival_time, "crc_drop", type(exc).__name__))
            continue
        decoded.append((d.arrival_time, frame))
        log.append(LogRow(d.arrival_time, "frame_recv", f"seq={frame.sequence}"))
    if not decoded:
        return EmissionPlan([], 0.0, None, [], log)

    fs = float(decoded[0][1].sample_rate)
    frame_samples = frame_samples_hint or max(f.sample_count for _, f in decoded)
    # stream position from the sequence number (fixed-size frames)
    by_pos: dict[int, tuple[float, SampleFrame]] = {}
    for arrival, frame in decoded:
        by_pos[frame.sequence * frame_samples] = (arrival, frame)
    positions = sorted(by_pos)

    # playback starts when the contiguous head of the stream reaches the target
    head_pos = positions[0]
    target_samples = node.jitter_buffer_target_s * fs
    arrivals_in_order = sorted(by_pos.values(), key=lambda af: af[1].sequence)
    covered = 0
    playback_start = None
    last_arrival = None
    expected = by_pos[head_pos][1].sequence
    for arrival, frame in arrivals_in_order:
        if frame.sequence != expected:
            break  # hole at the head: wait semantics handled by the walk below
        covered += frame.sample_count
        expected += 1
        last_arrival = max(arrival, last_arrival or arrival)
        if covered >= target_samples:
            playback_start = last_arrival
            break
    if playback_start is None:
        playback_start = max(a for a, _ in arrivals_in_order)

    segments: list[EmissionSegment] = []
    underruns: list[tuple[float, float]] = []
    log.append(LogRow(playback_start, "playback_start", ""))
    play_sample = int(round(playback_start * fs))  # victim-clock playhead
    cursor = head_pos
    for pos in positions:
        arrival, frame = by_pos[pos]
        if pos > cursor:
            # lost content: emit silence for the hole, playhead keeps moving
            hole = pos - cursor
            segments.append(EmissionSegment(play_sample, cursor, hole, None))
            log.append(LogRow(play_sample / fs, "hole", f"samples={hole}"))
            play_sample += hole
            cursor = pos
        arrival_sample = int(round(arrival * fs))
        if arrival_sample > play_sample:
            underruns.append((play_sample / fs, arrival_sample / fs))
            log.append(LogRow(play_sample / fs, "underrun_start", ""))
            log.append(
                LogRow(arrival_sample / fs, "underrun_end",
                       f"gap={(arrival_sample - play_sample) / fs:.6f}")
            )
            play_sample = arrival_sample
        segments.append(EmissionSegment(play_sample, pos, frame.sample_count, frame))
        play_sample += frame.sample_count
        cursor = pos + frame.sample_count
    return EmissionPlan(segments, fs, playback_start, underruns, log)


def render_emission(
    plan: EmissionPlan,
    window: tuple[float, float],
    full_scale: float,
    gain: float,
    sample_rate: float,
) -> IqBuffer:
    """Materialize the replayed waveform for one window of victim time."""
    start, duration = window
    n = int(round(duration * sample_rate))
    out = np.zeros(n, dtype=np.complex128)
    w0 = int(round(start * sample_rate))
    for seg in plan.segments:
        lo = max(seg.emit_sample, w0)
        hi = min(seg.emit_sample + seg.count, w0 + n)
        if hi <= lo or seg.frame is None:
            continue
        offset = lo - seg.emit_sample
        q = seg.frame.to_quantized()
        step = full_scale / ((1 << (q.bits - 1)) - 1)
        words = q.words.astype(np.float64) * step
        samples = words[0::2] + 1j * words[1::2]
        out[lo - w0 : hi - w0] = gain * samples[offset : offset + (hi - lo)]
    return IqBuffer(out, sample_rate, start)


def forwarder_replay(
    node: ForwarderNode,
    schedule: DeliverySchedule,
    window: tuple[float, float],
    full_scale: float,
) -> tuple[IqBuffer, list[LogRow]]:
    """Jitter-buffered replay of the delivered stream over one window."""
    plan = build_emission_plan(node, schedule)
    if not plan.segments:
        start, duration = window
        fs = 1.0 if plan.sample_rate == 0 else plan.sample_rate
        empty = IqBuffer(
            np.zeros(int(round(duration * fs)), dtype=np.complex128), fs, start
        )
        return empty, plan.log
    buf = render_emission(plan, window, full_scale, node.replay_gain, plan.sample_rate)
    return buf, plan.log
