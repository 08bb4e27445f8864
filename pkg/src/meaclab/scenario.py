"""Scenario files: a plain-text (YAML) tree with a fixed key schema.

parse_scenario validates the tree, fills every default, and returns both
the typed Scenario and the fully-expanded dict that gets echoed into the
run manifest.  Diagnostics carry the source line of the offending key.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geometry import EcefPosition, GeometryError, SatelliteOrbitSpec, Scene, visible_satellites
from .nodes import ALL_PHASES, AttackScript, ForwarderNode, NodeError, ScriptPhase
from .receiver import DEFAULT_ACQUISITION_THRESHOLD, ReceiverConfig
from .wire import LOSSY_DATAGRAM, RELIABLE_STREAM, LinkModel, StreamConfig

MODE_VIRTUAL = "virtual"
MODE_LIVE = "live"

_PHASE_KEYS = {
    "idle": "Idle",
    "jam_all": "JamAll",
    "replay_l1_jam_others": "ReplayL1_JamOthers",
    "rejam_pulse": "RejamPulse",
    "replay_only": "ReplayOnly",
    "stop": "Stop",
}


class ScenarioError(ValueError):
    """Config diagnostic with a file/line reference when available."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        loc = f" (line {line})" if line is not None else ""
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message}{loc}")


@dataclass
class AnalysisConfig:
    monitor_sample_rate_hz: float | None = None
    nfft: int = 4096
    overlap: float = 0.5
    baseline_interval_s: tuple[float, float] = (0.0, 8.0)
    slice_s: float = 0.25  # analyzed stretch at the start of each second


@dataclass
class Scenario:
    name: str
    seed: int
    horizon_s: float
    mode: str
    scene: Scene
    stream: StreamConfig
    full_scale: float
    link: LinkModel
    forwarder: ForwarderNode
    replay_gain_db: float
    jam_power_db_over_signal: float
    script: AttackScript
    receiver: ReceiverConfig
    warm_start: bool
    coarse_time_error_s: float
    receiver_start_s: float
    analysis: AnalysisConfig
    capture_radius_m: float
    echo: dict = field(default_factory=dict, repr=False)


def _mark_lines(path_str: str):
    """Load YAML and record the source line of every key path."""
    text = Path(path_str).read_text()
    lines: dict[tuple, int] = {}

    class Loader(yaml.SafeLoader):
        pass

    def construct_mapping(loader, node, deep=False):
        mapping = {}
        for key_node, value_node in node.value:
            key = loader.construct_object(key_node, deep=True)
            mapping[key] = loader.construct_object(value_node, deep=True)
            lines[(id(mapping), key)] = key_node.start_mark.line + 1
        return mapping

    Loader.add_constructor(
        yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, construct_mapping
    )
    data = yaml.load(io.StringIO(text), Loader=Loader)
    return data, lines


class _Tree:
    """Schema-checked access into the raw YAML tree."""

    def __init__(self, data: dict, lines: dict, path: str = ""):
        if not isinstance(data, dict):
            raise ScenarioError("expected a mapping", path)
        self.data = data
        self.lines = lines
        self.path = path

    def line(self, key) -> int | None:
        return self.lines.get((id(self.data), key))

    def child(self, key) -> "_Tree":
        return _Tree(self.data.get(key, {}), self.lines, self._p(key))

    def _p(self, key) -> str:
        return f"{self.path}.{key}" if self.path else str(key)

    def check_keys(self, allowed: set[str]):
        for key in self.data:
            if key not in allowed:
                raise ScenarioError(f"unknown key {key!r}", self._p(key), self.line(key))

    def get(self, key, default=None, required=False, kind=None):
        if key not in self.data or self.data[key] is None:
            if required:
                raise ScenarioError(f"missing required key {key!r}", self.path or key)
            return default
        value = self.data[key]
        if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ScenarioError(f"{key!r} must be an integer", self._p(key), self.line(key))
            return value
        if kind is not None and not isinstance(value, kind):
            raise ScenarioError(
                f"{key!r} must be of type {getattr(kind, '__name__', kind)}",
                self._p(key),
                self.line(key),
            )
        return value

    def vec3(self, key, required=False):
        v = self.get(key, required=required, kind=list)
        if v is None:
            return None
        if len(v) != 3 or not all(isinstance(c, (int, float)) for c in v):
            raise ScenarioError(f"{key!r} must be [x, y, z]", self._p(key), self.line(key))
        return [float(c) for c in v]


def _build_scene(tree: _Tree) -> Scene:
    tree.check_keys({"noise_floor", "sampler_location_ecef", "victim_location_ecef", "satellites"})
    noise_floor = tree.get("noise_floor", 1e-6, kind=float)
    sampler = tree.vec3("sampler_location_ecef", required=True)
    victim = tree.vec3("victim_location_ecef", required=True)
    sats_raw = tree.get("satellites", required=True, kind=list)
    sats = []
    for i, s in enumerate(sats_raw):
        st = _Tree(s, tree.lines, f"{tree.path}.satellites[{i}]")
        st.check_keys({"prn", "position_ecef", "velocity_mps", "cn0_dbhz", "l2"})
        prn = st.get("prn", required=True, kind=int)
        if not 1 <= prn <= 32:
            raise ScenarioError("prn must be in 1..32", st.path, st.line("prn"))
        pos = st.vec3("position_ecef", required=True)
        vel = st.vec3("velocity_mps") or [0.0, 0.0, 0.0]
        try:
            sats.append(
                SatelliteOrbitSpec(
                    prn_id=prn,
                    position=EcefPosition(*pos),
                    velocity_mps=tuple(vel),
                    cn0_dbhz=st.get("cn0_dbhz", 45.0, kind=float),
                    has_l2=st.get("l2", True, kind=bool),
                )
            )
        except GeometryError as exc:
            raise ScenarioError(str(exc), st.path, st.line("prn")) from exc
    try:
        return Scene(
            satellites=sats,
            sampler_location=EcefPosition(*sampler),
            victim_location=EcefPosition(*victim),
            noise_floor=noise_floor,
            amplitude_reference=noise_floor if noise_floor > 0 else 1e-6,
        )
    except GeometryError as exc:
        raise ScenarioError(str(exc), tree.path) from exc


def _build_script(raw, lines, horizon: float) -> AttackScript:
    phases = []
    for i, p in enumerate(raw):
        pt = _Tree(p, lines, f"script[{i}]")
        pt.check_keys({"phase", "start_s", "duration_s"})
        name = pt.get("phase", required=True, kind=str)
        if name not in _PHASE_KEYS:
            raise ScenarioError(
                f"unknown phase {name!r}; one of {sorted(_PHASE_KEYS)}",
                pt.path,
                pt.line("phase"),
            )
        phases.append(
            ScriptPhase(
                _PHASE_KEYS[name],
                pt.get("start_s", required=True, kind=float),
                pt.get("duration_s", required=True, kind=float),
            )
        )
    try:
        script = AttackScript(phases)  # validates ordering/overlap
    except NodeError as exc:
        raise ScenarioError(str(exc), "script") from exc
    if script.end > horizon + 1e-9:
        raise ScenarioError(f"script runs to {script.end} s beyond horizon {horizon} s", "script")
    return script


_TOP_KEYS = {
    "name", "seed", "horizon_s", "mode", "scene", "stream", "link",
    "forwarder", "script", "receiver", "analysis", "report",
}


def parse_scenario(path: str | Path) -> Scenario:
    data, lines = _mark_lines(str(path))
    top = _Tree(data, lines)
    top.check_keys(_TOP_KEYS)

    name = top.get("name", Path(path).stem, kind=str)
    seed = top.get("seed", 0, kind=int)
    horizon = top.get("horizon_s", required=True, kind=float)
    mode = top.get("mode", MODE_VIRTUAL, kind=str)
    if mode not in (MODE_VIRTUAL, MODE_LIVE):
        raise ScenarioError("mode must be 'virtual' or 'live'", "mode", top.line("mode"))

    scene = _build_scene(top.child("scene"))

    st = top.child("stream")
    st.check_keys({"sample_rate_hz", "quantization_bits", "frame_samples", "full_scale"})
    stream = StreamConfig(
        sample_rate=st.get("sample_rate_hz", 1.023e6, kind=float),
        quantization_bits=st.get("quantization_bits", 16, kind=int),
        frame_samples=st.get("frame_samples", 4096, kind=int),
    )
    if abs(stream.sample_rate / 1000 - round(stream.sample_rate / 1000)) > 1e-9:
        raise ScenarioError("sample_rate_hz must be a whole number of kHz", "stream.sample_rate_hz")
    full_scale_raw = st.get("full_scale", "auto")
    if full_scale_raw == "auto":
        total_sig = sum(
            scene.amplitude_reference * 10 ** (s.cn0_dbhz / 10) for s in scene.satellites
        )
        full_scale = 6.0 * math.sqrt(scene.noise_floor * stream.sample_rate + total_sig)
    else:
        full_scale = float(full_scale_raw)
        if full_scale <= 0:
            raise ScenarioError("full_scale must be positive", "stream.full_scale")

    lt = top.child("link")
    lt.check_keys(
        {"bandwidth_bps", "base_latency_s", "jitter_stddev_s", "mode", "loss_prob",
         "send_buffer_limit_bytes", "congestion_episodes"}
    )
    episodes = []
    for i, ep in enumerate(lt.get("congestion_episodes", []) or []):
        et = _Tree(ep, lines, f"link.congestion_episodes[{i}]")
        et.check_keys({"start_s", "duration_s", "factor"})
        episodes.append(
            (
                et.get("start_s", required=True, kind=float),
                et.get("duration_s", required=True, kind=float),
                et.get("factor", required=True, kind=float),
            )
        )
    link_mode_raw = lt.get("mode", "reliable", kind=str)
    if link_mode_raw not in (RELIABLE_STREAM, LOSSY_DATAGRAM):
        raise ScenarioError("link mode must be 'reliable' or 'lossy'", "link.mode", lt.line("mode"))
    link = LinkModel(
        bandwidth_bps=lt.get("bandwidth_bps", required=True, kind=float),
        base_latency_s=lt.get("base_latency_s", 0.02, kind=float),
        jitter_stddev_s=lt.get("jitter_stddev_s", 0.0005, kind=float),
        mode=link_mode_raw,
        loss_prob=lt.get("loss_prob", 0.0, kind=float),
        congestion_episodes=tuple(episodes),
        send_buffer_limit_bytes=lt.get("send_buffer_limit_bytes", 4 * 1024 * 1024, kind=int),
    )

    ft = top.child("forwarder")
    ft.check_keys({"jitter_buffer_s", "replay_gain_db", "jam_power_db_over_signal"})
    replay_gain_db = ft.get("replay_gain_db", 6.0, kind=float)
    forwarder = ForwarderNode(
        jitter_buffer_target_s=ft.get("jitter_buffer_s", 0.25, kind=float),
        replay_gain=10.0 ** (replay_gain_db / 20.0),
    )
    jam_over_db = ft.get("jam_power_db_over_signal", 40.0, kind=float)

    script = _build_script(top.get("script", []) or [], lines, horizon)

    rt = top.child("receiver")
    rt.check_keys(
        {"acquisition_threshold", "doppler_span_hz", "doppler_bin_hz", "coherent_ms",
         "noncoherent_blocks", "cn0_floor_dbhz", "loss_timeout_s", "reacquisition_period_s",
         "search_prns", "tow_decode_s", "warm_start", "coarse_time_error_s", "start_time_s"}
    )
    search = rt.get("search_prns", kind=list)
    if search is None:
        search = sorted(s.prn_id for s in scene.satellites)
    receiver = ReceiverConfig(
        acquisition_threshold=rt.get(
            "acquisition_threshold", DEFAULT_ACQUISITION_THRESHOLD, kind=float
        ),
        doppler_span_hz=rt.get("doppler_span_hz", 5000.0, kind=float),
        doppler_bin_hz=rt.get("doppler_bin_hz", 250.0, kind=float),
        coherent_ms=rt.get("coherent_ms", 1, kind=int),
        noncoherent_blocks=rt.get("noncoherent_blocks", 10, kind=int),
        cn0_floor_dbhz=rt.get("cn0_floor_dbhz", 25.0, kind=float),
        loss_timeout_s=rt.get("loss_timeout_s", 2.0, kind=float),
        reacquisition_period_s=rt.get("reacquisition_period_s", 1.0, kind=float),
        search_prns=tuple(int(p) for p in search),
        tow_decode_s=rt.get("tow_decode_s", 6.0, kind=float),
    )
    warm_start = rt.get("warm_start", False, kind=bool)
    coarse_time_error = rt.get("coarse_time_error_s", 0.0, kind=float)
    if abs(coarse_time_error) > 10e-3:
        raise ScenarioError(
            "coarse_time_error_s must stay within +/- 10 ms",
            "receiver.coarse_time_error_s",
            rt.line("coarse_time_error_s"),
        )
    receiver_start = rt.get("start_time_s", 0.0, kind=float)
    if receiver_start < 0 or receiver_start >= horizon:
        raise ScenarioError("start_time_s must lie within the horizon", "receiver.start_time_s")

    at = top.child("analysis")
    at.check_keys({"monitor_sample_rate_hz", "nfft", "overlap", "baseline_interval_s", "slice_s"})
    baseline = at.get("baseline_interval_s", [0.0, 8.0], kind=list)
    analysis = AnalysisConfig(
        monitor_sample_rate_hz=at.get("monitor_sample_rate_hz", None, kind=float),
        nfft=at.get("nfft", 4096, kind=int),
        overlap=at.get("overlap", 0.5, kind=float),
        baseline_interval_s=(float(baseline[0]), float(baseline[1])),
        slice_s=at.get("slice_s", 0.25, kind=float),
    )
    if not 0.0 < analysis.slice_s <= 1.0:
        raise ScenarioError("slice_s must lie in (0, 1]", "analysis.slice_s")
    if analysis.monitor_sample_rate_hz is not None:
        ratio = analysis.monitor_sample_rate_hz / stream.sample_rate
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise ScenarioError(
                "monitor_sample_rate_hz must be an integer multiple of the stream rate",
                "analysis.monitor_sample_rate_hz",
            )

    rp = top.child("report")
    rp.check_keys({"capture_radius_m"})
    capture_radius = rp.get("capture_radius_m", 1000.0, kind=float)

    # cross-checks
    if len(visible_satellites(scene, scene.victim_location)) < 4:
        raise ScenarioError("PVT scenarios need at least 4 satellites visible at the victim", "scene.satellites")
    if scene.sampler_location == scene.victim_location:
        raise ScenarioError("sampler and victim locations must differ", "scene")

    scenario = Scenario(
        name=name,
        seed=seed,
        horizon_s=horizon,
        mode=mode,
        scene=scene,
        stream=stream,
        full_scale=full_scale,
        link=link,
        forwarder=forwarder,
        replay_gain_db=replay_gain_db,
        jam_power_db_over_signal=jam_over_db,
        script=script,
        receiver=receiver,
        warm_start=warm_start,
        coarse_time_error_s=coarse_time_error,
        receiver_start_s=receiver_start,
        analysis=analysis,
        capture_radius_m=capture_radius,
        echo={},
    )
    scenario.echo = serialize_scenario(scenario)
    return scenario


def serialize_scenario(s: Scenario) -> dict:
    """Canonical dict with every default filled; YAML-dumpable."""
    inv_phase = {v: k for k, v in _PHASE_KEYS.items()}
    return {
        "name": s.name,
        "seed": s.seed,
        "horizon_s": s.horizon_s,
        "mode": s.mode,
        "scene": {
            "noise_floor": s.scene.noise_floor,
            "sampler_location_ecef": [float(c) for c in s.scene.sampler_location.as_array()],
            "victim_location_ecef": [float(c) for c in s.scene.victim_location.as_array()],
            "satellites": [
                {
                    "prn": sat.prn_id,
                    "position_ecef": [float(c) for c in sat.position.as_array()],
                    "velocity_mps": [float(c) for c in sat.velocity_mps],
                    "cn0_dbhz": sat.cn0_dbhz,
                    "l2": sat.has_l2,
                }
                for sat in s.scene.satellites
            ],
        },
        "stream": {
            "sample_rate_hz": s.stream.sample_rate,
            "quantization_bits": s.stream.quantization_bits,
            "frame_samples": s.stream.frame_samples,
            "full_scale": s.full_scale,
        },
        "link": {
            "bandwidth_bps": s.link.bandwidth_bps,
            "base_latency_s": s.link.base_latency_s,
            "jitter_stddev_s": s.link.jitter_stddev_s,
            "mode": s.link.mode,
            "loss_prob": s.link.loss_prob,
            "send_buffer_limit_bytes": s.link.send_buffer_limit_bytes,
            "congestion_episodes": [
                {"start_s": a, "duration_s": b, "factor": c}
                for a, b, c in s.link.congestion_episodes
            ],
        },
        "forwarder": {
            "jitter_buffer_s": s.forwarder.jitter_buffer_target_s,
            "replay_gain_db": s.replay_gain_db,
            "jam_power_db_over_signal": s.jam_power_db_over_signal,
        },
        "script": [
            {"phase": inv_phase[p.phase], "start_s": p.start, "duration_s": p.duration}
            for p in s.script.phases
        ],
        "receiver": {
            "acquisition_threshold": s.receiver.acquisition_threshold,
            "doppler_span_hz": s.receiver.doppler_span_hz,
            "doppler_bin_hz": s.receiver.doppler_bin_hz,
            "coherent_ms": s.receiver.coherent_ms,
            "noncoherent_blocks": s.receiver.noncoherent_blocks,
            "cn0_floor_dbhz": s.receiver.cn0_floor_dbhz,
            "loss_timeout_s": s.receiver.loss_timeout_s,
            "reacquisition_period_s": s.receiver.reacquisition_period_s,
            "search_prns": list(s.receiver.search_prns),
            "tow_decode_s": s.receiver.tow_decode_s,
            "warm_start": s.warm_start,
            "coarse_time_error_s": s.coarse_time_error_s,
            "start_time_s": s.receiver_start_s,
        },
        "analysis": {
            "monitor_sample_rate_hz": s.analysis.monitor_sample_rate_hz,
            "nfft": s.analysis.nfft,
            "overlap": s.analysis.overlap,
            "baseline_interval_s": list(s.analysis.baseline_interval_s),
            "slice_s": s.analysis.slice_s,
        },
        "report": {"capture_radius_m": s.capture_radius_m},
    }


def dump_scenario(s: Scenario, path: str | Path):
    Path(path).write_text(yaml.safe_dump(serialize_scenario(s), sort_keys=False))
