"""Deterministic virtual-time execution of a scenario:
sampler -> link -> forwarder -> combiner -> receiver, plus spectral
monitoring, verdicts, and the run directory with logs and a manifest.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from . import __version__
from .geometry import (
    SPEED_OF_LIGHT,
    AntennaFeedPlan,
    geometric_range,
    render_antenna_feed,
    visible_satellites,
)
from .nodes import (
    AttackScript,
    EmissionPlan,
    JammerConfig,
    LogRow,
    SamplerNode,
    build_emission_plan,
    jam_intervals,
    jammer_generate,
    render_emission,
    replay_intervals,
    sampler_run,
)
from .receiver import CoarseAssist, Receiver, ReceiverRunResult
from .scenario import MODE_LIVE, Scenario
from .seeds import derive_seed
from .signals import IqBuffer
from .spectrum import (
    SpectralAlarm,
    average_spectrum,
    detect_jamming,
    detect_replay_spike,
    welch_psd,
)
from .wire import DeliverySchedule, link_transmit

OUTPUT_DIR_ENV = "MEACLAB_OUT"

REPORT_FILE = "report.json"
MANIFEST_FILE = "manifest.json"
PVT_LOG = "pvt_log.csv"
CHANNEL_LOG = "channel_log.csv"
REPLAY_LOG = "replay_log.csv"
CAPTURE_LOG = "capture_log.csv"
LINK_TRACE = "link_trace.csv"
ALARM_LOG = "alarms.csv"
SPECTROGRAM_FILE = "spectrogram.txt"
SPECTROGRAM_AXES = "spectrogram_axes.json"

CAPTURE_CONSECUTIVE_FIXES = 10


@dataclass
class RunReport:
    scenario_name: str
    seed: int
    horizon_s: float
    time_to_first_fix_s: float | None
    time_to_capture_s: float | None
    captured: bool
    final_position_error_vs_victim_m: float | None
    final_position_error_vs_sampler_m: float | None
    stall_seconds: float
    alarm_counts: dict
    n_fixes: int
    samples_captured: int
    samples_delivered: int
    samples_dropped: int
    required_data_rate_bps: float
    framed_data_rate_bps: float
    final_clock_bias_s: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[tuple]):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _gate_samples(buf: IqBuffer, intervals: list[tuple[float, float]]) -> IqBuffer:
    """Zero the buffer outside the given absolute-time intervals."""
    mask = np.zeros(len(buf), dtype=bool)
    fs = buf.sample_rate
    for s, e in intervals:
        i0 = max(0, int(round((s - buf.start_time) * fs)))
        i1 = min(len(buf), int(round((e - buf.start_time) * fs)))
        if i1 > i0:
            mask[i0:i1] = True
    out = buf.samples.copy()
    out[~mask] = 0.0
    return IqBuffer(out, fs, buf.start_time)


def make_delay_oracle(scenario: Scenario, plan: EmissionPlan):
    """Candidate true signal delays per PRN: the scenario's coarse-time
    assist, standing in for nav-message time decoding."""
    scene = scenario.scene
    delta = scenario.coarse_time_error_s
    legit = {
        s.prn_id: geometric_range(s.position, scene.victim_location) / SPEED_OF_LIGHT
        for s in visible_satellites(scene, scene.victim_location)
    }
    sampled = {
        s.prn_id: geometric_range(s.position, scene.sampler_location) / SPEED_OF_LIGHT
        for s in visible_satellites(scene, scene.sampler_location)
    }
    replay_windows = replay_intervals(scenario.script)

    def replay_active(t: float) -> bool:
        return any(s <= t < e for s, e in replay_windows)

    def oracle(prn: int, t: float) -> list[float]:
        candidates = []
        if prn in legit:
            candidates.append(legit[prn] + delta)
        if prn in sampled and replay_active(t):
            d = plan.delay_at(t)
            if d is not None:
                candidates.append(sampled[prn] + d + delta)
        return candidates

    return oracle


@dataclass
class _SpectralMonitor:
    scenario: Scenario
    plan: EmissionPlan
    jammer: JammerConfig
    seed: int
    spectra: list = field(default_factory=list)  # (t, PowerSpectrum)
    alarms: list = field(default_factory=list)

    @property
    def fs(self) -> float:
        return self.scenario.analysis.monitor_sample_rate_hz

    def observe_second(self, k: int, replay_gated_stream: IqBuffer):
        sc = self.scenario
        window = (float(k), sc.analysis.slice_s)
        n_slice = int(round(sc.analysis.slice_s * sc.stream.sample_rate))
        up = int(round(self.fs / sc.stream.sample_rate))
        sliced = replay_gated_stream.samples[:n_slice]
        resampled = resample_poly(sliced, up, 1) if up > 1 else sliced
        replay_hi = IqBuffer(resampled, self.fs, replay_gated_stream.start_time)
        jam_hi = None
        if self.jammer.enabled_intervals:
            # equal PSD at any render rate: scale variance by the rate ratio
            cfg = JammerConfig(
                bands=self.jammer.bands,
                noise_power=self.jammer.noise_power * self.fs / sc.stream.sample_rate,
                enabled_intervals=self.jammer.enabled_intervals,
            )
            jam_hi = jammer_generate(cfg, "L1", window, self.fs, derive_seed(self.seed, "monitor/jam"))
        feed = render_antenna_feed(
            sc.scene,
            sc.scene.victim_location,
            AntennaFeedPlan(1.0, 1.0, 1.0),
            window,
            self.fs,
            replay_feed=replay_hi,
            jam_feed=jam_hi,
            seed=derive_seed(self.seed, "monitor/noise"),
            horizon_s=sc.horizon_s,
        )
        ps = welch_psd(feed, nfft=sc.analysis.nfft, overlap_fraction=sc.analysis.overlap)
        self.spectra.append((float(k), ps))

    def evaluate(self):
        sc = self.scenario
        b0, b1 = sc.analysis.baseline_interval_s
        baseline_specs = [ps for t, ps in self.spectra if b0 <= t and t + 1.0 <= b1]
        if not baseline_specs:
            return
        baseline = average_spectrum(baseline_specs)
        half_band = sc.stream.sample_rate / 2.0
        for t, ps in self.spectra:
            jam = detect_jamming(baseline, ps, t=t)
            if jam is not None:
                self.alarms.append(jam)
                continue  # broadband change dominates; skip the spike test
            spike = detect_replay_spike(baseline, ps, (-half_band, half_band), t=t)
            if spike is not None:
                self.alarms.append(spike)


def _compute_jam_power(scenario: Scenario) -> float:
    """Jam noise variance at the stream rate from the configured J/S."""
    scene = scenario.scene
    sats = visible_satellites(scene, scene.victim_location)
    if not sats:
        return 0.0
    mean_power = float(
        np.mean([scene.amplitude_reference * 10 ** (s.cn0_dbhz / 10) for s in sats])
    )
    return mean_power * 10 ** (scenario.jam_power_db_over_signal / 10.0)


def _capture_verdict(
    pvt_series, sampler_pos: np.ndarray, radius_m: float
) -> tuple[bool, float | None]:
    streak = 0
    streak_start = None
    for t, sol in pvt_series:
        ok = (
            sol.fix
            and np.linalg.norm(sol.position.as_array() - sampler_pos) <= radius_m
        )
        if ok:
            if streak == 0:
                streak_start = t
            streak += 1
            if streak >= CAPTURE_CONSECUTIVE_FIXES:
                return True, streak_start
        else:
            streak = 0
            streak_start = None
    return False, None


def run_scenario(scenario: Scenario, out_dir: str | Path | None = None) -> RunReport:
    """Execute the full pipeline in virtual time and write the run directory."""
    from .wire import framed_data_rate, required_data_rate

    if scenario.mode == MODE_LIVE:
        from .livelink import live_transmit
    sc = scenario
    seed = sc.seed
    out = _resolve_out_dir(sc, out_dir)
    out.mkdir(parents=True, exist_ok=True)

    # --- sampler: capture the whole horizon
    node = SamplerNode(
        cfg=sc.stream, location=sc.scene.sampler_location, full_scale=sc.full_scale
    )
    offered, capture_log = sampler_run(
        node, sc.scene, (0.0, sc.horizon_s), seed=seed, horizon_s=sc.horizon_s
    )
    samples_captured = int(round(sc.horizon_s * sc.stream.sample_rate))

    # --- link
    if sc.mode == MODE_LIVE:
        schedule = live_transmit(sc.link, offered)
    else:
        schedule = link_transmit(sc.link, offered, seed=derive_seed(seed, "link/jitter"))
    delivered_frames = schedule.delivered()
    samples_delivered = sum(_frame_sample_count(d.data) for d in delivered_frames if d.data)
    samples_dropped = samples_captured - samples_delivered

    # --- forwarder emission plan
    plan = build_emission_plan(sc.forwarder, schedule, frame_samples_hint=sc.stream.frame_samples)
    replay_windows = replay_intervals(sc.script)

    # --- jammer configs (receiver band only; L2 exists in the timeline)
    jam_power = _compute_jam_power(sc)
    jam_l1 = JammerConfig(
        bands=("L1", "L2"),
        noise_power=jam_power,
        enabled_intervals=tuple(jam_intervals(sc.script, "L1")),
    )

    # --- receiver + optional monitor
    sat_positions = {s.prn_id: s.position.as_array() for s in sc.scene.satellites}
    oracle = make_delay_oracle(sc, plan)
    assist = CoarseAssist(sc.scene.victim_location, sc.coarse_time_error_s) if sc.warm_start else None
    rx = Receiver(sc.receiver, sat_positions, delay_oracle=oracle, assist=assist)
    monitor = None
    if sc.analysis.monitor_sample_rate_hz:
        monitor = _SpectralMonitor(sc, plan, jam_l1, seed)

    phase_rows = [
        LogRow(p.start, "phase_change", p.phase).as_tuple() for p in sc.script.phases
    ]

    fs = sc.stream.sample_rate
    n_seconds = int(round(sc.horizon_s))
    for k in range(n_seconds):
        window = (float(k), 1.0)
        replay_raw = render_emission(
            plan, window, sc.full_scale, sc.forwarder.replay_gain, fs
        )
        replay_gated = _gate_samples(replay_raw, replay_windows)
        jam_feed = None
        if jam_l1.enabled_intervals:
            jam_feed = jammer_generate(
                jam_l1, "L1", window, fs, derive_seed(seed, "jam/L1")
            )
        victim_feed = render_antenna_feed(
            sc.scene,
            sc.scene.victim_location,
            AntennaFeedPlan(1.0, 1.0, 1.0),
            window,
            fs,
            replay_feed=replay_gated,
            jam_feed=jam_feed,
            seed=derive_seed(seed, "victim/noise"),
            horizon_s=sc.horizon_s,
        )
        if k >= sc.receiver_start_s:  # the receiver may boot into a running attack
            rx.process_segment(victim_feed)
        if monitor is not None:
            monitor.observe_second(k, replay_gated)

    result = rx.result()
    if monitor is not None:
        monitor.evaluate()
    alarms = monitor.alarms if monitor is not None else []

    report = _build_report(sc, result, schedule, alarms, samples_captured,
                           samples_delivered, samples_dropped,
                           required_data_rate(sc.stream), framed_data_rate(sc.stream))
    _write_outputs(out, sc, report, result, schedule, plan, capture_log, phase_rows,
                   alarms, monitor)
    return report


def _frame_sample_count(data: bytes) -> int:
    return int.from_bytes(data[26:30], "little")


def _resolve_out_dir(sc: Scenario, out_dir) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    base = os.environ.get(OUTPUT_DIR_ENV, "runs")
    return Path(base) / sc.name


def _build_report(sc, result: ReceiverRunResult, schedule: DeliverySchedule, alarms,
                  captured_n, delivered_n, dropped_n, req_rate, frm_rate) -> RunReport:
    victim = sc.scene.victim_location.as_array()
    sampler = sc.scene.sampler_location.as_array()
    first = result.first_fix()
    fixes = [(t, s) for t, s in result.pvt_series if s.fix]
    final_err_victim = final_err_sampler = None
    final_bias = None
    if fixes:
        _, last = fixes[-1]
        pos = last.position.as_array()
        final_err_victim = float(np.linalg.norm(pos - victim))
        final_err_sampler = float(np.linalg.norm(pos - sampler))
        final_bias = last.clock_bias
    captured, t_capture = _capture_verdict(result.pvt_series, sampler, sc.capture_radius_m)
    stall = sum(
        max(0.0, min(b, sc.horizon_s) - min(a, sc.horizon_s))
        for a, b in schedule.stall_intervals
    )
    counts: dict[str, int] = {}
    for a in alarms:
        counts[a.kind] = counts.get(a.kind, 0) + 1
    return RunReport(
        scenario_name=sc.name,
        seed=sc.seed,
        horizon_s=sc.horizon_s,
        time_to_first_fix_s=None if first is None else first[0],
        time_to_capture_s=t_capture,
        captured=captured,
        final_position_error_vs_victim_m=final_err_victim,
        final_position_error_vs_sampler_m=final_err_sampler,
        stall_seconds=float(stall),
        alarm_counts=counts,
        n_fixes=len(fixes),
        samples_captured=captured_n,
        samples_delivered=int(delivered_n),
        samples_dropped=int(dropped_n),
        required_data_rate_bps=req_rate,
        framed_data_rate_bps=frm_rate,
        final_clock_bias_s=final_bias,
    )


def _write_outputs(out: Path, sc, report, result, schedule, plan, capture_log,
                   phase_rows, alarms, monitor):
    pvt_rows = []
    for t, sol in result.pvt_series:
        if sol.fix:
            p = sol.position.as_array()
            pvt_rows.append(
                (t, 1, p[0], p[1], p[2], sol.clock_bias, len(sol.used_satellites), sol.residual_rms)
            )
        else:
            pvt_rows.append((t, 0, "", "", "", "", 0, ""))
    _write_csv(out / PVT_LOG, ["t", "fix", "x", "y", "z", "clock_bias", "n_sats", "residual_rms"], pvt_rows)

    chan_rows = [
        (t, prn, state, round(cn0, 3), round(phase, 6), round(dopp, 3))
        for (t, prn, state, cn0, phase, dopp) in result.channel_rows
    ]
    event_rows = [
        (ev.t, ev.prn_id, f"{ev.old_state}->{ev.new_state}", "", "", "") for ev in result.events
    ]
    _write_csv(
        out / CHANNEL_LOG,
        ["t", "prn", "state", "cn0", "code_phase", "doppler"],
        sorted(chan_rows + event_rows, key=lambda r: (r[0], str(r[1]))),
    )

    replay_rows = [r.as_tuple() for r in plan.log] + phase_rows
    replay_rows.sort(key=lambda r: r[0])
    _write_csv(out / REPLAY_LOG, ["t", "event", "detail"], replay_rows)
    _write_csv(out / CAPTURE_LOG, ["t", "event", "detail"], [r.as_tuple() for r in capture_log])
    _write_csv(
        out / LINK_TRACE,
        ["send_time", "arrival_time", "stalled", "queue_depth"],
        schedule.trace_rows(),
    )
    _write_csv(out / ALARM_LOG, ["t", "kind", "score"], [(a.t, a.kind, round(a.score, 4)) for a in alarms])

    if monitor is not None and monitor.spectra:
        mat = np.stack([ps.power_db for _, ps in monitor.spectra], axis=1)
        np.savetxt(out / SPECTROGRAM_FILE, mat, fmt="%.4f")
        axes = {
            "times_s": [t for t, _ in monitor.spectra],
            "freq_start_hz": float(monitor.spectra[0][1].freqs[0]),
            "freq_step_hz": float(np.diff(monitor.spectra[0][1].freqs[:2])[0]),
            "nfft": sc.analysis.nfft,
            "sample_rate_hz": monitor.fs,
            "rows": "frequency bins",
            "columns": "time (one per second)",
        }
        (out / SPECTROGRAM_AXES).write_text(json.dumps(axes, indent=2, sort_keys=True))

    (out / REPORT_FILE).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    manifest = {
        "scenario": sc.echo,
        "package_version": __version__,
        "files": sorted(
            p.name for p in out.iterdir() if p.is_file() and p.name != MANIFEST_FILE
        ),
        "generated_at": datetime.now(timezone.utc).isoformat(),
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def sweep(
    base: Scenario,
    param_path: str,
    values: list,
    out_dir: str | Path | None = None,
) -> list[tuple[object, RunReport]]:
    """One run per value of a dotted scenario parameter, shared seed."""
    import copy

    from .scenario import parse_scenario, serialize_scenario
    import tempfile
    import yaml as _yaml

    results = []
    base_dict = serialize_scenario(base)
    out_base = Path(out_dir) if out_dir is not None else _resolve_out_dir(base, None)
    for value in values:
        d = copy.deepcopy(base_dict)
        node = d
        parts = param_path.split(".")
        for p in parts[:-1]:
            if p not in node:
                raise KeyError(f"cannot resolve sweep parameter {param_path!r} at {p!r}")
            node = node[p]
        if parts[-1] not in node:
            raise KeyError(f"cannot resolve sweep parameter {param_path!r}")
        node[parts[-1]] = value
        d["name"] = f"{base.name}_{parts[-1]}_{value:g}" if isinstance(value, float) else f"{base.name}_{parts[-1]}_{value}"
        with tempfile.NamedTemporaryFile("w", suffix=".scn", delete=False) as fh:
            _yaml.safe_dump(d, fh, sort_keys=False)
            tmp = fh.name
        try:
            scen = parse_scenario(tmp)
        finally:
            os.unlink(tmp)
        report = run_scenario(scen, out_base / scen.name)
        results.append((value, report))
    return results


def write_sweep_table(results, path: str | Path):
    rows = []
    for value, rep in results:
        rows.append(
            (
                value,
                rep.captured,
                "" if rep.time_to_capture_s is None else rep.time_to_capture_s,
                rep.stall_seconds,
                "" if rep.final_position_error_vs_sampler_m is None else rep.final_position_error_vs_sampler_m,
                "" if rep.final_position_error_vs_victim_m is None else rep.final_position_error_vs_victim_m,
                rep.n_fixes,
            )
        )
    _write_csv(
        Path(path),
        ["value", "captured", "time_to_capture_s", "stall_seconds",
         "final_error_vs_sampler_m", "final_error_vs_victim_m", "n_fixes"],
        rows,
    )
