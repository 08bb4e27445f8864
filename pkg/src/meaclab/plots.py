"""Figure rendering from a completed run directory.

Produces a spectrogram heatmap with phase annotations plus a position
error / clock bias timeline, and a JSON sidecar with the per-phase mean
spectral deltas.  Output bytes are deterministic for a given run.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .runner import (
    ALARM_LOG,
    MANIFEST_FILE,
    PVT_LOG,
    REPLAY_LOG,
    SPECTROGRAM_AXES,
    SPECTROGRAM_FILE,
)

_SAVEFIG = dict(dpi=110, metadata={"Software": "meaclab"})


def _read_csv(path: Path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _phase_spans(replay_log_rows, horizon):
    spans = []
    changes = [r for r in replay_log_rows if r["event"] == "phase_change"]
    for i, row in enumerate(changes):
        t0 = float(row["t"])
        t1 = float(changes[i + 1]["t"]) if i + 1 < len(changes) else horizon
        spans.append((t0, t1, row["detail"]))
    return spans


def render_plots(run_dir: str | Path) -> list[Path]:
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST_FILE
    if not manifest_path.exists():
        raise FileNotFoundError(f"no run manifest in {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    scenario = manifest["scenario"]
    horizon = scenario["horizon_s"]
    victim = np.array(scenario["scene"]["victim_location_ecef"])
    sampler = np.array(scenario["scene"]["sampler_location_ecef"])
    written: list[Path] = []

    replay_rows = _read_csv(run_dir / REPLAY_LOG)
    spans = _phase_spans(replay_rows, horizon)

    # --- spectrogram heatmap (when the run monitored the spectrum)
    spec_path = run_dir / SPECTROGRAM_FILE
    if spec_path.exists():
        mat = np.loadtxt(spec_path)
        axes = json.loads((run_dir / SPECTROGRAM_AXES).read_text())
        times = np.array(axes["times_s"])
        freqs = (axes["freq_start_hz"] + axes["freq_step_hz"] * np.arange(mat.shape[0])) / 1e6

        fig, ax = plt.subplots(figsize=(9, 4.5))
        im = ax.pcolormesh(times, freqs, mat, shading="nearest", cmap="viridis")
        fig.colorbar(im, ax=ax, label="power [dB]")
        for t0, t1, name in spans:
            ax.axvline(t0, color="white", lw=0.8, ls="--")
            ax.text(t0 + 0.3, freqs[-1] * 0.92, name, color="white", fontsize=8)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("baseband frequency [MHz]")
        ax.set_title("victim antenna spectrogram")
        fig.tight_layout()
        out = run_dir / "spectrogram.png"
        fig.savefig(out, **_SAVEFIG)
        plt.close(fig)
        written.append(out)

        # per-phase mean dB delta against the pre-attack columns (sidecar)
        base_cols = [j for j, t in enumerate(times) if any(
            t0 <= t < t1 and name == "Idle" for t0, t1, name in spans
        )]
        sidecar = {}
        if base_cols:
            base = mat[:, base_cols].mean(axis=1)
            for t0, t1, name in spans:
                cols = [j for j, t in enumerate(times) if t0 <= t < t1]
                if cols:
                    sidecar[name] = float(np.mean(np.abs(mat[:, cols].mean(axis=1) - base)))
        sidecar_path = run_dir / "plot_sidecar.json"
        sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
        written.append(sidecar_path)

    # --- position error and clock bias over time
    pvt_rows = _read_csv(run_dir / PVT_LOG)
    t_fix, err_v, err_s, bias = [], [], [], []
    for row in pvt_rows:
        if row["fix"] != "1":
            continue
        p = np.array([float(row["x"]), float(row["y"]), float(row["z"])])
        t_fix.append(float(row["t"]))
        err_v.append(np.linalg.norm(p - victim))
        err_s.append(np.linalg.norm(p - sampler))
        bias.append(float(row["clock_bias"]))

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    if t_fix:
        ax1.semilogy(t_fix, err_v, ".-", label="vs victim truth")
        ax1.semilogy(t_fix, err_s, ".-", label="vs sampler location")
        ax2.plot(t_fix, bias, ".-")
    for t0, t1, name in spans:
        for ax in (ax1, ax2):
            ax.axvline(t0, color="gray", lw=0.8, ls="--")
        ax1.text(t0 + 0.3, ax1.get_ylim()[1] * 0.5 if t_fix else 0.5, name, fontsize=8)
    alarms = _read_csv(run_dir / ALARM_LOG) if (run_dir / ALARM_LOG).exists() else []
    for row in alarms:
        ax1.axvline(float(row["t"]), color="red", lw=0.5, alpha=0.4)
    ax1.set_ylabel("position error [m]")
    ax1.legend(loc="center right", fontsize=8)
    ax2.set_ylabel("clock bias [s]")
    ax2.set_xlabel("time [s]")
    ax1.set_title("solved position error (red ticks: spectral alarms)")
    fig.tight_layout()
    out = run_dir / "pvt_error.png"
    fig.savefig(out, **_SAVEFIG)
    plt.close(fig)
    written.append(out)
    return written
