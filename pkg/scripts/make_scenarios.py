#!/usr/bin/env python3
"""Generate the shipped scenario files.

Geometry: the victim sits near Stockholm/Kista, the sampler ~1100 km away
toward central Germany (the long-distance relay setting).  Satellites are
drawn on a 26,600 km shell, kept above 15 degrees elevation at both sites,
and accepted only if the victim-side PDOP stays reasonable.
"""

import math
from pathlib import Path

import numpy as np
import yaml

OUT = Path(__file__).resolve().parent.parent / "scenarios"

EARTH_R = 6.371e6
SAT_R = 2.66e7


def lla_to_ecef(lat_deg, lon_deg, radius=EARTH_R):
    lat, lon = math.radians(lat_deg), math.radians(lon_deg)
    return np.array(
        [
            radius * math.cos(lat) * math.cos(lon),
            radius * math.cos(lat) * math.sin(lon),
            radius * math.sin(lat),
        ]
    )


def along_great_circle(a, b, distance_m):
    """Point at arc distance from a toward b on the sphere |a| = |b|."""
    r = np.linalg.norm(a)
    ua, ub = a / r, b / np.linalg.norm(b)
    axis = ub - ua * np.dot(ua, ub)
    axis /= np.linalg.norm(axis)
    ang = distance_m / r
    return r * (ua * math.cos(ang) + axis * math.sin(ang))


def elevation_deg(sat, rx):
    up = rx / np.linalg.norm(rx)
    los = sat - rx
    return math.degrees(math.asin(np.dot(los / np.linalg.norm(los), up)))


def pdop(sats, rx):
    diff = sats - rx[None, :]
    ranges = np.linalg.norm(diff, axis=1)
    jac = np.hstack([-diff / ranges[:, None], np.ones((len(sats), 1))])
    cov = np.linalg.inv(jac.T @ jac)
    return math.sqrt(np.trace(cov[:3, :3]))


def make_sky(victim, sampler, n_sats, seed, min_elev=15.0, max_pdop=2.5):
    rng = np.random.default_rng(seed)
    prns = [2, 5, 7, 9, 13, 17, 21, 28, 3, 11][:n_sats]
    for _ in range(4000):
        sats = []
        tries = 0
        while len(sats) < n_sats and tries < 3000:
            tries += 1
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            pos = v * SAT_R
            if elevation_deg(pos, victim) < min_elev or elevation_deg(pos, sampler) < min_elev:
                continue
            if any(
                np.dot(pos / SAT_R, s / SAT_R) > math.cos(math.radians(18)) for s in sats
            ):
                continue  # keep satellites angularly separated
            sats.append(pos)
        if len(sats) == n_sats and pdop(np.array(sats), victim) <= max_pdop:
            return [
                {"prn": prn, "position_ecef": [float(c) for c in pos]}
                for prn, pos in zip(prns, sats)
            ]
    raise RuntimeError("no acceptable constellation found")


def base_scenario(name, seed, horizon, sats, victim, sampler):
    return {
        "name": name,
        "seed": seed,
        "horizon_s": float(horizon),
        "mode": "virtual",
        "scene": {
            "noise_floor": 1.0e-6,
            "sampler_location_ecef": [float(c) for c in sampler],
            "victim_location_ecef": [float(c) for c in victim],
            "satellites": sats,
        },
        "stream": {
            "sample_rate_hz": 1023000.0,
            "quantization_bits": 16,
            "frame_samples": 4096,
            "full_scale": "auto",
        },
        "link": {
            "bandwidth_bps": 49.0e6,
            "base_latency_s": 0.02,
            "jitter_stddev_s": 0.0005,
            "mode": "reliable",
        },
        "forwarder": {
            "jitter_buffer_s": 0.25,
            "replay_gain_db": 6.0,
            "jam_power_db_over_signal": 40.0,
        },
        "script": [],
        "receiver": {},
        "analysis": {},
        "report": {"capture_radius_m": 1000.0},
    }


def main():
    OUT.mkdir(exist_ok=True)
    victim = lla_to_ecef(59.40, 17.95)  # Stockholm / Kista
    frankfurt = lla_to_ecef(50.11, 8.68)
    sampler = along_great_circle(victim, frankfurt, 1.1e6)
    print(f"victim-sampler separation: {np.linalg.norm(victim - sampler) / 1e3:.1f} km")

    sats = make_sky(victim, sampler, 8, seed=424242)
    small_sky = sats[:5]

    def write(name, d):
        path = OUT / f"{name}.scn"
        path.write_text(yaml.safe_dump(d, sort_keys=False))
        print("wrote", path)

    # position-sensitive scenarios stream at 2 samples per chip: at exactly
    # one sample per chip the rendered content quantizes every delay to a
    # whole chip, which costs ~300 m of position error; half-chip content
    # keeps the end-to-end error inside the 150 m pseudorange budget
    def precise_stream(d):
        d["stream"]["sample_rate_hz"] = 2046000.0
        d["link"]["bandwidth_bps"] = 80.0e6  # framed rate is ~65.7 Mb/s

    # cold start: the receiver boots into an already-running replay
    cold = base_scenario("cold_start", 101, 60, sats, victim, sampler)
    cold["script"] = [{"phase": "replay_only", "start_s": 0.0, "duration_s": 60.0}]
    cold["receiver"] = {"start_time_s": 2.0}
    precise_stream(cold)
    write("cold_start", cold)

    # warm start: lock on the legitimate sky, jam everything, then meacon;
    # spectral monitoring on (this is the three-phase signature scenario)
    warm = base_scenario("warm_jam_replay", 202, 90, sats, victim, sampler)
    warm["script"] = [
        {"phase": "idle", "start_s": 0.0, "duration_s": 10.0},
        {"phase": "jam_all", "start_s": 10.0, "duration_s": 30.0},
        {"phase": "replay_l1_jam_others", "start_s": 40.0, "duration_s": 50.0},
    ]
    warm["receiver"] = {"warm_start": True}
    precise_stream(warm)
    warm["analysis"] = {
        "monitor_sample_rate_hz": 8184000.0,
        "baseline_interval_s": [0.0, 8.0],
    }
    write("warm_jam_replay", warm)

    # warm start with a re-jam pulse after capture: forces a reacquisition
    rejam = base_scenario("warm_rejam", 203, 92, sats, victim, sampler)
    rejam["script"] = [
        {"phase": "idle", "start_s": 0.0, "duration_s": 10.0},
        {"phase": "jam_all", "start_s": 10.0, "duration_s": 30.0},
        {"phase": "replay_l1_jam_others", "start_s": 40.0, "duration_s": 30.0},
        {"phase": "rejam_pulse", "start_s": 70.0, "duration_s": 3.0},
        {"phase": "replay_l1_jam_others", "start_s": 73.0, "duration_s": 19.0},
    ]
    rejam["receiver"] = {"warm_start": True}
    precise_stream(rejam)
    write("warm_rejam", rejam)

    # bandwidth threshold: 11 Mb/s upload cannot carry the 32.8 Mb/s stream
    bw = base_scenario("bandwidth_11", 303, 60, sats, victim, sampler)
    bw["script"] = [{"phase": "replay_only", "start_s": 0.0, "duration_s": 60.0}]
    bw["receiver"] = {"start_time_s": 2.0}
    bw["link"]["bandwidth_bps"] = 11.0e6
    bw["link"]["send_buffer_limit_bytes"] = 1 << 20
    write("bandwidth_11", bw)

    # short network blackout against the jitter buffer; loss timeout is set
    # below the resulting 1.75 s gap so the channels visibly drop and resume
    cg = base_scenario("congestion_gap", 404, 34, sats, victim, sampler)
    cg["script"] = [{"phase": "replay_only", "start_s": 0.0, "duration_s": 34.0}]
    cg["receiver"] = {"start_time_s": 2.0, "loss_timeout_s": 1.0}
    # a strong replay: its amplified noise floor buries the legitimate
    # signals whenever the stream flows, so after the blackout the receiver
    # falls back onto the replay instead of lingering on legitimate locks
    cg["forwarder"]["replay_gain_db"] = 20.0
    cg["link"]["congestion_episodes"] = [
        {"start_s": 12.5, "duration_s": 2.0, "factor": 0.0}
    ]
    write("congestion_gap", cg)

    # small fast scenario for determinism checks and demos
    smoke = base_scenario("smoke", 505, 20, small_sky, victim, sampler)
    smoke["script"] = [{"phase": "replay_only", "start_s": 0.0, "duration_s": 20.0}]
    smoke["receiver"] = {"start_time_s": 2.0}
    write("smoke", smoke)


if __name__ == "__main__":
    main()
