import numpy as np
import pytest

from meaclab.geometry import (
    SPEED_OF_LIGHT,
    AntennaFeedPlan,
    CircularOrbit,
    EcefPosition,
    GeometryError,
    SatelliteOrbitSpec,
    Scene,
    doppler_of,
    elevation_deg,
    geometric_range,
    render_antenna_feed,
    signal_spec_for,
    true_pseudorange,
    visible_satellites,
)
from meaclab.signals import CHIP_RATE_HZ, CODE_LENGTH, IqBuffer, generate_ca_code

from oracles import correlate_against_replica

FS = 1.023e6


def make_scene(n_sats=6, noise_floor=0.0, seed=0):
    """Satellites spread over the sky above a Stockholm-like location."""
    rng = np.random.default_rng(seed)
    up = np.array([0.2898, 0.0976, 0.9521])
    up /= np.linalg.norm(up)
    victim = EcefPosition.from_array(up * 6.371e6)
    # sampler ~1100 km away along the surface
    east = np.cross([0, 0, 1.0], up)
    east /= np.linalg.norm(east)
    ang = 1.1e6 / 6.371e6
    sampler_dir = up * np.cos(ang) + east * np.sin(ang)
    sampler = EcefPosition.from_array(sampler_dir * 6.371e6)

    sats = []
    prn = 1
    while len(sats) < n_sats:
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        pos = v * 2.66e7
        if elevation_deg(pos, victim) > 15 and elevation_deg(pos, sampler) > 15:
            sats.append(SatelliteOrbitSpec(prn_id=prn, position=EcefPosition.from_array(pos)))
            prn += 1
    return Scene(
        satellites=sats,
        sampler_location=sampler,
        victim_location=victim,
        noise_floor=noise_floor,
    )


class TestRanges:
    def test_on_axis(self):
        assert geometric_range(EcefPosition(2.6e7, 0, 0), EcefPosition(0, 0, 0)) == 2.6e7

    def test_3_4_5(self):
        assert geometric_range(EcefPosition(3, 4, 0), EcefPosition(0, 0, 0)) == 5.0

    def test_symmetric(self):
        a, b = EcefPosition(1e6, 2e6, 3e6), EcefPosition(-1e6, 0.5e6, 2e6)
        assert geometric_range(a, b) == geometric_range(b, a)

    def test_pseudorange_zero_biases(self):
        assert true_pseudorange(1.234e7) == 1.234e7

    def test_pseudorange_rx_bias_one_ms(self):
        assert true_pseudorange(1e7, rx_clock_bias_s=1e-3) == pytest.approx(
            1e7 + 299792.458, abs=1e-6
        )

    def test_pseudorange_extra_path_delay(self):
        assert true_pseudorange(1e7, extra_path_delay_s=5e-3) == pytest.approx(
            1e7 + 5e-3 * SPEED_OF_LIGHT
        )


class TestDoppler:
    def test_static_satellite_zero(self):
        sat = SatelliteOrbitSpec(prn_id=1, position=EcefPosition(2.6e7, 0, 0))
        assert doppler_of(sat, EcefPosition(6.4e6, 0, 0)) == 0.0

    def test_perpendicular_motion_zero(self):
        sat = SatelliteOrbitSpec(
            prn_id=1, position=EcefPosition(2.6e7, 0, 0), velocity_mps=(0.0, 3000.0, 0.0)
        )
        assert doppler_of(sat, EcefPosition(6.4e6, 0, 0)) == pytest.approx(0.0, abs=1e-9)

    def test_radial_approach_positive_5255(self):
        # satellite above +x moving straight down toward the receiver
        sat = SatelliteOrbitSpec(
            prn_id=1, position=EcefPosition(2.6e7, 0, 0), velocity_mps=(-1000.0, 0.0, 0.0)
        )
        fd = doppler_of(sat, EcefPosition(6.4e6, 0, 0), carrier_hz=1.57542e9)
        expected = 1000.0 / SPEED_OF_LIGHT * 1.57542e9  # independent evaluation
        assert fd == pytest.approx(expected, rel=1e-12)
        assert fd == pytest.approx(5255.0, abs=1.0)

    def test_circular_orbit_velocity_consistent(self):
        orbit = CircularOrbit(
            radius_m=2.66e7, inclination_rad=0.9, phase_rad=0.3, angular_rate_rad_s=1.5e-4
        )
        sat = SatelliteOrbitSpec(prn_id=2, orbit=orbit)
        dt = 1e-3
        numeric = (orbit.position_at(dt) - orbit.position_at(0.0)) / dt
        assert np.allclose(numeric, sat.velocity_at(0.0), rtol=1e-6, atol=1e-3)


class TestSceneValidation:
    def test_leo_satellite_rejected(self):
        with pytest.raises(GeometryError):
            SatelliteOrbitSpec(prn_id=1, position=EcefPosition(1e7, 0, 0))

    def test_duplicate_prn_rejected(self):
        sat = SatelliteOrbitSpec(prn_id=1, position=EcefPosition(2.6e7, 0, 0))
        sat2 = SatelliteOrbitSpec(prn_id=1, position=EcefPosition(0, 2.6e7, 0))
        with pytest.raises(GeometryError):
            Scene([sat, sat2], EcefPosition(6.4e6, 0, 0), EcefPosition(0, 6.4e6, 0))

    def test_visibility_rule(self):
        scene = make_scene(5)
        vis = visible_satellites(scene, scene.victim_location)
        assert len(vis) == 5
        below = SatelliteOrbitSpec(
            prn_id=30,
            position=EcefPosition.from_array(-scene.victim_location.as_array() * 4.0),
        )
        scene.satellites.append(below)
        vis = visible_satellites(scene, scene.victim_location)
        assert all(s.prn_id != 30 for s in vis)


class TestRender:
    def test_legit_only_equals_synthesized_sky(self):
        scene = make_scene(4, noise_floor=0.0)
        plan = AntennaFeedPlan(gain_legitimate=1.0, gain_replay=0.0, gain_jam=0.0)
        feed = render_antenna_feed(scene, scene.victim_location, plan, (0.0, 0.001), FS, seed=1)
        from meaclab.signals import synthesize_baseband

        specs = [
            signal_spec_for(s, scene.victim_location, scene, seed=1)
            for s in visible_satellites(scene, scene.victim_location)
        ]
        ref = synthesize_baseband(specs, FS, 0.001)
        assert np.allclose(feed.samples, ref.samples)

    def test_replay_passthrough(self):
        scene = make_scene(4, noise_floor=0.0)
        rng = np.random.default_rng(0)
        replay = IqBuffer(rng.normal(size=1023) + 1j * rng.normal(size=1023), FS, 0.0)
        plan = AntennaFeedPlan(gain_legitimate=0.0, gain_replay=1.0, gain_jam=0.0)
        feed = render_antenna_feed(
            scene, scene.victim_location, plan, (0.0, 0.001), FS, replay_feed=replay, seed=2
        )
        assert np.allclose(feed.samples, replay.samples)

    def test_linear_in_gains(self):
        scene = make_scene(4, noise_floor=0.0)
        w = (0.0, 0.001)
        f1 = render_antenna_feed(scene, scene.victim_location, AntennaFeedPlan(1.0, 0, 0), w, FS)
        f2 = render_antenna_feed(scene, scene.victim_location, AntennaFeedPlan(2.0, 0, 0), w, FS)
        f3 = render_antenna_feed(scene, scene.victim_location, AntennaFeedPlan(3.0, 0, 0), w, FS)
        assert np.allclose(f1.samples + f2.samples, f3.samples)

    def test_code_phase_matches_pseudorange(self):
        # observe at 4 samples per chip so the oracle resolves sub-chip phase
        fs = 4 * FS
        scene = make_scene(5, noise_floor=0.0)
        plan = AntennaFeedPlan(1.0, 0.0, 0.0)
        for loc in (scene.victim_location, scene.sampler_location):
            for sat in visible_satellites(scene, loc):
                rho = geometric_range(sat.position, loc)
                expected = (rho / SPEED_OF_LIGHT * CHIP_RATE_HZ) % CODE_LENGTH
                # isolate this satellite by rendering it alone
                single = Scene([sat], scene.sampler_location, scene.victim_location, 0.0)
                fd = render_antenna_feed(single, loc, plan, (0.0, 0.005), fs, seed=3)
                mags = correlate_against_replica(
                    fd.samples, generate_ca_code(sat.prn_id).chips, fs, n_blocks=5
                )
                got = float(np.argmax(mags)) * CHIP_RATE_HZ / fs
                diff = min(abs(got - expected), CODE_LENGTH - abs(got - expected))
                assert diff <= 0.5

    def test_stronger_replay_copy_wins_correlation(self):
        scene = make_scene(1, noise_floor=0.0)
        sat = scene.satellites[0]
        w = (0.0, 0.005)
        plan_legit = AntennaFeedPlan(1.0, 0.0, 0.0)
        legit = render_antenna_feed(scene, scene.victim_location, plan_legit, w, FS)
        # replayed copy: the sampler's view, twice the amplitude
        sampler_view = render_antenna_feed(scene, scene.sampler_location, plan_legit, w, FS)
        replay = IqBuffer(2.0 * sampler_view.samples, FS, 0.0)
        combined = render_antenna_feed(
            scene,
            scene.victim_location,
            AntennaFeedPlan(1.0, 1.0, 0.0),
            w,
            FS,
            replay_feed=replay,
        )
        chips = generate_ca_code(sat.prn_id).chips
        corr = lambda buf: int(np.argmax(correlate_against_replica(buf.samples, chips, FS, n_blocks=5)))
        peak_combined = corr(combined)
        peak_replay = corr(sampler_view)
        peak_legit = corr(legit)
        assert peak_combined == peak_replay
        assert peak_combined != peak_legit

    def test_sample_rate_mismatch_rejected(self):
        scene = make_scene(4)
        replay = IqBuffer(np.zeros(2046, dtype=complex), 2.046e6, 0.0)
        with pytest.raises(GeometryError):
            render_antenna_feed(
                scene,
                scene.victim_location,
                AntennaFeedPlan(),
                (0.0, 0.001),
                FS,
                replay_feed=replay,
            )

    def test_locations_1100km_apart_give_different_phases(self):
        scene = make_scene(6, noise_floor=0.0)
        d = geometric_range(scene.sampler_location, scene.victim_location)
        assert 1.0e6 < d < 1.2e6
        for sat in scene.satellites:
            dv = geometric_range(sat.position, scene.victim_location)
            ds = geometric_range(sat.position, scene.sampler_location)
            assert abs(dv - ds) < 1.2e6
        diffs = [
            abs(geometric_range(s.position, scene.victim_location)
                - geometric_range(s.position, scene.sampler_location))
            for s in scene.satellites
        ]
        assert max(diffs) > 1e5  # per-satellite differences at the separation scale
