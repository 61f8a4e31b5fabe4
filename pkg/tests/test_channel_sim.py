from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evcam_vlc.channel_sim import (
    NOISE_PRESETS, SENSOR_H, SENSOR_W, NoiseModel, SceneConfig, Trajectory, apply_refractory, bar_centroid,
    generate_events, make_events, project_bar, sort_events, vibration_amplitude_for_slew,
)
from evcam_vlc.channel_sim import _led_positions, _moving_response, _static_response
from evcam_vlc.errors import ConfigError, InvalidArgument, SimulationHorizonError
from evcam_vlc.framing import build_pilot_codebook, to_ook

from .conftest import simulate

POINT = dict(n_leds=1, leds_per_cluster=1, blob_sigma_px=0.3)


@pytest.fixture(scope="module")
def levels():
    return np.tile(np.array([0, 1], np.uint8), (16, 100))


class TestConfig:
    def test_defaults(self):
        sc = SceneConfig()
        assert sc.n_clusters == 16
        assert sc.led_cluster.tolist() == sorted(sc.led_cluster.tolist())

    @pytest.mark.parametrize("lpc, k", [(8, 12), (6, 16), (3, 32)])
    def test_cluster_modes(self, lpc, k):
        assert SceneConfig(leds_per_cluster=lpc).n_clusters == k

    def test_bad_scene_lists_keys(self):
        with pytest.raises(ConfigError) as exc:
            SceneConfig(leds_per_cluster=5, distance_m=-1)
        keys = [k for k, _ in exc.value.problems]
        assert keys == ["leds_per_cluster", "distance_m"]

    def test_from_dict_paths(self):
        with pytest.raises(ConfigError) as exc:
            NoiseModel.from_dict({"p_drop": 2.0, "nope": 1, "jitter_sigma_us": "x"}, path="noise.")
        keys = sorted(k for k, _ in exc.value.problems)
        assert keys == ["noise.jitter_sigma_us", "noise.nope", "noise.p_drop"]

    def test_noise_non_negative(self):
        with pytest.raises(ConfigError):
            NoiseModel(bg_rate_hz_per_px=-1)

    def test_presets(self):
        assert NOISE_PRESETS["ideal"] == NoiseModel()
        po = NOISE_PRESETS["paper-outdoor"]
        assert 0 < po.p_drop < 1 and po.contrast_threshold > 0


class TestGeometry:
    def test_spacing_at_40m(self):
        assert SceneConfig().led_spacing_px(40.0) == pytest.approx(5144 * 0.0125 / 40)
        assert SceneConfig().led_spacing_px(40.0) == pytest.approx(1.61, abs=0.005)

    def test_halving_distance_doubles_spacing(self):
        sc = SceneConfig()
        assert sc.led_spacing_px(20.0) == pytest.approx(2 * sc.led_spacing_px(40.0))

    def test_static_footprints_constant(self):
        sc, tr = SceneConfig(distance_m=30), Trajectory()
        a, b = project_bar(sc, tr, 0.0), project_bar(sc, tr, 0.37)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa, fb)

    def test_clusters_stack_vertically(self):
        fp = project_bar(SceneConfig(distance_m=20), Trajectory(), 0.0)
        means = [f[:, 1].mean() for f in fp]
        assert np.all(np.diff(means) > 0)

    def test_horizon_error(self):
        tr = Trajectory(speed_mps=10.0)
        with pytest.raises(SimulationHorizonError):
            project_bar(SceneConfig(distance_m=10), tr, 1.5)
        with pytest.raises(SimulationHorizonError):
            Trajectory(horizon_s=1.0).distance(2.0, 10.0)

    def test_vibration_slew_magnitude(self):
        amp = vibration_amplitude_for_slew(8.0, 0.010, 10.0)
        tr = Trajectory(vib_amp_px=amp, vib_freq_hz=10.0, seed=3)
        t = np.linspace(0, 1, 10001)
        y = tr.vertical_offset(t)
        slew = np.abs(y[100:] - y[:-100])  # 10 ms lag on a 0.1 ms grid
        assert slew.max() == pytest.approx(8.0, abs=0.01)

    def test_random_walk_seeded(self):
        a = Trajectory(walk_sigma_px=5.0, seed=1).vertical_offset([0.1, 0.2])
        b = Trajectory(walk_sigma_px=5.0, seed=1).vertical_offset([0.1, 0.2])
        c = Trajectory(walk_sigma_px=5.0, seed=2).vertical_offset([0.1, 0.2])
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestEvents:
    def test_constant_level_no_events(self):
        ev = generate_events(np.ones((16, 50), np.uint8), SceneConfig(), Trajectory(), NoiseModel())
        assert ev.size == 0

    def test_single_rising_edge_single_pixel(self):
        sc = SceneConfig(**POINT)
        assert len(project_bar(sc, Trajectory(), 0.0)[0]) == 1
        ev = generate_events(np.array([[0, 1]]), sc, Trajectory(), NoiseModel())
        assert ev.size == 1
        assert (int(ev["t"][0]), int(ev["p"][0])) == (100, 1)
        assert (int(ev["x"][0]), int(ev["y"][0])) == (640, 360)

    def test_all_ones_pilot_alternates(self):
        levels = to_ook(build_pilot_codebook()[0].spread)[None, :]
        ev = generate_events(levels, SceneConfig(**POINT), Trajectory(), NoiseModel())
        assert ev.size == 31
        np.testing.assert_array_equal(np.diff(ev["t"]), 100)
        np.testing.assert_array_equal(ev["p"], np.tile([1, -1], 16)[:31])

    def test_event_conservation(self):
        sc = SceneConfig(n_leds=6, leds_per_cluster=6, distance_m=25)
        rng = np.random.default_rng(2)
        levels = rng.integers(0, 2, (1, 200)).astype(np.uint8)
        n_edges = int(np.count_nonzero(np.diff(levels[0].astype(int))))
        ev = generate_events(levels, sc, Trajectory(), NoiseModel(refractory_us=0))
        assert ev.size == n_edges * len(project_bar(sc, Trajectory(), 0.0)[0])

    def test_polarity_balance(self):
        levels = np.tile(np.array([0, 1], np.uint8), (16, 40))
        levels = np.concatenate([levels, np.zeros((16, 1), np.uint8)], axis=1)
        ev = generate_events(levels, SceneConfig(distance_m=20), Trajectory(), NoiseModel())
        assert (ev["p"] == 1).sum() == (ev["p"] == -1).sum() > 0

    def test_sorted_and_in_bounds(self, ideal_capture_30m):
        _, ev = ideal_capture_30m
        assert np.all(np.diff(ev["t"]) >= 0)
        assert ev["x"].max() < SENSOR_W and ev["y"].max() < SENSOR_H
        np.testing.assert_array_equal(sort_events(ev), ev)

    def test_deterministic(self):
        noise = NOISE_PRESETS["paper-outdoor"]
        _, a = simulate(40, noise, seed=4)
        _, b = simulate(40, noise, seed=4)
        np.testing.assert_array_equal(a, b)

    def test_workers_do_not_change_output(self):
        noise = NOISE_PRESETS["paper-outdoor"]
        rng = np.random.default_rng(0)
        levels = rng.integers(0, 2, (16, 600)).astype(np.uint8)
        sc = SceneConfig(distance_m=35)
        a = generate_events(levels, sc, Trajectory(), noise, seed=9, workers=1)
        b = generate_events(levels, sc, Trajectory(), noise, seed=9, workers=4)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("distance", [10.0, 45.0, 62.0])
    def test_static_fast_path_matches_general_path(self, distance):
        sc = SceneConfig(distance_m=distance)
        delta = np.random.default_rng(1).integers(-1, 2, (16, 64))
        d, x, y = _led_positions(sc, Trajectory(), np.zeros(64))
        k_fast, s_fast = _static_response(sc, d[0], x[:1], y[:1], delta)
        k_gen, s_gen = _moving_response(sc, d, x, y, delta)
        np.testing.assert_array_equal(k_fast, k_gen)
        np.testing.assert_allclose(s_fast, s_gen, rtol=1e-12)

    def test_levels_shape_checked(self):
        with pytest.raises(InvalidArgument):
            generate_events(np.zeros((3, 10)), SceneConfig(), Trajectory(), NoiseModel())

    def test_pilot_centroid_matches_geometry(self):
        sc = SceneConfig(distance_m=30)
        levels = np.stack([to_ook(p.spread) for p in build_pilot_codebook()[:16]])
        ev = generate_events(levels, sc, Trajectory(), NoiseModel())
        odd = ev[((ev["t"] // 100) % 2) == 1]  # boundaries where every cluster has an edge
        x0, y0 = bar_centroid(sc, Trajectory(), 0.0)
        assert abs(odd["y"].mean() - y0[0]) < 0.5
        assert abs(odd["x"].mean() - x0[0]) < 0.5

    def test_labels(self):
        noise = NoiseModel(bg_rate_hz_per_px=5.0)
        levels = np.tile(np.array([0, 1], np.uint8), (16, 30))
        ev, sig = generate_events(levels, SceneConfig(distance_m=30), Trajectory(), noise, return_labels=True)
        assert sig.dtype == bool and sig.size == ev.size
        assert 0 < (~sig).sum() and 0 < sig.sum()


class TestNoise:

    def test_drop_fraction(self, levels):
        sc = SceneConfig(distance_m=30)
        full = generate_events(levels, sc, Trajectory(), NoiseModel()).size
        part = generate_events(levels, sc, Trajectory(), NoiseModel(p_drop=0.3), seed=1).size
        assert part / full == pytest.approx(0.7, abs=0.02)

    def test_background_rate(self):
        noise = NoiseModel(bg_rate_hz_per_px=2.0, refractory_us=0)
        ev = generate_events(np.zeros((16, 1000), np.uint8), SceneConfig(), Trajectory(), noise, seed=3)
        expected = 2.0 * SENSOR_W * SENSOR_H * 0.1
        assert abs(ev.size - expected) < 5 * np.sqrt(expected)

    def test_jitter_spread(self, levels):
        sc = SceneConfig(**POINT)
        lv = levels[:1]
        ev = generate_events(lv, sc, Trajectory(), NoiseModel(jitter_sigma_us=10.0, refractory_us=0), seed=2)
        resid = ev["t"] - np.rint(ev["t"] / 100) * 100
        assert 6 < resid.std() < 14

    def test_contrast_threshold_removes_far_signal(self, levels):
        noise = NoiseModel(contrast_threshold=1.0)
        assert generate_events(levels, SceneConfig(distance_m=30), Trajectory(), noise).size > 0
        assert generate_events(levels, SceneConfig(distance_m=300), Trajectory(), noise).size == 0

    def test_refractory_drops_close_events(self):
        ev = make_events([0, 20, 60, 90, 130], [5] * 5, [5] * 5, [1, -1, 1, -1, 1])
        kept = apply_refractory(ev, 50)
        assert kept["t"].tolist() == [0, 60, 130]

    def test_refractory_per_pixel(self):
        ev = make_events([0, 10, 20], [1, 2, 1], [0, 0, 0], [1, 1, 1])
        assert apply_refractory(ev, 50)["t"].tolist() == [0, 10]

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 2000), st.integers(0, 3)), min_size=1, max_size=60),
           st.integers(1, 300))
    def test_refractory_matches_sequential_rule(self, raw, refr):
        raw = sorted(raw)
        ev = make_events([t for t, _ in raw], [x for _, x in raw], [0] * len(raw), [1] * len(raw))
        kept = apply_refractory(ev, refr)
        expect = []
        last = {}
        for t, x in raw:
            if x in last and t - last[x] < refr:
                continue
            last[x] = t
            expect.append((t, x))
        got = sorted(zip(kept["t"].tolist(), kept["x"].tolist()))
        assert got == sorted(expect)
