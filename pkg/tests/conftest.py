from __future__ import annotations

import numpy as np
import pytest

from evcam_vlc.channel_sim import NoiseModel, SceneConfig, Trajectory, generate_events
from evcam_vlc.framing import build_capture, packet_capacity


def simulate(distance_m: float = 30.0, noise: NoiseModel | None = None, traj: Trajectory | None = None,
             seed: int = 0, n_clusters: int = 16, n_packets: int = 1, lead_chips: int | None = None, **scene):
    """One capture through the synthetic channel: returns (capture, events)."""
    rng = np.random.default_rng(seed)
    payloads = [rng.integers(0, 2, packet_capacity(n_clusters)) for _ in range(n_packets)]
    cap = build_capture(payloads, n_clusters, rng, lead_chips=lead_chips)
    scene.setdefault("leds_per_cluster", 96 // n_clusters)
    sc = SceneConfig(distance_m=distance_m, **scene)
    ev = generate_events(cap.levels, sc, traj or Trajectory(), noise or NoiseModel(), seed=seed)
    return cap, ev


@pytest.fixture(scope="session")
def ideal_capture_30m():
    return simulate(30.0, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
