import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from app.channel import (
    ChannelRealization,
    Topology,
    db_to_linear,
    dbm_to_watts,
    draw_channels,
    draw_topology,
    path_loss_db,
    round_seed,
)
from app.errors import DomainError


@pytest.mark.parametrize(
    "distance, expected",
    [(1.0, -35.3), (100.0, -110.5), (10.0, -72.9)],
)
def test_path_loss_reference_points(distance, expected):
    assert path_loss_db(distance) == pytest.approx(expected, abs=1e-9)


def test_path_loss_vectorized():
    losses = path_loss_db(np.array([1.0, 10.0, 100.0]))
    assert_allclose(losses, [-35.3, -72.9, -110.5], atol=1e-9)


@pytest.mark.parametrize("distance", [0.0, -5.0])
def test_path_loss_rejects_non_positive_distance(distance):
    with pytest.raises(DomainError):
        path_loss_db(distance)


@given(st.floats(min_value=1.0, max_value=1e4), st.floats(min_value=1.0, max_value=1e4))
def test_path_loss_decreases_with_distance(d1, d2):
    if d1 < d2:
        assert path_loss_db(d1) > path_loss_db(d2)


def test_unit_conversions():
    assert db_to_linear(0.0) == pytest.approx(1.0)
    assert db_to_linear(30.0) == pytest.approx(1000.0)
    assert dbm_to_watts(0.0) == pytest.approx(1e-3)
    assert dbm_to_watts(30.0) == pytest.approx(1.0)


def test_round_seed_is_deterministic_and_distinguishes_inputs():
    assert round_seed(3, 5, 0) == round_seed(3, 5, 0)
    seeds = {round_seed(3, t, a, s) for t in range(4) for a in range(3) for s in range(2)}
    assert len(seeds) == 4 * 3 * 2


def test_topology_stays_in_annulus():
    topology = draw_topology(500, 50.0, 250.0, rng_seed=1)
    assert topology.device_count == 500
    assert topology.positions.min() >= 50.0
    assert topology.positions.max() <= 250.0


def test_topology_uniform_by_area():
    # P(d <= r) = (r² - 50²) / (250² - 50²); en r = 150 vale 1/3
    topology = draw_topology(20_000, 50.0, 250.0, rng_seed=2)
    assert np.mean(topology.positions <= 150.0) == pytest.approx(1.0 / 3.0, abs=0.02)


def test_topology_rejects_bad_geometry():
    with pytest.raises(DomainError):
        Topology(positions=np.array([10.0]), inner_radius=50.0, outer_radius=250.0)
    with pytest.raises(DomainError):
        draw_topology(0)


def test_same_seed_gives_identical_channels():
    topology = draw_topology(6, rng_seed=0)
    first = draw_channels(topology, 4, rng_seed=99, round_index=3)
    second = draw_channels(topology, 4, rng_seed=99, round_index=3)
    assert_array_equal(first.vectors, second.vectors)
    assert first.round_index == 3
    assert first.vectors.shape == (6, 4)


def test_different_seeds_give_different_channels():
    topology = draw_topology(6, rng_seed=0)
    assert not np.allclose(draw_channels(topology, 4, 1).vectors, draw_channels(topology, 4, 2).vectors)


def test_small_scale_fading_has_unit_second_moment():
    # A 1 m la ganancia es linear(-35.3 dB); se normaliza para aislar h~
    topology = Topology(positions=np.ones(100_000), inner_radius=1.0, outer_radius=1.0)
    channels = draw_channels(topology, 2, rng_seed=5)
    gain = db_to_linear(path_loss_db(1.0))
    normalized = np.sum(np.abs(channels.vectors) ** 2, axis=1) / gain / 2
    assert np.mean(normalized) == pytest.approx(1.0, abs=0.02)


def test_expected_channel_energy_at_one_meter():
    topology = Topology(positions=np.ones(50_000), inner_radius=1.0, outer_radius=1.0)
    channels = draw_channels(topology, 4, rng_seed=6)
    expected = 4 * db_to_linear(-35.3)
    assert np.mean(np.sum(np.abs(channels.vectors) ** 2, axis=1)) == pytest.approx(expected, rel=0.02)


def test_channel_realization_validation():
    with pytest.raises(DomainError):
        ChannelRealization(vectors=np.ones(3))
    with pytest.raises(DomainError):
        ChannelRealization(vectors=np.array([[np.nan, 1.0]]))
    realization = ChannelRealization(vectors=np.eye(3, 2))
    assert realization.device_count == 3
    assert realization.antenna_count == 2
    assert_array_equal(realization[1], [0.0, 1.0])


@settings(max_examples=25)
@given(st.integers(min_value=1, max_value=8), st.integers(min_value=1, max_value=8), st.integers(0, 2**31))
def test_channel_shape_property(devices, antennas, seed):
    topology = draw_topology(devices, rng_seed=seed)
    channels = draw_channels(topology, antennas, rng_seed=seed)
    assert channels.vectors.shape == (devices, antennas)
    assert np.all(np.isfinite(channels.vectors))
