import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.errors import DomainError
from app.phy import SinrTargets, mmse_beamformers, sinr_uplink
from app.power_control import feasibility_test, required_powers


def _targets(values):
    return SinrTargets(
        targets={k: float(g) for k, g in enumerate(values)},
        required_rates={k: float(np.log2(1 + g)) for k, g in enumerate(values)},
    )


def test_single_device_closed_form():
    h = np.array([[1.0, 0.0]], dtype=complex)
    report = feasibility_test([0], h, _targets([0.5]), sum_power=1.0, sigma2=1.0)
    assert report.feasible
    assert report.converged
    assert report.powers.powers[0] == pytest.approx(0.5)


@pytest.mark.parametrize("gamma, sum_power, feasible", [(0.4, 1.0, True), (0.6, 1.0, False), (0.5, 1.0, True)])
def test_orthogonal_pair_decouples(gamma, sum_power, feasible):
    H = np.eye(2, dtype=complex)
    report = feasibility_test([0, 1], H, _targets([gamma, gamma]), sum_power, sigma2=1.0)
    assert report.feasible is feasible
    assert report.required_total == pytest.approx(2 * gamma)
    if feasible:
        assert_allclose(report.powers.powers, [gamma, gamma])


def test_identical_channels_with_large_targets_infeasible():
    h = np.array([1.0, 0.5j, -0.3])
    H = np.vstack([h, h])
    report = feasibility_test([0, 1], H, _targets([5.0, 5.0]), sum_power=100.0, sigma2=1.0)
    assert not report.feasible


def test_feasible_powers_meet_targets_within_budget(make_instance):
    checked = 0
    for seed in range(30):
        instance = make_instance(seed, device_count=4, target_range=(0.02, 0.5))
        report = feasibility_test(range(4), instance.channels, instance.targets, instance.sum_power, instance.sigma2)
        if not report.feasible:
            continue
        checked += 1
        p = report.powers.powers
        assert p.sum() <= instance.sum_power * (1 + 1e-8)
        beams = mmse_beamformers(range(4), instance.channels, p, instance.sigma2)
        for k in range(4):
            sinr = sinr_uplink(k, instance.channels, beams, p, range(4), instance.sigma2)
            assert sinr >= instance.targets.targets[k] * (1 - 1e-6)
    assert checked > 0


def test_normalized_powers_sum_to_budget(make_instance):
    instance = make_instance(5)
    report = feasibility_test(range(5), instance.channels, instance.targets, instance.sum_power, instance.sigma2)
    assert report.normalized_powers.sum() == pytest.approx(instance.sum_power)


def test_required_powers_are_zero_outside_set(make_instance):
    instance = make_instance(6)
    p = np.full(5, 0.006)
    tilde = required_powers([1, 3], instance.channels, instance.targets, p, instance.sigma2)
    assert tilde[[0, 2, 4]].tolist() == [0.0, 0.0, 0.0]
    assert np.all(tilde[[1, 3]] > 0)


def test_required_powers_matches_explicit_interference(make_instance):
    instance = make_instance(8, device_count=3)
    H = instance.channels.vectors
    p = np.array([0.01, 0.005, 0.015])
    tilde = required_powers([0, 1, 2], instance.channels, instance.targets, p, instance.sigma2)
    for k in range(3):
        sigma_k = instance.sigma2 * np.eye(4) + sum(p[i] * np.outer(H[i], H[i].conj()) for i in range(3) if i != k)
        gain = np.real(H[k].conj() @ np.linalg.solve(sigma_k, H[k]))
        assert tilde[k] == pytest.approx(instance.targets.targets[k] / gain, rel=1e-9)


def test_fixed_point_independent_of_start(make_instance):
    instances = 0
    seed = 0
    while instances < 100:
        instance = make_instance(seed, device_count=4, target_range=(0.02, 0.3))
        seed += 1
        reference = feasibility_test(range(4), instance.channels, instance.targets, instance.sum_power, instance.sigma2)
        if not reference.feasible:
            continue
        instances += 1
        rng = np.random.default_rng(seed)
        for _ in range(10):
            start = rng.uniform(0.01, 1.0, size=4)
            report = feasibility_test(
                range(4), instance.channels, instance.targets, instance.sum_power, instance.sigma2, initial_powers=start
            )
            assert report.feasible
            assert_allclose(report.normalized_powers, reference.normalized_powers, rtol=0, atol=1e-8)


def test_subsets_of_feasible_sets_are_feasible(make_instance):
    for seed in range(20):
        instance = make_instance(seed, device_count=4, target_range=(0.02, 0.5))
        report = feasibility_test(range(4), instance.channels, instance.targets, instance.sum_power, instance.sigma2)
        if not report.feasible:
            continue
        for size in (1, 2, 3):
            for subset in itertools.combinations(range(4), size):
                sub = feasibility_test(subset, instance.channels, instance.targets, instance.sum_power, instance.sigma2)
                assert sub.feasible


def test_rejects_empty_or_inadmissible_sets(make_instance):
    instance = make_instance(1)
    with pytest.raises(DomainError):
        feasibility_test([], instance.channels, instance.targets, instance.sum_power, instance.sigma2)
    restricted = instance.targets.restricted_to([0, 1])
    with pytest.raises(DomainError):
        feasibility_test([0, 2], instance.channels, restricted, instance.sum_power, instance.sigma2)


def test_bad_initial_powers_rejected(make_instance):
    instance = make_instance(2)
    with pytest.raises(DomainError):
        feasibility_test([0, 1], instance.channels, instance.targets, instance.sum_power, instance.sigma2, initial_powers=[1.0])


def test_non_convergence_reports_infeasible(make_instance):
    instance = make_instance(3)
    report = feasibility_test(
        range(5), instance.channels, instance.targets, instance.sum_power, instance.sigma2, tol=0.0, max_iterations=3
    )
    assert not report.converged
    assert not report.feasible
    assert report.iterations == 3
