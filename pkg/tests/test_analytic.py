import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from pollwait.analytic import (
    DimensionMismatch,
    PolicyMismatch,
    analyze,
    mean_wait,
    moving_term_closed,
    moving_term_general,
    residual_term,
    route_matrix,
    switch_matrix,
)
from pollwait.dists import Deterministic, Exponential, Hyperexponential2, Uniform
from pollwait.model import LoadProfile, PollingOrder, Policy, QueueSpec, SystemConfig, validate


def system(rates, dist=Deterministic(1.0), alpha=0.0, order=None, policy=Policy.EXHAUSTIVE):
    qs = tuple(QueueSpec(r, dist, policy=policy) for r in rates)
    return SystemConfig(qs, alpha, order or PollingOrder.circular())


def brute_moving_term(rho_i, alpha, gated=()):
    """Direct evaluation of (1 - rho) N alpha / 2 + (1 / rho) sum_ij rho_i rho_j pi_ij
    with the cyclic travel distance, written independently of the package."""
    n = len(rho_i)
    rho = sum(rho_i)
    total = 0.0
    for i, j in itertools.product(range(n), repeat=2):
        hops = (j - i) % n
        if i == j and j in gated:
            hops = n
        total += rho_i[i] * rho_i[j] * alpha * hops
    return (1 - rho) * n * alpha / 2 + total / rho


def test_residual_examples():
    assert residual_term(validate(system([0.5], Deterministic(1.0)))) == 0.5
    assert residual_term(validate(system([0.5], Exponential(1.0)))) == 1.0
    assert residual_term(validate(system([0.5], Uniform(0, 2)))) == pytest.approx(2 / 3)


def test_circular_exhaustive_matrix():
    m = switch_matrix(system([0.1] * 3, alpha=0.1))
    expected = [[0, 0.1, 0.2], [0.2, 0, 0.1], [0.1, 0.2, 0]]
    np.testing.assert_allclose(m.pi, expected, atol=1e-15)
    assert m.n_states == 3
    np.testing.assert_allclose(m.state_weights, [1 / 3] * 3, atol=1e-12)


def test_circular_gated_matrix():
    m = switch_matrix(system([0.1] * 3, alpha=0.1, policy=Policy.GATED))
    expected = [[0.3, 0.1, 0.2], [0.2, 0.3, 0.1], [0.1, 0.2, 0.3]]
    np.testing.assert_allclose(m.pi, expected, atol=1e-15)


def test_mixed_policies_set_diagonals_independently():
    qs = (QueueSpec(0.1, Deterministic(1.0), policy=Policy.GATED), QueueSpec(0.1, Deterministic(1.0)))
    m = switch_matrix(SystemConfig(qs, 0.5))
    np.testing.assert_allclose(m.pi, [[1.0, 0.5], [0.5, 0.0]])


def test_single_queue_matrix():
    for policy in Policy:
        m = switch_matrix(system([0.5], alpha=0.0, policy=policy))
        np.testing.assert_array_equal(m.pi, [[0.0]])


@given(st.integers(2, 12), st.floats(0.0, 2.0))
def test_circular_pair_sum(n, alpha):
    m = switch_matrix(system([0.5 / n] * n, alpha=alpha))
    for i in range(n):
        assert m.pi[i, i] == 0
        for j in range(n):
            if i != j:
                assert m.pi[i, j] + m.pi[j, i] == pytest.approx(n * alpha, abs=1e-12)
    assert abs(m.state_weights.sum() - 1) <= 1e-12


def test_elevator_matrix_shape_and_values():
    m = switch_matrix(system([0.1] * 4, alpha=1.0, order=PollingOrder.elevator()))
    assert m.n_states == 6  # 2N - 2
    assert m.cycle == 6.0
    # From queue 2 moving up, queue 1 is reached via 3, 4, 3, 2, 1.
    assert m.pi[1, 0] == 5.0
    # From queue 2 moving down (stop 6), queue 1 is one hop away.
    assert m.pi[5, 0] == 1.0
    assert np.all(m.pi >= 0)
    assert abs(m.state_weights.sum() - 1) <= 1e-12
    # End queues are seen once per sweep, so from a random point the wait is half the cycle.
    assert m.travel_residual[0] == pytest.approx(3.0)
    # Queue 2 has gaps of 2 and 4 hops: (4 + 16) / (2 * 6).
    assert m.travel_residual[1] == pytest.approx(20 / 12)


def test_random_next_matrix():
    m = switch_matrix(system([0.1] * 4, alpha=0.5, order=PollingOrder.random_next()))
    assert m.n_states == 4
    off = m.pi[~np.eye(4, dtype=bool)]
    np.testing.assert_allclose(off, 3 * 0.5)
    np.testing.assert_array_equal(np.diag(m.pi), 0.0)
    g = switch_matrix(system([0.1] * 4, alpha=0.5, order=PollingOrder.random_next(), policy=Policy.GATED))
    np.testing.assert_allclose(np.diag(g.pi), 4 * 0.5)


def test_random_next_hitting_time_by_value_iteration():
    # Expected hops to reach queue 0 under uniform choice among the other queues.
    n = 5
    h = np.zeros(n)
    for _ in range(2000):
        new = np.zeros(n)
        for i in range(1, n):
            new[i] = 1 + sum(h[k] for k in range(n) if k != i) / (n - 1)
        h = new
    m = switch_matrix(system([0.1] * n, alpha=1.0, order=PollingOrder.random_next()))
    np.testing.assert_allclose(m.pi[1:, 0], h[1:], rtol=1e-9)


def test_general_moving_term_examples():
    p = validate(system([0.125] * 4, alpha=0.25))
    assert moving_term_general(p, switch_matrix(system([0.125] * 4, alpha=0.25))) == pytest.approx(0.4375, abs=1e-12)
    assert brute_moving_term([0.125] * 4, 0.25) == pytest.approx(0.4375, abs=1e-12)
    one = system([0.5], alpha=1.0)
    assert moving_term_general(validate(one), switch_matrix(one)) == pytest.approx(0.25, abs=1e-12)


def test_zero_load_limit():
    cfg = system([0.0, 0.0], alpha=0.5)
    empty = LoadProfile(2, 0.0, (0.0, 0.0), 0.0, 1.0, 1.0)
    m = switch_matrix(cfg, empty)
    assert moving_term_general(empty, m) == 0.5
    assert moving_term_closed(cfg, empty) == 0.5
    report = mean_wait(empty, 0.5)
    assert report.mean_w == 0.5


def test_dimension_mismatch():
    m = switch_matrix(system([0.1] * 3, alpha=0.1))
    with pytest.raises(DimensionMismatch):
        moving_term_general(validate(system([0.1] * 4, alpha=0.1)), m)
    with pytest.raises(DimensionMismatch):
        route_matrix([0, 1], [1.0], [0.1, 0.1], [Policy.EXHAUSTIVE] * 2)


def test_closed_form_examples():
    cfg = system([0.125] * 4, alpha=0.25)
    assert moving_term_closed(cfg) == pytest.approx(0.4375, abs=1e-15)
    assert moving_term_closed(system([0.5], alpha=1.0)) == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize(
    "cfg",
    [
        system([0.1] * 3, alpha=0.1, policy=Policy.GATED),
        system([0.1] * 3, alpha=0.1, order=PollingOrder.elevator()),
        system([0.1] * 3, alpha=0.1, order=PollingOrder.random_next()),
    ],
)
def test_closed_form_rejects_other_models(cfg):
    with pytest.raises(PolicyMismatch):
        moving_term_closed(cfg)


def test_mean_wait_examples():
    mm1 = analyze(system([0.5], Exponential(1.0)))
    assert mm1.mean_w == pytest.approx(1.0, abs=1e-12)
    # M/M/1 queueing delay rho / (mu - lambda)
    assert mm1.mean_w == pytest.approx(0.5 / (1.0 - 0.5), abs=1e-12)
    sym = analyze(system([0.125] * 4, Deterministic(1.0), alpha=0.25))
    assert sym.residual == 0.5
    assert sym.big_pi == pytest.approx(0.4375, abs=1e-12)
    assert sym.mean_w == pytest.approx(1.375, abs=1e-12)


def test_report_json_fields():
    d = analyze(system([0.125] * 4, alpha=0.25)).to_dict()
    assert set(d) == {"residual", "pi", "mean_m", "mean_p", "mean_w", "profile"}
    assert d["profile"]["rho"] == 0.5


def test_gated_symmetric_by_brute_force():
    cfg = system([0.125] * 4, alpha=0.25, policy=Policy.GATED)
    p = validate(cfg)
    assert moving_term_general(p, switch_matrix(cfg)) == pytest.approx(
        brute_moving_term([0.125] * 4, 0.25, gated=range(4)), abs=1e-12
    )


def test_elevator_weights_on_symmetric_load():
    # Symmetric elevator: visits to queue 2 going up follow a 2-hop gap and
    # going down a 4-hop gap, so they get 1/3 and 2/3 of that queue's work.
    m = switch_matrix(system([0.1] * 4, alpha=1.0, order=PollingOrder.elevator()))
    w = m.state_weights
    assert w[1] / (w[1] + w[5]) == pytest.approx(1 / 3)
    assert w[0] == pytest.approx(0.25)


loads = st.lists(st.floats(0.001, 1.0), min_size=1, max_size=16)


@settings(max_examples=300)
@given(loads, st.floats(0.05, 0.95), st.floats(0.0, 2.0))
def test_closed_equals_general(weights, rho, alpha):
    rates = [rho * w / sum(weights) for w in weights]
    cfg = system(rates, Exponential(1.0), alpha=alpha)
    p = validate(cfg)
    general = moving_term_general(p, switch_matrix(cfg, p))
    assert abs(moving_term_closed(cfg, p) - general) <= 1e-10
    assert abs(brute_moving_term(p.rho_i, alpha) - general) <= 1e-10


dists = st.one_of(
    st.builds(Deterministic, st.floats(0.1, 3)),
    st.builds(Exponential, st.floats(0.1, 3)),
    st.builds(Uniform, st.floats(0, 1), st.floats(1.1, 3)),
    st.builds(Hyperexponential2, st.floats(0.05, 0.95), st.floats(0.1, 3), st.floats(0.1, 3)),
)


@given(dists, st.floats(0.01, 0.99))
def test_pk_reduction(dist, rho):
    lam = rho / dist.mean()
    r = analyze(system([lam], dist, alpha=0.0))
    pk = lam * dist.second_moment() / (2 * (1 - rho))
    assert abs(r.mean_w - pk) <= 1e-12 * max(1.0, pk)


@given(loads, st.floats(0.05, 0.95), st.floats(0.0, 2.0), st.sampled_from(["circular", "elevator", "random"]), st.booleans())
def test_fixed_point_consistency(weights, rho, alpha, order, gated):
    rates = [rho * w / sum(weights) for w in weights]
    order = {"circular": PollingOrder.circular(), "elevator": PollingOrder.elevator(), "random": PollingOrder.random_next()}[order]
    r = analyze(system(rates, Uniform(0, 2), alpha=alpha, order=order, policy=Policy.GATED if gated else Policy.EXHAUSTIVE))
    tol = 1e-12 * max(1.0, r.mean_w)
    assert abs(r.mean_p + r.big_pi - r.mean_w) <= tol
    assert abs(r.mean_p - (r.profile.rho * r.residual + r.profile.rho * r.mean_w)) <= tol


@given(loads, st.floats(0.05, 0.9), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_monotone_in_alpha(weights, rho, a1, a2):
    rates = [rho * w / sum(weights) for w in weights]
    lo, hi = sorted([a1, a2])
    assert analyze(system(rates, alpha=lo)).mean_w <= analyze(system(rates, alpha=hi)).mean_w + 1e-12


@given(st.floats(0.05, 0.9), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_monotone_in_second_moment(rho, u1, u2):
    # Uniform laws with mean 1 and increasing spread.
    lo, hi = sorted([u1, u2])
    w = [analyze(system([rho / 2] * 2, Uniform(1 - s, 1 + s), alpha=0.3)).mean_w for s in (lo, hi)]
    assert w[0] <= w[1] + 1e-12


@given(st.integers(2, 10), loads, st.floats(0.05, 0.95), st.floats(0.01, 2.0))
def test_symmetric_split_maximises_moving_term(n, weights, rho, alpha):
    weights = (weights * n)[:n]
    assume(sum(weights) > 0)
    sym = analyze(system([rho / n] * n, alpha=alpha)).big_pi
    asym = analyze(system([rho * w / sum(weights) for w in weights], alpha=alpha)).big_pi
    assert asym <= sym + 1e-12
    concentrated = analyze(system([rho] + [0.0] * (n - 1), alpha=alpha)).big_pi
    assert concentrated == pytest.approx(n * alpha / 2 * (1 - rho), abs=1e-12)


def test_heterogeneous_hops():
    # Two queues, hop 1->2 takes 1, hop 2->1 takes 3: cycle 4.
    m = route_matrix([0, 1], [1.0, 3.0], [0.2, 0.2], [Policy.EXHAUSTIVE] * 2)
    np.testing.assert_allclose(m.pi, [[0.0, 1.0], [3.0, 0.0]])
    np.testing.assert_allclose(m.travel_residual, [2.0, 2.0])
