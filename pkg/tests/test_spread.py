import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from helpers import FIG2_RATES, fig2_world

from edei.graph import NodeState, Status
from edei.spread import (SpreadParams, build_spread_matrix, ignition_probabilities, severity_step,
                         spread_probability, spread_step, superpose)

probs = st.floats(0.0, 1.0, allow_nan=False)


def test_superpose_worked_values():
    assert superpose([0.7, 0.7]) == pytest.approx(0.91, abs=1e-12)
    assert superpose([0.8, 0.9]) == pytest.approx(0.98, abs=1e-12)
    assert superpose([]) == 0.0


@given(st.lists(probs, max_size=8), st.randoms())
def test_superpose_order_free_and_bounded(gs, rnd):
    shuffled = list(gs)
    rnd.shuffle(shuffled)
    p = superpose(gs)
    assert 0.0 <= p <= 1.0
    assert p == pytest.approx(superpose(shuffled), abs=1e-12)
    assert p >= max(gs, default=0.0) - 1e-12


@given(st.lists(probs, max_size=6), probs)
def test_superpose_monotone_in_extra_source(gs, extra):
    assert superpose(gs + [extra]) >= superpose(gs) - 1e-12


def test_fig2_matrix_matches_entrywise_recomputation():
    severity, nodes, rates, params = fig2_world()
    mat = build_spread_matrix(severity, nodes, rates, params.tau)
    for i in range(4):
        for j in range(4):
            if i == j:
                expect = severity[i]
            elif nodes.status[i] == Status.INCIDENT:
                expect = min(1.0, max(0.0, FIG2_RATES.get((i, j), 0.0) * severity[i] / params.tau))
            else:
                expect = 0.0
            assert mat[i, j] == expect
    p = ignition_probabilities(mat)
    assert p[2] == pytest.approx(0.91, abs=1e-12)
    assert p[3] == pytest.approx(0.98, abs=1e-12)


@given(st.floats(0, 5), probs, st.floats(0.1, 3))
def test_spread_probability_clamped(f, base, tau):
    g = spread_probability(f, base, tau)
    assert 0.0 <= g <= 1.0
    if f <= tau:
        assert g == pytest.approx(base * f / tau)


def test_spread_step_frequency_near_superposed_value():
    rng = np.random.default_rng(11)
    hits = 0
    for _ in range(4000):
        severity, nodes, rates, params = fig2_world()
        hits += 2 in spread_step(severity, nodes, rates, params, rng)
    assert 0.89 <= hits / 4000 <= 0.93


def test_only_normal_nodes_ignite_and_start_at_seed_severity():
    severity, nodes, rates, params = fig2_world()
    rates[2, 0] = 1.0
    nodes.status[2] = Status.INCIDENT
    severity[2] = 1.0
    nodes.status[3] = Status.SCRAPPED
    nodes.assets[3] = 0
    new = spread_step(severity, nodes, rates, params, np.random.default_rng(0))
    assert new == set()
    severity, nodes, rates, params = fig2_world()
    rates[0, 2] = 1.0
    new = spread_step(severity, nodes, rates, params, np.random.default_rng(0))
    assert 2 in new and severity[2] == params.f_seed


def test_scrapped_nodes_do_not_spread():
    severity, nodes, rates, params = fig2_world()
    nodes.status[:2] = Status.SCRAPPED
    assert ignition_probabilities(build_spread_matrix(severity, nodes, rates)).max() == 0.0


def test_severity_growth_suppression_and_scrap():
    params = SpreadParams()
    nodes = NodeState(np.array([5, 5, 5], dtype=np.int64),
                      np.array([Status.INCIDENT] * 3, dtype=np.int8))
    f = np.array([0.5, 0.2, 0.9])
    scrapped, recovered = severity_step(f, nodes, np.array([0.0, 0.25, 0.0]), params)
    assert f[0] == pytest.approx(0.6)
    assert recovered == {1} and f[1] == 0.0 and nodes.status[1] == Status.NORMAL
    assert scrapped == {2} and f[2] == 1.0 and nodes.assets[2] == 0
    with pytest.raises(ValueError):
        severity_step(f, nodes, np.array([-1.0, 0, 0]), params)


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6), st.lists(st.integers(0, 3), min_size=6, max_size=6))
@settings(max_examples=60)
def test_severity_stays_in_bounds(fs, crews):
    params = SpreadParams()
    n = len(fs)
    nodes = NodeState(np.ones(n, dtype=np.int64), np.full(n, Status.INCIDENT, dtype=np.int8))
    f = np.array(fs)
    for _ in range(5):
        severity_step(f, nodes, np.array(crews[:n]) * params.delta, params)
        assert np.all((f >= 0) & (f <= params.tau))
        assert np.all(f[nodes.status == Status.NORMAL] == 0)


def test_spread_step_draws_fixed_number_of_uniforms():
    a = np.random.default_rng(3)
    b = np.random.default_rng(3)
    severity, nodes, rates, params = fig2_world()
    spread_step(severity, nodes, rates, params, a)
    b.random(4)
    assert a.random() == b.random()
