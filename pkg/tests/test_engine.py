import numpy as np
import pytest
from conftest import chain, single_node
from numpy.testing import assert_allclose

from ctbnal.engine import (
    ExpectedStats,
    default_steps,
    expected_statistics,
    expected_statistics_under_posterior_sample,
    project_node,
    project_statistics,
    solve_master_equation,
)
from ctbnal.model import Ctbn, Intervention, amalgamate, joint_states


def two_state_probability(t, lam=2.0, mu=1.0):
    return lam / (lam + mu) * (1.0 - np.exp(-(lam + mu) * t))


def test_two_state_closed_form():
    ctmc = amalgamate(single_node(2.0, 1.0), initial=(0,))
    solution = solve_master_equation(ctmc, 3.0)
    for t in (0.5, 1.0, 3.0):
        k = int(np.argmin(np.abs(solution.grid - t)))
        assert solution.grid[k] == pytest.approx(t)
        assert solution.probs[k, 1] == pytest.approx(two_state_probability(t), abs=1e-6)
    rate = 3.0
    dwell_0 = 1.0 / rate * 3.0 + 2.0 / rate ** 2 * (1.0 - np.exp(-rate * 3.0))
    assert solution.dwell[0] == pytest.approx(dwell_0, abs=1e-5)
    assert solution.dwell.sum() == pytest.approx(3.0, abs=1e-8)


def test_first_slice_and_normalization(three_node_model):
    ctmc = amalgamate(three_node_model, initial=(1, 0, 1))
    solution = solve_master_equation(ctmc, 2.0)
    assert solution.probs[0, 5] == 1.0
    assert_allclose(solution.probs.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(solution.probs >= 0)


def test_zero_generator():
    model = single_node(0.0, 0.0)
    ctmc = amalgamate(model, initial=(1,))
    solution = solve_master_equation(ctmc, 3.0)
    assert_allclose(solution.probs[:, 1], 1.0)
    stats = expected_statistics(solution, ctmc)
    assert_allclose(stats.joint_dwell, [0.0, 3.0])
    assert not np.any(stats.joint_trans)


def test_uniform_generator_relaxes_to_uniform():
    rates = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    model = Ctbn((2, 2), np.zeros((2, 2), dtype=bool), (rates, rates))
    solution = solve_master_equation(amalgamate(model, initial=(0, 0)), 20.0)
    assert_allclose(solution.probs[-1], 0.25, atol=1e-6)


def test_keep_slices_false_matches_full_solution(chain_model):
    ctmc = amalgamate(chain_model, initial=(0, 1))
    full = solve_master_equation(ctmc, 2.5, steps=500)
    short = solve_master_equation(ctmc, 2.5, steps=500, keep_slices=False)
    assert short.probs.shape == (2, 4)
    assert_allclose(short.probs[-1], full.probs[-1], atol=1e-12)
    assert_allclose(short.dwell, full.dwell, atol=1e-12)


def test_invalid_horizon_and_steps(chain_model):
    ctmc = amalgamate(chain_model, initial=(0, 0))
    with pytest.raises(ValueError):
        solve_master_equation(ctmc, 0.0)
    with pytest.raises(ValueError):
        solve_master_equation(ctmc, 1.0, steps=1)


def test_halving_the_default_step_changes_nothing(three_node_model):
    ctmc = amalgamate(three_node_model, initial=(0, 1, 0))
    steps = default_steps(ctmc.generator, 3.0)
    coarse = solve_master_equation(ctmc, 3.0, steps=steps, keep_slices=False)
    fine = solve_master_equation(ctmc, 3.0, steps=2 * steps, keep_slices=False)
    assert np.max(np.abs(coarse.probs[-1] - fine.probs[-1])) < 1e-6
    assert np.max(np.abs(coarse.dwell - fine.dwell)) < 1e-6


def test_default_steps_scale_with_rates():
    assert default_steps(np.zeros((2, 2)), 3.0) == 2
    assert default_steps(np.array([[-2.0, 2.0], [1.0, -1.0]]), 3.0) == 1200


def test_expected_transitions_are_rate_times_dwell(chain_model):
    ctmc = amalgamate(chain_model, initial=(0, 0))
    stats = expected_statistics(solve_master_equation(ctmc, 3.0), ctmc)
    off = ~np.eye(4, dtype=bool)
    assert_allclose(stats.joint_trans[off], (ctmc.generator * stats.joint_dwell[:, None])[off])
    assert np.all(np.diag(stats.joint_trans) == 0)
    assert stats.joint_dwell.sum() == pytest.approx(3.0, abs=1e-8)


def test_projection_by_hand():
    dwell = np.array([0.4, 0.3, 0.2, 0.1])
    trans = np.zeros((4, 4))
    trans[0, 1] = 1.0   # X0 0->1 with X1=0
    trans[1, 3] = 2.0   # X1 0->1 with X0=1
    trans[2, 0] = 3.0   # X1 1->0 with X0=0
    joint = ExpectedStats(dwell, trans)
    x0 = project_node(joint, (2, 2), 0, ())
    assert_allclose(x0.dwell, [[0.6, 0.4]])
    assert_allclose(x0.trans, [[[0.0, 1.0], [0.0, 0.0]]])
    x1 = project_node(joint, (2, 2), 1, (0,))
    assert_allclose(x1.dwell, [[0.4, 0.2], [0.3, 0.1]])
    assert_allclose(x1.trans[1], [[0.0, 2.0], [0.0, 0.0]])
    assert_allclose(x1.trans[0], [[0.0, 0.0], [3.0, 0.0]])


def test_projection_conserves_time_under_any_parent_set(three_node_model):
    ctmc = amalgamate(three_node_model, initial=(0, 0, 0))
    joint = expected_statistics(solve_master_equation(ctmc, 2.0), ctmc)
    cards = three_node_model.state_cards
    for graph in ([(), (0,), (0, 1)], [(1, 2), (), (1,)]):
        stats = project_statistics(joint, cards, graph)
        for node in stats.node:
            assert node.dwell.sum() == pytest.approx(2.0, abs=1e-8)
    coarse = project_node(joint, cards, 2, ())
    fine = project_node(joint, cards, 2, (0, 1))
    assert_allclose(fine.dwell.sum(axis=0), coarse.dwell[0])
    assert_allclose(fine.trans.sum(axis=0), coarse.trans[0])
    states = joint_states(cards)
    assert_allclose(coarse.dwell[0, 1], joint.joint_dwell[states[:, 2] == 1].sum())


def test_clamped_node_has_no_expected_transitions(three_node_model):
    intervention = Intervention.clamp(3, {1: 1})
    stats = expected_statistics_under_posterior_sample(three_node_model, intervention, (0, 1, 0), 2.0)[0]
    assert not np.any(stats.node[1].trans)
    assert stats.node[1].dwell[:, 1].sum() == pytest.approx(2.0, abs=1e-8)


def test_pipeline_equals_stepwise_composition():
    model = chain()
    intervention = Intervention.clamp(2, {0: 1})
    composed = expected_statistics_under_posterior_sample(model, intervention, (1, 0), 1.5, steps=300)[0]
    ctmc = amalgamate(model, intervention, (1, 0))
    joint = expected_statistics(solve_master_equation(ctmc, 1.5, steps=300, keep_slices=False), ctmc)
    stepwise = project_statistics(joint, model.state_cards, model.adjacency)
    assert np.array_equal(composed.joint_dwell, stepwise.joint_dwell)
    assert composed.node == stepwise.node
