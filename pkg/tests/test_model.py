import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ctbnal.exceptions import InterventionError, ModelError
from ctbnal.model import (
    FAST,
    SLOW,
    Ctbn,
    ImperfectOverride,
    Intervention,
    PerfectClamp,
    amalgamate,
    apply_intervention,
    as_parent_sets,
    check_initial_state,
    consistent_initial_state,
    intervention_from_document,
    intervention_to_document,
    joint_index,
    joint_states,
    model_from_document,
    model_to_document,
    parent_configuration_index,
    preset_model,
    random_model,
)


def test_joint_states_lowest_node_fastest():
    assert_array_equal(joint_states((2, 3)), [[0, 0], [1, 0], [0, 1], [1, 1], [0, 2], [1, 2]])
    assert_array_equal(joint_index([[1, 2], [0, 1]], (2, 3)), [5, 2])


def test_parent_configuration_index_mixed_radix():
    states = np.array([[0, 1, 2], [1, 1, 0]])
    cards = (2, 2, 3)
    assert_array_equal(parent_configuration_index(states, (0, 2), cards), [4, 1])
    assert_array_equal(parent_configuration_index(states, (), cards), [0, 0])


def test_independent_nodes_generator():
    rates = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    model = Ctbn((2, 2), np.zeros((2, 2), dtype=bool), (rates, rates))
    generator = amalgamate(model).generator
    assert generator.shape == (4, 4)
    assert_allclose(generator.sum(axis=1), 0.0)
    off = generator - np.diag(np.diag(generator))
    assert_array_equal((off > 0).sum(axis=1), [2, 2, 2, 2])
    assert generator[0, 3] == 0.0


def test_chain_generator_entries(chain_model):
    generator = amalgamate(chain_model).generator
    # (x=1, y=0) is index 1, (x=1, y=1) is index 3
    assert generator[1, 3] == chain_model.rates[1][1, 0, 1]
    assert generator[0, 2] == chain_model.rates[1][0, 0, 1]
    assert generator[0, 1] == chain_model.rates[0][0, 0, 1]
    assert generator[0, 3] == 0.0
    assert_allclose(generator.sum(axis=1), 0.0, atol=1e-15)


def test_clamp_removes_transitions_of_the_clamped_node(three_node_model):
    intervention = Intervention.clamp(3, {2: 0})
    ctmc = amalgamate(three_node_model, intervention, (1, 0, 0))
    states = ctmc.states
    for s in range(ctmc.num_states):
        for t in range(ctmc.num_states):
            if s != t and states[s, 2] != states[t, 2]:
                assert ctmc.generator[s, t] == 0.0


def test_clamp_conflicting_with_initial_state(chain_model):
    with pytest.raises(InterventionError):
        amalgamate(chain_model, Intervention.clamp(2, {0: 1}), (0, 0))
    with pytest.raises(InterventionError):
        check_initial_state(chain_model, (0, 1), Intervention.clamp(2, {1: 0}))
    assert consistent_initial_state((0, 1), Intervention.clamp(2, {1: 0})) == (0, 0)


def test_apply_intervention(chain_model):
    assert apply_intervention(chain_model, Intervention.none(2)) == chain_model
    clamped = apply_intervention(chain_model, Intervention.clamp(2, {1: 1}))
    assert not np.any(clamped.rates[1])
    assert_array_equal(clamped.rates[0], chain_model.rates[0])
    doubled = ImperfectOverride(2.0 * chain_model.rates[1])
    overridden = apply_intervention(chain_model, Intervention((None, doubled)))
    assert_array_equal(overridden.rates[1], 2.0 * chain_model.rates[1])
    assert_array_equal(overridden.rates[0], chain_model.rates[0])


@pytest.mark.parametrize("condition", [PerfectClamp(1), ImperfectOverride(np.full((2, 2, 2), 0.7))])
def test_applying_an_intervention_twice_changes_nothing(chain_model, condition):
    intervention = Intervention((None, condition))
    once = apply_intervention(chain_model, intervention)
    assert apply_intervention(once, intervention) == once


def test_override_shape_is_checked(chain_model):
    with pytest.raises(InterventionError):
        apply_intervention(chain_model, Intervention((ImperfectOverride(np.zeros((1, 2, 2))), None)))


def test_intervention_keys_and_labels():
    assert Intervention.none(3).label == "passive"
    clamp = Intervention.clamp(3, {0: 1, 2: 0})
    assert clamp.label == "do(X0=1,X2=0)"
    assert clamp.key == ("clamp=1", "none", "clamp=0")
    assert clamp.unintervened == (1,)
    assert clamp.targets == (0, 2)
    assert clamp == Intervention((PerfectClamp(1), None, PerfectClamp(0)))
    override = Intervention((ImperfectOverride(np.ones((1, 2, 2))), None, None))
    assert override.condition_key(0).startswith("override=")
    assert override == Intervention((ImperfectOverride(np.ones((1, 2, 2))), None, None))
    assert override != clamp


def test_intervention_document_round_trip():
    intervention = Intervention((PerfectClamp(1), None, ImperfectOverride(np.full((2, 2, 2), 0.5))))
    assert intervention_from_document(intervention_to_document(intervention)) == intervention


def test_model_validation():
    with pytest.raises(ModelError):
        Ctbn((2, 2), np.array([[True, False], [False, False]]), (np.zeros((1, 2, 2)),) * 2)
    with pytest.raises(ModelError):
        Ctbn((2, 2), np.array([[False, True], [False, False]]), (np.zeros((1, 2, 2)), np.zeros((1, 2, 2))))
    with pytest.raises(ModelError):
        Ctbn((2,), np.zeros((1, 1), dtype=bool), (np.array([[[0.0, -1.0], [1.0, 0.0]]]),))
    with pytest.raises(ModelError):
        as_parent_sets([(1,), (1,)], 2)


def test_model_document_round_trip(three_node_model):
    assert model_from_document(model_to_document(three_node_model, {"seed": 1})) == three_node_model


def test_softmax_without_parents_is_uniform():
    model = random_model((FAST,), np.zeros((1, 1), dtype=bool), mode="softmax", cards=3)
    assert_allclose(model.rates[0][0][~np.eye(3, dtype=bool)], 5.0 / 3.0)


def test_softmax_agreement_ratio():
    model = random_model((SLOW, FAST), np.array([[False, True], [False, False]]), mode="softmax")
    rates = model.rates[1]
    # parent in state 1: moving to 1 agrees with it, moving to 0 does not
    assert_allclose(rates[1, 0, 1] / rates[1, 1, 0], np.exp(3.0))
    assert_allclose(rates[0, 1, 0] / rates[0, 0, 1], np.exp(3.0))
    assert_allclose(rates[1, 0, 1], 5.0 * np.exp(3.0) / (1.0 + np.exp(3.0)))


def test_gamma_mode_is_seeded_per_node():
    adjacency = np.array([[False, True], [False, False]])
    first = random_model((SLOW, FAST), adjacency, rng=np.random.default_rng(5))
    again = random_model((SLOW, FAST), adjacency, rng=np.random.default_rng(5))
    other_kind = random_model((SLOW, SLOW), adjacency, rng=np.random.default_rng(5))
    assert first == again
    assert_array_equal(first.rates[0], other_kind.rates[0])
    assert np.all(first.rates[1][:, ~np.eye(2, dtype=bool)] > 0)


def test_presets():
    structure, provenance = preset_model("synthetic-structure", seed=3)
    assert provenance["seed"] == 3
    assert structure.state_cards == (2, 2, 2, 2)
    assert structure.parent_sets == ((), (0, 2), (), (1, 2))
    assert structure == preset_model("synthetic-structure", seed=3)[0]
    parameters, _ = preset_model("synthetic-parameters")
    assert_allclose(parameters.rates[0][0, 0, 1], 0.2 / 2.0)
    with pytest.raises(ModelError):
        preset_model("unknown")
