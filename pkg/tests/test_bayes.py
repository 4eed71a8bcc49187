import numpy as np
import pytest
from conftest import chain, single_node
from numpy.testing import assert_allclose, assert_array_equal

from ctbnal.bayes import (
    RatePosterior,
    StructurePosterior,
    candidate_parent_sets,
    edge_marginals,
    map_graph,
    node_rate_kl,
    path_log_likelihood,
    posterior_entropy,
    posterior_mean_model,
    rate_posterior_kl,
    sample_node_rates,
    sample_rate_posterior,
    structure_marginal_log_likelihood,
    structure_posterior,
    structure_posterior_to_document,
    update_rate_posterior,
    update_structure_posterior,
)
from ctbnal.exceptions import HyperparameterError
from ctbnal.model import Ctbn, Intervention
from ctbnal.paths import NodeStats, SufficientStats, extract_statistics, pool, sample_path


def one_cell_stats(trans, dwell):
    return SufficientStats((2,), ((),), {(0, "none"): NodeStats(np.array([[[0.0, trans], [0.0, 0.0]]]),
                                                               np.array([[dwell, 0.0]]))})


def test_path_log_likelihood_by_hand():
    model = single_node(1.0, 1.0)
    assert path_log_likelihood(one_cell_stats(0.0, 0.0), model) == 0.0
    assert path_log_likelihood(one_cell_stats(2.0, 1.5), model) == pytest.approx(-1.5)
    assert path_log_likelihood(one_cell_stats(1.0, 1.0), single_node(0.0, 1.0)) == -np.inf


def test_conjugate_update_by_hand():
    prior = RatePosterior.prior((2,), [()])
    posterior = update_rate_posterior(prior, one_cell_stats(2.0, 1.5))
    assert posterior.alpha[0][0, 0, 1] == 3.0
    assert posterior.beta[0][0, 0] == 2.5
    assert posterior.alpha[0][0, 1, 0] == 1.0
    empty = update_rate_posterior(prior, one_cell_stats(0.0, 0.0))
    assert_array_equal(empty.alpha[0], prior.alpha[0])
    assert_array_equal(empty.beta[0], prior.beta[0])


def test_sequential_and_pooled_updates_agree_exactly(chain_model, rng):
    interventions = [Intervention.none(2), Intervention.clamp(2, {0: 1}), Intervention.none(2),
                     Intervention.clamp(2, {1: 0})]
    stats = []
    for intervention in interventions:
        initial = (1, 0) if intervention.targets else (0, 0)
        trajectory = sample_path(chain_model, intervention, initial, 3.0, rng)
        stats.append(extract_statistics(trajectory, chain_model.adjacency, chain_model.state_cards))
    prior = RatePosterior.prior((2, 2), chain_model.adjacency)
    sequential = prior
    for s in stats:
        sequential = update_rate_posterior(sequential, s)
    pooled = update_rate_posterior(prior, pool(stats))
    for n in range(2):
        assert np.array_equal(sequential.alpha[n], pooled.alpha[n])
        assert np.array_equal(sequential.beta[n], pooled.beta[n])
    total = sum(path_log_likelihood(s, chain_model) for s in stats)
    assert path_log_likelihood(pool(stats), chain_model) == pytest.approx(total, abs=1e-12)


def test_clamped_node_cells_stay_at_prior(chain_model, rng):
    prior = RatePosterior.prior((2, 2), chain_model.adjacency)
    trajectory = sample_path(chain_model, Intervention.clamp(2, {0: 0}), (0, 0), 5.0, rng)
    posterior = update_rate_posterior(prior, extract_statistics(trajectory, chain_model.adjacency, (2, 2)))
    assert_array_equal(posterior.alpha[0], prior.alpha[0])
    assert_array_equal(posterior.beta[0], prior.beta[0])
    assert posterior.beta[1][0].sum() == pytest.approx(prior.beta[1][0].sum() + 5.0)


def test_hyperparameters_must_be_positive():
    with pytest.raises(HyperparameterError):
        RatePosterior.prior((2,), [()], alpha=0.0)
    with pytest.raises(HyperparameterError):
        structure_marginal_log_likelihood(NodeStats.zeros(1, 2), 1.0, -1.0)


def test_structure_marginal_likelihood_by_hand():
    assert structure_marginal_log_likelihood(NodeStats.zeros(2, 2)) == 0.0
    stats = NodeStats(np.array([[[0.0, 1.0], [0.0, 0.0]]]), np.array([[1.0, 0.0]]))
    assert structure_marginal_log_likelihood(stats) == pytest.approx(-2.0 * np.log(2.0))


def test_candidate_parent_sets():
    assert candidate_parent_sets(1, 3, 2) == ((), (0,), (2,), (0, 2))
    assert candidate_parent_sets(0, 4, 1) == ((), (1,), (2,), (3,))


def test_empty_structure_posterior_is_uniform():
    posterior = StructurePosterior.empty((2, 2, 2), max_parents=2)
    for n in range(3):
        assert_allclose(posterior.probabilities(n), 0.25)
    assert posterior_entropy(posterior) == pytest.approx(3.0 * np.log(4.0))
    assert_allclose(edge_marginals(posterior), 0.5 * (1.0 - np.eye(3)))


def test_entropy_of_skewed_prior():
    prior = np.log([0.25, 0.75])
    posterior = StructurePosterior.empty((2, 2), max_parents=1, log_prior=[prior, prior])
    assert posterior_entropy(posterior) == pytest.approx(2.0 * 0.5623, abs=1e-4)
    point = StructurePosterior.empty((2, 2), max_parents=1, log_prior=[[0.0, -np.inf], [-np.inf, 0.0]])
    assert posterior_entropy(point) == 0.0
    assert_array_equal(edge_marginals(point), [[0.0, 1.0], [0.0, 0.0]])


def test_edge_marginals_match_brute_force(three_node_model, rng):
    trajectories = [sample_path(three_node_model, None, (0, 0, 0), 2.0, rng) for _ in range(5)]
    posterior = structure_posterior(trajectories, (2, 2, 2), max_parents=2)
    marginals = edge_marginals(posterior)
    for n in range(3):
        for m in range(3):
            if m == n:
                continue
            brute = sum(p for p, parents in zip(posterior.probabilities(n), posterior.parent_sets[n])
                        if m in parents)
            assert marginals[m, n] == pytest.approx(brute)


def test_clamped_node_keeps_its_prior(chain_model, rng):
    trajectory = sample_path(chain_model, Intervention.clamp(2, {1: 1}), (0, 1), 3.0, rng)
    posterior = structure_posterior([trajectory], (2, 2), max_parents=1)
    assert_allclose(posterior.probabilities(1), 0.5)


def test_true_parent_set_dominates():
    coupled = np.array([[[0.0, 0.2], [3.0, 0.0]], [[0.0, 3.0], [0.2, 0.0]]])
    model = chain(coupled)
    rng = np.random.default_rng(11)
    trajectories = [sample_path(model, None, (int(rng.integers(2)), int(rng.integers(2))), 3.0, rng)
                    for _ in range(50)]
    posterior = structure_posterior(trajectories, (2, 2), max_parents=1)
    assert posterior.parent_sets[1] == ((), (0,))
    assert posterior.probabilities(1)[1] > 0.9
    assert map_graph(posterior)[0, 1]


def test_sequential_structure_update_matches_batch(chain_model, rng):
    trajectories = [sample_path(chain_model, None, (0, 0), 2.0, rng) for _ in range(3)]
    batch = structure_posterior(trajectories, (2, 2), max_parents=1)
    sequential = StructurePosterior.empty((2, 2), max_parents=1)
    for trajectory in trajectories:
        sequential = update_structure_posterior(sequential, [trajectory])
    for n in range(2):
        assert np.array_equal(batch.log_probs[n], sequential.log_probs[n])


def test_structure_document_lists_parent_sets_by_probability(chain_model, rng):
    trajectories = [sample_path(chain_model, None, (0, 0), 3.0, rng) for _ in range(10)]
    document = structure_posterior_to_document(structure_posterior(trajectories, (2, 2), max_parents=1))
    assert set(document) >= {"nodes", "edge_marginals", "map_edges", "entropy", "hyperparameters"}
    for node in document["nodes"]:
        probabilities = [entry["probability"] for entry in node["parent_sets"]]
        assert probabilities == sorted(probabilities, reverse=True)
        assert sum(probabilities) == pytest.approx(1.0)


def test_gamma_samples_concentrate():
    c = 2.5
    alpha = np.full((10_000, 2, 2), 1e4)
    beta = np.full((10_000, 2), 1e4 / c)
    rates = sample_node_rates(alpha, beta, np.random.default_rng(3))
    off = rates[:, ~np.eye(2, dtype=bool)]
    assert np.all(off > 0)
    assert off.mean() == pytest.approx(c, rel=0.01)
    assert not np.any(rates[:, np.eye(2, dtype=bool)])


def test_posterior_sampling_is_seeded(chain_model):
    posterior = RatePosterior.prior((2, 2), chain_model.adjacency)
    first = sample_rate_posterior(posterior, np.random.default_rng(4))
    assert first == sample_rate_posterior(posterior, np.random.default_rng(4))
    assert isinstance(posterior_mean_model(posterior), Ctbn)


def test_time_scale_separation():
    """Y's rates under X=1 are only learned once X is clamped to 1."""
    eps = 1e-6
    x_rates = np.array([[[0.0, eps], [eps, 0.0]]])
    y_rates = np.array([[[0.0, 1.0], [1.0, 0.0]], [[0.0, 2.0], [0.5, 0.0]]])
    model = Ctbn((2, 2), np.array([[False, True], [False, False]]), (x_rates, y_rates))
    prior = RatePosterior.prior((2, 2), model.adjacency)
    rng = np.random.default_rng(8)

    def learn(intervention, initial):
        posterior = prior
        for _ in range(20):
            trajectory = sample_path(model, intervention, initial, 3.0, rng)
            posterior = update_rate_posterior(posterior, extract_statistics(trajectory, model.adjacency, (2, 2)))
        return posterior

    observational = learn(Intervention.none(2), (0, 0))
    assert node_rate_kl(observational, prior, 1)[1].sum() == 0.0
    assert node_rate_kl(observational, prior, 1)[0].sum() > 0.1
    interventional = learn(Intervention.clamp(2, {0: 1}), (1, 0))
    assert node_rate_kl(interventional, prior, 1)[1].sum() > 0.1
    assert rate_posterior_kl(prior, prior) == 0.0
