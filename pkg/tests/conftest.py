import numpy as np
import pytest

from ctbnal.bayes import RatePosterior, update_rate_posterior
from ctbnal.model import Ctbn, Intervention
from ctbnal.paths import extract_statistics, sample_path


def chain(y_rates=None):
    """X0 -> X1, both binary; X1 follows X0."""
    adjacency = np.array([[False, True], [False, False]])
    x_rates = np.array([[[0.0, 1.0], [2.0, 0.0]]])
    if y_rates is None:
        y_rates = np.array([[[0.0, 0.5], [3.0, 0.0]],
                            [[0.0, 4.0], [0.25, 0.0]]])
    return Ctbn((2, 2), adjacency, (x_rates, y_rates))


def single_node(forward, backward):
    return Ctbn((2,), np.zeros((1, 1), dtype=bool), (np.array([[[0.0, forward], [backward, 0.0]]]),))


def observed_posterior(model, rng, count, horizon=2.0, intervention=None):
    intervention = intervention or Intervention.none(model.num_nodes)
    posterior = RatePosterior.prior(model.state_cards, model.adjacency)
    for _ in range(count):
        trajectory = sample_path(model, intervention, (0,) * model.num_nodes, horizon, rng)
        posterior = update_rate_posterior(posterior, extract_statistics(trajectory, model.adjacency,
                                                                        model.state_cards))
    return posterior


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def chain_model():
    return chain()


@pytest.fixture
def three_node_model():
    adjacency = np.array([[False, True, True],
                          [False, False, True],
                          [False, False, False]])
    rates = (
        np.array([[[0.0, 0.8], [1.2, 0.0]]]),
        np.array([[[0.0, 0.3], [2.0, 0.0]], [[0.0, 2.5], [0.4, 0.0]]]),
        np.array([[[0.0, 0.5], [1.5, 0.0]], [[0.0, 1.0], [1.0, 0.0]],
                  [[0.0, 1.5], [0.5, 0.0]], [[0.0, 3.0], [0.2, 0.0]]]),
    )
    return Ctbn((2, 2, 2), adjacency, rates)
