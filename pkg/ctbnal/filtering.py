"""Forward-backward smoothing for paths observed at discrete times.

The backward messages rho(s, t) = p(Y after t | S(t) = s) are integrated from the horizon
down to zero with a multiplicative reset at every observation. The smoothed marginals
p(S(t) | Y) solve the master equation with the tilted generator
W(s, s') rho(s', t) / rho(s, t); they are evaluated in product form, as the normalized
product of the forward filter and the backward messages, which avoids the singular
tilted rates right before an observation rules a state out.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from ctbnal.bayes import score_parent_sets, update_rate_posterior
from ctbnal.engine import (
    CLIP_TOLERANCE,
    ExpectedStats,
    default_steps,
    initial_distribution,
    project_node,
    rk4_polynomial,
)
from ctbnal.exceptions import NumericalError, ObservationError
from ctbnal.model import ImperfectOverride, amalgamate, joint_states, num_parent_configurations
from ctbnal.paths import NodeStats, SufficientStats

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ObservationSeries:
    times: np.ndarray
    likelihoods: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        likelihoods = np.asarray(self.likelihoods, dtype=float)
        if likelihoods.ndim != 2 or len(likelihoods) != len(times):
            raise ObservationError("Need one likelihood row per observation time.")
        if np.any(times < 0) or np.any(np.diff(times) <= 0):
            raise ObservationError("Observation times must be non-negative and strictly increasing.")
        if np.any(likelihoods < 0) or not np.all(np.isfinite(likelihoods)):
            raise ObservationError("Observation likelihoods must be finite and non-negative.")
        if np.any(likelihoods.sum(axis=1) <= 0):
            raise ObservationError("Every observation needs at least one state with positive likelihood.")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "likelihoods", likelihoods)

    @classmethod
    def empty(cls, num_states):
        return cls(np.zeros(0), np.zeros((0, num_states)))

    @classmethod
    def noisy_categorical(cls, times, observed, flip_probability, state_cards):
        """Each node reports its state, or with ``flip_probability`` one of the other states uniformly."""
        if not 0 <= flip_probability < 1:
            raise ObservationError(f"Flip probability must lie in [0, 1), got {flip_probability}.")
        cards = tuple(state_cards)
        states = joint_states(cards)
        observed = np.atleast_2d(np.asarray(observed, dtype=int)).reshape(-1, len(cards))
        likelihoods = np.ones((len(observed), len(states)))
        for n, card in enumerate(cards):
            match = states[None, :, n] == observed[:, n, None]
            likelihoods *= np.where(match, 1.0 - flip_probability, flip_probability / (card - 1))
        return cls(times, likelihoods)

    @property
    def num_states(self):
        return self.likelihoods.shape[1]

    def at(self, time):
        index = np.flatnonzero(self.times == time)
        return self.likelihoods[index[0]] if len(index) else None


@dataclass(frozen=True, eq=False)
class BackwardMessages:
    """Normalized messages per segment between consecutive observation times.

    The first slice of a segment excludes the observation at its left end, the last slice
    includes the observation at its right end.
    """
    grids: tuple
    messages: tuple
    initial: np.ndarray
    log_scale: float


@dataclass(frozen=True, eq=False)
class SmoothedMarginals:
    grid: np.ndarray
    probs: np.ndarray
    joint_dwell: np.ndarray
    joint_trans: np.ndarray
    log_likelihood: float

    @property
    def expected(self):
        return ExpectedStats(self.joint_dwell, self.joint_trans)


def tilted_generator(generator, rho):
    """W(s, s') rho(s') / rho(s) off the diagonal; rows of states with vanishing rho are zero."""
    rho = np.asarray(rho, dtype=float)
    reachable = rho > 0
    ratio = np.zeros_like(generator)
    ratio[reachable] = rho[None, :] / rho[reachable, None]
    tilted = generator * ratio
    np.fill_diagonal(tilted, 0.0)
    np.fill_diagonal(tilted, -tilted.sum(axis=1))
    return tilted


def _segments(observations, horizon, total_steps):
    if len(observations.times) and observations.times[-1] > horizon:
        raise ObservationError(f"Observation at {observations.times[-1]} lies beyond the horizon {horizon}.")
    boundaries = np.unique(np.concatenate([[0.0, horizon], observations.times]))
    segments = []
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        steps = max(2, int(np.ceil(total_steps * (b - a) / horizon)))
        steps += steps % 2
        segments.append(np.linspace(a, b, steps + 1))
    return segments


def _normalized(vector, what):
    vector = np.where(vector < 0, 0.0, vector)
    total = vector.sum()
    if not total > 0:
        raise ObservationError(f"All {what} vanished; the observations are incompatible with the model.")
    return vector / total, float(np.log(total))


def backward_pass(ctmc, observations, horizon, steps=None):
    if horizon <= 0:
        raise ValueError(f"Horizon must be positive, got {horizon}.")
    if observations.num_states != ctmc.num_states:
        raise ObservationError("Observation tables do not match the state space.")
    generator = ctmc.generator
    total_steps = default_steps(generator, horizon) if steps is None else int(steps)
    grids = _segments(observations, horizon, total_steps)
    rho = np.ones(ctmc.num_states)
    log_scale = 0.0
    messages = [None] * len(grids)
    for i in reversed(range(len(grids))):
        grid = grids[i]
        likelihood = observations.at(grid[-1])
        if likelihood is not None:
            rho, scale = _normalized(rho * likelihood, "backward messages")
            log_scale += scale
        propagator = rk4_polynomial(generator, grid[1] - grid[0])
        slices = np.empty((len(grid), len(rho)))
        slices[-1] = rho
        for k in range(len(grid) - 2, -1, -1):
            rho = propagator @ rho
            if np.any(rho < -CLIP_TOLERANCE):
                raise NumericalError("Backward messages became negative; the step size is too coarse.")
            rho, scale = _normalized(rho, "backward messages")
            log_scale += scale
            slices[k] = rho
        messages[i] = slices
    likelihood = observations.at(0.0)
    if likelihood is not None:
        rho, scale = _normalized(rho * likelihood, "backward messages")
        log_scale += scale
    return BackwardMessages(tuple(grids), tuple(messages), rho, log_scale)


def _prior(ctmc, initial):
    if initial is None and ctmc.initial is None:
        return np.full(ctmc.num_states, 1.0 / ctmc.num_states)
    return initial_distribution(ctmc, initial)


def smoothed_marginals(ctmc, observations, horizon, initial=None, steps=None):
    """Posterior marginals and expected statistics given the observations.

    ``initial`` is a joint state or a distribution over joint states. Without one the chain's
    own initial state is used, or the uniform distribution when the chain has none.
    """
    backward = backward_pass(ctmc, observations, horizon, steps)
    generator = ctmc.generator
    rates = generator - np.diag(np.diag(generator))
    p0 = _prior(ctmc, initial)
    evidence = float(p0 @ backward.initial)
    if not evidence > 0:
        raise ObservationError("The observations have zero probability under the initial distribution.")
    log_likelihood = float(np.log(evidence) + backward.log_scale)

    forward = p0
    grid_points, probs = [], []
    joint_dwell = np.zeros(ctmc.num_states)
    joint_trans = np.zeros_like(rates)
    for i, (grid, rho) in enumerate(zip(backward.grids, backward.messages)):
        likelihood = observations.at(grid[0])
        if likelihood is not None:
            forward, _ = _normalized(forward * likelihood, "forward messages")
        propagator = rk4_polynomial(generator, grid[1] - grid[0])
        segment = np.empty((len(grid), len(forward)))
        normalizers = np.empty(len(grid))
        weights = simpson(np.eye(len(grid)), x=grid, axis=0)
        for k in range(len(grid)):
            if k:
                forward, _ = _normalized(forward @ propagator, "forward messages")
            product = forward * rho[k]
            normalizers[k] = product.sum()
            if not normalizers[k] > 0:
                raise ObservationError(f"No state is consistent with the observations at t={grid[k]:.4g}.")
            segment[k] = product / normalizers[k]
            joint_trans += weights[k] * (forward[:, None] * rates * rho[k][None, :]) / normalizers[k]
        joint_dwell += weights @ segment
        start = 0 if i == 0 else 1
        grid_points.append(grid[start:])
        probs.append(segment[start:])
    probs = np.vstack(probs)
    drift = np.max(np.abs(probs.sum(axis=1) - 1.0))
    if drift > 1e-8:
        raise NumericalError(f"Smoothed marginals drifted from normalization by {drift:.3g}.")
    return SmoothedMarginals(np.concatenate(grid_points), probs, np.maximum(joint_dwell, 0.0),
                             np.maximum(joint_trans, 0.0), log_likelihood)


def _expected_node_statistics(expected, cards, node, parent_set, intervention):
    if intervention.conditions[node] is not None:
        return NodeStats.zeros(num_parent_configurations(parent_set, cards), cards[node])
    return project_node(expected, cards, node, parent_set)


def incomplete_data_posterior_update(posterior, model, intervention, observations, horizon, initial=None,
                                     steps=None):
    """Conjugate update of a rate posterior with expected statistics in place of observed ones."""
    ctmc = amalgamate(model, intervention)
    smoothed = smoothed_marginals(ctmc, observations, horizon, initial, steps)
    cards = model.state_cards
    cells, overrides = {}, {}
    for n, parent_set in enumerate(posterior.parent_sets):
        key = intervention.condition_key(n)
        cells[(n, key)] = project_node(smoothed.expected, cards, n, parent_set)
        if isinstance(intervention.conditions[n], ImperfectOverride):
            overrides[(n, key)] = intervention.conditions[n].rates
    stats = SufficientStats(cards, posterior.parent_sets, cells, overrides)
    logger.debug("Updated rate posterior from %d observations (log p(Y) = %.4f).",
                 len(observations.times), smoothed.log_likelihood)
    return update_rate_posterior(posterior, stats)


def incomplete_data_structure_posterior(posterior, model, intervention, observations, horizon, initial=None,
                                        steps=None):
    """Parent-set scores from the smoothed expected statistics of every candidate parent set."""
    ctmc = amalgamate(model, intervention)
    smoothed = smoothed_marginals(ctmc, observations, horizon, initial, steps)
    cards = model.state_cards
    return score_parent_sets(
        posterior, lambda n, p: _expected_node_statistics(smoothed.expected, cards, n, p, intervention))
