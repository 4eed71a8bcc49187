"""Transient master-equation solutions and expected sufficient statistics."""
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ctbnal.exceptions import ModelError, NumericalError
from ctbnal.model import (
    amalgamate,
    as_parent_sets,
    joint_index,
    joint_states,
    num_parent_configurations,
    parent_configuration_index,
)
from ctbnal.paths import NodeStats

logger = logging.getLogger(__name__)

STEPS_PER_UNIT_RATE = 200
MAX_STEPS = 100_000
DRIFT_TOLERANCE = 1e-6
CLIP_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class TransientSolution:
    grid: np.ndarray
    probs: np.ndarray
    dwell: np.ndarray

    @property
    def horizon(self):
        return float(self.grid[-1])


@dataclass(frozen=True, eq=False)
class ExpectedStats:
    joint_dwell: np.ndarray
    joint_trans: np.ndarray
    node: tuple = ()


def default_steps(generator, horizon):
    max_exit = float(np.max(-np.diag(generator))) if len(generator) else 0.0
    steps = int(np.ceil(STEPS_PER_UNIT_RATE * horizon * max_exit))
    return int(min(max(steps, 2), MAX_STEPS))


def rk4_polynomial(matrix, step):
    """Exact one-step map of classical RK4 applied to a constant linear system."""
    a = step * np.asarray(matrix)
    a2 = a @ a
    a3 = a2 @ a
    return np.eye(len(a)) + a + a2 / 2.0 + a3 / 6.0 + (a3 @ a) / 24.0


def rk4_propagator(generator, step):
    """RK4 map for the row-vector system d[p, D]/dt = [p W, p].

    The second block integrates the dwell moments alongside the distribution.
    """
    size = len(generator)
    augmented = np.zeros((2 * size, 2 * size))
    augmented[:size, :size] = generator
    augmented[:size, size:] = np.eye(size)
    return rk4_polynomial(augmented, step)


def initial_distribution(ctmc, initial=None):
    if initial is None:
        p0 = np.zeros(ctmc.num_states)
        p0[ctmc.initial_index] = 1.0
        return p0
    initial = np.asarray(initial)
    if initial.ndim == 1 and len(initial) == ctmc.num_states and initial.dtype.kind == "f":
        if np.any(initial < 0) or not np.isclose(initial.sum(), 1.0):
            raise ModelError("Initial distribution must be non-negative and sum to one.")
        return initial.astype(float)
    p0 = np.zeros(ctmc.num_states)
    p0[joint_index(initial, ctmc.state_cards)[0]] = 1.0
    return p0


def checked_probabilities(slices):
    if not np.all(np.isfinite(slices)):
        raise NumericalError("Master-equation solution became non-finite.")
    if np.any(slices < -CLIP_TOLERANCE):
        raise NumericalError(f"Probabilities dropped to {slices.min():.3g}; the step size is too coarse.")
    slices = np.maximum(slices, 0.0)
    drift = np.max(np.abs(slices.sum(axis=1) - 1.0))
    if drift > DRIFT_TOLERANCE:
        raise NumericalError(f"Normalization drifted by {drift:.3g}; the step size is too coarse.")
    return slices


def solve_master_equation(ctmc, horizon, steps=None, initial=None, keep_slices=True):
    """Integrates dp/dt = p W from the initial state (or distribution) up to ``horizon``.

    With ``keep_slices=False`` only the first and last slices are returned and the
    propagator is raised to the step count by repeated squaring.
    """
    if horizon <= 0:
        raise ValueError(f"Horizon must be positive, got {horizon}.")
    generator = ctmc.generator
    if not np.all(np.isfinite(generator)):
        raise NumericalError("Generator contains non-finite entries.")
    p0 = initial_distribution(ctmc, initial)
    steps = default_steps(generator, horizon) if steps is None else int(steps)
    if steps < 2:
        raise ValueError(f"At least two integration steps are needed, got {steps}.")
    size = ctmc.num_states
    propagator = rk4_propagator(generator, horizon / steps)
    y = np.concatenate([p0, np.zeros(size)])
    if keep_slices:
        slices = np.empty((steps + 1, size))
        slices[0] = p0
        for k in range(1, steps + 1):
            y = y @ propagator
            slices[k] = y[:size]
        grid = np.linspace(0.0, horizon, steps + 1)
    else:
        y = y @ np.linalg.matrix_power(propagator, steps)
        slices = np.vstack([p0, y[:size]])
        grid = np.array([0.0, horizon])
    dwell = y[size:]
    if np.any(dwell < -CLIP_TOLERANCE * horizon):
        raise NumericalError("Expected dwell times became negative.")
    return TransientSolution(grid, checked_probabilities(slices), np.maximum(dwell, 0.0))


def expected_statistics(solution, ctmc):
    dwell = solution.dwell.copy()
    trans = ctmc.generator * dwell[:, None]
    np.fill_diagonal(trans, 0.0)
    return ExpectedStats(dwell, np.maximum(trans, 0.0))


@lru_cache(maxsize=64)
def _flip_table(cards):
    """``table[n][x]`` maps every joint state to the state with node n set to x."""
    states = joint_states(cards)
    table = []
    for n, card in enumerate(cards):
        rows = []
        for target in range(card):
            moved = states.copy()
            moved[:, n] = target
            rows.append(joint_index(moved, cards))
        table.append(np.array(rows))
    return tuple(table)


@lru_cache(maxsize=1024)
def _configurations(cards, parent_set):
    index = parent_configuration_index(joint_states(cards), parent_set, cards)
    index.flags.writeable = False
    return index


def project_node(joint, state_cards, node, parent_set):
    """Projects joint moments onto one node under an arbitrary parent set."""
    cards = tuple(state_cards)
    states = joint_states(cards)
    card = cards[node]
    configs = _configurations(cards, tuple(parent_set))
    num_configs = num_parent_configurations(parent_set, cards)
    own = states[:, node]
    dwell = np.zeros((num_configs, card))
    np.add.at(dwell, (configs, own), joint.joint_dwell)
    trans = np.zeros((num_configs, card, card))
    flips = _flip_table(cards)[node]
    for target in range(card):
        rows = np.flatnonzero(own != target)
        np.add.at(trans, (configs[rows], own[rows], target), joint.joint_trans[rows, flips[target][rows]])
    return NodeStats(trans, dwell)


def project_statistics(joint, state_cards, graph):
    """Node statistics for every node under ``graph``, which may differ from the generating graph."""
    cards = tuple(state_cards)
    if len(joint.joint_dwell) != int(np.prod(cards, dtype=int)):
        raise ModelError("Joint statistics do not match the state space.")
    parent_sets = as_parent_sets(graph, len(cards))
    node = tuple(project_node(joint, cards, n, p) for n, p in enumerate(parent_sets))
    return ExpectedStats(joint.joint_dwell, joint.joint_trans, node)


def expected_statistics_under_posterior_sample(model, intervention, initial, horizon, graphs=None,
                                               steps=None, keep_slices=False):
    """Amalgamate, solve, take moments and project onto each requested graph."""
    ctmc = amalgamate(model, intervention, initial)
    solution = solve_master_equation(ctmc, horizon, steps=steps, keep_slices=keep_slices)
    joint = expected_statistics(solution, ctmc)
    graphs = [model.adjacency] if graphs is None else graphs
    return tuple(project_statistics(joint, model.state_cards, g) for g in graphs)
