"""Gillespie sampling of trajectories and their sufficient statistics."""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ctbnal.exceptions import InsufficientData, ModelError, NumericalError, TrajectoryError
from ctbnal.model import (
    NO_INTERVENTION,
    ImperfectOverride,
    Intervention,
    amalgamate,
    as_parent_sets,
    intervention_from_document,
    intervention_to_document,
    num_parent_configurations,
    parent_configuration_index,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NodeStats:
    trans: np.ndarray
    dwell: np.ndarray

    @classmethod
    def zeros(cls, num_configs, card):
        return cls(np.zeros((num_configs, card, card)), np.zeros((num_configs, card)))

    def __add__(self, other):
        if self.trans.shape != other.trans.shape:
            raise ModelError(f"Cannot add statistics of shapes {self.trans.shape} and {other.trans.shape}.")
        return NodeStats(self.trans + other.trans, self.dwell + other.dwell)

    def __eq__(self, other):
        return (isinstance(other, NodeStats)
                and np.array_equal(self.trans, other.trans)
                and np.array_equal(self.dwell, other.dwell))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Statistics filed per ``(node, condition_key)`` cell."""
    state_cards: tuple
    parent_sets: tuple
    cells: dict
    overrides: dict = field(default_factory=dict)

    def node(self, node, condition=NO_INTERVENTION):
        if (node, condition) in self.cells:
            return self.cells[(node, condition)]
        return NodeStats.zeros(num_parent_configurations(self.parent_sets[node], self.state_cards),
                               self.state_cards[node])

    def conditions(self, node):
        return sorted(key for n, key in self.cells if n == node)

    def __eq__(self, other):
        return (isinstance(other, SufficientStats)
                and self.state_cards == other.state_cards
                and self.parent_sets == other.parent_sets
                and self.cells.keys() == other.cells.keys()
                and all(self.cells[k] == other.cells[k] for k in self.cells))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Trajectory:
    initial: tuple
    times: np.ndarray
    nodes: np.ndarray
    states: np.ndarray
    horizon: float
    intervention: Intervention = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        nodes = np.asarray(self.nodes, dtype=int).reshape(-1)
        states = np.asarray(self.states, dtype=int).reshape(-1)
        if not len(times) == len(nodes) == len(states):
            raise TrajectoryError("Event times, nodes and states must have the same length.")
        if self.horizon <= 0:
            raise TrajectoryError(f"Horizon must be positive, got {self.horizon}.")
        if len(times) and (times[0] <= 0 or times[-1] > self.horizon or np.any(np.diff(times) <= 0)):
            raise TrajectoryError("Event times must be strictly increasing within (0, horizon].")
        initial = tuple(int(x) for x in self.initial)
        if len(nodes) and (nodes.min() < 0 or nodes.max() >= len(initial)):
            raise TrajectoryError("An event references a node that does not exist.")
        intervention = self.intervention or Intervention.none(len(initial))
        if intervention.num_nodes != len(initial):
            raise TrajectoryError("The intervention does not cover every node of the trajectory.")
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "intervention", intervention)

    @property
    def num_events(self):
        return len(self.times)

    @cached_property
    def sequence(self):
        """Joint state held on each of the ``num_events + 1`` constant pieces."""
        sequence = np.empty((self.num_events + 1, len(self.initial)), dtype=int)
        sequence[0] = self.initial
        for k, (node, state) in enumerate(zip(self.nodes, self.states)):
            sequence[k + 1] = sequence[k]
            if sequence[k, node] == state:
                raise TrajectoryError(f"Event {k} does not change the state of node {node}.")
            sequence[k + 1, node] = state
        return sequence

    @cached_property
    def durations(self):
        return np.diff(np.concatenate([[0.0], self.times, [self.horizon]]))

    def check_cards(self, cards):
        if len(cards) != len(self.initial):
            raise TrajectoryError(f"Trajectory has {len(self.initial)} nodes, expected {len(cards)}.")
        sequence = self.sequence
        if np.any(sequence < 0) or np.any(sequence >= np.asarray(cards)):
            raise TrajectoryError("The trajectory references a state outside the node cardinalities.")


def sample_path(model, intervention, initial, horizon, rng):
    """Exact Gillespie simulation of the intervened model on [0, horizon]."""
    intervention = intervention or Intervention.none(model.num_nodes)
    ctmc = amalgamate(model, intervention, initial)
    generator = ctmc.generator
    if not np.all(np.isfinite(generator)):
        raise NumericalError("Cannot simulate a model with non-finite rates.")
    jumps = np.maximum(generator - np.diag(np.diag(generator)), 0.0)
    cumulative = np.cumsum(jumps, axis=1)
    current = ctmc.initial_index
    t = 0.0
    times, nodes, states = [], [], []
    while True:
        total = cumulative[current, -1]
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > horizon:
            break
        target = int(np.searchsorted(cumulative[current], rng.uniform(0.0, total), side="right"))
        node = int(np.flatnonzero(ctmc.states[current] != ctmc.states[target])[0])
        times.append(t)
        nodes.append(node)
        states.append(int(ctmc.states[target, node]))
        current = target
    return Trajectory(ctmc.initial, times, nodes, states, horizon, intervention)


def sample_paths(model, intervention, initial, horizon, count, rng):
    return [sample_path(model, intervention, initial, horizon, rng) for _ in range(count)]


def node_statistics(trajectory, node, parent_set, cards):
    """Statistics of one node under a candidate parent set (parents read at the left limit)."""
    trajectory.check_cards(cards)
    sequence = trajectory.sequence
    configs = parent_configuration_index(sequence, parent_set, cards)
    own = sequence[:, node]
    stats = NodeStats.zeros(num_parent_configurations(parent_set, cards), cards[node])
    np.add.at(stats.dwell, (configs, own), trajectory.durations)
    moves = np.flatnonzero(trajectory.nodes == node)
    np.add.at(stats.trans, (configs[moves], own[moves], own[moves + 1]), 1.0)
    return stats


def extract_statistics(trajectory, graph, cards, intervention=None):
    intervention = intervention or trajectory.intervention
    cards = tuple(cards)
    parent_sets = as_parent_sets(graph, len(cards))
    cells, overrides = {}, {}
    for n, parent_set in enumerate(parent_sets):
        key = intervention.condition_key(n)
        cells[(n, key)] = node_statistics(trajectory, n, parent_set, cards)
        condition = intervention.conditions[n]
        if isinstance(condition, ImperfectOverride):
            overrides[(n, key)] = condition.rates
    return SufficientStats(cards, parent_sets, cells, overrides)


def pool(stats):
    """Cell-wise sums per condition; a left fold so that sequential and pooled updates agree."""
    stats = list(stats)
    if not stats:
        raise InsufficientData("At least one set of statistics is needed for pooling.")
    first = stats[0]
    cells = dict(first.cells)
    overrides = dict(first.overrides)
    for other in stats[1:]:
        if other.state_cards != first.state_cards or other.parent_sets != first.parent_sets:
            raise ModelError("Cannot pool statistics extracted under different graphs or state spaces.")
        for key, cell in other.cells.items():
            cells[key] = cells[key] + cell if key in cells else cell
        overrides.update(other.overrides)
    return SufficientStats(first.state_cards, first.parent_sets, dict(sorted(cells.items())), overrides)


def observe_path(trajectory, times):
    """States held at the given times (right-continuous paths)."""
    index = np.searchsorted(trajectory.times, np.asarray(times, dtype=float), side="right")
    return trajectory.sequence[index]


def trajectory_to_document(trajectory):
    return {
        "initial": list(trajectory.initial),
        "events": [[float(t), int(n), int(x)] for t, n, x in zip(trajectory.times, trajectory.nodes, trajectory.states)],
        "horizon": trajectory.horizon,
        "intervention": intervention_to_document(trajectory.intervention),
    }


def trajectory_from_document(document):
    try:
        initial = [int(x) for x in document["initial"]]
        events = document.get("events", [])
        times = [float(event[0]) for event in events]
        nodes = [int(event[1]) for event in events]
        states = [int(event[2]) for event in events]
        horizon = float(document["horizon"])
    except (KeyError, TypeError, IndexError, ValueError) as e:
        raise TrajectoryError(f"Malformed trajectory document: {e}") from e
    intervention = document.get("intervention")
    intervention = intervention_from_document(intervention) if intervention is not None else None
    return Trajectory(tuple(initial), times, nodes, states, horizon, intervention)
