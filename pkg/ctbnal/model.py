"""Conditional CTBN model: graph, condition-indexed rates, interventions and amalgamation.

Conventions used throughout the package:

* ``adjacency[m, n]`` is true for an edge ``m -> n``. Cycles are allowed, self-loops are not.
* ``rates[n]`` has shape ``(U_n, X_n, X_n)``: the parent configuration first, then the
  (from, to) state pair. The diagonal is stored as zero; the exit rate is derived.
* Parent configurations and joint states are enumerated mixed-radix with the lowest node
  index varying fastest.
"""
import hashlib
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ctbnal.exceptions import InterventionError, ModelError

logger = logging.getLogger(__name__)

FAST = "fast"
SLOW = "slow"
NO_INTERVENTION = "none"

GAMMA_SHAPE = {FAST: 5.0, SLOW: 1.0 / 5.0}
GAMMA_RATE = {FAST: 1.0, SLOW: 1.0}
SOFTMAX_SCALE = {FAST: 5.0, SLOW: 1.0 / 5.0}
SOFTMAX_GAIN = 3.0

# Slow nodes point at fast nodes so that clamping them exposes rarely visited conditions.
PRESETS = {
    "synthetic-structure": {
        "mode": "gamma",
        "kinds": (SLOW, FAST, SLOW, FAST),
        "edges": ((0, 1), (2, 1), (1, 3), (2, 3)),
        "cards": 2,
    },
    "synthetic-parameters": {
        "mode": "softmax",
        "kinds": (SLOW, FAST, SLOW, FAST),
        "edges": ((0, 1), (2, 1), (1, 3), (2, 3)),
        "cards": 2,
    },
}


def parents(adjacency, node):
    return tuple(int(m) for m in np.flatnonzero(np.asarray(adjacency)[:, node]))


def as_parent_sets(graph, num_nodes):
    """Accepts an adjacency matrix or a sequence of parent sets and returns parent sets."""
    if isinstance(graph, np.ndarray) and graph.ndim == 2:
        if graph.shape != (num_nodes, num_nodes):
            raise ModelError(f"Graph has shape {graph.shape}, expected ({num_nodes}, {num_nodes}).")
        return tuple(parents(graph, n) for n in range(num_nodes))
    parent_sets = tuple(tuple(sorted(int(m) for m in p)) for p in graph)
    if len(parent_sets) != num_nodes:
        raise ModelError(f"Graph lists {len(parent_sets)} parent sets for {num_nodes} nodes.")
    for n, parent_set in enumerate(parent_sets):
        for m in parent_set:
            if not 0 <= m < num_nodes:
                raise ModelError(f"Parent {m} of node {n} does not exist.")
            if m == n:
                raise ModelError(f"Node {n} cannot be its own parent.")
    return parent_sets


def adjacency_from_parent_sets(parent_sets):
    num_nodes = len(parent_sets)
    adjacency = np.zeros((num_nodes, num_nodes), dtype=bool)
    for n, parent_set in enumerate(parent_sets):
        adjacency[list(parent_set), n] = True
    return adjacency


def num_parent_configurations(parent_set, cards):
    return int(np.prod([cards[m] for m in parent_set], dtype=int))


def parent_configuration_index(states, parent_set, cards):
    states = np.atleast_2d(states)
    index = np.zeros(len(states), dtype=int)
    radix = 1
    for m in parent_set:
        index += states[:, m] * radix
        radix *= cards[m]
    return index


@lru_cache(maxsize=64)
def _joint_states(cards):
    size = int(np.prod(cards, dtype=int))
    states = np.stack(np.unravel_index(np.arange(size), cards, order="F"), axis=1)
    states.flags.writeable = False
    return states


def joint_states(cards):
    return _joint_states(tuple(int(c) for c in cards))


def joint_index(states, cards):
    states = np.atleast_2d(states)
    return np.ravel_multi_index(tuple(states.T), tuple(cards), order="F")


def offdiagonal_mask(card):
    return ~np.eye(card, dtype=bool)


def _frozen(array, dtype=float):
    array = np.array(array, dtype=dtype)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Ctbn:
    state_cards: tuple
    adjacency: np.ndarray
    rates: tuple
    names: tuple = ()

    def __post_init__(self):
        cards = tuple(int(c) for c in self.state_cards)
        if not cards or any(c < 2 for c in cards):
            raise ModelError(f"Every node needs at least two states, got cardinalities {cards}.")
        adjacency = np.array(self.adjacency, dtype=bool)
        num_nodes = len(cards)
        if adjacency.shape != (num_nodes, num_nodes):
            raise ModelError(f"Adjacency has shape {adjacency.shape}, expected ({num_nodes}, {num_nodes}).")
        if np.any(np.diag(adjacency)):
            raise ModelError("Self-loops are not allowed.")
        if len(self.rates) != num_nodes:
            raise ModelError(f"Got rate tensors for {len(self.rates)} nodes, expected {num_nodes}.")
        rates = []
        for n in range(num_nodes):
            expected = (num_parent_configurations(parents(adjacency, n), cards), cards[n], cards[n])
            tensor = np.array(self.rates[n], dtype=float)
            if tensor.shape != expected:
                raise ModelError(f"Rates of node {n} have shape {tensor.shape}, expected {expected}.")
            if not np.all(np.isfinite(tensor)):
                raise ModelError(f"Rates of node {n} contain non-finite values.")
            tensor[:, ~offdiagonal_mask(cards[n])] = 0.0
            if np.any(tensor < 0):
                raise ModelError(f"Rates of node {n} contain negative off-diagonal entries.")
            rates.append(_frozen(tensor))
        adjacency.flags.writeable = False
        names = tuple(self.names) if self.names else tuple(f"X{n}" for n in range(num_nodes))
        if len(names) != num_nodes:
            raise ModelError(f"Got {len(names)} node names for {num_nodes} nodes.")
        object.__setattr__(self, "state_cards", cards)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "rates", tuple(rates))
        object.__setattr__(self, "names", names)

    @property
    def num_nodes(self):
        return len(self.state_cards)

    @property
    def num_states(self):
        return int(np.prod(self.state_cards, dtype=int))

    @property
    def parent_sets(self):
        return tuple(parents(self.adjacency, n) for n in range(self.num_nodes))

    def with_rates(self, node, tensor):
        rates = list(self.rates)
        rates[node] = tensor
        return Ctbn(self.state_cards, self.adjacency, tuple(rates), self.names)

    def __eq__(self, other):
        if not isinstance(other, Ctbn):
            return NotImplemented
        return (self.state_cards == other.state_cards
                and self.names == other.names
                and np.array_equal(self.adjacency, other.adjacency)
                and all(np.array_equal(a, b) for a, b in zip(self.rates, other.rates)))

    __hash__ = None


@dataclass(frozen=True)
class PerfectClamp:
    state: int


@dataclass(frozen=True, eq=False)
class ImperfectOverride:
    rates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rates", _frozen(self.rates))

    @property
    def digest(self):
        payload = repr(self.rates.shape).encode() + np.ascontiguousarray(self.rates).tobytes()
        return hashlib.sha1(payload).hexdigest()

    def __eq__(self, other):
        return isinstance(other, ImperfectOverride) and self.digest == other.digest

    def __hash__(self):
        return hash(self.digest)


@dataclass(frozen=True, eq=False)
class Intervention:
    conditions: tuple

    def __post_init__(self):
        conditions = tuple(self.conditions)
        for condition in conditions:
            if condition is not None and not isinstance(condition, (PerfectClamp, ImperfectOverride)):
                raise InterventionError(f"Unknown condition {condition!r}.")
        object.__setattr__(self, "conditions", conditions)

    @classmethod
    def none(cls, num_nodes):
        return cls((None,) * num_nodes)

    @classmethod
    def clamp(cls, num_nodes, targets):
        conditions = [None] * num_nodes
        for node, state in targets.items():
            conditions[node] = PerfectClamp(int(state))
        return cls(tuple(conditions))

    @property
    def num_nodes(self):
        return len(self.conditions)

    @property
    def unintervened(self):
        return tuple(n for n, c in enumerate(self.conditions) if c is None)

    @property
    def targets(self):
        return tuple(n for n, c in enumerate(self.conditions) if c is not None)

    @property
    def clamps(self):
        return {n: c.state for n, c in enumerate(self.conditions) if isinstance(c, PerfectClamp)}

    @property
    def is_passive(self):
        return all(c is None for c in self.conditions)

    def condition_key(self, node):
        condition = self.conditions[node]
        if condition is None:
            return NO_INTERVENTION
        if isinstance(condition, PerfectClamp):
            return f"clamp={condition.state}"
        return f"override={condition.digest}"

    @property
    def key(self):
        return tuple(self.condition_key(n) for n in range(self.num_nodes))

    @property
    def label(self):
        if self.is_passive:
            return "passive"
        parts = []
        for n, condition in enumerate(self.conditions):
            if isinstance(condition, PerfectClamp):
                parts.append(f"X{n}={condition.state}")
            elif isinstance(condition, ImperfectOverride):
                parts.append(f"X{n}~{condition.digest[:8]}")
        return f"do({','.join(parts)})"

    def __eq__(self, other):
        return isinstance(other, Intervention) and self.key == other.key

    def __hash__(self):
        return hash(self.key)


def _checked_intervention(model, intervention):
    if intervention is None:
        return Intervention.none(model.num_nodes)
    if intervention.num_nodes != model.num_nodes:
        raise InterventionError(
            f"Intervention covers {intervention.num_nodes} nodes, the model has {model.num_nodes}.")
    return intervention


def apply_intervention(model, intervention):
    intervention = _checked_intervention(model, intervention)
    if intervention.is_passive:
        return model
    rates = list(model.rates)
    for n, condition in enumerate(intervention.conditions):
        if isinstance(condition, PerfectClamp):
            if not 0 <= condition.state < model.state_cards[n]:
                raise InterventionError(f"Clamp state {condition.state} is invalid for node {n}.")
            rates[n] = np.zeros_like(model.rates[n])
        elif isinstance(condition, ImperfectOverride):
            if condition.rates.shape != model.rates[n].shape:
                raise InterventionError(
                    f"Override for node {n} has shape {condition.rates.shape}, "
                    f"expected {model.rates[n].shape}.")
            rates[n] = condition.rates
    return Ctbn(model.state_cards, model.adjacency, tuple(rates), model.names)


def check_initial_state(model, initial, intervention=None):
    initial = tuple(int(x) for x in initial)
    if len(initial) != model.num_nodes:
        raise ModelError(f"Initial state has {len(initial)} entries, expected {model.num_nodes}.")
    for n, (x, card) in enumerate(zip(initial, model.state_cards)):
        if not 0 <= x < card:
            raise ModelError(f"Initial state {x} is invalid for node {n}.")
    if intervention is not None:
        for n, state in intervention.clamps.items():
            if initial[n] != state:
                raise InterventionError(
                    f"Initial state of node {n} is {initial[n]} but the node is clamped to {state}.")
    return initial


def consistent_initial_state(initial, intervention):
    initial = [int(x) for x in initial]
    for n, state in intervention.clamps.items():
        initial[n] = state
    return tuple(initial)


@dataclass(frozen=True, eq=False)
class AmalgamatedCtmc:
    state_cards: tuple
    states: np.ndarray
    generator: np.ndarray
    initial: tuple = None

    @property
    def num_states(self):
        return len(self.states)

    @property
    def initial_index(self):
        if self.initial is None:
            raise ModelError("The chain was built without an initial state.")
        return int(joint_index(self.initial, self.state_cards)[0])


def amalgamate(model, intervention=None, initial=None):
    intervention = _checked_intervention(model, intervention)
    if initial is not None:
        initial = check_initial_state(model, initial, intervention)
    intervened = apply_intervention(model, intervention)
    cards = model.state_cards
    states = joint_states(cards)
    generator = np.zeros((len(states), len(states)))
    for n, parent_set in enumerate(model.parent_sets):
        rates = intervened.rates[n]
        configs = parent_configuration_index(states, parent_set, cards)
        for target in range(cards[n]):
            rows = np.flatnonzero(states[:, n] != target)
            moved = states[rows].copy()
            moved[:, n] = target
            generator[rows, joint_index(moved, cards)] = rates[configs[rows], states[rows, n], target]
    np.fill_diagonal(generator, -generator.sum(axis=1))
    generator.flags.writeable = False
    return AmalgamatedCtmc(cards, states, generator, initial)


def _softmax_rates(scale, parent_set, card, cards, gain):
    configs = joint_states(tuple(cards[m] for m in parent_set)) if parent_set else np.zeros((1, 0), dtype=int)
    rates = np.zeros((len(configs), card, card))
    for u, config in enumerate(configs):
        agreement = np.array([np.sum(config == target) for target in range(card)], dtype=float)
        weights = np.exp(gain * agreement - np.max(gain * agreement))
        rates[u] = scale * weights / weights.sum()
    rates[:, ~offdiagonal_mask(card)] = 0.0
    return rates


def random_model(kinds, adjacency, mode="gamma", rng=None, cards=2,
                 gamma_shape=None, gamma_rate=None, softmax_scale=None, gain=SOFTMAX_GAIN):
    """Draws a ground-truth model from fast/slow node labels.

    ``mode="gamma"`` samples every off-diagonal rate from Gamma(alpha_kind, beta_kind);
    ``mode="softmax"`` sets rate(x, x', u) = r_kind * softmax(gain * #{parents in state x'}).
    """
    kinds = tuple(kinds)
    num_nodes = len(kinds)
    for kind in kinds:
        if kind not in (FAST, SLOW):
            raise ModelError(f"Node kind must be '{FAST}' or '{SLOW}', got {kind!r}.")
    state_cards = (int(cards),) * num_nodes if np.isscalar(cards) else tuple(int(c) for c in cards)
    if len(state_cards) != num_nodes or any(c < 2 for c in state_cards):
        raise ModelError(f"Invalid cardinalities {state_cards} for {num_nodes} nodes.")
    adjacency = np.array(adjacency, dtype=bool)
    parent_sets = as_parent_sets(adjacency, num_nodes)
    shapes = {**GAMMA_SHAPE, **(gamma_shape or {})}
    rate_params = {**GAMMA_RATE, **(gamma_rate or {})}
    scales = {**SOFTMAX_SCALE, **(softmax_scale or {})}
    rates = []
    if mode == "gamma":
        rng = np.random.default_rng() if rng is None else rng
        for n, node_rng in enumerate(rng.spawn(num_nodes)):
            shape = (num_parent_configurations(parent_sets[n], state_cards), state_cards[n], state_cards[n])
            tensor = node_rng.gamma(shapes[kinds[n]], 1.0 / rate_params[kinds[n]], size=shape)
            tensor[:, ~offdiagonal_mask(state_cards[n])] = 0.0
            rates.append(tensor)
    elif mode == "softmax":
        for n in range(num_nodes):
            rates.append(_softmax_rates(scales[kinds[n]], parent_sets[n], state_cards[n], state_cards, gain))
    else:
        raise ModelError(f"Unknown generation mode {mode!r}.")
    return Ctbn(state_cards, adjacency, tuple(rates))


def preset_model(name, seed=0):
    if name not in PRESETS:
        raise ModelError(f"Unknown preset {name!r}; choose from {sorted(PRESETS)}.")
    preset = PRESETS[name]
    num_nodes = len(preset["kinds"])
    adjacency = np.zeros((num_nodes, num_nodes), dtype=bool)
    for m, n in preset["edges"]:
        adjacency[m, n] = True
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    model = random_model(preset["kinds"], adjacency, preset["mode"], rng, preset["cards"])
    provenance = {"preset": name, "seed": int(seed), "mode": preset["mode"], "kinds": list(preset["kinds"])}
    return model, provenance


def intervention_to_document(intervention):
    document = []
    for condition in intervention.conditions:
        if condition is None:
            document.append(None)
        elif isinstance(condition, PerfectClamp):
            document.append({"clamp": condition.state})
        else:
            document.append({"override": condition.rates.tolist()})
    return document


def intervention_from_document(document):
    conditions = []
    for entry in document:
        if entry is None:
            conditions.append(None)
        elif "clamp" in entry:
            conditions.append(PerfectClamp(int(entry["clamp"])))
        elif "override" in entry:
            conditions.append(ImperfectOverride(np.array(entry["override"], dtype=float)))
        else:
            raise InterventionError(f"Unknown condition entry {entry!r}.")
    return Intervention(tuple(conditions))


def model_to_document(model, provenance=None):
    edges = [[int(m), int(n)] for m, n in itertools.product(range(model.num_nodes), repeat=2)
             if model.adjacency[m, n]]
    return {
        "nodes": [{"name": name, "cardinality": card} for name, card in zip(model.names, model.state_cards)],
        "edges": edges,
        "rates": [tensor.tolist() for tensor in model.rates],
        "provenance": dict(provenance or {}),
    }


def model_from_document(document):
    try:
        nodes = document["nodes"]
        cards = tuple(int(node["cardinality"]) for node in nodes)
        names = tuple(str(node.get("name", f"X{n}")) for n, node in enumerate(nodes))
        adjacency = np.zeros((len(cards), len(cards)), dtype=bool)
        for m, n in document.get("edges", []):
            adjacency[int(m), int(n)] = True
        rates = tuple(np.array(tensor, dtype=float) for tensor in document["rates"])
    except (KeyError, TypeError, IndexError, ValueError) as e:
        raise ModelError(f"Malformed model document: {e}") from e
    return Ctbn(cards, adjacency, rates, names)
