import itertools
import logging

import numpy as np

from ctbnal.design import parameters, structure
from ctbnal.exceptions import DesignError, NumericalError, StrategyError
from ctbnal.model import Intervention, consistent_initial_state

logger = logging.getLogger(__name__)

STRATEGIES = ("passive", "random", "bhc", "vbhc", "neg-vbhc", "eig")
CRITERIA = ("bhc", "vbhc", "neg-vbhc", "eig")
TARGETS = ("parameters", "structure")
DEFAULT_MAX_TARGETS = 2


def candidate_interventions(state_cards, max_targets=DEFAULT_MAX_TARGETS):
    """No-op first, then clamps of one node, then of two nodes, in node and state order."""
    num_nodes = len(state_cards)
    candidates = [Intervention.none(num_nodes)]
    for size in range(1, min(max_targets, num_nodes) + 1):
        for nodes in itertools.combinations(range(num_nodes), size):
            for states in itertools.product(*(range(state_cards[n]) for n in nodes)):
                candidates.append(Intervention.clamp(num_nodes, dict(zip(nodes, states))))
    return tuple(candidates)


def check_strategy(strategy, target):
    if strategy not in STRATEGIES:
        raise StrategyError(f"Unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}.")
    if target not in TARGETS:
        raise StrategyError(f"Unknown learning target {target!r}; choose from {', '.join(TARGETS)}.")


class CriterionScorer:
    """Scores candidates of one selection round against a shared set of posterior draws."""

    def __init__(self, strategy, target, posterior, initial, horizon, rng,
                 num_samples=parameters.DEFAULT_NUM_SAMPLES, num_paths=parameters.DEFAULT_NUM_PATHS, steps=None):
        check_strategy(strategy, target)
        if strategy not in CRITERIA:
            raise StrategyError(f"Strategy {strategy!r} does not evaluate a criterion.")
        self.strategy = strategy
        self.target = target
        self.posterior = posterior
        self.initial = tuple(initial)
        self.horizon = horizon
        self.num_paths = num_paths
        self.steps = steps
        self.traces = {}
        sample_rng, self._path_seed = rng.spawn(1)[0], int(rng.integers(2 ** 63))
        if target == "parameters":
            self.samples = parameters.draw_rate_samples(posterior, num_samples, sample_rng)
        else:
            self.samples = structure.draw_structure_samples(posterior, num_samples, sample_rng)

    def __call__(self, intervention):
        initial = consistent_initial_state(self.initial, intervention)
        if self.strategy == "eig":
            # every candidate replays the same path stream
            path_rng = np.random.default_rng(self._path_seed)
            if self.target == "parameters":
                return parameters.eig_parameters(self.posterior, intervention, initial, self.horizon,
                                                 num_paths=self.num_paths, rng=path_rng,
                                                 samples=self.samples).value
            return structure.eig_structure(self.posterior, intervention, initial, self.horizon,
                                           rng=path_rng, samples=self.samples).value
        if self.target == "parameters":
            problem = parameters.prepare_parameter_problem(self.posterior, intervention, initial, self.horizon,
                                                           samples=self.samples, steps=self.steps)
            if self.strategy == "bhc":
                return problem.objective(parameters.VariationalRateParams.from_posterior(self.posterior)).value
            return self._minimized(intervention, parameters.minimize_problem(problem)[0])
        problem = structure.prepare_structure_problem(self.posterior, intervention, initial, self.horizon,
                                                      samples=self.samples, steps=self.steps)
        if self.strategy == "bhc":
            return problem.objective(structure.VariationalStructureParams.from_posterior(self.posterior)).value
        return self._minimized(intervention, structure.minimize_structure_problem(problem)[0])

    def _minimized(self, intervention, criterion):
        self.traces[intervention] = criterion.trace
        return criterion.value


def select_intervention(strategy, candidates, scorer=None, rng=None):
    """Returns ``(index, intervention, scores)``; ties go to the lowest candidate index."""
    candidates = tuple(candidates)
    if not candidates:
        raise DesignError("The candidate set is empty.")
    if strategy not in STRATEGIES:
        raise StrategyError(f"Unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}.")
    if len(candidates) == 1:
        return 0, candidates[0], None
    if strategy == "passive":
        for index, candidate in enumerate(candidates):
            if candidate.is_passive:
                return index, candidate, None
        raise StrategyError("The passive strategy needs the no-intervention candidate.")
    if strategy == "random":
        if rng is None:
            raise StrategyError("The random strategy needs a random generator.")
        index = int(rng.integers(len(candidates)))
        return index, candidates[index], None
    if scorer is None:
        raise StrategyError(f"Strategy {strategy!r} needs a criterion scorer.")
    scores = np.array([scorer(candidate) for candidate in candidates], dtype=float)
    if not np.all(np.isfinite(scores)):
        raise NumericalError(f"Criterion {strategy} returned non-finite scores.")
    index = int(np.argmin(scores)) if strategy == "neg-vbhc" else int(np.argmax(scores))
    return index, candidates[index], scores
