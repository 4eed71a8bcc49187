import numpy as np
import pytest
from conftest import observed_posterior

from ctbnal.design.selection import (
    CriterionScorer,
    candidate_interventions,
    check_strategy,
    select_intervention,
)
from ctbnal.exceptions import DesignError, NumericalError, StrategyError
from ctbnal.model import Intervention


@pytest.fixture
def candidates():
    return candidate_interventions((2, 2))


def scorer_from(values):
    def score(intervention):
        return values[intervention.label]
    return score


def test_candidate_set_for_four_binary_nodes():
    candidates = candidate_interventions((2, 2, 2, 2))
    assert len(candidates) == 33
    assert candidates[0].is_passive
    assert candidates[1] == Intervention.clamp(4, {0: 0})
    assert candidates[2] == Intervention.clamp(4, {0: 1})
    assert candidates[9] == Intervention.clamp(4, {0: 0, 1: 0})
    assert len(candidate_interventions((2, 2, 2, 2), max_targets=1)) == 9
    assert len(candidate_interventions((2, 3), max_targets=2)) == 1 + 5 + 6


def test_passive_picks_the_no_op(candidates):
    index, intervention, scores = select_intervention("passive", candidates)
    assert index == 0 and intervention.is_passive and scores is None
    with pytest.raises(StrategyError):
        select_intervention("passive", candidates[1:])


def test_single_candidate_needs_no_scoring():
    only = (Intervention.clamp(2, {1: 0}),)
    for strategy in ("passive", "random", "vbhc"):
        assert select_intervention(strategy, only) == (0, only[0], None)


def test_random_is_seeded(candidates):
    picks = [select_intervention("random", candidates, rng=np.random.default_rng(5))[0] for _ in range(3)]
    assert len(set(picks)) == 1
    with pytest.raises(StrategyError):
        select_intervention("random", candidates)


def test_criteria_maximize_and_negated_criterion_minimizes(candidates):
    values = {c.label: float(i % 4) for i, c in enumerate(candidates)}
    index, _, scores = select_intervention("vbhc", candidates, scorer_from(values))
    assert index == 3
    assert len(scores) == len(candidates)
    assert select_intervention("neg-vbhc", candidates, scorer_from(values))[0] == 0
    assert select_intervention("eig", candidates, scorer_from(values))[0] == 3


def test_ties_go_to_the_lowest_index(candidates):
    values = {c.label: 1.0 for c in candidates}
    assert select_intervention("bhc", candidates, scorer_from(values))[0] == 0
    assert select_intervention("neg-vbhc", candidates, scorer_from(values))[0] == 0


def test_selection_errors(candidates):
    with pytest.raises(StrategyError):
        select_intervention("greedy", candidates)
    with pytest.raises(StrategyError):
        select_intervention("vbhc", candidates)
    with pytest.raises(DesignError):
        select_intervention("passive", ())
    values = {c.label: np.nan for c in candidates}
    with pytest.raises(NumericalError):
        select_intervention("vbhc", candidates, scorer_from(values))
    with pytest.raises(StrategyError):
        check_strategy("vbhc", "everything")
    with pytest.raises(StrategyError):
        CriterionScorer("random", "parameters", None, (0, 0), 1.0, np.random.default_rng(0))


def test_scorer_shares_draws_between_candidates(chain_model, rng, candidates):
    posterior = observed_posterior(chain_model, rng, 2)
    scorer = CriterionScorer("bhc", "parameters", posterior, (0, 0), 1.0, rng, num_samples=2, steps=100)
    assert scorer(candidates[0]) == scorer(candidates[0])
    assert scorer(Intervention.clamp(2, {0: 1, 1: 1})) == 0.0
    eig = CriterionScorer("eig", "parameters", posterior, (0, 0), 1.0, rng, num_samples=2, num_paths=2)
    assert eig(candidates[1]) == eig(candidates[1])
