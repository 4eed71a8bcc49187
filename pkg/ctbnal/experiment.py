"""Closed-loop simulated experiment sequences."""
import logging
import time
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from ctbnal.analysis import auroc_aupr, mse_posterior
from ctbnal.bayes import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_MAX_PARENTS,
    RatePosterior,
    StructurePosterior,
    edge_marginals,
    posterior_entropy,
    rate_posterior_to_document,
    structure_posterior_to_document,
    update_rate_posterior,
    update_structure_posterior,
)
from ctbnal.design.optimize import trace_to_frame
from ctbnal.design.parameters import DEFAULT_NUM_PATHS, DEFAULT_NUM_SAMPLES
from ctbnal.design.selection import (
    DEFAULT_MAX_TARGETS,
    CriterionScorer,
    candidate_interventions,
    check_strategy,
    select_intervention,
)
from ctbnal.exceptions import ConfigError, CtbnError, InsufficientData
from ctbnal.model import consistent_initial_state
from ctbnal.paths import extract_statistics, sample_path

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 30
DEFAULT_HORIZON = 3.0
DEFAULT_REPETITIONS = 50

METRIC_COLUMNS = ("strategy", "target", "repetition", "step", "intervention", "targets",
                  "mse", "auroc", "aupr", "entropy", "wall_time")
TRACE_COLUMNS = ("strategy", "repetition", "step", "iteration", "value")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    truth: object
    strategy: str
    target: str = "parameters"
    steps: int = DEFAULT_STEPS
    horizon: float = DEFAULT_HORIZON
    repetitions: int = DEFAULT_REPETITIONS
    num_samples: int = DEFAULT_NUM_SAMPLES
    num_paths: int = DEFAULT_NUM_PATHS
    seed: int = 0
    max_parents: int = DEFAULT_MAX_PARENTS
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    max_targets: int = DEFAULT_MAX_TARGETS
    ode_steps: int = None
    candidates: tuple = None

    def __post_init__(self):
        check_strategy(self.strategy, self.target)
        problems = []
        if self.steps < 0:
            problems.append(f"steps must not be negative, got {self.steps}")
        if self.repetitions < 1:
            problems.append(f"repetitions must be at least 1, got {self.repetitions}")
        if not self.horizon > 0:
            problems.append(f"horizon must be positive, got {self.horizon}")
        if problems:
            raise ConfigError(problems)

    def candidate_set(self):
        if self.candidates is not None:
            return tuple(self.candidates)
        return candidate_interventions(self.truth.state_cards, self.max_targets)


def repetition_generators(seed, repetition):
    """Independent (truth, design) streams for one repetition."""
    truth, design = np.random.SeedSequence([int(seed), int(repetition)]).spawn(2)
    return np.random.default_rng(truth), np.random.default_rng(design)


@dataclass(frozen=True, eq=False)
class SequenceResult:
    records: list
    posterior: dict
    traces: list


class _ParameterLearner:
    def __init__(self, config):
        self.truth = config.truth
        self.posterior = RatePosterior.prior(self.truth.state_cards, self.truth.adjacency, config.alpha, config.beta)

    def update(self, trajectory):
        stats = extract_statistics(trajectory, self.posterior.parent_sets, self.truth.state_cards)
        self.posterior = update_rate_posterior(self.posterior, stats)

    def metrics(self):
        return {"mse": mse_posterior(self.posterior, self.truth), "auroc": np.nan, "aupr": np.nan,
                "entropy": np.nan}

    def document(self):
        return rate_posterior_to_document(self.posterior)


class _StructureLearner:
    def __init__(self, config):
        self.truth = config.truth
        self.posterior = StructurePosterior.empty(self.truth.state_cards, config.max_parents,
                                                  alpha=config.alpha, beta=config.beta)

    def update(self, trajectory):
        self.posterior = update_structure_posterior(self.posterior, [trajectory])

    def metrics(self):
        try:
            auroc, aupr = auroc_aupr(edge_marginals(self.posterior), self.truth.adjacency)
        except InsufficientData:
            auroc, aupr = np.nan, np.nan
        return {"mse": np.nan, "auroc": auroc, "aupr": aupr, "entropy": posterior_entropy(self.posterior)}

    def document(self):
        return structure_posterior_to_document(self.posterior)


def _record(config, repetition, step, intervention, learner, wall_time=0.0):
    targets = "" if intervention is None else ",".join(str(n) for n in intervention.targets)
    return {"strategy": config.strategy, "target": config.target, "repetition": repetition, "step": step,
            "intervention": "-" if intervention is None else intervention.label, "targets": targets,
            **learner.metrics(), "wall_time": wall_time}


def simulate_sequence(config, repetition=0):
    """One repetition: select, simulate, update and score after every step (step 0 is the prior).

    Besides the metric records the result holds the final posterior snapshot and, for the
    minimized criteria, the optimizer trace of the selected candidate at every step.
    """
    truth_rng, design_rng = repetition_generators(config.seed, repetition)
    learner = _ParameterLearner(config) if config.target == "parameters" else _StructureLearner(config)
    candidates = config.candidate_set()
    cards = config.truth.state_cards
    records = [_record(config, repetition, 0, None, learner)]
    traces = []
    for step in range(1, config.steps + 1):
        started = time.perf_counter()
        initial = tuple(int(truth_rng.integers(c)) for c in cards)
        scorer = None
        if config.strategy not in ("passive", "random") and len(candidates) > 1:
            scorer = CriterionScorer(config.strategy, config.target, learner.posterior, initial, config.horizon,
                                     design_rng, config.num_samples, config.num_paths, config.ode_steps)
        try:
            index, intervention, scores = select_intervention(config.strategy, candidates, scorer, design_rng)
        except CtbnError:
            logger.error("Selection failed at step %d of repetition %d.", step, repetition)
            raise
        if scorer is not None and intervention in scorer.traces:
            traces.append((step, scorer.traces[intervention]))
        trajectory = sample_path(config.truth, intervention, consistent_initial_state(initial, intervention),
                                 config.horizon, truth_rng)
        learner.update(trajectory)
        records.append(_record(config, repetition, step, intervention, learner, time.perf_counter() - started))
        if scores is None:
            logger.debug("Selected %s for step %d (%s).", intervention.label, step, config.strategy)
        else:
            logger.debug("Selected %s for step %d (%s = %.4f).", intervention.label, step, config.strategy,
                         scores[index])
    return SequenceResult(records, learner.document(), traces)


def run_sequence(config, repetition=0):
    return simulate_sequence(config, repetition).records


def simulate_experiment(config, workers=1, progress=False):
    """All repetitions of one strategy; results are independent of the worker count."""
    repetitions = range(config.repetitions)
    if progress:
        repetitions = tqdm(repetitions, desc=config.strategy, unit="rep")
    started = time.perf_counter()
    results = Parallel(n_jobs=workers)(delayed(simulate_sequence)(config, r) for r in repetitions)
    logger.info("Ran %d repetitions of %s in %.1f s.", config.repetitions, config.strategy,
                time.perf_counter() - started)
    return results


def run_experiment(config, workers=1, progress=False):
    return [record for result in simulate_experiment(config, workers, progress) for record in result.records]


def traces_to_frame(strategy, results):
    """Optimizer traces of the selected candidates, one row per iteration."""
    frames = []
    for repetition, result in enumerate(results):
        for step, trace in result.traces:
            frame = trace_to_frame(trace)
            frame.insert(0, "step", step)
            frame.insert(0, "repetition", repetition)
            frame.insert(0, "strategy", strategy)
            frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=list(TRACE_COLUMNS))
    return pd.concat(frames, ignore_index=True)
