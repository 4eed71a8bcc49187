"""Command-line front end: generate models, run strategy comparisons, score data, demo the filter."""
import argparse
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ctbnal.analysis import (
    COMPARISON_COLUMNS,
    aggregate,
    auroc_aupr,
    intervention_frequencies,
    records_to_frame,
    strategy_comparisons,
)
from ctbnal.bayes import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_MAX_PARENTS,
    structure_posterior,
    structure_posterior_to_document,
)
from ctbnal.design.parameters import DEFAULT_NUM_PATHS, DEFAULT_NUM_SAMPLES
from ctbnal.design.selection import DEFAULT_MAX_TARGETS, STRATEGIES, TARGETS
from ctbnal.engine import project_node
from ctbnal.exceptions import ConfigError, CtbnError, InsufficientData, ModelError, NumericalError
from ctbnal.experiment import (
    DEFAULT_HORIZON,
    DEFAULT_REPETITIONS,
    DEFAULT_STEPS,
    TRACE_COLUMNS,
    ExperimentConfig,
    simulate_experiment,
    traces_to_frame,
)
from ctbnal.filtering import ObservationSeries, smoothed_marginals
from ctbnal.loader import (
    load_config,
    load_model,
    load_observations,
    load_trajectories,
    write_model,
    write_trajectories,
)
from ctbnal.model import PRESETS, Intervention, amalgamate, joint_states, preset_model
from ctbnal.paths import node_statistics, observe_path, sample_path

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


@dataclass(frozen=True)
class RunConfig:
    command: str
    preset: str = "synthetic-parameters"
    model: str = None
    strategies: tuple = ("passive", "random", "vbhc")
    target: str = "parameters"
    steps: int = DEFAULT_STEPS
    repetitions: int = DEFAULT_REPETITIONS
    horizon: float = DEFAULT_HORIZON
    num_samples: int = DEFAULT_NUM_SAMPLES
    num_paths: int = DEFAULT_NUM_PATHS
    seed: int = 0
    out: str = "results"
    workers: int = -1
    max_parents: int = DEFAULT_MAX_PARENTS
    max_targets: int = DEFAULT_MAX_TARGETS
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    ode_steps: int = None
    num_trajectories: int = 0
    trajectories: str = None
    truth: str = None
    observations: str = None
    observe_every: float = None
    flip_probability: float = 0.0

    def snapshot(self):
        document = dataclasses.asdict(self)
        document["strategies"] = list(self.strategies)
        del document["workers"]
        return document


_INTEGERS = ("steps", "repetitions", "num_samples", "num_paths", "seed", "workers", "max_parents", "max_targets",
             "ode_steps", "num_trajectories")
_FLOATS = ("horizon", "alpha", "beta", "observe_every", "flip_probability")
_PATHS = ("model", "trajectories", "truth", "observations")
_OPTIONAL = _PATHS + ("ode_steps", "observe_every")
_FIELDS = tuple(f.name for f in dataclasses.fields(RunConfig))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    sd = argparse.SUPPRESS
    common.add_argument("--config", default=sd, help="JSON configuration file; flags override its values")
    common.add_argument("--preset", default=sd, choices=sorted(PRESETS), help="ground-truth model preset")
    common.add_argument("--model", default=sd, help="ground-truth model document (instead of a preset)")
    common.add_argument("--strategies", default=sd, help="comma-separated design strategies")
    common.add_argument("--target", default=sd, help="learning target: parameters or structure")
    common.add_argument("--steps", "-K", dest="steps", default=sd, help="experiments per sequence")
    common.add_argument("--reps", "-R", dest="repetitions", default=sd, help="independent repetitions")
    common.add_argument("--horizon", default=sd, help="duration of each experiment")
    common.add_argument("--samples", dest="num_samples", default=sd, help="posterior samples per criterion")
    common.add_argument("--paths", dest="num_paths", default=sd, help="simulated paths per EIG sample")
    common.add_argument("--seed", default=sd, help="master seed")
    common.add_argument("--out", default=sd, help="output directory")
    common.add_argument("--workers", default=sd, help="parallel repetitions (-1 for all cores)")
    common.add_argument("--max-parents", dest="max_parents", default=sd, help="largest candidate parent set")
    common.add_argument("--sample", dest="num_trajectories", default=sd,
                        help="passive trajectories to sample alongside a generated model")
    common.add_argument("--trajectories", default=sd, help="trajectory batch to score")
    common.add_argument("--truth", default=sd, help="true model for scoring against")
    common.add_argument("--observations", default=sd, help="observation series for the filter demo")
    common.add_argument("--observe-every", dest="observe_every", default=sd,
                        help="spacing of synthetic observations in the filter demo")
    common.add_argument("--flip-probability", dest="flip_probability", default=sd,
                        help="chance that an observed node reports a wrong state")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="warnings only, no progress bars")

    parser = argparse.ArgumentParser(prog="ctbnal", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("generate", parents=[common], help="write a ground-truth model (and sample data)")
    commands.add_parser("run", parents=[common], help="compare design strategies in closed loop")
    commands.add_parser("score", parents=[common], help="structure posterior of a trajectory batch")
    commands.add_parser("filter-demo", parents=[common], help="smooth a partially observed synthetic path")
    return parser


def _convert(name, value):
    if value is None:
        if name not in _OPTIONAL:
            raise ValueError(f"{name} must not be null")
        return None
    if name in _INTEGERS:
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ValueError(f"{name} must be an integer, got {value!r}")
        return int(value)
    if name in _FLOATS:
        return float(value)
    if name == "strategies":
        if isinstance(value, str):
            value = value.split(",")
        return tuple(str(s).strip() for s in value if str(s).strip())
    return str(value)


def _check(config, problem):
    if config.model is None and config.preset not in PRESETS:
        problem("preset", f"unknown preset {config.preset!r}; choose from {', '.join(sorted(PRESETS))}")
    for strategy in config.strategies:
        if strategy not in STRATEGIES:
            problem("strategies", f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    if not config.strategies:
        problem("strategies", "at least one strategy is needed")
    if len(set(config.strategies)) != len(config.strategies):
        problem("strategies", "strategies must not repeat")
    if config.target not in TARGETS:
        problem("target", f"unknown target {config.target!r}; choose from {', '.join(TARGETS)}")
    for name in ("repetitions", "num_samples", "num_paths", "max_targets"):
        if getattr(config, name) < 1:
            problem(name, f"{name} must be at least 1")
    for name in ("steps", "max_parents", "num_trajectories", "seed"):
        if getattr(config, name) < 0:
            problem(name, f"{name} must not be negative")
    for name in ("horizon", "alpha", "beta"):
        if not getattr(config, name) > 0:
            problem(name, f"{name} must be positive")
    if config.ode_steps is not None and config.ode_steps < 2:
        problem("ode_steps", "ode_steps must be at least 2")
    if config.observe_every is not None and not config.observe_every > 0:
        problem("observe_every", "observe_every must be positive")
    if not 0 <= config.flip_probability < 1:
        problem("flip_probability", "flip_probability must lie in [0, 1)")
    if config.workers == 0:
        problem("workers", "workers must be non-zero")
    for name in _PATHS:
        path = getattr(config, name)
        if path is not None and not os.path.exists(path):
            problem(name, f"file {path} does not exist")
    if config.command == "score" and config.trajectories is None and config.truth is None and config.model is None:
        problem("trajectories", "scoring needs a trajectory batch or a model to take the state space from")


def resolve_config(args):
    """Merges the configuration file with the flags (flags win) and validates the result."""
    options = vars(args)
    values, lines, source = {}, {}, options.get("config")
    problems = []
    if source is not None:
        document, lines = load_config(source)
        for key, value in document.items():
            if key not in _FIELDS or key == "command":
                problems.append(f"{source}:{lines.get(key, 1)}: unknown key {key!r}")
            else:
                values[key] = value
    flags = {name for name in options if name in _FIELDS and name != "command"}
    values.update({name: options[name] for name in flags})

    def where(name):
        if name in flags or source is None:
            return f"--{name.replace('_', '-')}"
        return f"{source}:{lines.get(name, 1)}"

    converted = {}
    for name, value in values.items():
        try:
            converted[name] = _convert(name, value)
        except (TypeError, ValueError) as e:
            problems.append(f"{where(name)}: {e}")
    config = RunConfig(command=args.command, **converted)
    _check(config, lambda name, message: problems.append(f"{where(name)}: {message}"))
    if problems:
        raise ConfigError(problems)
    return config


def _load_model(path):
    try:
        return load_model(path)
    except ModelError as e:
        raise ConfigError([f"{path}: {e}"]) from e


def _truth(config):
    if config.model is not None:
        return _load_model(config.model)
    return preset_model(config.preset, config.seed)


def _write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %d rows to %s.", len(frame), path)


def _write_document(document, path):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("Wrote %s.", path)


def _data_rng(seed):
    return np.random.default_rng(np.random.SeedSequence([int(seed)]).spawn(1)[0])


def cmd_generate(config):
    model, provenance = _truth(config)
    os.makedirs(config.out, exist_ok=True)
    write_model(os.path.join(config.out, "model.json"), model, provenance)
    if config.num_trajectories:
        rng = _data_rng(config.seed)
        passive = Intervention.none(model.num_nodes)
        trajectories = []
        for _ in range(config.num_trajectories):
            initial = tuple(int(rng.integers(c)) for c in model.state_cards)
            trajectories.append(sample_path(model, passive, initial, config.horizon, rng))
        write_trajectories(os.path.join(config.out, "trajectories.json"), trajectories, model.state_cards)
    return EXIT_OK


def cmd_run(config):
    truth, provenance = _truth(config)
    os.makedirs(config.out, exist_ok=True)
    _write_document(config.snapshot(), os.path.join(config.out, "config.json"))
    write_model(os.path.join(config.out, "model.json"), truth, provenance)
    records, traces = [], []
    for strategy in config.strategies:
        experiment = ExperimentConfig(
            truth, strategy, config.target, config.steps, config.horizon, config.repetitions,
            config.num_samples, config.num_paths, config.seed, config.max_parents, config.alpha, config.beta,
            config.max_targets, config.ode_steps)
        results = simulate_experiment(experiment, config.workers, progress=not _quiet())
        records.extend(record for result in results for record in result.records)
        traces.append(traces_to_frame(strategy, results))
        _write_document({"strategy": strategy, "target": config.target,
                         "repetitions": [result.posterior for result in results]},
                        os.path.join(config.out, "posteriors", f"{strategy}.json"))
    frame = records_to_frame(records)
    logger.info("Total selection and update time: %.1f s.", frame["wall_time"].sum())
    frame = frame.drop(columns="wall_time")
    _write_csv(frame, os.path.join(config.out, "metrics.csv"))
    _write_csv(aggregate(frame), os.path.join(config.out, "summary.csv"))
    _write_csv(intervention_frequencies(frame, truth.num_nodes), os.path.join(config.out, "interventions.csv"))
    metric = "mse" if config.target == "parameters" else "aupr"
    try:
        comparisons = strategy_comparisons(frame, metric)
    except InsufficientData as e:
        logger.warning("Skipping strategy comparisons: %s", e)
        comparisons = pd.DataFrame(columns=COMPARISON_COLUMNS)
    traces = [t for t in traces if not t.empty]
    traces = pd.concat(traces, ignore_index=True) if traces else pd.DataFrame(columns=list(TRACE_COLUMNS))
    _write_csv(traces, os.path.join(config.out, "traces.csv"))
    _write_csv(comparisons, os.path.join(config.out, "comparisons.csv"))
    return EXIT_OK


def _infer_cards(trajectories):
    highest = np.max([t.sequence.max(axis=0) for t in trajectories], axis=0)
    return tuple(int(max(2, h + 1)) for h in highest)


def cmd_score(config):
    truth = None
    if config.truth is not None or config.model is not None:
        truth, _ = _load_model(config.truth or config.model)
    cards, trajectories = (None, []) if config.trajectories is None else load_trajectories(config.trajectories)
    if cards is None:
        if truth is not None:
            cards = truth.state_cards
        elif trajectories:
            cards = _infer_cards(trajectories)
        else:
            raise ConfigError([f"{config.trajectories}: an empty bare list does not define a state space"])
    posterior = structure_posterior(trajectories, cards, config.max_parents, alpha=config.alpha, beta=config.beta)
    report = {"num_trajectories": len(trajectories), "state_cards": list(cards),
              **structure_posterior_to_document(posterior)}
    if truth is not None:
        try:
            auroc, aupr = auroc_aupr(report["edge_marginals"], truth.adjacency)
        except InsufficientData as e:
            logger.warning("Skipping ranking metrics: %s", e)
            auroc, aupr = None, None
        report.update({"auroc": auroc, "aupr": aupr})
    os.makedirs(config.out, exist_ok=True)
    _write_document(report, os.path.join(config.out, "score.json"))
    return EXIT_OK


def _observation_times(config):
    if config.observe_every is None:
        return np.zeros(0)
    count = int(np.floor(config.horizon / config.observe_every + 1e-9))
    return config.observe_every * np.arange(1, count + 1)


def expected_stats_frame(expected, truth, trajectory):
    rows = []
    for n, parent_set in enumerate(truth.parent_sets):
        smoothed = project_node(expected, truth.state_cards, n, parent_set)
        actual = node_statistics(trajectory, n, parent_set, truth.state_cards)
        card = truth.state_cards[n]
        for u in range(len(smoothed.dwell)):
            for x in range(card):
                for y in range(card):
                    if x == y:
                        continue
                    rows.append({"node": n, "config": u, "state": x, "next_state": y,
                                 "transitions": smoothed.trans[u, x, y], "dwell": smoothed.dwell[u, x],
                                 "true_transitions": actual.trans[u, x, y], "true_dwell": actual.dwell[u, x]})
    return pd.DataFrame.from_records(rows)


def cmd_filter_demo(config):
    truth, _ = _truth(config)
    rng = _data_rng(config.seed)
    passive = Intervention.none(truth.num_nodes)
    initial = tuple(int(rng.integers(c)) for c in truth.state_cards)
    trajectory = sample_path(truth, passive, initial, config.horizon, rng)
    if config.observations is not None:
        observations = load_observations(config.observations, truth.state_cards)
    else:
        times = _observation_times(config)
        observed = observe_path(trajectory, times) if len(times) else np.zeros((0, truth.num_nodes), dtype=int)
        observations = (ObservationSeries.noisy_categorical(times, observed, config.flip_probability,
                                                            truth.state_cards)
                        if len(times) else ObservationSeries.empty(truth.num_states))
    ctmc = amalgamate(truth, passive, initial)
    smoothed = smoothed_marginals(ctmc, observations, config.horizon, steps=config.ode_steps)
    logger.info("Smoothed %d observations of a %d-event path (log p(Y) = %.4f).",
                len(observations.times), trajectory.num_events, smoothed.log_likelihood)
    labels = ["p_" + "".join(str(x) for x in state) for state in joint_states(truth.state_cards)]
    marginals = pd.DataFrame(smoothed.probs, columns=labels)
    marginals.insert(0, "time", smoothed.grid)
    os.makedirs(config.out, exist_ok=True)
    _write_csv(marginals, os.path.join(config.out, "marginals.csv"))
    _write_csv(expected_stats_frame(smoothed.expected, truth, trajectory),
               os.path.join(config.out, "expected_stats.csv"))
    return EXIT_OK


HANDLERS = {"generate": cmd_generate, "run": cmd_run, "score": cmd_score, "filter-demo": cmd_filter_demo}


def _quiet():
    return logging.getLogger().getEffectiveLevel() > logging.INFO


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        config = resolve_config(args)
        code = HANDLERS[config.command](config)
    except ConfigError as e:
        for problem in e.problems:
            logger.error("Configuration error: %s", problem)
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error("Numerical failure: %s", e)
        return EXIT_RUNTIME
    except CtbnError as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_RUNTIME
    logger.info("Finished %s in %.1f s.", args.command, time.perf_counter() - started)
    return code
