import json
import logging
import os
import re

import numpy as np

from ctbnal.exceptions import ConfigError, CtbnError, ObservationError, TrajectoryError
from ctbnal.filtering import ObservationSeries
from ctbnal.model import model_from_document, model_to_document
from ctbnal.paths import trajectory_from_document, trajectory_to_document

logger = logging.getLogger(__name__)


def _read_json(path, error):
    if not os.path.exists(path):
        raise error(f"{path}: file does not exist")
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        return json.loads(text), text
    except json.JSONDecodeError as e:
        raise error(f"{path}:{e.lineno}: {e.msg}") from e


def _config_error(message):
    return ConfigError([message])


def _write_json(path, document):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def key_lines(text):
    """Line number of the first occurrence of every key in a JSON text."""
    lines = {}
    for number, line in enumerate(text.splitlines(), start=1):
        for key in re.findall(r'"([^"\\]+)"\s*:', line):
            lines.setdefault(key, number)
    return lines


def load_config(path):
    """Returns the configuration mapping and the line of each key, for diagnostics."""
    document, text = _read_json(path, _config_error)
    if not isinstance(document, dict):
        raise ConfigError([f"{path}:1: the configuration must be a JSON object"])
    logger.info("Loaded configuration with %d keys from %s.", len(document), path)
    return document, key_lines(text)


def load_model(path):
    """Returns the model and its provenance block."""
    document, _ = _read_json(path, _config_error)
    model = model_from_document(document)
    logger.info("Loaded %d-node model from %s.", model.num_nodes, path)
    return model, document.get("provenance", {})


def write_model(path, model, provenance=None):
    _write_json(path, model_to_document(model, provenance))
    logger.info("Wrote %d-node model to %s.", model.num_nodes, path)


def load_trajectories(path):
    """Reads a batch ``{"state_cards": [...], "trajectories": [...]}`` or a bare list of trajectories.

    Returns the declared state cardinalities (``None`` for a bare list) and the trajectories.
    """
    document, _ = _read_json(path, TrajectoryError)
    if isinstance(document, dict):
        cards = document.get("state_cards")
        entries = document.get("trajectories")
        if entries is None:
            raise TrajectoryError(f"{path}: missing field 'trajectories'")
    else:
        cards, entries = None, document
    if not isinstance(entries, list):
        raise TrajectoryError(f"{path}: 'trajectories' must be a list")
    cards = tuple(int(c) for c in cards) if cards is not None else None
    trajectories = []
    for k, entry in enumerate(entries):
        try:
            trajectory = trajectory_from_document(entry)
            if cards is not None:
                trajectory.check_cards(cards)
        except CtbnError as e:
            raise TrajectoryError(f"{path}: trajectory {k}: {e}") from e
        trajectories.append(trajectory)
    logger.info("Loaded %d trajectories from %s.", len(trajectories), path)
    return cards, trajectories


def write_trajectories(path, trajectories, state_cards=None):
    document = {"trajectories": [trajectory_to_document(t) for t in trajectories]}
    if state_cards is not None:
        document["state_cards"] = [int(c) for c in state_cards]
    _write_json(path, document)
    logger.info("Wrote %d trajectories to %s.", len(document["trajectories"]), path)


def load_observations(path, state_cards):
    """Reads ``{"times", "likelihoods"}`` or ``{"times", "observed", "flip_probability"}``."""
    document, _ = _read_json(path, ObservationError)
    if not isinstance(document, dict) or "times" not in document:
        raise ObservationError(f"{path}: missing field 'times'")
    try:
        if "likelihoods" in document:
            observations = ObservationSeries(document["times"], np.array(document["likelihoods"], dtype=float))
        else:
            observations = ObservationSeries.noisy_categorical(
                document["times"], document["observed"], float(document.get("flip_probability", 0.0)),
                state_cards)
    except (KeyError, TypeError, ValueError) as e:
        raise ObservationError(f"{path}: malformed observation document: {e}") from e
    if observations.num_states != int(np.prod(state_cards)):
        raise ObservationError(f"{path}: likelihood rows do not match the model's {int(np.prod(state_cards))} states")
    logger.info("Loaded %d observations from %s.", len(observations.times), path)
    return observations
