import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ctbnal.exceptions import NumericalError

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_ITERATIONS = 500
RELATIVE_TOLERANCE = 1e-8
MIN_STEP = 1e-12


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    x: np.ndarray
    value: float
    trace: tuple
    converged: bool

    @property
    def iterations(self):
        return len(self.trace) - 1


def project_simplex(v, floor=0.0):
    """Euclidean projection onto {q : q >= floor, sum(q) = 1}."""
    v = np.asarray(v, dtype=float)
    radius = 1.0 - v.size * floor
    if radius < 0:
        raise ValueError(f"A floor of {floor} is infeasible for {v.size} categories.")
    w = v - floor
    u = np.sort(w)[::-1]
    excess = np.cumsum(u) - radius
    k = np.flatnonzero(u - excess / np.arange(1, v.size + 1) > 0)[-1]
    return floor + np.maximum(w - excess[k] / (k + 1), 0.0)


def minimize_projected(objective, gradient, x0, project=None, step=1.0, max_iterations=MAX_ITERATIONS,
                       tolerance=RELATIVE_TOLERANCE, armijo=ARMIJO, min_step=MIN_STEP):
    """Projected gradient descent with Armijo backtracking; only decreasing iterates are accepted."""
    project = project or (lambda x: x)
    x = project(np.asarray(x0, dtype=float))
    value = float(objective(x))
    if not np.isfinite(value):
        raise NumericalError("Objective is not finite at the initial point.")
    trace = [value]
    converged = False
    for _ in range(max_iterations):
        g = gradient(x)
        if not np.all(np.isfinite(g)):
            raise NumericalError("Gradient is not finite.")
        eta = step
        accepted = None
        saw_finite = False
        while eta >= min_step:
            candidate = project(x - eta * g)
            decrease = float(g @ (candidate - x))
            if decrease >= 0:
                break
            candidate_value = float(objective(candidate))
            if np.isfinite(candidate_value):
                saw_finite = True
                if candidate_value <= value + armijo * decrease:
                    accepted = (candidate, candidate_value)
                    break
            eta /= 2.0
        if accepted is None:
            if eta < min_step and not saw_finite:
                raise NumericalError("Line search reached the step floor with a non-finite objective.")
            converged = True
            break
        improvement = value - accepted[1]
        x, value = accepted
        trace.append(value)
        step = 2.0 * eta
        if improvement <= tolerance * max(abs(trace[-2]), np.finfo(float).tiny):
            converged = True
            break
    logger.debug("Optimizer stopped after %d iterations at %.6g.", len(trace) - 1, value)
    return OptimizationResult(x, value, tuple(trace), converged)


def trace_to_frame(trace):
    return pd.DataFrame({"iteration": np.arange(len(trace)), "value": np.asarray(trace, dtype=float)})
