"""Design criteria for learning parent sets.

The divergence between the path measures of two graphs is replaced by its expansion
around the expected statistics: the log marginal likelihood of the expected statistics
under the native parent set minus the same quantity under the alternative parent set,
both conditioned on the data seen so far.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp, rel_entr

from ctbnal.bayes import sample_node_rates, structure_marginal_log_likelihood
from ctbnal.design.optimize import minimize_projected, project_simplex
from ctbnal.design.parameters import DEFAULT_NUM_SAMPLES, CriterionValue
from ctbnal.engine import expected_statistics, project_node, solve_master_equation
from ctbnal.exceptions import DesignError
from ctbnal.model import Ctbn, adjacency_from_parent_sets, amalgamate, offdiagonal_mask
from ctbnal.paths import node_statistics, sample_path

logger = logging.getLogger(__name__)

SIMPLEX_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class VariationalStructureParams:
    q: tuple

    def __post_init__(self):
        q = tuple(np.asarray(weights, dtype=float) for weights in self.q)
        for n, weights in enumerate(q):
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-8:
                raise DesignError(f"Weights of node {n} are not a probability vector.")
        object.__setattr__(self, "q", q)

    @classmethod
    def from_posterior(cls, posterior):
        return cls(tuple(posterior.probabilities(n) for n in range(posterior.num_nodes)))


@dataclass(frozen=True, eq=False)
class StructureSampleSet:
    """``models[n][k]`` holds draws in which node n has its k-th candidate parent set."""
    models: tuple


def _draw_model(posterior, node, index, rng):
    parent_sets, rates = [], []
    for m, node_rng in enumerate(rng.spawn(posterior.num_nodes)):
        if m == node:
            k = index
        else:
            probs = posterior.probabilities(m)
            k = int(node_rng.choice(len(probs), p=probs / probs.sum()))
        parent_sets.append(posterior.parent_sets[m][k])
        rates.append(sample_node_rates(posterior.alpha(m, k), posterior.beta(m, k), node_rng))
    return Ctbn(posterior.state_cards, adjacency_from_parent_sets(parent_sets), tuple(rates))


def draw_structure_samples(posterior, num_samples=DEFAULT_NUM_SAMPLES, rng=None):
    if num_samples < 1:
        raise DesignError(f"At least one posterior sample is needed, got {num_samples}.")
    rng = np.random.default_rng() if rng is None else rng
    models = []
    for n, node_rng in enumerate(rng.spawn(posterior.num_nodes)):
        candidates = posterior.parent_sets[n]
        models.append(tuple(
            tuple(_draw_model(posterior, n, k, r) for r in candidate_rng.spawn(num_samples))
            for k, candidate_rng in enumerate(node_rng.spawn(len(candidates)))))
    return StructureSampleSet(tuple(models))


def _expanded_score(stats, alpha, beta, normalized):
    if normalized:
        return structure_marginal_log_likelihood(stats, alpha, beta)
    off = offdiagonal_mask(stats.trans.shape[-1])
    post_alpha = alpha + stats.trans
    post_beta = (beta + stats.dwell)[:, :, None]
    if np.any(post_beta <= 0):
        raise DesignError("Expected posterior rate parameters must be positive.")
    return float(np.sum((gammaln(post_alpha) - post_alpha * np.log(post_beta))[:, off]))


def kl_marginal_structures_approx(native, native_alpha, native_beta, cross, cross_alpha, cross_beta,
                                  normalized=True):
    """First-order divergence between the marginal path measures of two parent sets.

    ``native`` holds the expected node statistics projected on the generating parent set and
    ``cross`` the same joint moments projected on the alternative one; each comes with the
    posterior gamma parameters of the node under that parent set. ``normalized`` adds the
    prior normalizers so that equal statistics give exactly zero.
    """
    return (_expanded_score(native, native_alpha, native_beta, normalized)
            - _expanded_score(cross, cross_alpha, cross_beta, normalized))


@dataclass(frozen=True, eq=False)
class StructureDesignProblem:
    """``divergences[n][k, j, k']``: sample j drawn with candidate k, scored against candidate k'."""
    posterior: object
    nodes: tuple
    divergences: dict
    num_samples: int

    def costs(self, node):
        probs = self.posterior.probabilities(node)
        return probs @ self.divergences[node].mean(axis=1)

    def sample_terms(self, params):
        values = np.zeros(self.num_samples)
        for n in self.nodes:
            probs = self.posterior.probabilities(n)
            values += np.einsum("k,kjl,l->j", probs, self.divergences[n], params.q[n])
        return values

    def divergence(self, params):
        return float(sum(np.sum(rel_entr(q, self.posterior.probabilities(n))) for n, q in enumerate(params.q)))

    def objective(self, params, trace=()):
        samples = self.sample_terms(params) + self.divergence(params)
        return CriterionValue(float(np.mean(samples)), samples, tuple(trace))

    def gradient(self, params):
        """Per-node gradients; zero outside the support of the posterior."""
        gradients = []
        for n, q in enumerate(params.q):
            log_p = self.posterior.log_probs[n]
            support = np.isfinite(log_p) & (q > 0)
            g = np.zeros_like(q)
            g[support] = 1.0 + np.log(q[support]) - log_p[support]
            if n in self.nodes:
                g[support] += self.costs(n)[support]
            gradients.append(g)
        return tuple(gradients)


def prepare_structure_problem(posterior, intervention, initial, horizon, num_samples=DEFAULT_NUM_SAMPLES,
                              rng=None, samples=None, steps=None, normalized=True):
    samples = draw_structure_samples(posterior, num_samples, rng) if samples is None else samples
    cards = posterior.state_cards
    divergences = {}
    for n in intervention.unintervened:
        candidates = posterior.parent_sets[n]
        alphas = [posterior.alpha(n, k) for k in range(len(candidates))]
        betas = [posterior.beta(n, k) for k in range(len(candidates))]
        draws = samples.models[n]
        table = np.zeros((len(candidates), len(draws[0]), len(candidates)))
        for k, models in enumerate(draws):
            for j, model in enumerate(models):
                ctmc = amalgamate(model, intervention, initial)
                joint = expected_statistics(solve_master_equation(ctmc, horizon, steps, keep_slices=False), ctmc)
                scores = np.array([_expanded_score(project_node(joint, cards, n, p), alphas[kp], betas[kp], normalized)
                                   for kp, p in enumerate(candidates)])
                table[k, j] = scores[k] - scores
        divergences[n] = table
    return StructureDesignProblem(posterior, intervention.unintervened, divergences,
                                  len(samples.models[0][0]))


def vbhc_structure(posterior, intervention, initial, horizon, params=None, num_samples=DEFAULT_NUM_SAMPLES,
                   rng=None, samples=None, steps=None):
    problem = prepare_structure_problem(posterior, intervention, initial, horizon, num_samples, rng, samples, steps)
    return problem.objective(params or VariationalStructureParams.from_posterior(posterior))


def vbhc_structure_gradients(posterior, intervention, initial, horizon, params=None,
                             num_samples=DEFAULT_NUM_SAMPLES, rng=None, samples=None, steps=None):
    problem = prepare_structure_problem(posterior, intervention, initial, horizon, num_samples, rng, samples, steps)
    return problem.gradient(params or VariationalStructureParams.from_posterior(posterior))


def minimize_structure_problem(problem, params0=None, floor=SIMPLEX_FLOOR, **options):
    posterior = problem.posterior
    params0 = params0 or VariationalStructureParams.from_posterior(posterior)
    supports = [np.isfinite(posterior.log_probs[n]) for n in range(posterior.num_nodes)]
    bounds = np.cumsum([0] + [int(s.sum()) for s in supports])

    def unpack(x):
        q = []
        for n, support in enumerate(supports):
            weights = np.zeros(len(support))
            weights[support] = x[bounds[n]:bounds[n + 1]]
            q.append(weights)
        return VariationalStructureParams(tuple(q))

    def project(x):
        return np.concatenate([project_simplex(x[bounds[n]:bounds[n + 1]], floor) for n in range(len(supports))])

    def objective(x):
        return problem.objective(unpack(x)).value

    def gradient(x):
        return np.concatenate([g[s] for g, s in zip(problem.gradient(unpack(x)), supports)])

    x0 = np.concatenate([q[s] for q, s in zip(params0.q, supports)])
    result = minimize_projected(objective, gradient, x0, project=project, **options)
    if not result.iterations:
        return problem.objective(params0, result.trace), params0
    params = unpack(result.x)
    return problem.objective(params, result.trace), params


def minimize_vbhc_structure(posterior, intervention, initial, horizon, params0=None,
                            num_samples=DEFAULT_NUM_SAMPLES, rng=None, samples=None, steps=None, **options):
    problem = prepare_structure_problem(posterior, intervention, initial, horizon, num_samples, rng, samples, steps)
    return minimize_structure_problem(problem, params0, **options)


def bhc_structure(posterior, intervention, initial, horizon, num_samples=DEFAULT_NUM_SAMPLES, rng=None,
                  samples=None, steps=None):
    return vbhc_structure(posterior, intervention, initial, horizon, None, num_samples, rng, samples, steps)


def eig_structure(posterior, intervention, initial, horizon, num_samples=DEFAULT_NUM_SAMPLES, rng=None,
                  samples=None):
    """Expected log-ratio of updated to current parent-set probabilities, weighted by the posterior."""
    rng = np.random.default_rng() if rng is None else rng
    samples = draw_structure_samples(posterior, num_samples, rng) if samples is None else samples
    cards = posterior.state_cards
    values = np.zeros(len(samples.models[0][0]))
    for n in intervention.unintervened:
        candidates = posterior.parent_sets[n]
        probs = posterior.probabilities(n)
        log_probs = posterior.log_probs[n]
        alphas = [posterior.alpha(n, k) for k in range(len(candidates))]
        betas = [posterior.beta(n, k) for k in range(len(candidates))]
        for k, path_rng in enumerate(rng.spawn(len(candidates))):
            if probs[k] == 0:
                continue
            for j, model in enumerate(samples.models[n][k]):
                trajectory = sample_path(model, intervention, initial, horizon, path_rng)
                increments = np.array([
                    structure_marginal_log_likelihood(node_statistics(trajectory, n, p, cards), alphas[kp], betas[kp])
                    for kp, p in enumerate(candidates)])
                updated = log_probs + increments
                updated -= logsumexp(updated)
                values[j] += probs[k] * (updated[k] - log_probs[k])
    return CriterionValue(float(values.mean()), values)
