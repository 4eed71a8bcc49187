"""Conjugate gamma posteriors over rates and exhaustive parent-set posteriors."""
import itertools
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import digamma, entr, gammaln, logsumexp, xlogy

from ctbnal.exceptions import HyperparameterError, ModelError
from ctbnal.model import (
    NO_INTERVENTION,
    Ctbn,
    adjacency_from_parent_sets,
    as_parent_sets,
    num_parent_configurations,
    offdiagonal_mask,
)
from ctbnal.paths import NodeStats, node_statistics

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 1.0
DEFAULT_MAX_PARENTS = 3


def _check_hyperparameters(alpha, beta, card):
    off = offdiagonal_mask(card)
    if np.any(~(np.asarray(alpha)[..., off] > 0)) or np.any(~(np.asarray(beta) > 0)):
        raise HyperparameterError()


@dataclass(frozen=True, eq=False)
class RatePosterior:
    """Independent gamma posteriors per off-diagonal cell of the un-intervened model.

    The prior hyperparameters and the pooled condition-0 statistics are kept apart;
    ``alpha`` and ``beta`` are derived from them.
    """
    state_cards: tuple
    parent_sets: tuple
    hyper_alpha: tuple
    hyper_beta: tuple
    counts: tuple

    def __post_init__(self):
        for n, card in enumerate(self.state_cards):
            num_configs = num_parent_configurations(self.parent_sets[n], self.state_cards)
            if self.hyper_alpha[n].shape != (num_configs, card, card) or self.hyper_beta[n].shape != (num_configs, card):
                raise ModelError(f"Hyperparameters of node {n} do not match its parent set.")
            _check_hyperparameters(self.hyper_alpha[n], self.hyper_beta[n], card)

    @classmethod
    def prior(cls, state_cards, graph, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
        state_cards = tuple(int(c) for c in state_cards)
        parent_sets = as_parent_sets(graph, len(state_cards))
        hyper_alpha, hyper_beta, counts = [], [], []
        for n, card in enumerate(state_cards):
            num_configs = num_parent_configurations(parent_sets[n], state_cards)
            a = np.broadcast_to(np.asarray(alpha, dtype=float), (num_configs, card, card)).copy()
            a[:, ~offdiagonal_mask(card)] = 1.0
            hyper_alpha.append(a)
            hyper_beta.append(np.broadcast_to(np.asarray(beta, dtype=float), (num_configs, card)).copy())
            counts.append(NodeStats.zeros(num_configs, card))
        return cls(state_cards, parent_sets, tuple(hyper_alpha), tuple(hyper_beta), tuple(counts))

    @property
    def num_nodes(self):
        return len(self.state_cards)

    @property
    def adjacency(self):
        return adjacency_from_parent_sets(self.parent_sets)

    @cached_property
    def alpha(self):
        return tuple(a + c.trans for a, c in zip(self.hyper_alpha, self.counts))

    @cached_property
    def beta(self):
        return tuple(b + c.dwell for b, c in zip(self.hyper_beta, self.counts))

    def mean(self, node):
        rates = self.alpha[node] / self.beta[node][:, :, None]
        rates[:, ~offdiagonal_mask(self.state_cards[node])] = 0.0
        return rates

    def variance(self, node):
        rates = self.alpha[node] / self.beta[node][:, :, None] ** 2
        rates[:, ~offdiagonal_mask(self.state_cards[node])] = 0.0
        return rates


def _condition_rates(model, stats, node, key):
    if key == NO_INTERVENTION:
        return model.rates[node]
    if key.startswith("clamp="):
        return np.zeros_like(model.rates[node])
    return np.asarray(stats.overrides[(node, key)])


def path_log_likelihood(stats, model):
    """Sum over nodes, conditions and cells of M log(rate) - T rate.

    Returns ``-inf`` when a positive count meets a zero rate.
    """
    if stats.state_cards != model.state_cards or stats.parent_sets != model.parent_sets:
        raise ModelError("Statistics were extracted under a different graph or state space.")
    total = 0.0
    for (n, key), cell in sorted(stats.cells.items()):
        rates = _condition_rates(model, stats, n, key)
        if rates.shape != cell.trans.shape:
            raise ModelError(f"Rates of node {n} under condition {key} do not match the statistics.")
        off = offdiagonal_mask(model.state_cards[n])
        if np.any((rates[:, off] == 0) & (cell.trans[:, off] > 0)):
            return -np.inf
        total += np.sum(xlogy(cell.trans[:, off], rates[:, off]))
        total -= np.sum((cell.dwell[:, :, None] * rates)[:, off])
    return float(total)


def update_rate_posterior(posterior, stats):
    """Adds the condition-0 statistics; other conditions leave the posterior untouched."""
    if stats.state_cards != posterior.state_cards or stats.parent_sets != posterior.parent_sets:
        raise ModelError("Statistics were extracted under a different graph or state space.")
    counts = tuple(c + stats.node(n, NO_INTERVENTION) for n, c in enumerate(posterior.counts))
    return RatePosterior(posterior.state_cards, posterior.parent_sets,
                         posterior.hyper_alpha, posterior.hyper_beta, counts)


def structure_marginal_log_likelihood(stats, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
    """Closed-form gamma marginal likelihood of one node's statistics, prior normalizer included.

    ``alpha`` may be a scalar or a ``(U, X, X)`` tensor, ``beta`` a scalar or ``(U, X)``.
    """
    card = stats.trans.shape[-1]
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), stats.trans.shape)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), stats.dwell.shape)
    _check_hyperparameters(alpha, beta, card)
    off = offdiagonal_mask(card)
    post_alpha = alpha + stats.trans
    post_beta = (beta + stats.dwell)[:, :, None]
    terms = (gammaln(post_alpha) - post_alpha * np.log(post_beta)
             - gammaln(alpha) + alpha * np.log(beta[:, :, None]))
    return float(np.sum(terms[:, off]))


def candidate_parent_sets(node, num_nodes, max_parents=DEFAULT_MAX_PARENTS):
    if max_parents < 0:
        raise ModelError(f"max_parents must be non-negative, got {max_parents}.")
    others = [m for m in range(num_nodes) if m != node]
    return tuple(subset for k in range(min(max_parents, len(others)) + 1)
                 for subset in itertools.combinations(others, k))


@dataclass(frozen=True, eq=False)
class StructurePosterior:
    """Per-node categorical over candidate parent sets.

    ``counts[n][k]`` holds the pooled condition-0 statistics of node n under its k-th
    candidate, which also gives the rate posterior of the node under that candidate.
    """
    state_cards: tuple
    parent_sets: tuple
    counts: tuple
    log_prior: tuple
    hyper_alpha: float = DEFAULT_ALPHA
    hyper_beta: float = DEFAULT_BETA
    max_parents: int = DEFAULT_MAX_PARENTS

    def __post_init__(self):
        if not (self.hyper_alpha > 0 and self.hyper_beta > 0):
            raise HyperparameterError()

    @classmethod
    def empty(cls, state_cards, max_parents=DEFAULT_MAX_PARENTS, log_prior=None,
              alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
        state_cards = tuple(int(c) for c in state_cards)
        num_nodes = len(state_cards)
        parent_sets = tuple(candidate_parent_sets(n, num_nodes, max_parents) for n in range(num_nodes))
        counts = tuple(
            tuple(NodeStats.zeros(num_parent_configurations(p, state_cards), state_cards[n]) for p in candidates)
            for n, candidates in enumerate(parent_sets))
        if log_prior is None:
            priors = tuple(np.full(len(c), -np.log(len(c))) for c in parent_sets)
        else:
            priors = []
            for n, candidates in enumerate(parent_sets):
                prior = np.asarray(log_prior[n], dtype=float)
                if prior.shape != (len(candidates),):
                    raise ModelError(f"Prior of node {n} has {prior.size} entries, expected {len(candidates)}.")
                priors.append(prior - logsumexp(prior))
            priors = tuple(priors)
        return cls(state_cards, parent_sets, counts, priors, float(alpha), float(beta), int(max_parents))

    @property
    def num_nodes(self):
        return len(self.state_cards)

    @cached_property
    def log_marginals(self):
        return tuple(
            np.array([structure_marginal_log_likelihood(c, self.hyper_alpha, self.hyper_beta) for c in node_counts])
            for node_counts in self.counts)

    @cached_property
    def log_probs(self):
        result = []
        for prior, marginals in zip(self.log_prior, self.log_marginals):
            scores = prior + marginals
            result.append(scores - logsumexp(scores))
        return tuple(result)

    def probabilities(self, node):
        return np.exp(self.log_probs[node])

    def alpha(self, node, index):
        card = self.state_cards[node]
        alpha = self.hyper_alpha + self.counts[node][index].trans
        alpha[:, ~offdiagonal_mask(card)] = 1.0
        return alpha

    def beta(self, node, index):
        return self.hyper_beta + self.counts[node][index].dwell


def score_parent_sets(posterior, node_stats_fn):
    """Adds statistics given by ``node_stats_fn(node, parent_set)`` to every candidate."""
    counts = tuple(
        tuple(c + node_stats_fn(n, p) for c, p in zip(posterior.counts[n], posterior.parent_sets[n]))
        for n in range(posterior.num_nodes))
    return StructurePosterior(posterior.state_cards, posterior.parent_sets, counts, posterior.log_prior,
                              posterior.hyper_alpha, posterior.hyper_beta, posterior.max_parents)


def update_structure_posterior(posterior, trajectories):
    """Adds each trajectory's condition-0 statistics, re-extracted per candidate parent set."""
    for trajectory in trajectories:
        unintervened = set(trajectory.intervention.unintervened)

        def node_stats(n, parent_set, trajectory=trajectory, unintervened=unintervened):
            if n not in unintervened:
                return NodeStats.zeros(num_parent_configurations(parent_set, posterior.state_cards),
                                       posterior.state_cards[n])
            return node_statistics(trajectory, n, parent_set, posterior.state_cards)

        posterior = score_parent_sets(posterior, node_stats)
    return posterior


def structure_posterior(trajectories, state_cards, max_parents=DEFAULT_MAX_PARENTS, log_prior=None,
                        alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
    """Exhaustive parent-set posterior from complete (possibly interventional) trajectories.

    Interventions are read from each trajectory; clamped or overridden nodes contribute
    no evidence about their own parent set.
    """
    trajectories = list(trajectories)
    posterior = StructurePosterior.empty(state_cards, max_parents, log_prior, alpha, beta)
    posterior = update_structure_posterior(posterior, trajectories)
    logger.debug("Scored %d trajectories over %d candidate parent sets.",
                 len(trajectories), sum(len(p) for p in posterior.parent_sets))
    return posterior


def posterior_entropy(posterior):
    return float(sum(np.sum(entr(posterior.probabilities(n))) for n in range(posterior.num_nodes)))


def edge_marginals(posterior):
    num_nodes = posterior.num_nodes
    marginals = np.zeros((num_nodes, num_nodes))
    for n in range(num_nodes):
        for probability, parent_set in zip(posterior.probabilities(n), posterior.parent_sets[n]):
            marginals[list(parent_set), n] += probability
    return marginals


def map_graph(posterior):
    parent_sets = tuple(posterior.parent_sets[n][int(np.argmax(posterior.log_probs[n]))]
                        for n in range(posterior.num_nodes))
    return adjacency_from_parent_sets(parent_sets)


def sample_node_rates(alpha, beta, rng):
    rates = rng.gamma(alpha, 1.0 / beta[:, :, None])
    rates[:, ~offdiagonal_mask(alpha.shape[-1])] = 0.0
    return rates


def sample_rate_posterior(posterior, rng):
    """One model drawn from the rate posterior; each node draws from its own spawned stream."""
    rates = tuple(sample_node_rates(posterior.alpha[n], posterior.beta[n], node_rng)
                  for n, node_rng in enumerate(rng.spawn(posterior.num_nodes)))
    return Ctbn(posterior.state_cards, posterior.adjacency, rates)


def posterior_mean_model(posterior):
    return Ctbn(posterior.state_cards, posterior.adjacency,
                tuple(posterior.mean(n) for n in range(posterior.num_nodes)))


def gamma_kl(alpha_p, beta_p, alpha_q, beta_q):
    """Elementwise KL(Gamma(alpha_p, beta_p) || Gamma(alpha_q, beta_q)) in shape/rate form."""
    return ((alpha_p - alpha_q) * digamma(alpha_p) - gammaln(alpha_p) + gammaln(alpha_q)
            + alpha_q * (np.log(beta_p) - np.log(beta_q)) + alpha_p * (beta_q - beta_p) / beta_p)


def node_rate_kl(posterior, reference, node):
    """Per-cell KL of one node's gamma posteriors against a reference posterior; zero diagonal."""
    kl = gamma_kl(posterior.alpha[node], posterior.beta[node][:, :, None],
                  reference.alpha[node], reference.beta[node][:, :, None])
    kl[:, ~offdiagonal_mask(posterior.state_cards[node])] = 0.0
    return kl


def rate_posterior_kl(posterior, reference):
    if posterior.parent_sets != reference.parent_sets:
        raise ModelError("Rate posteriors refer to different graphs.")
    return float(sum(np.sum(node_rate_kl(posterior, reference, n)) for n in range(posterior.num_nodes)))


def rate_posterior_to_document(posterior):
    return {
        "nodes": [{"cardinality": c, "parents": list(p)} for c, p in zip(posterior.state_cards, posterior.parent_sets)],
        "alpha": [a.tolist() for a in posterior.alpha],
        "beta": [b.tolist() for b in posterior.beta],
    }


def structure_posterior_to_document(posterior):
    nodes = []
    for n in range(posterior.num_nodes):
        order = np.argsort(-posterior.log_probs[n], kind="stable")
        nodes.append({
            "node": n,
            "parent_sets": [
                {"parents": list(posterior.parent_sets[n][k]),
                 "probability": float(np.exp(posterior.log_probs[n][k])),
                 "log_marginal_likelihood": float(posterior.log_marginals[n][k])}
                for k in order],
        })
    return {
        "max_parents": posterior.max_parents,
        "hyperparameters": {"alpha": posterior.hyper_alpha, "beta": posterior.hyper_beta},
        "nodes": nodes,
        "edge_marginals": edge_marginals(posterior).tolist(),
        "map_edges": [[int(m), int(n)] for m, n in zip(*np.nonzero(map_graph(posterior)))],
        "entropy": posterior_entropy(posterior),
    }
