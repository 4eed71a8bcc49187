"""Design criteria for learning rates under a known graph."""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, polygamma, xlogy
from scipy.stats import gamma

from ctbnal.bayes import gamma_kl, sample_rate_posterior, update_rate_posterior
from ctbnal.design.optimize import minimize_projected
from ctbnal.engine import expected_statistics_under_posterior_sample
from ctbnal.exceptions import DesignError, HyperparameterError
from ctbnal.model import Ctbn, offdiagonal_mask
from ctbnal.paths import NodeStats, extract_statistics, sample_path

logger = logging.getLogger(__name__)

DEFAULT_NUM_SAMPLES = 10
DEFAULT_NUM_PATHS = 10


@dataclass(frozen=True, eq=False)
class CriterionValue:
    value: float
    samples: np.ndarray
    trace: tuple = ()

    @property
    def standard_error(self):
        if len(self.samples) < 2:
            return 0.0
        return float(np.std(self.samples, ddof=1) / np.sqrt(len(self.samples)))


@dataclass(frozen=True, eq=False)
class VariationalRateParams:
    alpha: tuple
    beta: tuple

    def __post_init__(self):
        for a, b in zip(self.alpha, self.beta):
            if np.any(~(a[:, offdiagonal_mask(a.shape[-1])] > 0)) or np.any(~(b > 0)):
                raise HyperparameterError("Variational parameters must be strictly positive.")

    @classmethod
    def from_posterior(cls, posterior):
        return cls(tuple(a.copy() for a in posterior.alpha), tuple(b.copy() for b in posterior.beta))

    def to_log_vector(self):
        parts = []
        for a, b in zip(self.alpha, self.beta):
            parts.append(np.log(a[:, offdiagonal_mask(a.shape[-1])]).ravel())
            parts.append(np.log(b).ravel())
        return np.concatenate(parts)

    def from_log_vector(self, vector):
        alpha, beta = [], []
        offset = 0
        for a, b in zip(self.alpha, self.beta):
            off = offdiagonal_mask(a.shape[-1])
            new_a = np.ones_like(a)
            size = int(np.sum(np.broadcast_to(off, a.shape)))
            new_a[:, off] = np.exp(vector[offset:offset + size]).reshape(a.shape[0], -1)
            offset += size
            new_b = np.exp(vector[offset:offset + b.size]).reshape(b.shape)
            offset += b.size
            alpha.append(new_a)
            beta.append(new_b)
        return VariationalRateParams(tuple(alpha), tuple(beta))


@dataclass(frozen=True, eq=False)
class RateSampleSet:
    models: tuple


def draw_rate_samples(posterior, num_samples=DEFAULT_NUM_SAMPLES, rng=None):
    if num_samples < 1:
        raise DesignError(f"At least one posterior sample is needed, got {num_samples}.")
    rng = np.random.default_rng() if rng is None else rng
    return RateSampleSet(tuple(sample_rate_posterior(posterior, r) for r in rng.spawn(num_samples)))


def _rates(model_or_rates):
    return model_or_rates.rates if isinstance(model_or_rates, Ctbn) else tuple(model_or_rates)


def kl_ctbn_rates(lam, lam_prime, expected, nodes=None):
    """KL between the path measures of two rate sets sharing graph and intervention.

    ``expected`` holds the node statistics expected under ``lam``; only ``nodes`` contribute.
    """
    lam, lam_prime = _rates(lam), _rates(lam_prime)
    nodes = range(len(lam)) if nodes is None else nodes
    total = 0.0
    for n in nodes:
        stats = expected[n]
        off = offdiagonal_mask(lam[n].shape[-1])
        trans = stats.trans[:, off]
        if np.any((lam_prime[n][:, off] == 0) & (trans > 0)):
            raise DesignError(f"Node {n} has a zero rate where transitions are expected.")
        total += np.sum(xlogy(trans, lam[n][:, off]) - xlogy(trans, lam_prime[n][:, off]))
        total -= np.sum((stats.dwell[:, :, None] * (lam[n] - lam_prime[n]))[:, off])
    return float(total)


@dataclass(frozen=True, eq=False)
class ParameterDesignProblem:
    """Posterior samples and their expected statistics under one candidate intervention."""
    posterior: object
    rates: tuple
    trans: tuple
    dwell: tuple
    nodes: tuple

    @property
    def num_samples(self):
        return len(self.rates[0])

    def sample_terms(self, kappa):
        values = np.zeros(self.num_samples)
        for n in self.nodes:
            off = offdiagonal_mask(self.rates[n].shape[-1])
            a = kappa.alpha[n][None]
            b = kappa.beta[n][None, :, :, None]
            lam, trans, dwell = self.rates[n], self.trans[n], self.dwell[n][..., None]
            terms = dwell * (a / b - lam) + trans * (np.log(b) - digamma(a)) + xlogy(trans, lam)
            values += terms[:, :, off].sum(axis=(1, 2))
        return values

    def divergence(self, kappa):
        total = 0.0
        for n, (a, b) in enumerate(zip(kappa.alpha, kappa.beta)):
            off = offdiagonal_mask(a.shape[-1])
            kl = gamma_kl(a, b[:, :, None], self.posterior.alpha[n], self.posterior.beta[n][:, :, None])
            total += np.sum(kl[:, off])
        return float(total)

    def objective(self, kappa, trace=()):
        samples = self.sample_terms(kappa) + self.divergence(kappa)
        return CriterionValue(float(np.mean(samples)), samples, tuple(trace))

    def gradient(self, kappa):
        grad_alpha, grad_beta = [], []
        for n, (a, b) in enumerate(zip(kappa.alpha, kappa.beta)):
            off = offdiagonal_mask(a.shape[-1])
            b3 = b[:, :, None]
            alpha_bar = self.posterior.alpha[n]
            beta_bar = self.posterior.beta[n][:, :, None]
            trigamma = polygamma(1, a)
            ga = (a - alpha_bar) * trigamma - (b3 - beta_bar) / b3
            gb = alpha_bar / b3 - a * beta_bar / b3 ** 2
            if n in self.nodes:
                trans = self.trans[n].mean(axis=0)
                dwell = self.dwell[n].mean(axis=0)[:, :, None]
                ga = ga + dwell / b3 - trans * trigamma
                gb = gb + trans / b3 - dwell * a / b3 ** 2
            ga[:, ~off] = 0.0
            gb[:, ~off] = 0.0
            grad_alpha.append(ga)
            grad_beta.append(gb.sum(axis=2))
        return tuple(grad_alpha), tuple(grad_beta)


def prepare_parameter_problem(posterior, intervention, initial, horizon, num_samples=DEFAULT_NUM_SAMPLES,
                              rng=None, samples=None, steps=None):
    samples = draw_rate_samples(posterior, num_samples, rng) if samples is None else samples
    expected = [
        expected_statistics_under_posterior_sample(model, intervention, initial, horizon,
                                                   [posterior.parent_sets], steps)[0].node
        for model in samples.models]
    num_nodes = posterior.num_nodes
    return ParameterDesignProblem(
        posterior,
        tuple(np.stack([m.rates[n] for m in samples.models]) for n in range(num_nodes)),
        tuple(np.stack([e[n].trans for e in expected]) for n in range(num_nodes)),
        tuple(np.stack([e[n].dwell for e in expected]) for n in range(num_nodes)),
        intervention.unintervened,
    )


def vbhc_parameters(posterior, intervention, initial, horizon, kappa=None, num_samples=DEFAULT_NUM_SAMPLES,
                    rng=None, samples=None, steps=None):
    problem = prepare_parameter_problem(posterior, intervention, initial, horizon, num_samples, rng, samples, steps)
    return problem.objective(kappa or VariationalRateParams.from_posterior(posterior))


def vbhc_parameter_gradients(posterior, intervention, initial, horizon, kappa=None,
                             num_samples=DEFAULT_NUM_SAMPLES, rng=None, samples=None, steps=None):
    """Gradients of the criterion with respect to the shape and rate parameters of ``kappa``."""
    problem = prepare_parameter_problem(posterior, intervention, initial, horizon, num_samples, rng, samples, steps)
    return problem.gradient(kappa or VariationalRateParams.from_posterior(posterior))


def minimize_problem(problem, kappa0=None, **options):
    kappa0 = kappa0 or VariationalRateParams.from_posterior(problem.posterior)

    def objective(x):
        return problem.objective(kappa0.from_log_vector(x)).value

    def gradient(x):
        kappa = kappa0.from_log_vector(x)
        grad_alpha, grad_beta = problem.gradient(kappa)
        parts = []
        for a, b, ga, gb in zip(kappa.alpha, kappa.beta, grad_alpha, grad_beta):
            off = offdiagonal_mask(a.shape[-1])
            parts.append((a * ga)[:, off].ravel())
            parts.append((b * gb).ravel())
        return np.concatenate(parts)

    result = minimize_projected(objective, gradient, kappa0.to_log_vector(), **options)
    if not result.iterations:
        return problem.objective(kappa0, result.trace), kappa0
    kappa = kappa0.from_log_vector(result.x)
    return problem.objective(kappa, result.trace), kappa


def minimize_vbhc_parameters(posterior, intervention, initial, horizon, kappa0=None,
                             num_samples=DEFAULT_NUM_SAMPLES, rng=None, samples=None, steps=None, **options):
    """Tightens the bound over the variational parameters, starting from the posterior counts."""
    problem = prepare_parameter_problem(posterior, intervention, initial, horizon, num_samples, rng, samples, steps)
    return minimize_problem(problem, kappa0, **options)


def bhc_parameters(posterior, intervention, initial, horizon, num_samples=DEFAULT_NUM_SAMPLES, rng=None,
                   samples=None, steps=None, method="analytic"):
    """Expected KL between path measures of two posterior draws.

    ``analytic`` integrates the second draw against the posterior in closed form;
    ``paired`` draws it and averages ``kl_ctbn_rates``.
    """
    rng = np.random.default_rng() if rng is None else rng
    problem = prepare_parameter_problem(posterior, intervention, initial, horizon, num_samples, rng, samples, steps)
    if method == "analytic":
        return problem.objective(VariationalRateParams.from_posterior(posterior))
    if method != "paired":
        raise DesignError(f"Unknown BHC method {method!r}.")
    values = []
    for k, pair_rng in enumerate(rng.spawn(problem.num_samples)):
        other = sample_rate_posterior(posterior, pair_rng)
        rates = tuple(r[k] for r in problem.rates)
        expected = [NodeStats(problem.trans[n][k], problem.dwell[n][k]) for n in range(posterior.num_nodes)]
        values.append(kl_ctbn_rates(rates, other, expected, problem.nodes))
    values = np.array(values)
    return CriterionValue(float(values.mean()), values)


def log_posterior_density(posterior, model):
    total = 0.0
    for n in range(posterior.num_nodes):
        off = offdiagonal_mask(posterior.state_cards[n])
        total += np.sum(gamma.logpdf(model.rates[n][:, off], posterior.alpha[n][:, off],
                                     scale=1.0 / np.broadcast_to(posterior.beta[n][:, :, None],
                                                                 posterior.alpha[n].shape)[:, off]))
    return float(total)


def eig_parameters(posterior, intervention, initial, horizon, num_samples=DEFAULT_NUM_SAMPLES,
                   num_paths=DEFAULT_NUM_PATHS, rng=None, samples=None):
    """Nested Monte Carlo estimate of the information gained about the rates."""
    if num_paths < 1:
        raise DesignError(f"At least one path per sample is needed, got {num_paths}.")
    rng = np.random.default_rng() if rng is None else rng
    samples = draw_rate_samples(posterior, num_samples, rng) if samples is None else samples
    values = np.zeros(len(samples.models))
    for k, (model, path_rng) in enumerate(zip(samples.models, rng.spawn(len(samples.models)))):
        prior_density = log_posterior_density(posterior, model)
        for _ in range(num_paths):
            trajectory = sample_path(model, intervention, initial, horizon, path_rng)
            stats = extract_statistics(trajectory, posterior.parent_sets, posterior.state_cards)
            updated = update_rate_posterior(posterior, stats)
            values[k] += log_posterior_density(updated, model) - prior_density
    values /= num_paths
    return CriterionValue(float(values.mean()), values)
