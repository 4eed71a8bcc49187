import logging

import numpy as np
import pandas as pd
from sklearn.metrics import average_precision_score, roc_auc_score

from ctbnal.exceptions import InsufficientData, ModelError
from ctbnal.model import Ctbn, offdiagonal_mask
from ctbnal.stats import compare_strategies

logger = logging.getLogger(__name__)

METRICS = ("mse", "auroc", "aupr", "entropy")
LOWER_IS_BETTER = {"mse": True, "auroc": False, "aupr": False, "entropy": True}
COMPARISON_COLUMNS = ("strategy", "baseline", "metric", "step", "n", "mean_diff", "ci_low", "ci_high", "p_value",
                      "t_stat")


def mse_posterior(posterior, truth):
    """Posterior expected squared error per off-diagonal cell, averaged over cells."""
    truth = truth.rates if isinstance(truth, Ctbn) else tuple(truth)
    errors = []
    for n, rates in enumerate(truth):
        alpha, beta = posterior.alpha[n], posterior.beta[n][:, :, None]
        if rates.shape != alpha.shape:
            raise ModelError(f"True rates of node {n} do not match the posterior.")
        cell = alpha / beta ** 2 + (alpha / beta - rates) ** 2
        errors.append(cell[:, offdiagonal_mask(rates.shape[-1])].ravel())
    return float(np.mean(np.concatenate(errors)))


def auroc_aupr(scores, truth):
    """Ranking quality of edge scores against the true adjacency, self-edges excluded."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    if scores.ndim == 2:
        mask = offdiagonal_mask(len(scores))
        scores, truth = scores[mask], truth[mask]
    if truth.all() or not truth.any():
        raise InsufficientData("AUROC needs at least one present and one absent edge.")
    return float(roc_auc_score(truth, scores)), float(average_precision_score(truth, scores))


def records_to_frame(records):
    frame = pd.DataFrame.from_records(list(records))
    if frame.empty:
        raise InsufficientData("No metric records to tabulate.")
    return frame.sort_values(["strategy", "repetition", "step"], kind="stable").reset_index(drop=True)


def aggregate(frame):
    """Per strategy and step: mean, population variance and 25/75% quantiles of every metric."""
    if frame.empty:
        raise InsufficientData("At least one repetition is needed.")
    metrics = [m for m in METRICS if m in frame and frame[m].notna().any()]
    keys = [k for k in ("strategy", "target", "step") if k in frame]
    grouped = frame.groupby(keys)[metrics]
    summary = pd.concat({
        "mean": grouped.mean(),
        "variance": grouped.var(ddof=0),
        "q25": grouped.quantile(0.25),
        "q75": grouped.quantile(0.75),
    }, axis=1)
    summary.columns = [f"{metric}_{stat}" for stat, metric in summary.columns]
    ordered = [f"{metric}_{stat}" for metric in metrics for stat in ("mean", "variance", "q25", "q75")]
    summary = summary[ordered]
    summary.insert(0, "repetitions", frame.groupby(keys)["repetition"].nunique())
    return summary.reset_index()


def intervention_frequencies(frame, num_nodes):
    """Fraction of repetitions intervening on each node at each step."""
    rows = frame[frame["step"] > 0]
    records = []
    for (strategy, step), group in rows.groupby(["strategy", "step"]):
        targets = group["targets"].fillna("").astype(str).str.split(",")
        for n in range(num_nodes):
            hits = targets.apply(lambda t: str(n) in t)
            records.append({"strategy": strategy, "step": step, "node": n, "frequency": float(hits.mean())})
    return pd.DataFrame.from_records(records, columns=["strategy", "step", "node", "frequency"])


def strategy_comparisons(frame, metric, step=None, confidence_level=0.95):
    strategies = sorted(frame["strategy"].unique())
    rows = []
    for strategy in strategies:
        for baseline in strategies:
            if strategy == baseline:
                continue
            result = compare_strategies(frame, metric, strategy, baseline, step, confidence_level,
                                        higher_is_better=not LOWER_IS_BETTER[metric])
            rows.append({"strategy": strategy, "baseline": baseline, "metric": metric, **result})
    return pd.DataFrame.from_records(rows, columns=list(COMPARISON_COLUMNS))


def comparison_report(comparison, confidence_level=0.95):
    better = "lower" if LOWER_IS_BETTER[comparison["metric"]] else "higher"
    significant = comparison["p_value"] < 1.0 - confidence_level
    return (
        f"Comparison of {comparison['strategy']} against {comparison['baseline']} on {comparison['metric']} "
        f"at step {comparison['step']} ({comparison['n']} paired repetitions, {better} is better):\n"
        f"There is a {'significant' if significant else 'not significant'} improvement.\n"
        f"Mean difference: {comparison['mean_diff']:.4g} "
        f"(CI: {comparison['ci_low']:.4g} to {comparison['ci_high']:.4g}).\n"
        f"T-statistic: {comparison['t_stat']:.2f}, P-value: {comparison['p_value']:.4f}\n")
