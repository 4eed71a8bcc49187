import numpy as np
import pandas as pd
import pytest
from conftest import single_node

from ctbnal.analysis import (
    COMPARISON_COLUMNS,
    aggregate,
    auroc_aupr,
    comparison_report,
    intervention_frequencies,
    mse_posterior,
    records_to_frame,
    strategy_comparisons,
)
from ctbnal.bayes import RatePosterior
from ctbnal.exceptions import InsufficientData, ModelError
from ctbnal.stats import calculate_confidence_interval, compare_strategies


def metric_frame(values_by_strategy, step=1):
    rows = []
    for strategy, values in values_by_strategy.items():
        for repetition, value in enumerate(values):
            rows.append({"strategy": strategy, "target": "parameters", "repetition": repetition, "step": step,
                         "intervention": "passive", "targets": "", "mse": value, "auroc": np.nan,
                         "aupr": np.nan, "entropy": np.nan})
    return pd.DataFrame(rows)


def test_auroc_of_a_small_ranking():
    auroc, aupr = auroc_aupr([0.9, 0.8, 0.3, 0.1], [True, False, True, False])
    assert auroc == pytest.approx(0.75)
    assert aupr == pytest.approx(0.5 * (1.0 + 2.0 / 3.0))
    assert auroc_aupr([0.9, 0.8, 0.3, 0.1], [True, True, False, False]) == (1.0, 1.0)


def test_auroc_ignores_self_edges():
    scores = np.array([[1.0, 0.9, 0.1], [0.2, 1.0, 0.8], [0.3, 0.05, 1.0]])
    truth = np.array([[False, True, False], [False, False, True], [False, False, False]])
    assert auroc_aupr(scores, truth) == (1.0, 1.0)
    with pytest.raises(InsufficientData):
        auroc_aupr(scores, np.zeros((3, 3), dtype=bool))


def test_mse_of_the_prior():
    posterior = RatePosterior.prior((2,), [()])
    assert mse_posterior(posterior, single_node(1.0, 1.0)) == pytest.approx(1.0)
    assert mse_posterior(posterior, single_node(3.0, 1.0)) == pytest.approx(1.0 + 4.0 / 2.0)
    with pytest.raises(ModelError):
        mse_posterior(posterior, (np.zeros((2, 2, 2)),))


def test_aggregate_quantiles_and_population_variance():
    summary = aggregate(metric_frame({"random": [1.0, 2.0, 3.0, 4.0]}))
    row = summary.iloc[0]
    assert row["repetitions"] == 4
    assert row["mse_mean"] == pytest.approx(2.5)
    assert row["mse_variance"] == pytest.approx(1.25)
    assert row["mse_q25"] == pytest.approx(1.75)
    assert row["mse_q75"] == pytest.approx(3.25)
    assert "auroc_mean" not in summary
    with pytest.raises(InsufficientData):
        aggregate(metric_frame({}))


def test_paired_comparison():
    frame = metric_frame({"vbhc": [1.0, 1.5, 0.8, 1.1, 0.9], "random": [2.0, 2.4, 1.9, 2.3, 1.8]})
    result = compare_strategies(frame, "mse", "vbhc", "random", higher_is_better=False)
    assert result["n"] == 5 and result["step"] == 1
    assert result["mean_diff"] == pytest.approx(-1.02)
    assert result["ci_low"] < result["mean_diff"] < result["ci_high"] < 0
    assert result["p_value"] < 0.01
    reverse = compare_strategies(frame, "mse", "random", "vbhc", higher_is_better=False)
    assert reverse["p_value"] > 0.99
    with pytest.raises(InsufficientData):
        compare_strategies(metric_frame({"vbhc": [1.0], "random": [2.0]}), "mse", "vbhc", "random")


def test_confidence_interval_is_symmetric():
    mean, low, high = calculate_confidence_interval(pd.Series([1.0, 2.0, 3.0]), 0.95)
    assert mean == 2.0
    assert mean - low == pytest.approx(high - mean)
    assert high - mean == pytest.approx(4.302653 / np.sqrt(3.0), rel=1e-5)


def test_strategy_comparisons_table():
    frame = metric_frame({"vbhc": [1.0, 1.5, 0.8], "random": [2.0, 2.4, 1.9], "passive": [2.5, 2.1, 2.7]})
    table = strategy_comparisons(frame, "mse")
    assert list(table.columns) == list(COMPARISON_COLUMNS)
    assert len(table) == 6
    row = table[(table["strategy"] == "vbhc") & (table["baseline"] == "passive")].iloc[0]
    report = comparison_report(row)
    assert "vbhc against passive" in report and "lower is better" in report


def test_intervention_frequencies():
    frame = metric_frame({"random": [1.0, 1.0, 1.0, 1.0]})
    frame["targets"] = ["0", "0,1", "", "2"]
    table = intervention_frequencies(frame, 3)
    assert list(table["frequency"]) == [0.5, 0.25, 0.25]
    assert intervention_frequencies(frame.assign(step=0), 3).empty


def test_records_to_frame_needs_records():
    with pytest.raises(InsufficientData):
        records_to_frame([])
