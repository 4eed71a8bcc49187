import pandas as pd
from scipy import stats

from ctbnal.exceptions import InsufficientData


def compare_strategies(frame, metric, strategy, baseline, step=None, confidence_level=0.95, higher_is_better=True):
    """One-sided paired t-test of ``strategy`` against ``baseline`` across repetitions at one step."""
    step = int(frame["step"].max()) if step is None else step
    at_step = frame[frame["step"] == step]
    first = at_step[at_step["strategy"] == strategy].set_index("repetition")[metric]
    second = at_step[at_step["strategy"] == baseline].set_index("repetition")[metric]
    paired = pd.concat([first, second], axis=1, join="inner", keys=["first", "second"]).dropna()
    if len(paired) < 2:
        raise InsufficientData(f"Need at least two paired repetitions of {strategy} and {baseline}.")

    # Perform a paired one-sided T-test
    t_stat, p_value = stats.ttest_rel(
        paired["first"],
        paired["second"],
        alternative="greater" if higher_is_better else "less",
    )

    mean_diff, ci_low, ci_high = calculate_confidence_interval(paired["first"] - paired["second"], confidence_level)
    return {"step": step, "n": len(paired), "mean_diff": mean_diff, "ci_low": ci_low, "ci_high": ci_high,
            "p_value": float(p_value), "t_stat": float(t_stat)}


def calculate_confidence_interval(differences, confidence_level):
    se_diff = stats.sem(differences)
    t_critical = stats.t.ppf((1 + confidence_level) / 2, len(differences) - 1)
    mean_diff = float(differences.mean())
    ci_low = mean_diff - t_critical * se_diff
    ci_high = mean_diff + t_critical * se_diff
    return mean_diff, float(ci_low), float(ci_high)
