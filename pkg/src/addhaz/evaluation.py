"""Risk grouping and the two-sample log-rank test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .survdata import SurvivalDataset


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    group_sizes: tuple[int, int]
    observed_events: tuple[int, int]
    expected_events: tuple[float, float]


def risk_scores(ds: SurvivalDataset, beta_hat) -> np.ndarray:
    beta_hat = np.asarray(beta_hat, dtype=float)
    if beta_hat.shape != (ds.p,):
        raise ValueError(f"beta has length {beta_hat.size}, test data has p = {ds.p}")
    return ds.covariates @ beta_hat


def risk_split(ds: SurvivalDataset, beta_hat) -> np.ndarray:
    """Label subjects 0 (low risk) or 1 (high risk) by ``Z' beta_hat``.

    The ``ceil(n / 2)`` lowest scores are low risk; equal scores are ordered
    by row index.
    """
    scores = risk_scores(ds, beta_hat)
    order = np.argsort(scores, kind="stable")
    labels = np.ones(ds.n, dtype=int)
    labels[order[: (ds.n + 1) // 2]] = 0
    return labels


def logrank_test(times, status, groups) -> LogRankResult:
    """Unweighted two-sample log-rank (Mantel-Haenszel) test.

    ``groups`` holds two distinct labels; the statistic is computed for the
    group with the larger label and is symmetric in the labelling.
    """
    times = np.asarray(times, dtype=float)
    status = np.asarray(status).astype(int)
    groups = np.asarray(groups)
    labels = np.unique(groups)
    if labels.size != 2:
        raise ValueError(f"need exactly two groups, found {labels.size}")
    if not status.any():
        raise ValueError("no events")
    g1 = groups == labels[1]

    event_times = np.unique(times[status == 1])
    # at-risk counts at each event time: number with X >= t
    sorted_all = np.sort(times)
    sorted_g1 = np.sort(times[g1])
    n_risk = times.size - np.searchsorted(sorted_all, event_times, side="left")
    n1_risk = sorted_g1.size - np.searchsorted(sorted_g1, event_times, side="left")
    idx = np.searchsorted(event_times, times[status == 1])
    d = np.bincount(idx, minlength=event_times.size).astype(float)
    d1 = np.bincount(idx, weights=g1[status == 1].astype(float), minlength=event_times.size)

    frac = n1_risk / n_risk
    expected = d * frac
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(n_risk > 1, d * frac * (1 - frac) * (n_risk - d) / (n_risk - 1), 0.0)
    total_var = float(var.sum())
    if total_var <= 0:
        raise ValueError("log-rank variance is zero")
    diff = float(d1.sum() - expected.sum())
    stat = diff * diff / total_var
    obs1 = int(d1.sum())
    obs0 = int(d.sum()) - obs1
    exp1 = float(expected.sum())
    return LogRankResult(
        statistic=stat,
        p_value=float(stats.chi2.sf(stat, df=1)),
        group_sizes=(int((~g1).sum()), int(g1.sum())),
        observed_events=(obs0, obs1),
        expected_events=(float(d.sum()) - exp1, exp1),
    )


def logrank_document(res: LogRankResult) -> dict:
    return {
        "group_sizes": list(res.group_sizes),
        "observed_events": list(res.observed_events),
        "expected_events": list(res.expected_events),
        "statistic": res.statistic,
        "p_value": res.p_value,
    }
