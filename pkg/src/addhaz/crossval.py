"""M-fold cross-validation of a penalized path with the pseudoscore loss."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import pseudoscore
from .penalties import PenaltyKind, PenaltySpec
from .pseudoscore import loss
from .solver import FitConfig, _check_grid, fit_path, lambda_max
from .survdata import SurvivalDataset


class FoldError(ValueError):
    pass


@dataclass
class CvResult:
    lambdas: np.ndarray
    cv_scores: np.ndarray
    cv_se: np.ndarray
    best_index: int
    fold_assignment: np.ndarray
    fold_scores: np.ndarray
    spec: PenaltySpec


def stratified_folds(status, folds, seed) -> np.ndarray:
    """Fold label per subject; events and censored subjects are shuffled
    separately and dealt round-robin, the censored continuing where the
    events stopped."""
    status = np.asarray(status)
    rng = np.random.default_rng(seed)
    assignment = np.empty(status.shape[0], dtype=int)
    offset = 0
    for group in (np.flatnonzero(status == 1), np.flatnonzero(status == 0)):
        group = rng.permutation(group)
        assignment[group] = (offset + np.arange(group.size)) % folds
        offset = (offset + group.size) % folds
    return assignment


def _grid_top(ds, spec, train_systems, sica_pilot):
    specs = [spec]
    if spec.kind is PenaltyKind.SICA and sica_pilot is not None and spec.shape_a < sica_pilot:
        specs.append(spec.with_a(sica_pilot))
    full = pseudoscore.build_system(ds)
    systems = [full, *train_systems]
    # start high enough that every training fit is exactly zero at the top
    return max(lambda_max(s, sp) for s in systems for sp in specs)


def kfold_cv(ds: SurvivalDataset, spec: PenaltySpec, cfg: FitConfig | None = None, folds=10,
             seed=0, sica_pilot=1.0, threads=1) -> CvResult:
    """Cross-validated pseudoscore loss along a shared lambda grid.

    For fold ``m`` the path is fitted on the other folds and scored with the
    loss built from fold ``m`` alone (its own risk sets). ``cv_se`` is the
    standard error of the fold scores.
    """
    cfg = cfg or FitConfig()
    if not 2 <= folds <= ds.n:
        raise FoldError(f"need 2 <= folds <= n = {ds.n}, got {folds}")
    assignment = stratified_folds(ds.status, folds, seed)
    for m in range(folds):
        if not ds.status[assignment != m].any():
            raise FoldError(f"fold {m}: complement contains no observed failures")

    train_sys = [pseudoscore.build_system(ds.subset(assignment != m)) for m in range(folds)]
    test_sys = [pseudoscore.system_from_arrays(ds.times[assignment == m], ds.status[assignment == m],
                                               ds.covariates[assignment == m])
                for m in range(folds)]
    lambdas = _check_grid(cfg, _grid_top(ds, spec, train_sys, sica_pilot))
    fold_cfg = FitConfig(cfg.tol, cfg.max_sweeps, cfg.max_active, cfg.grid_size, cfg.grid_ratio,
                         check_convexity=False)

    def run(m):
        path = fit_path(train_sys[m], spec, fold_cfg, lambdas, sica_pilot)
        out = np.full(lambdas.shape[0], np.nan)
        for k in np.flatnonzero(path.fitted):
            out[k] = loss(test_sys[m], path.betas[k])
        return out

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(run, range(folds)))
    else:
        rows = [run(m) for m in range(folds)]
    fold_scores = np.vstack(rows)
    cv_scores = fold_scores.mean(axis=0)
    cv_se = fold_scores.std(axis=0, ddof=1) / np.sqrt(folds)
    return CvResult(lambdas, cv_scores, cv_se, _best_index(cv_scores), assignment, fold_scores, spec)


def _best_index(scores) -> int:
    finite = np.where(np.isfinite(scores), scores, np.inf)
    # argmin returns the first minimiser, i.e. the largest lambda on ties
    return int(np.argmin(finite))


def select_lambda(cv: CvResult, rule="min") -> float:
    """Chosen lambda under the ``min`` or ``one_se`` rule."""
    if rule == "min":
        return float(cv.lambdas[cv.best_index])
    if rule == "one_se":
        return float(cv.lambdas[select_index(cv, rule)])
    raise ValueError(f"unknown rule {rule!r}")


def select_index(cv: CvResult, rule="min") -> int:
    if rule == "min":
        return cv.best_index
    if rule != "one_se":
        raise ValueError(f"unknown rule {rule!r}")
    b = cv.best_index
    se = cv.cv_se[b] if np.isfinite(cv.cv_se[b]) else 0.0
    bound = cv.cv_scores[b] + se
    ok = np.flatnonzero(np.isfinite(cv.cv_scores) & (cv.cv_scores <= bound))
    return int(ok.min())


CV_FORMAT_VERSION = 1


def cv_document(cv: CvResult, rule="min") -> dict:
    def num(x):
        return float(x) if np.isfinite(x) else None

    idx = select_index(cv, rule)
    return {
        "version": CV_FORMAT_VERSION,
        "kind": "cross_validation",
        "folds": int(cv.fold_scores.shape[0]),
        "rule": rule,
        "lambdas": [float(x) for x in cv.lambdas],
        "cv_scores": [num(x) for x in cv.cv_scores],
        "cv_se": [num(x) for x in cv.cv_se],
        "best_index": cv.best_index,
        "selected_index": idx,
        "selected_lambda": float(cv.lambdas[idx]),
    }
