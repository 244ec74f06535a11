import numpy as np
import pytest

from addhaz import crossval
from addhaz.crossval import (CvResult, FoldError, cv_document, kfold_cv, select_index,
                             select_lambda, stratified_folds)
from addhaz.penalties import PenaltySpec
from addhaz.pseudoscore import build_system, loss, system_from_arrays
from addhaz.simulate import SimStudyConfig, gen_dataset
from addhaz.solver import FitConfig, fit_path
from addhaz.survdata import SurvivalDataset

CFG = FitConfig(grid_size=30)


def _cv_from_curve(scores, se=None):
    scores = np.asarray(scores, dtype=float)
    k = scores.size
    se = np.zeros(k) if se is None else np.asarray(se, dtype=float)
    return CvResult(np.geomspace(1.0, 1e-3, k), scores, se, crossval._best_index(scores),
                    np.zeros(5, dtype=int), np.vstack([scores, scores]), PenaltySpec.lasso())


def test_stratified_folds_balance():
    status = np.array([1] * 37 + [0] * 23)
    f = stratified_folds(status, 10, seed=4)
    assert np.bincount(f, minlength=10).max() - np.bincount(f, minlength=10).min() <= 1
    ev = np.bincount(f[status == 1], minlength=10)
    assert ev.max() - ev.min() <= 1
    np.testing.assert_array_equal(f, stratified_folds(status, 10, seed=4))


def test_cv_scores_recomputed(small_ds):
    cv = kfold_cv(small_ds, PenaltySpec.lasso(), CFG, folds=5, seed=2)
    # recompute every fold score from scratch
    for m in range(5):
        train = small_ds.subset(cv.fold_assignment != m)
        held = cv.fold_assignment == m
        test_sys = system_from_arrays(small_ds.times[held], small_ds.status[held],
                                      small_ds.covariates[held])
        path = fit_path(build_system(train), PenaltySpec.lasso(), CFG, cv.lambdas)
        for k in range(len(cv.lambdas)):
            assert cv.fold_scores[m, k] == pytest.approx(loss(test_sys, path.betas[k]), abs=1e-10)
    np.testing.assert_allclose(cv.cv_scores, cv.fold_scores.mean(axis=0), atol=1e-12)


def test_cv_zero_at_grid_top(small_ds):
    for spec in (PenaltySpec.lasso(), PenaltySpec.sica(0.1), PenaltySpec.enet(0.5)):
        cv = kfold_cv(small_ds, spec, CFG, folds=10, seed=1)
        assert cv.cv_scores[0] == 0.0
        assert np.all(cv.fold_scores[:, 0] == 0.0)


def test_leave_few_out_finite():
    rng = np.random.default_rng(8)
    status = np.array([1] * 12 + [0] * 8)
    ds = SurvivalDataset(rng.exponential(size=20), status, rng.standard_normal((20, 4)))
    cv = kfold_cv(ds, PenaltySpec.lasso(), CFG, folds=18, seed=0)
    assert np.isfinite(cv.cv_scores).all()


def test_deterministic_replay(small_ds):
    a = kfold_cv(small_ds, PenaltySpec.scad(), CFG, folds=5, seed=11)
    b = kfold_cv(small_ds, PenaltySpec.scad(), CFG, folds=5, seed=11)
    np.testing.assert_array_equal(a.cv_scores, b.cv_scores)
    np.testing.assert_array_equal(a.fold_assignment, b.fold_assignment)
    assert a.best_index == b.best_index


def test_threads_do_not_change_result(small_ds):
    a = kfold_cv(small_ds, PenaltySpec.lasso(), CFG, folds=5, seed=3)
    b = kfold_cv(small_ds, PenaltySpec.lasso(), CFG, folds=5, seed=3, threads=3)
    np.testing.assert_array_equal(a.fold_scores, b.fold_scores)


def test_fold_errors(small_ds):
    with pytest.raises(FoldError):
        kfold_cv(small_ds, PenaltySpec.lasso(), CFG, folds=small_ds.n + 1)
    with pytest.raises(FoldError):
        kfold_cv(small_ds, PenaltySpec.lasso(), CFG, folds=1)
    # a single event: its fold's complement has none
    ds = SurvivalDataset([1.0, 2.0, 3.0, 4.0], [1, 0, 0, 0], np.arange(8.0).reshape(4, 2))
    with pytest.raises(FoldError, match="no observed failures"):
        kfold_cv(ds, PenaltySpec.lasso(), CFG, folds=2)


def test_training_systems_use_only_complement(small_ds, monkeypatch):
    seen = []
    real = crossval.pseudoscore.build_system

    def spy(ds):
        seen.append(ds.n)
        return real(ds)

    monkeypatch.setattr(crossval.pseudoscore, "build_system", spy)
    cv = kfold_cv(small_ds, PenaltySpec.lasso(), CFG, folds=4, seed=0)
    sizes = [int(np.sum(cv.fold_assignment != m)) for m in range(4)]
    assert sorted(seen) == sorted(sizes + [small_ds.n])


def test_select_rules():
    down = _cv_from_curve(np.linspace(0, -1, 12))
    assert select_lambda(down) == down.lambdas[-1]
    flat = _cv_from_curve(np.zeros(12))
    assert select_lambda(flat, "min") == flat.lambdas[0]
    assert select_lambda(flat, "one_se") == flat.lambdas[0]
    vee = _cv_from_curve((np.arange(15) - 7.0) ** 2)
    assert select_lambda(vee) == vee.lambdas[7]
    # one_se picks the largest lambda within one SE of the minimum
    se = np.full(15, 9.5)
    vee_se = _cv_from_curve((np.arange(15) - 7.0) ** 2, se)
    assert select_index(vee_se, "one_se") == 4
    with pytest.raises(ValueError):
        select_lambda(vee, "median")


def test_cv_document(small_ds):
    cv = kfold_cv(small_ds, PenaltySpec.lasso(), CFG, folds=5, seed=2)
    doc = cv_document(cv)
    assert doc["selected_lambda"] == select_lambda(cv)
    assert len(doc["cv_scores"]) == len(cv.lambdas)


def test_pure_noise_calibration():
    good = 0
    for seed in range(20):
        cfg = SimStudyConfig(n=200, p=10, rho=0.0, beta0=np.zeros(10), seed=seed)
        ds, _, _, _ = gen_dataset(cfg, seed, c0=3.92)
        cv = kfold_cv(ds, PenaltySpec.lasso(), CFG, folds=10, seed=seed)
        b = cv.best_index
        path = fit_path(build_system(ds), PenaltySpec.lasso(), CFG, cv.lambdas)
        size_ok = np.count_nonzero(path.betas[b]) <= 10
        within = cv.cv_scores[0] <= cv.cv_scores[b] + 2 * cv.cv_se[b]
        good += size_ok and within
    assert good >= 16
