"""Simulation designs and performance metrics for the additive hazards model.

Data are generated from ``lambda(t | Z) = 1 + beta0' Z`` with ``Z`` an AR(1)
Gaussian vector truncated to ``beta0' Z > -1`` and uniform censoring
``C ~ U(0, c0)``, with ``c0`` calibrated to a target censoring rate.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .crossval import kfold_cv, select_index
from .penalties import PenaltySpec
from .pseudoscore import build_system, loss
from .solver import FitConfig, SolutionPath, fit_path
from .survdata import SurvivalDataset

log = logging.getLogger(__name__)

# named random sub-streams derived from a master seed
STREAM_CALIBRATION = 1
STREAM_BETA = 2
STREAM_TRAIN = 3
STREAM_TEST = 4
STREAM_FOLDS = 5

CALIBRATION_N = 200_000
_MIN_ACCEPT = 1e-3


class ConfigError(ValueError):
    pass


class GeneratorError(RuntimeError):
    pass


def design_beta(p, pattern=(1.0, 0.0, -1.0, 0.0, 0.0, 0.0), repeats=3) -> np.ndarray:
    """``pattern`` repeated ``repeats`` times then zero-padded (truncated if p is short)."""
    head = np.tile(np.asarray(pattern, dtype=float), repeats)
    out = np.zeros(p)
    m = min(p, head.size)
    out[:m] = head[:m]
    return out


@dataclass
class SimStudyConfig:
    n: int
    p: int
    rho: float
    beta0: np.ndarray
    target_censoring: float = 0.25
    weak_effect_count: int = 0
    weak_effect_eps: float = 0.0
    replicates: int = 1
    seed: int = 0
    test_n: int = 500

    def __post_init__(self):
        self.beta0 = np.asarray(self.beta0, dtype=float)
        if self.n < 2 or self.test_n < 2:
            raise ConfigError("n and test_n must be at least 2")
        if self.beta0.shape != (self.p,):
            raise ConfigError(f"beta0 has length {self.beta0.size}, expected p = {self.p}")
        if not -1 <= self.rho <= 1:
            raise ConfigError(f"rho must lie in [-1, 1], got {self.rho}")
        if not 0 < self.target_censoring < 1:
            raise ConfigError("target_censoring must lie in (0, 1)")
        zeros = int(np.sum(self.beta0 == 0))
        if not 0 <= self.weak_effect_count <= zeros:
            raise ConfigError(f"weak_effect_count must lie in [0, {zeros}]")
        if self.weak_effect_eps < 0:
            raise ConfigError("weak_effect_eps must be nonnegative")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")


def ar1_normal(rng, size, p, rho) -> np.ndarray:
    """Rows ~ N(0, (rho^|i-j|)) via Z_j = rho Z_{j-1} + sqrt(1 - rho^2) e_j."""
    e = rng.standard_normal((size, p))
    z = np.empty_like(e)
    z[:, 0] = e[:, 0]
    s = math.sqrt(max(0.0, 1.0 - rho * rho))
    for j in range(1, p):
        z[:, j] = rho * z[:, j - 1] + s * e[:, j]
    return z


def ar1_quadratic(beta, rho) -> float:
    """``beta' Sigma beta`` for the AR(1) correlation matrix, in O(p)."""
    beta = np.asarray(beta, dtype=float)
    total = float(beta @ beta)
    lag = 1
    # sum over lags; terms vanish quickly unless |rho| is close to one
    while lag < beta.size:
        coef = rho ** lag
        if coef == 0 or (abs(coef) < 1e-17 and lag > 1):
            break
        total += 2.0 * coef * float(beta[:-lag] @ beta[lag:])
        lag += 1
    return total


def _censoring_probability(rate, c0):
    """P(C < T) = (1 - exp(-rate c0)) / (rate c0) for T ~ Exp(rate), C ~ U(0, c0)."""
    x = rate * c0
    return -np.expm1(-x) / x


def calibrate_censoring(cfg: SimStudyConfig, beta0=None, rate_tol=1e-4, width_tol=1e-4,
                        n_mc=CALIBRATION_N) -> float:
    """Bisection for the uniform censoring bound ``c0`` hitting the target rate.

    The censoring rate depends on ``Z`` only through ``eta = beta0' Z``, which
    is a normal variable with variance ``beta0' Sigma beta0`` truncated to
    ``eta > -1``. ``n_mc`` draws of ``eta`` (fixed calibration stream) are
    averaged against the closed-form conditional censoring probability.
    """
    beta0 = cfg.beta0 if beta0 is None else np.asarray(beta0, dtype=float)
    rng = np.random.default_rng([cfg.seed, STREAM_CALIBRATION])
    sd = math.sqrt(ar1_quadratic(beta0, cfg.rho))
    eta = np.empty(0)
    draws = 0
    while eta.size < n_mc:
        cand = sd * rng.standard_normal(n_mc)
        draws += n_mc
        eta = np.concatenate([eta, cand[cand > -1.0]])
        if eta.size / draws < _MIN_ACCEPT:
            raise GeneratorError("acceptance probability of beta0'Z > -1 is below 1e-3")
    rate = 1.0 + eta[:n_mc]

    def cens(c0):
        return float(np.mean(_censoring_probability(rate, c0)))

    target = cfg.target_censoring
    lo, hi = 1e-3, 1.0
    while cens(lo) < target:
        lo /= 10
        if lo < 1e-12:
            raise GeneratorError("cannot bracket c0 from below")
    while cens(hi) > target:
        lo = hi
        hi *= 2
        if hi > 1e3:
            raise GeneratorError(f"no c0 <= 1e3 reaches censoring rate {target}")
    while True:
        mid = 0.5 * (lo + hi)
        r = cens(mid)
        if abs(r - target) < rate_tol or hi - lo < width_tol:
            return mid
        if r > target:
            lo = mid
        else:
            hi = mid


def perturb_beta(cfg: SimStudyConfig, rng):
    """Add weak effects to randomly chosen zero coefficients.

    Returns ``(beta0, strong_support, weak_support)``.
    """
    beta0 = cfg.beta0.copy()
    strong = np.flatnonzero(beta0)
    weak = np.empty(0, dtype=int)
    if cfg.weak_effect_count:
        zeros = np.flatnonzero(beta0 == 0)
        weak = np.sort(rng.choice(zeros, cfg.weak_effect_count, replace=False))
        mags = rng.uniform(0.0, cfg.weak_effect_eps, weak.size)
        signs = rng.choice([-1.0, 1.0], weak.size)
        beta0[weak] = signs * mags
    return beta0, strong, weak


def sample_survival(n, p, rho, beta0, c0, rng) -> SurvivalDataset:
    """Draw ``n`` subjects from the truncated additive hazards design."""
    beta0 = np.asarray(beta0, dtype=float)
    rows = []
    got = tried = 0
    batch = max(n, 16)
    while got < n:
        z = ar1_normal(rng, batch, p, rho)
        keep = z[z @ beta0 > -1.0]
        tried += batch
        rows.append(keep)
        got += keep.shape[0]
        if got / tried < _MIN_ACCEPT:
            raise GeneratorError("acceptance probability of beta0'Z > -1 is below 1e-3")
    z = np.vstack(rows)[:n]
    rate = 1.0 + z @ beta0
    t = rng.standard_exponential(n) / rate
    c = rng.uniform(0.0, c0, n)
    status = (t <= c).astype(int)
    if not status.any():
        raise GeneratorError("generated sample has no observed failures")
    return SurvivalDataset(np.minimum(t, c), status, z)


def gen_dataset(cfg: SimStudyConfig, replicate_seed, c0=None, n=None, stream=STREAM_TRAIN):
    """One simulated sample for a replicate.

    Returns ``(dataset, beta0, strong_support, weak_support)``; ``beta0``
    includes any weak-effect perturbation, which depends only on the
    replicate seed, so train and test samples of a replicate share it.
    """
    beta0, strong, weak = perturb_beta(cfg, np.random.default_rng([replicate_seed, STREAM_BETA]))
    if c0 is None:
        c0 = calibrate_censoring(cfg, beta0)
    rng = np.random.default_rng([replicate_seed, stream])
    ds = sample_survival(cfg.n if n is None else n, cfg.p, cfg.rho, beta0, c0, rng)
    return ds, beta0, strong, weak


@dataclass
class SimMetrics:
    pe1: float
    pe2: float
    l2_loss: float
    l1_loss: float
    num_selected: int
    false_negatives: int
    false_negatives_strong: int


METRIC_NAMES = ("pe1", "pe2", "l2_loss", "l1_loss", "num_selected", "false_negatives",
                "false_negatives_strong")


def eval_metrics(beta_hat, beta0, strong_support, test: SurvivalDataset) -> SimMetrics:
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    if beta_hat.shape != beta0.shape or beta_hat.shape != (test.p,):
        raise ValueError("dimension mismatch between coefficients and test data")
    diff = beta_hat - beta0
    selected = beta_hat != 0
    missed = (beta0 != 0) & ~selected
    strong = np.zeros(beta0.shape, dtype=bool)
    strong[np.asarray(strong_support, dtype=int)] = True
    return SimMetrics(
        pe1=loss(build_system(test), beta_hat),
        pe2=float(np.linalg.norm(test.covariates @ diff)),
        l2_loss=float(np.linalg.norm(diff)),
        l1_loss=float(np.abs(diff).sum()),
        num_selected=int(selected.sum()),
        false_negatives=int(missed.sum()),
        false_negatives_strong=int((missed & strong).sum()),
    )


class SingularSupportError(np.linalg.LinAlgError):
    pass


def oracle_fit(ds: SurvivalDataset, support) -> np.ndarray:
    """Unpenalized pseudoscore estimate restricted to ``support``."""
    support = np.asarray(sorted(set(int(j) for j in support)), dtype=int)
    if support.size == 0:
        raise ValueError("support must be nonempty")
    sys = build_system(ds)
    sub = sys.v_matrix[np.ix_(support, support)]
    if np.linalg.cond(sub) > 1e12:
        raise SingularSupportError("V restricted to the support is singular")
    beta = np.zeros(ds.p)
    beta[support] = np.linalg.solve(sub, sys.b_vector[support])
    return beta


def selection_curve(path: SolutionPath, true_support, max_size) -> np.ndarray:
    """Best count of true variables among path models of size <= m, m = 1..max_size."""
    truth = np.zeros(path.betas.shape[1], dtype=bool)
    truth[np.asarray(list(true_support), dtype=int)] = True
    sizes, hits = [], []
    for k in np.flatnonzero(path.fitted):
        active = path.betas[k] != 0
        sizes.append(int(active.sum()))
        hits.append(int((active & truth).sum()))
    sizes, hits = np.array(sizes, dtype=int), np.array(hits, dtype=int)
    curve = np.zeros(max_size)
    for m in range(1, max_size + 1):
        ok = sizes <= m
        if ok.any():
            curve[m - 1] = hits[ok].max()
    return curve


@dataclass
class Method:
    """A named penalty entry in a study; SICA below ``sica_pilot`` is staged."""
    name: str
    spec: PenaltySpec
    sica_pilot: float | None = 1.0


@dataclass
class StudyReport:
    config: SimStudyConfig
    c0: float | None
    methods: list[str]
    per_replicate: dict = field(default_factory=dict)  # name -> list[SimMetrics | None]
    curves: dict = field(default_factory=dict)  # name -> list[array | None]
    selected_lambdas: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    curve_max_size: int = 0

    def values(self, name, metric) -> np.ndarray:
        return np.array([getattr(m, metric) for m in self.per_replicate[name] if m is not None],
                        dtype=float)

    def mean(self, name, metric) -> float:
        v = self.values(name, metric)
        return float(np.mean(v)) if v.size else float("nan")

    def sd(self, name, metric) -> float:
        v = self.values(name, metric)
        return float(np.std(v, ddof=1)) if v.size > 1 else float("nan")

    def mean_curve(self, name) -> np.ndarray:
        rows = [c for c in self.curves.get(name, []) if c is not None]
        return np.mean(rows, axis=0) if rows else np.zeros(self.curve_max_size)


def _as_method(m) -> Method:
    if isinstance(m, Method):
        return m
    return Method(m.label, m)


def run_replicate(cfg: SimStudyConfig, methods, fit_cfg, folds, rep, c0, curve_max_size,
                  rule="min"):
    rep_seed = int(np.random.SeedSequence([cfg.seed, rep]).generate_state(1)[0])
    train, beta0, strong, _ = gen_dataset(cfg, rep_seed, c0, cfg.n, STREAM_TRAIN)
    test, _, _, _ = gen_dataset(cfg, rep_seed, c0, cfg.test_n, STREAM_TEST)
    support = np.flatnonzero(beta0)
    out = {}
    for j, m in enumerate(methods):
        cv = kfold_cv(train, m.spec, fit_cfg, folds, seed=[rep_seed, STREAM_FOLDS, j],
                      sica_pilot=m.sica_pilot)
        path = fit_path(build_system(train), m.spec, fit_cfg, cv.lambdas, m.sica_pilot)
        k = select_index(cv, rule)
        if not path.fitted[k]:
            k = int(np.flatnonzero(path.fitted).max())
        beta = path.betas[k]
        out[m.name] = (eval_metrics(beta, beta0, strong, test),
                       selection_curve(path, support, curve_max_size), float(cv.lambdas[k]))
    if support.size:
        beta = oracle_fit(train, support)
        out["oracle"] = (eval_metrics(beta, beta0, strong, test), None, None)
    return out


def run_study(cfg: SimStudyConfig, methods, fit_cfg: FitConfig | None = None, folds=10,
              curve_max_size=None, threads=1, rule="min", per_replicate_c0=None) -> StudyReport:
    """Replicated study: CV-tuned fits per method plus the oracle estimator.

    ``c0`` is calibrated once from the unperturbed ``beta0`` unless
    ``per_replicate_c0`` is requested; it defaults to True only when weak
    effects are added, since those change ``beta0`` per replicate.
    """
    fit_cfg = fit_cfg or FitConfig()
    methods = [_as_method(m) for m in methods]
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ConfigError("method names must be unique")
    if curve_max_size is None:
        curve_max_size = min(cfg.p, 50)
    if per_replicate_c0 is None:
        per_replicate_c0 = cfg.weak_effect_count > 0
    c0 = None if per_replicate_c0 else calibrate_censoring(cfg)
    report = StudyReport(cfg, c0, names + ["oracle"], curve_max_size=curve_max_size)
    for name in report.methods:
        report.per_replicate[name] = [None] * cfg.replicates
        report.curves[name] = [None] * cfg.replicates
        report.selected_lambdas[name] = [None] * cfg.replicates

    def job(rep):
        try:
            return rep, run_replicate(cfg, methods, fit_cfg, folds, rep, c0, curve_max_size, rule), None
        except Exception as exc:  # recorded, the study carries on
            log.warning("replicate %d failed: %s", rep, exc)
            return rep, None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(job, range(cfg.replicates)))
    else:
        results = [job(r) for r in range(cfg.replicates)]
    for rep, res, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            report.failures.append({"replicate": rep, "error": err})
            continue
        for name, (metrics, curve, lam) in res.items():
            report.per_replicate[name][rep] = metrics
            report.curves[name][rep] = curve
            report.selected_lambdas[name][rep] = lam
    return report


REPORT_FORMAT_VERSION = 1


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def report_document(report: StudyReport, methods_meta=None) -> dict:
    cfg = report.config
    header = asdict(cfg)
    header["beta0"] = [float(x) for x in cfg.beta0]
    table = []
    for name in report.methods:
        row = {"method": name}
        for metric in METRIC_NAMES:
            row[metric] = {"mean": _num(report.mean(name, metric)), "sd": _num(report.sd(name, metric))}
        table.append(row)
    per_rep = {
        name: [None if m is None else asdict(m) for m in report.per_replicate[name]]
        for name in report.methods
    }
    curves = {
        name: {
            "mean": [float(x) for x in report.mean_curve(name)],
            "replicates": [None if c is None else [float(x) for x in c] for c in report.curves[name]],
        }
        for name in report.methods if name != "oracle"
    }
    doc = {
        "version": REPORT_FORMAT_VERSION,
        "kind": "simulation_study",
        "master_seed": cfg.seed,
        "config": header,
        "c0": None if report.c0 is None else float(report.c0),
        "table": table,
        "per_replicate": per_rep,
        "selected_lambdas": report.selected_lambdas,
        "selection_curves": {"model_sizes": list(range(1, report.curve_max_size + 1)), **curves},
        "failures": report.failures,
    }
    if methods_meta is not None:
        doc["methods"] = methods_meta
    return doc
