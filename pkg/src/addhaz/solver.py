"""Cyclic coordinate descent on the V_jj-weighted penalized pseudoscore loss.

The objective minimised at a fixed ``lam`` is::

    Q(beta) = 0.5 beta' V beta - b' beta + sum_j V_jj p_lam(|beta_j|)

Because the penalty on coordinate ``j`` carries the weight ``V_jj``, the
coordinate subproblem is ``V_jj`` times a unit-weight thresholding problem
at ``r_j / V_jj`` with ``r_j = b_j - sum_{k != j} V_jk beta_k``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import penalties as pen
from .penalties import PenaltyKind, PenaltySpec, max_concavity
from .pseudoscore import PseudoscoreSystem

DESCENT_SLACK = 1e-12
_REFRESH_EVERY = 50
_FREEZE_RTOL = 1e-12


@dataclass(frozen=True)
class FitConfig:
    tol: float = 1e-7
    max_sweeps: int = 10_000
    max_active: int | None = None
    grid_size: int = 100
    grid_ratio: float = 1e-3
    check_convexity: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if self.grid_size < 1:
            raise ValueError("grid_size must be at least 1")
        if not 0 < self.grid_ratio < 1:
            raise ValueError("grid_ratio must lie in (0, 1)")
        if self.max_active is not None and self.max_active < 0:
            raise ValueError("max_active must be nonnegative")


@dataclass
class CDDiagnostics:
    sweeps: int
    converged: bool
    objective: float
    descent_guaranteed: bool
    objective_history: np.ndarray
    descent_violations: int
    frozen: tuple[int, ...] = ()
    frozen_warning: bool = False


class DescentMonitor:
    """Process-wide tally of per-sweep objective increases.

    Only fits whose penalty has maximum concavity below one are counted,
    since that is the regime where descent is guaranteed.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.reset()

    def reset(self):
        self.fits = 0
        self.sweeps = 0
        self.violations = 0
        self.worst_increase = 0.0

    def record(self, history, violations):
        with self._lock:
            self.fits += 1
            self.sweeps += len(history)
            self.violations += violations
            if len(history) > 1:
                inc = float(np.max(np.diff(history), initial=0.0))
                self.worst_increase = max(self.worst_increase, inc)


descent_monitor = DescentMonitor()


@njit(cache=True)
def _objective(beta, vb, b, diag, code, a, alpha, lam):
    quad = 0.0
    for j in range(beta.shape[0]):
        quad += beta[j] * (0.5 * vb[j] - b[j])
    return quad + pen._weighted_penalty(code, a, alpha, beta, diag, lam)


@njit(cache=True, nogil=True)
def _cd_kernel(v, b, diag, eligible, code, a, alpha, lam, beta, tol, max_sweeps, history):
    """Run coordinate descent in place; returns (sweeps, converged, violations)."""
    p = beta.shape[0]
    vb = v @ beta
    prev = _objective(beta, vb, b, diag, code, a, alpha, lam)
    sweeps = 0
    full_sweeps = 0
    violations = 0
    converged = False
    active_phase = False
    while sweeps < max_sweeps:
        max_change = 0.0
        for j in range(p):
            if not eligible[j]:
                continue
            if active_phase and beta[j] == 0.0:
                continue
            old = beta[j]
            r = b[j] - vb[j] + diag[j] * old
            new = pen._prox(code, a, alpha, r / diag[j], lam)
            if new != old:
                delta = new - old
                beta[j] = new
                # V is symmetric: row j is contiguous, column j is strided
                for k in range(p):
                    vb[k] += v[j, k] * delta
                if abs(delta) > max_change:
                    max_change = abs(delta)
        sweeps += 1
        if sweeps % _REFRESH_EVERY == 0:
            vb = v @ beta
        obj = _objective(beta, vb, b, diag, code, a, alpha, lam)
        history[sweeps - 1] = obj
        if obj > prev + DESCENT_SLACK:
            violations += 1
        prev = obj
        if active_phase:
            if max_change < tol:
                active_phase = False
        else:
            full_sweeps += 1
            if max_change < tol:
                converged = True
                break
            if full_sweeps >= 2:
                active_phase = True
    return sweeps, converged, violations


def _eligible(sys):
    diag = sys.diag_weights
    scale = diag.max(initial=0.0)
    return diag > _FREEZE_RTOL * scale if scale > 0 else np.zeros(diag.shape, dtype=bool)


def weighted_objective(sys: PseudoscoreSystem, spec: PenaltySpec, beta, lam) -> float:
    """``Q(beta; lam)`` with V_jj-weighted penalty, recomputed from scratch."""
    beta = np.asarray(beta, dtype=float)
    vb = sys.v_matrix @ beta
    return float(0.5 * beta @ vb - sys.b_vector @ beta
                 + pen.weighted_penalty(spec, beta, sys.diag_weights, lam))


def coordinate_descent(sys: PseudoscoreSystem, spec: PenaltySpec, lam, warm_start=None,
                       cfg: FitConfig | None = None):
    """Minimise the weighted objective at a single ``lam``.

    Coordinates with ``V_jj == 0`` are never updated; they keep their
    warm-start value and, if that value is nonzero, ``frozen_warning`` is set.

    Returns
    -------
    beta : ndarray
    diagnostics : CDDiagnostics
    """
    cfg = cfg or FitConfig()
    if lam < 0 or not math.isfinite(lam):
        raise ValueError("lambda must be finite and nonnegative")
    p = sys.p
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    if beta.shape != (p,) or not np.isfinite(beta).all():
        raise ValueError("warm_start must be a finite vector of length p")
    eligible = _eligible(sys)
    frozen = tuple(int(j) for j in np.flatnonzero(~eligible))
    frozen_warning = bool(np.any(beta[~eligible] != 0))
    code, a, alpha = spec.params
    history = np.empty(cfg.max_sweeps)
    diag = sys.diag_weights
    # kernel divides by diag only on eligible coordinates
    sweeps, converged, violations = _cd_kernel(
        sys.v_matrix, sys.b_vector, diag, eligible, code, a, alpha, float(lam),
        beta, float(cfg.tol), int(cfg.max_sweeps), history)
    history = history[:sweeps].copy()
    descent_guaranteed = max_concavity(spec, lam) < 1
    if descent_guaranteed:
        descent_monitor.record(history, violations)
    diag_out = CDDiagnostics(
        sweeps=int(sweeps), converged=bool(converged),
        objective=weighted_objective(sys, spec, beta, lam), descent_guaranteed=descent_guaranteed,
        objective_history=history, descent_violations=int(violations),
        frozen=frozen, frozen_warning=frozen_warning)
    return beta, diag_out


def lambda_max(sys: PseudoscoreSystem, spec: PenaltySpec | None = None) -> float:
    """Smallest grid start at which zero solves the weighted problem.

    Without ``spec`` this is ``max_j |b_j| / V_jj`` over coordinates with
    ``V_jj > 0``. With a spec the value is adjusted so that zero is the
    coordinatewise *global* minimiser: the elastic net needs the L1 share
    ``alpha`` factored out, and SICA with a large ``|b_j| / V_jj`` relative to
    ``a`` can otherwise prefer a nonzero coordinate.
    """
    eligible = _eligible(sys)
    if not eligible.any():
        raise ValueError("degenerate system: every V_jj is zero")
    z = np.abs(sys.b_vector[eligible]) / sys.diag_weights[eligible]
    zmax = float(z.max())
    if spec is None or zmax == 0.0:
        return zmax
    if spec.kind is PenaltyKind.ENET:
        return zmax / spec.enet_alpha
    if spec.kind is PenaltyKind.SICA:
        a = spec.shape_a
        # zero is the global minimiser at |z| iff |z| <= min_t {t/2 + lam (a+1)/(a+t)}
        if zmax < a / 2:
            need = zmax * a / (a + 1)
        else:
            need = (zmax + a / 2) ** 2 / (2 * (a + 1))
        return max(zmax, need)
    return zmax


def lambda_grid(lmax, size, ratio) -> np.ndarray:
    if size == 1:
        return np.array([lmax])
    return lmax * ratio ** (np.arange(size) / (size - 1))


def restricted_convexity_check(sys: PseudoscoreSystem, spec: PenaltySpec, lam, active) -> bool:
    """True when ``min eig(V_SS) >= kappa(p_lam) * max_{j in S} V_jj``."""
    active = np.asarray(sorted(set(int(j) for j in active)), dtype=int)
    if active.size == 0:
        raise ValueError("active set must be nonempty")
    kappa = max_concavity(spec, lam)
    if kappa <= 0:
        return True
    sub = sys.v_matrix[np.ix_(active, active)]
    lam_min = np.linalg.eigvalsh(sub)[0]
    return bool(lam_min >= kappa * sub.diagonal().max())


@dataclass
class SolutionPath:
    lambdas: np.ndarray
    betas: np.ndarray
    objective_values: np.ndarray
    sweeps_used: np.ndarray
    converged_flags: np.ndarray
    convexity_warnings: np.ndarray
    descent_flags: np.ndarray
    fitted: np.ndarray
    spec: PenaltySpec
    previous_stage: "SolutionPath | None" = field(default=None, repr=False)

    def __len__(self):
        return self.lambdas.shape[0]

    @property
    def nnz(self) -> np.ndarray:
        out = np.count_nonzero(np.nan_to_num(self.betas, nan=0.0), axis=1)
        out[~self.fitted] = -1
        return out

    @property
    def stages(self) -> list[PenaltySpec]:
        chain, node = [], self
        while node is not None:
            chain.append(node.spec)
            node = node.previous_stage
        return chain[::-1]


def _run_path(sys, spec, cfg, lambdas, starts):
    """Fit every grid point; ``starts`` gives a warm start per point or None
    to chain warm starts along the path."""
    K, p = lambdas.shape[0], sys.p
    betas = np.full((K, p), np.nan)
    obj = np.full(K, np.nan)
    sweeps = np.zeros(K, dtype=int)
    conv = np.zeros(K, dtype=bool)
    warn = np.zeros(K, dtype=bool)
    thm3 = np.array([max_concavity(spec, lam) < 1 for lam in lambdas])
    fitted = np.zeros(K, dtype=bool)
    beta = np.zeros(p)
    for k, lam in enumerate(lambdas):
        if starts is None:
            beta, d = coordinate_descent(sys, spec, lam, beta, cfg)
        else:
            if starts[k] is None:
                break
            # refit from the previous stage, from this stage's previous lambda
            # and from zero; keep the lowest objective (earliest on ties)
            beta, d = coordinate_descent(sys, spec, lam, starts[k], cfg)
            others = [np.zeros(p)] if k == 0 else [betas[k - 1], np.zeros(p)]
            for start in others:
                alt, d_alt = coordinate_descent(sys, spec, lam, start, cfg)
                if d_alt.objective < d.objective:
                    beta, d = alt, d_alt
        betas[k] = beta
        obj[k] = d.objective
        sweeps[k] = d.sweeps
        conv[k] = d.converged
        fitted[k] = True
        active = np.flatnonzero(beta)
        if cfg.check_convexity and active.size:
            warn[k] = not restricted_convexity_check(sys, spec, lam, active)
        if cfg.max_active is not None and active.size > cfg.max_active:
            break
    return SolutionPath(lambdas, betas, obj, sweeps, conv, warn, thm3, fitted, spec)


def _check_grid(cfg, lmax):
    lambdas = lambda_grid(lmax, cfg.grid_size, cfg.grid_ratio)
    if lmax == 0:
        # b = 0: zero is the solution for every lambda
        lambdas = np.array([0.0])
    return lambdas


def solve_path(sys: PseudoscoreSystem, spec: PenaltySpec, cfg: FitConfig | None = None,
               lambdas=None) -> SolutionPath:
    """Warm-started path over a geometric grid from ``lambda_max`` downwards."""
    cfg = cfg or FitConfig()
    if lambdas is None:
        lambdas = _check_grid(cfg, lambda_max(sys, spec))
    lambdas = np.asarray(lambdas, dtype=float)
    return _run_path(sys, spec, cfg, lambdas, None)


def solve_path_sica_staged(sys: PseudoscoreSystem, a_pilot, a_final, cfg: FitConfig | None = None,
                           lambdas=None) -> SolutionPath:
    """SICA path computed at ``a_pilot`` and refitted at each smaller ``a``.

    ``a_final`` may be a single value or a decreasing sequence. Each stage
    refits every grid point warm-started from the previous stage at the same
    lambda, and also from its own solution at the preceding lambda and from
    zero, keeping the lowest objective. The returned path is the last stage; earlier stages hang off
    ``previous_stage``.
    """
    cfg = cfg or FitConfig()
    finals = [float(a_final)] if np.ndim(a_final) == 0 else [float(x) for x in a_final]
    seq = [float(a_pilot)] + [x for x in finals]
    if any(not x > 0 for x in seq) or any(y > x for x, y in zip(seq, seq[1:])):
        raise ValueError("SICA stages need a_pilot >= a_final > 0, decreasing")
    seq = [x for i, x in enumerate(seq) if i == 0 or x != seq[i - 1]]
    specs = [PenaltySpec.sica(x) for x in seq]
    if lambdas is None:
        lambdas = _check_grid(cfg, max(lambda_max(sys, s) for s in specs))
    lambdas = np.asarray(lambdas, dtype=float)
    path = _run_path(sys, specs[0], cfg, lambdas, None)
    for s in specs[1:]:
        starts = [path.betas[k] if path.fitted[k] else None for k in range(len(lambdas))]
        nxt = _run_path(sys, s, cfg, lambdas, starts)
        nxt.previous_stage = path
        path = nxt
    return path


def fit_path(sys: PseudoscoreSystem, spec: PenaltySpec, cfg: FitConfig | None = None,
             lambdas=None, sica_pilot=1.0) -> SolutionPath:
    """Path for any penalty; SICA with ``a < sica_pilot`` is staged."""
    if spec.kind is PenaltyKind.SICA and sica_pilot is not None and spec.shape_a < sica_pilot:
        return solve_path_sica_staged(sys, sica_pilot, spec.shape_a, cfg, lambdas)
    return solve_path(sys, spec, cfg, lambdas)


PATH_FORMAT_VERSION = 1


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def path_document(path: SolutionPath, feature_names=None) -> dict:
    """JSON-ready description of a path: nonzero (index, value) pairs per lambda."""
    points = []
    for k in range(len(path)):
        entry = {"lambda": _num(path.lambdas[k]), "fitted": bool(path.fitted[k])}
        if path.fitted[k]:
            nz = np.flatnonzero(path.betas[k])
            entry.update({
                "nonzero": [[int(j), float(path.betas[k, j])] for j in nz],
                "objective": _num(path.objective_values[k]),
                "sweeps": int(path.sweeps_used[k]),
                "converged": bool(path.converged_flags[k]),
                "descent_guaranteed": bool(path.descent_flags[k]),
                "convexity_warning": bool(path.convexity_warnings[k]),
            })
        points.append(entry)
    doc = {
        "version": PATH_FORMAT_VERSION,
        "kind": "solution_path",
        "penalty": penalty_document(path.spec),
        "stages": [penalty_document(s) for s in path.stages],
        "p": int(path.betas.shape[1]),
        "points": points,
    }
    if feature_names is not None:
        doc["feature_names"] = list(feature_names)
    return doc


def penalty_document(spec: PenaltySpec) -> dict:
    doc = {"kind": spec.kind.value}
    if spec.kind in (PenaltyKind.SCAD, PenaltyKind.MCP, PenaltyKind.SICA):
        doc["a"] = spec.shape_a
    if spec.kind is PenaltyKind.ENET:
        doc["alpha"] = spec.enet_alpha
    return doc


def path_from_document(doc: dict) -> SolutionPath:
    """Rebuild a :class:`SolutionPath` (last stage only) from :func:`path_document`."""
    if doc.get("version") != PATH_FORMAT_VERSION:
        raise ValueError(f"unsupported path document version {doc.get('version')}")
    pd = doc["penalty"]
    spec = PenaltySpec(pd["kind"], pd.get("a", float("nan")), pd.get("alpha", 0.5))
    pts = doc["points"]
    K, p = len(pts), doc["p"]
    betas = np.full((K, p), np.nan)
    obj = np.full(K, np.nan)
    sweeps = np.zeros(K, dtype=int)
    conv = np.zeros(K, dtype=bool)
    warn = np.zeros(K, dtype=bool)
    thm3 = np.zeros(K, dtype=bool)
    fitted = np.array([pt["fitted"] for pt in pts], dtype=bool)
    for k, pt in enumerate(pts):
        if not pt["fitted"]:
            continue
        betas[k] = 0.0
        for j, val in pt["nonzero"]:
            betas[k, j] = val
        obj[k] = np.nan if pt["objective"] is None else pt["objective"]
        sweeps[k] = pt["sweeps"]
        conv[k] = pt["converged"]
        thm3[k] = pt["descent_guaranteed"]
        warn[k] = pt["convexity_warning"]
    lambdas = np.array([pt["lambda"] for pt in pts], dtype=float)
    return SolutionPath(lambdas, betas, obj, sweeps, conv, warn, thm3, fitted, spec)
