"""Lin-Ying pseudoscore system for the additive hazards model.

For time-fixed covariates the at-risk indicators and the risk-set mean
covariate are step functions with jumps only at observed times, so the
integrals defining ``V``, ``b`` and ``W`` reduce to finite sums over the
distinct observed times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .survdata import SurvivalDataset


@dataclass(frozen=True)
class PseudoscoreSystem:
    """Quadratic summary ``(V, b, W, tau)`` of a survival dataset.

    The pseudoscore is ``U(beta) = b - V beta`` and the loss is
    ``0.5 beta' V beta - b' beta``.
    """

    v_matrix: np.ndarray
    b_vector: np.ndarray
    w_matrix: np.ndarray | None = None
    tau: float = float("nan")
    n: int = 0

    def __post_init__(self):
        v = np.array(self.v_matrix, dtype=float)
        b = np.array(self.b_vector, dtype=float).reshape(-1)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] != b.shape[0]:
            raise ValueError(f"incompatible shapes V{v.shape}, b{b.shape}")
        w = np.zeros_like(v) if self.w_matrix is None else np.array(self.w_matrix, dtype=float)
        for arr in (v, b, w):
            arr.flags.writeable = False
        object.__setattr__(self, "v_matrix", v)
        object.__setattr__(self, "b_vector", b)
        object.__setattr__(self, "w_matrix", w)

    @property
    def p(self) -> int:
        return self.b_vector.shape[0]

    @property
    def diag_weights(self) -> np.ndarray:
        return np.diag(self.v_matrix).copy()


def _risk_set_sums(times, z):
    """Distinct times and risk-set counts/sums over ``{i : X_i >= t_k}``.

    Returns ``(t, s0, s1, index)`` where ``index[i]`` maps row ``i`` to the
    position of ``X_i`` in ``t``.
    """
    t, index = np.unique(times, return_inverse=True)
    m, p = t.shape[0], z.shape[1]
    count = np.bincount(index, minlength=m).astype(float)
    zsum = np.zeros((m, p))
    np.add.at(zsum, index, z)
    # reverse cumulative sums: risk set at t_k is everyone with X_i >= t_k
    s0 = np.cumsum(count[::-1])[::-1]
    s1 = np.cumsum(zsum[::-1], axis=0)[::-1]
    return t, s0, s1, index


def build_system(ds: SurvivalDataset) -> PseudoscoreSystem:
    """Build ``V``, ``b`` and ``W`` from a dataset in O(n log n + n p^2)."""
    return system_from_arrays(ds.times, ds.status, ds.covariates)


def system_from_arrays(times, status, covariates) -> PseudoscoreSystem:
    """Same as :func:`build_system` without the dataset invariants.

    Used for held-out folds, which may legitimately contain no failures
    (then ``b = 0``).
    """
    times = np.asarray(times, dtype=float)
    status = np.asarray(status)
    covariates = np.asarray(covariates, dtype=float)
    n = times.shape[0]
    if n == 0:
        raise ValueError("empty sample")
    # V, b, W only depend on Z_i - Zbar(t); centering first limits cancellation
    z = covariates - covariates.mean(axis=0)
    t, s0, s1, index = _risk_set_sums(times, z)
    dt = np.diff(t, prepend=0.0)

    # sum_k dt_k S2_k collapses to sum_i X_i Z_i Z_i'
    first = (z * times[:, None]).T @ z
    scaled = s1 * np.sqrt(dt / s0)[:, None]
    v = (first - scaled.T @ scaled) / n
    v = 0.5 * (v + v.T)

    events = status == 1
    zbar = s1 / s0[:, None]
    resid = z[events] - zbar[index[events]]
    b = resid.sum(axis=0) / n
    w = resid.T @ resid / n
    w = 0.5 * (w + w.T)
    return PseudoscoreSystem(v, b, w, float(times.max()), n)


def _check_beta(sys, beta):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (sys.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({sys.p},)")
    return beta


def loss(sys: PseudoscoreSystem, beta) -> float:
    """Least-squares-type loss ``0.5 beta' V beta - b' beta``."""
    beta = _check_beta(sys, beta)
    return float(0.5 * beta @ sys.v_matrix @ beta - sys.b_vector @ beta)


def score(sys: PseudoscoreSystem, beta) -> np.ndarray:
    """Pseudoscore ``b - V beta``, the negative gradient of :func:`loss`."""
    beta = _check_beta(sys, beta)
    return sys.b_vector - sys.v_matrix @ beta
