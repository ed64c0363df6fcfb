"""Growth bounds learned from cell samples by a scenario linear program.

The candidate bound is ``kappa(r) = theta1 @ r + theta2``.  Every ordered pair
of samples in a cell (including a sample with itself) demands

    theta1[j] @ |x_l - x_m| + theta2[j] >= |x'_l - x'_m|_j + rho[j],

so the program splits into one small covering LP per output component.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .sysmodel import SubsystemDataset, subgrid_count

log = logging.getLogger(__name__)

DEFAULT_THETA_MAX = 1e6


class ScpInfeasibleError(RuntimeError):
    """The scenario program has no solution inside the parameter box."""

    def __init__(self, component: int, key=None, theta_max=None):
        self.component = component
        self.key = key
        where = f" at cell {key}" if key is not None else ""
        super().__init__(
            f"growth-bound LP infeasible for output component {component}{where} "
            f"within theta_max={theta_max}; try a larger theta_max"
        )


@dataclass(frozen=True)
class ScpMargin:
    rho: np.ndarray
    eta_hat_x: np.ndarray
    lipschitz: tuple[float, float]


@dataclass(frozen=True)
class GrowthBoundParams:
    theta1: np.ndarray
    theta2: np.ndarray
    key: tuple | None = None

    def __post_init__(self):
        if np.any(self.theta1 < 0) or np.any(self.theta2 < 0):
            raise ValueError("growth-bound parameters must be nonnegative")

    @property
    def objective(self) -> float:
        return float(self.theta1.sum() + self.theta2.sum())


def compute_margin(L_x: float, L_w: float, eta_x, eta_w, n_c: int) -> ScpMargin:
    """``rho = 2 L_x eta_hat + L_w |eta_w|_inf`` with ``eta_hat = eta_x / m``."""
    if L_x < 0 or L_w < 0:
        raise ValueError("Lipschitz constants must be nonnegative")
    eta_x = np.atleast_1d(np.asarray(eta_x, dtype=float))
    eta_w = np.atleast_1d(np.asarray(eta_w, dtype=float))
    m = subgrid_count(n_c, eta_x.size)
    eta_hat = eta_x / m
    rho = 2.0 * L_x * eta_hat + L_w * np.max(np.abs(eta_w))
    return ScpMargin(rho, eta_hat, (float(L_x), float(L_w)))


def eval_growth_bound(params: GrowthBoundParams, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("growth bound argument must be nonnegative")
    return params.theta1 @ r + params.theta2


def merge_duplicates(A: np.ndarray, b: np.ndarray, decimals: int = 12):
    """Collapse rows of ``A`` equal up to rounding into one constraint.

    The merged row takes the smallest coefficients and the largest demand of
    its group, which implies every original row of the group.
    """
    keys = np.round(A, decimals)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    k = inv.max() + 1
    Am = np.full((k, A.shape[1]), np.inf)
    np.minimum.at(Am, inv, A)
    bm = np.full(k, -np.inf)
    np.maximum.at(bm, inv, b)
    return Am, bm


def pareto_prune(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Indices of covering constraints not implied by another one.

    With ``theta >= 0``, row ``q`` implies row ``p`` when ``A[q] <= A[p]``
    and ``b[q] >= b[p]``.  Duplicated rows keep the first occurrence.
    """
    order = np.lexsort((A.sum(axis=1), -b))
    keep = np.empty(len(order), dtype=np.int64)
    nk = 0
    for p in order:
        if nk:
            kq = keep[:nk]
            if np.any((b[kq] >= b[p]) & np.all(A[kq] <= A[p], axis=1)):
                continue
        keep[nk] = p
        nk += 1
    return np.sort(keep[:nk])


def scp_constraints(x: np.ndarray, x_next: np.ndarray):
    """Pair distances ``|x_l - x_m|`` and demands ``|x'_l - x'_m|`` for l < m.

    The diagonal pair contributes the single row ``(0, ..., 0)`` with demand 0.
    """
    n, d = x.shape
    i, j = np.triu_indices(n, k=1)
    dx = np.abs(x[i] - x[j])
    dy = np.abs(x_next[i] - x_next[j])
    dx = np.vstack([np.zeros((1, d)), dx])
    dy = np.vstack([np.zeros((1, x_next.shape[1])), dy])
    return dx, dy


def solve_scp_rows(dx, dy, rho, theta_max, key=None, tol=1e-10):
    """Solve the per-component LPs for one cell, given pair data."""
    dim = dy.shape[1]
    n_in = dx.shape[1]
    ub = np.broadcast_to(np.asarray(theta_max, dtype=float), (dim, n_in + 1))
    theta1 = np.zeros((dim, n_in))
    theta2 = np.zeros(dim)
    for j in range(dim):
        A, b = merge_duplicates(dx, dy[:, j] + rho[j])
        A = np.hstack([A, np.ones((len(A), 1))])
        keep = pareto_prune(A, b)
        th, st = kernels.lexmin_cover(A[keep], b[keep], np.ascontiguousarray(ub[j]), tol)
        if st != kernels.LP_OK:
            raise ScpInfeasibleError(j, key, theta_max)
        # absorb the solver tolerance so every sampled pair holds exactly
        viol = np.max(b - A @ th)
        if viol > 0:
            th[n_in] += viol
        theta1[j] = th[:n_in]
        theta2[j] = th[n_in]
    return GrowthBoundParams(theta1, theta2, key)


def solve_scp(data: SubsystemDataset, margin: ScpMargin, theta_max=DEFAULT_THETA_MAX, key=None):
    """Growth-bound parameters minimizing ``sum(theta)`` for one cell.

    Ties among optimal solutions go to the smallest ``theta2``.
    """
    if len(data) < 1:
        raise ValueError("need at least one record")
    if len(np.unique(data.u, axis=0)) > 1 or len(np.unique(data.w, axis=0)) > 1:
        raise ValueError("all records of a cell must share the inputs")
    dx, dy = scp_constraints(data.x, data.x_next)
    rho = np.broadcast_to(margin.rho, (data.x_next.shape[1],))
    return solve_scp_rows(dx, dy, rho, theta_max, key)


def lemma_check(params: GrowthBoundParams, L_x: float) -> bool:
    """Diagnostic: does ``|theta1|_inf`` stay below the Lipschitz constant?"""
    norm = float(np.max(np.abs(params.theta1).sum(axis=1))) if params.theta1.size else 0.0
    if norm > L_x + 1e-9:
        log.debug("theta1 norm %.6g exceeds L_x %.6g at %s", norm, L_x, params.key)
        return False
    return True


def subgrid_lag_maxima(xn: np.ndarray) -> np.ndarray:
    """Largest output gap per lag for batches of scalar sub-grid samples.

    ``xn`` has shape ``(n_cells, m)`` with samples ordered along the sub-grid;
    entry ``[c, k]`` of the result is ``max_l |xn[c, l + k] - xn[c, l]|``.
    """
    nc, m = xn.shape
    out = np.zeros((nc, m))
    for k in range(1, m):
        out[:, k] = np.max(np.abs(xn[:, k:] - xn[:, :-k]), axis=1)
    return out


def solve_scp_batch_1d(xn, spacing, rho, theta_max=DEFAULT_THETA_MAX, keys=None):
    """Vectorized SCP for scalar cells sampled on regular sub-grids.

    Equivalent to :func:`solve_scp` on each row of ``xn`` (same constraints
    after exact pruning), but with the LPs run in the compiled kernel.
    Returns ``(theta1, theta2)`` of shapes ``(n_cells,)``.
    """
    lag = subgrid_lag_maxima(np.asarray(xn, dtype=float))
    ub = np.broadcast_to(np.asarray(theta_max, dtype=float).ravel(), (2,)).copy()
    theta, status = kernels.scp_batch_1d(lag, spacing, rho, ub)
    bad = np.flatnonzero(status != kernels.LP_OK)
    if bad.size:
        key = None if keys is None else keys[bad[0]]
        raise ScpInfeasibleError(0, key, theta_max)
    return theta[:, 0], theta[:, 1]


__all__ = [
    "DEFAULT_THETA_MAX",
    "GrowthBoundParams",
    "ScpInfeasibleError",
    "ScpMargin",
    "compute_margin",
    "eval_growth_bound",
    "lemma_check",
    "merge_duplicates",
    "pareto_prune",
    "scp_constraints",
    "solve_scp",
    "solve_scp_batch_1d",
    "solve_scp_rows",
    "subgrid_count",
    "subgrid_lag_maxima",
]
