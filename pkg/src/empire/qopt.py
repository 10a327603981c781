"""Error estimates and confidence regions for optimal Q-function estimation.

Only the diagonal of ``Cov(T(Q*))`` is estimated.  The unknown optimal-policy
resolvent is replaced by the conservative factor ``1/(1-g)``; the exact
functional over the optimal-policy set is available as a brute-force oracle
for small MDPs.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .pe import ErrorEstimate, InsufficientSamplesError, exact_bellman_variance
from .sampling import Dataset, RewardModel, batch_bellman
from .solvers import SolverGuarantee
from .tabular import Mdp, bfun, policy_q_kernel, reduce_to_mrp, solve_value_exact

QErrorEstimate = ErrorEstimate


@dataclass(frozen=True)
class QDiagCov:
    """Diagonal of the covariance estimate, flattened row-major over ``(x, u)``."""

    diag: np.ndarray

    @property
    def max(self) -> float:
        return float(np.max(self.diag))


def q_diag_cov(q_hat, data: Dataset, discount: float) -> QDiagCov:
    """Per-pair V-statistic ``sum_{i<j} (T_i(q)(x,u) - T_j(q)(x,u))^2 / (n(n-1))``.

    Computed as the unbiased sample variance of ``T_i(q)(x,u)`` over draws.
    """
    n = len(data)
    if n < 2:
        raise ValueError("the V-statistic needs at least two samples")
    t = batch_bellman(data, q_hat, discount)
    var = t.var(axis=0, ddof=1)
    return QDiagCov(np.maximum(var, 0.0).ravel())


def q_min_samples(guarantee: SolverGuarantee, delta: float, dims: int, discount: float) -> float:
    return guarantee.phi_fast(delta) ** 2 * 32 * math.log(4 * dims / delta) / (1 - discount) ** 2


def q_error_terms(
    complexity: float, q_hat, n: int, delta: float, guarantee: SolverGuarantee, reward_bound: float, discount: float
) -> ErrorEstimate:
    """Error terms from ``complexity = max-diag^{1/2}`` of the covariance estimate."""
    dims = np.asarray(q_hat).size
    phi_f = guarantee.phi_fast(delta)
    leading = 2 * math.sqrt(2) * phi_f / math.sqrt(n) * complexity / (1 - discount)
    slow = 2 * guarantee.phi_slow(delta) / n
    bern = (
        8 * bfun(q_hat, reward_bound, discount) / (1 - discount)
        * phi_f * math.sqrt(2 * math.log(dims / delta)) / (n - 1)
    )
    return ErrorEstimate(leading + slow + bern, leading, slow, bern, delta, n, complexity)


def q_error_estimate(
    q_hat,
    data: Dataset,
    delta: float,
    guarantee: SolverGuarantee,
    reward_bound: float,
    discount: float,
    force: bool = False,
) -> ErrorEstimate:
    """Empirical l_inf error bound for ``q_hat``; the same data feeds the estimate and the covariance."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    n = len(data)
    dims = data.num_states * data.num_actions
    need = q_min_samples(guarantee, delta, dims, discount)
    if n < need:
        msg = f"dataset has {n} samples; the coverage guarantee needs {math.ceil(need)}"
        if not force:
            raise InsufficientSamplesError(msg)
        warnings.warn(msg, stacklevel=2)
    cov = q_diag_cov(q_hat, data, discount)
    return q_error_terms(math.sqrt(cov.max), q_hat, n, delta, guarantee, reward_bound, discount)


def q_conservative_bound(diag, discount: float) -> float:
    """``max-diag^{1/2} / (1 - g)``, an upper bound on the optimal-policy functional."""
    d = diag.diag if isinstance(diag, QDiagCov) else np.asarray(diag, dtype=float)
    if np.any(d < 0):
        raise ValueError("variances must be non-negative")
    return math.sqrt(float(np.max(d))) / (1 - discount)


def q_confidence_region(q_hat, err: ErrorEstimate) -> np.ndarray:
    """Per-pair intervals, shape ``q_hat.shape + (2,)``."""
    if not math.isfinite(err.total):
        raise ValueError("error estimate is not finite")
    q = np.asarray(q_hat, dtype=float)
    return np.stack([q - err.total, q + err.total], axis=-1)


def exact_q_diag(mdp: Mdp, reward_model: RewardModel, q=None) -> np.ndarray:
    """Exact ``Var(T(q)(x,u))`` for every pair (default ``q = Q*``), flattened row-major."""
    if q is None:
        q = exact_optimal_q(mdp)
    v = np.asarray(q, dtype=float).max(axis=1)
    kernel = np.transpose(mdp.transitions, (1, 0, 2))  # (S, A, S')
    return exact_bellman_variance(kernel, v, mdp.discount, reward_model).ravel()


def _all_policies(mdp: Mdp, max_policies: int):
    count = mdp.num_actions**mdp.num_states
    if count > max_policies:
        raise ValueError(f"{count} deterministic policies exceed the enumeration budget {max_policies}")
    return [np.array(p, dtype=np.int64) for p in itertools.product(range(mdp.num_actions), repeat=mdp.num_states)]


def optimal_policies(mdp: Mdp, tol: float = 1e-9, max_policies: int = 10**4):
    """All deterministic policies whose value is within ``tol/(1-g)`` of the optimum.

    Returns ``(policies, v_star)`` with ``v_star`` the elementwise best policy value.
    """
    policies = _all_policies(mdp, max_policies)
    values = np.array([solve_value_exact(reduce_to_mrp(mdp, p)) for p in policies])
    v_star = values.max(axis=0)
    gap = np.max(v_star[None, :] - values, axis=1)
    opt = [p for p, g in zip(policies, gap) if g <= tol / (1 - mdp.discount)]
    return opt, v_star


def exact_optimal_q(mdp: Mdp, tol: float = 1e-9, max_policies: int = 10**4) -> np.ndarray:
    """``Q* = r + g P V*`` with ``V*`` from exact policy enumeration."""
    _, v_star = optimal_policies(mdp, tol, max_policies)
    return mdp.reward + mdp.discount * (mdp.transitions @ v_star).T


def exact_q_complexity(
    mdp: Mdp, reward_model: RewardModel, tol: float = 1e-9, max_policies: int = 10**4
) -> float:
    """Max over optimal policies of ``||(I-gP^pi)^{-1} Cov(T(Q*)) (I-gP^pi)^{-T}||_diag^{1/2}``."""
    opt, v_star = optimal_policies(mdp, tol, max_policies)
    q_star = mdp.reward + mdp.discount * (mdp.transitions @ v_star).T
    sigma = exact_q_diag(mdp, reward_model, q_star)
    eye = np.eye(mdp.dims)
    best = 0.0
    for pi in opt:
        a = np.linalg.inv(eye - mdp.discount * policy_q_kernel(mdp, pi))
        # Cov(T(Q*)) is diagonal: pairs are sampled independently
        best = max(best, float(np.max((a**2) @ sigma)))
    return math.sqrt(best)
