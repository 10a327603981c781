"""Data-dependent error estimates and confidence regions for policy evaluation.

The leading error term needs ``||(I - gP)^{-1} Cov(T(V*)) (I - gP)^{-T}||_diag``.
It is estimated by a V-statistic of the single-sample Bellman operator on the
main dataset, sandwiched between resolvents of two independent holdout
averages of the transition matrix.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .sampling import Dataset, RewardModel, batch_bellman
from .solvers import SolverGuarantee
from .tabular import Mrp, bfun, diag_norm, resolvent, solve_value_exact

V_STATISTIC = "v_statistic"
SANDWICH = "sandwich"
EXACT = "exact"


class InsufficientSamplesError(ValueError):
    """The sample-size precondition of the error bound is not met."""


@dataclass(frozen=True)
class PeDataSplit:
    """Main dataset plus two holdouts.

    ``holdout_right=None`` selects the experimental single-holdout mode, in which
    the left holdout average is used on both sides of the sandwich.
    """

    main: Dataset
    holdout_left: Dataset
    holdout_right: Dataset | None = None


@dataclass(frozen=True)
class CovEstimate:
    matrix: np.ndarray
    provenance: str


@dataclass(frozen=True)
class ErrorEstimate:
    total: float
    leading: float
    slow: float
    bernstein: float
    delta: float
    n: int
    complexity: float = float("nan")  # estimated diag-norm^{1/2} entering ``leading``


def holdout_size(num_states: int, delta: float, discount: float, log_factor: float = 8.0) -> int:
    """Size of each holdout set, ``2 * ceil(32 log(c |X|^2 / delta) / (1-g)^2)``."""
    return 2 * int(math.ceil(32.0 * math.log(log_factor * num_states**2 / delta) / (1.0 - discount) ** 2))


def holdout_means(split: PeDataSplit) -> tuple[np.ndarray, np.ndarray]:
    if len(split.holdout_left) == 0 or (split.holdout_right is not None and len(split.holdout_right) == 0):
        raise ValueError("empty holdout set")
    left = split.holdout_left.mean_transitions()[0]
    if split.holdout_right is None:
        return left, left
    return left, split.holdout_right.mean_transitions()[0]


def v_statistic_cov(v_hat, main: Dataset, discount: float) -> CovEstimate:
    """Pairwise-difference V-statistic of the single-sample Bellman operator.

    ``sum_{j<k} w_jk w_jk^T / (n(n-1))`` with ``w_jk = T_j(v) - T_k(v)``
    equals the unbiased sample covariance of ``T_j(v)``; it is computed in one
    centred pass rather than over pairs.
    """
    n = len(main)
    if n < 2:
        raise ValueError("the V-statistic needs at least two samples")
    z = batch_bellman(main, v_hat, discount)[:, :, 0]
    d = z - z.mean(axis=0)
    cov = d.T @ d / (n - 1)
    return CovEstimate(0.5 * (cov + cov.T), V_STATISTIC)


def resolvent_sandwich(matrix, p_left, p_right, discount: float) -> np.ndarray:
    """``(I - g P_left)^{-1} M (I - g P_right)^{-T}``."""
    s = matrix.shape[0]
    left = np.linalg.solve(np.eye(s) - discount * np.asarray(p_left), matrix)
    return np.linalg.solve(np.eye(s) - discount * np.asarray(p_right), left.T).T


def sandwich_estimate(cov: CovEstimate, z_left, z_right, discount: float) -> CovEstimate:
    return CovEstimate(resolvent_sandwich(cov.matrix, z_left, z_right, discount), SANDWICH)


def pe_min_samples(guarantee: SolverGuarantee, delta: float, num_states: int, discount: float) -> float:
    """Main-set size required by the coverage guarantee."""
    return guarantee.phi_fast(delta) ** 2 * 24 * 8 * math.log(8 * num_states**2 / delta) / (1 - discount) ** 2


def pe_error_terms(
    complexity: float,
    v_hat,
    n: int,
    delta: float,
    guarantee: SolverGuarantee,
    reward_bound: float,
    discount: float,
) -> ErrorEstimate:
    """Assemble the three error terms from an estimated complexity ``diag-norm^{1/2}``."""
    s = np.asarray(v_hat).shape[0]
    leading = 2 * math.sqrt(6) * guarantee.phi_fast(delta) / math.sqrt(n) * complexity
    slow = 2 * guarantee.phi_slow(delta) / n
    bern = 6 * bfun(v_hat, reward_bound, discount) / (1 - discount) * math.sqrt(math.log(8 * s / delta)) / (n - 1)
    return ErrorEstimate(leading + slow + bern, leading, slow, bern, delta, n, complexity)


def pe_error_estimate(
    v_hat,
    split: PeDataSplit,
    delta: float,
    guarantee: SolverGuarantee,
    reward_bound: float,
    discount: float,
    force: bool = False,
) -> ErrorEstimate:
    """Empirical l_inf error bound for ``v_hat`` computed from ``split.main``.

    Raises :class:`InsufficientSamplesError` when the main set is smaller than
    the coverage precondition, unless ``force`` is set (then only warns).
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    n = len(split.main)
    s = split.main.num_states
    need = pe_min_samples(guarantee, delta, s, discount)
    if n < need:
        msg = f"main set has {n} samples; the coverage guarantee needs {math.ceil(need)}"
        if not force:
            raise InsufficientSamplesError(msg)
        warnings.warn(msg, stacklevel=2)
    if split.holdout_right is None:
        warnings.warn("single-holdout covariance estimate is experimental", stacklevel=2)
    z1, z2 = holdout_means(split)
    sigma = sandwich_estimate(v_statistic_cov(v_hat, split.main, discount), z1, z2, discount)
    complexity = math.sqrt(diag_norm(sigma.matrix))
    return pe_error_terms(complexity, v_hat, n, delta, guarantee, reward_bound, discount)


def pe_confidence_region(v_hat, err: ErrorEstimate) -> np.ndarray:
    """Per-state intervals ``[v(x) - E, v(x) + E]`` as an ``(S, 2)`` array."""
    if not math.isfinite(err.total):
        raise ValueError("error estimate is not finite")
    v = np.asarray(v_hat, dtype=float)
    return np.stack([v - err.total, v + err.total], axis=-1)


def exact_bellman_variance(kernel, values, discount: float, reward_model: RewardModel) -> np.ndarray:
    """Per-row variance of ``R + g * values[next]`` by enumerating next-state outcomes.

    ``kernel`` has rows summing to one along its last axis; the output drops
    that axis.  Rows are sampled independently, so these are the only non-zero
    covariance entries.
    """
    kernel = np.asarray(kernel, dtype=float)
    values = np.asarray(values, dtype=float)
    mean = kernel @ values
    second = kernel @ values**2
    return reward_model.noise_variance + discount**2 * np.maximum(second - mean**2, 0.0)


def exact_pe_cov(mrp: Mrp, reward_model: RewardModel, v=None) -> CovEstimate:
    """Exact ``Cov(T(v))`` of the single-sample operator (default ``v = V*``)."""
    v = solve_value_exact(mrp) if v is None else np.asarray(v, dtype=float)
    return CovEstimate(np.diag(exact_bellman_variance(mrp.transition, v, mrp.discount, reward_model)), EXACT)


def exact_pe_complexity(mrp: Mrp, reward_model: RewardModel) -> float:
    """Population functional ``||(I-gP)^{-1} Cov(T(V*)) (I-gP)^{-T}||_diag^{1/2}``."""
    r = resolvent(mrp.transition, mrp.discount)
    sigma = exact_pe_cov(mrp, reward_model).matrix
    return math.sqrt(diag_norm(r @ sigma @ r.T))


def bernstein_radius(n: int, delta: float) -> float:
    """Deviation radius ``sqrt(2 log(1/delta)/(n-1))`` of the empirical standard deviation."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    return math.sqrt(2 * math.log(1 / delta) / (n - 1))
