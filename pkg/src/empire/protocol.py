"""Dyadic-epoch early stopping for policy evaluation and Q-function estimation.

Each epoch halves the failure probability, grows the datasets by fresh
draws (earlier samples are kept), reruns the base solver and stops as soon
as the data-dependent error estimate falls below the target accuracy.  The
protocol only touches the sampler's public interface, never the model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .pe import ErrorEstimate, holdout_means, pe_error_terms, sandwich_estimate, v_statistic_cov, PeDataSplit
from .qopt import q_diag_cov, q_error_terms
from .sampling import Dataset, GenerativeSampler
from .solvers import SolverGuarantee, plugin_estimate, plugin_size
from .tabular import diag_norm

PE = "pe"
Q = "q"

TRACE_COLUMNS = [
    "trial_id",
    "epoch",
    "delta_m",
    "N_m",
    "h_m",
    "eps_fast",
    "eps_slow",
    "cumulative_samples",
    "terminated",
]


def base_size(discount: float) -> float:
    # rounding keeps e.g. 32/0.1**2 at exactly 3200
    return round(32.0 / (1.0 - discount) ** 2, 9)


@dataclass(frozen=True)
class EpochSchedule:
    epoch: int
    delta: float
    holdout: int
    batch: int


def epoch_schedule(m: int, delta0: float, discount: float, num_states: int, guarantee: SolverGuarantee) -> EpochSchedule:
    """Failure probability, holdout size and main-batch size of epoch ``m`` (policy evaluation)."""
    if m < 1:
        raise ValueError("epochs are numbered from 1")
    n0 = base_size(discount)
    delta = delta0 / 2**m
    holdout = math.ceil(n0 * math.log(4 * num_states**2 / delta))
    batch = math.ceil(2**m * n0 * guarantee.phi_fast(delta) ** 2 * math.log(4 * num_states / delta))
    return EpochSchedule(m, delta, holdout, batch)


def q_epoch_schedule(m: int, delta0: float, discount: float, dims: int, guarantee: SolverGuarantee) -> EpochSchedule:
    """Q-function variant: no holdouts, the log factor counts state-action pairs."""
    if m < 1:
        raise ValueError("epochs are numbered from 1")
    delta = delta0 / 2**m
    batch = math.ceil(2**m * base_size(discount) * guarantee.phi_fast(delta) ** 2 * math.log(4 * dims / delta))
    return EpochSchedule(m, delta, 0, batch)


@dataclass(frozen=True)
class EpochTrace:
    epoch: int
    delta: float
    batch: int
    holdout: int
    eps_fast: float
    eps_slow: float
    cumulative_samples: int
    terminated: bool


@dataclass
class EmpireResult:
    estimate: np.ndarray
    epochs: int
    samples_used: int
    predicted_error: ErrorEstimate | None
    terminated: bool
    trace: list[EpochTrace] = field(default_factory=list)
    init_samples: int = 0  # draws spent on the plug-in initialiser, not part of samples_used
    distinct_samples: int = 0  # draws actually requested from the sampler

    def trace_rows(self, trial_id: int) -> list[dict]:
        return [
            {
                "trial_id": trial_id,
                "epoch": t.epoch,
                "delta_m": t.delta,
                "N_m": t.batch,
                "h_m": t.holdout,
                "eps_fast": t.eps_fast,
                "eps_slow": t.eps_slow,
                "cumulative_samples": t.cumulative_samples,
                "terminated": int(t.terminated),
            }
            for t in self.trace
        ]


Solver = Callable[[Dataset, float, np.ndarray], np.ndarray]


def _grow(current: Dataset | None, target: int, sampler: GenerativeSampler) -> Dataset:
    if current is None:
        return sampler.draw(target)
    extra = target - len(current)
    if extra < 0:
        raise AssertionError("datasets only ever grow")
    return current if extra == 0 else current.extend(sampler.draw(extra))


def _initialiser(sampler: GenerativeSampler, init):
    if init is not None:
        return np.asarray(init, dtype=float), 0
    n = plugin_size(sampler.discount)
    return plugin_estimate(sampler.draw(n), sampler.discount), n


def empire_pe(
    sampler: GenerativeSampler,
    algo: Solver,
    guarantee: SolverGuarantee,
    eps: float,
    delta_target: float,
    max_samples: int = 10**8,
    init=None,
) -> EmpireResult:
    """Early-stopped policy evaluation.

    ``samples_used`` sums ``N_m + 2 h_m`` over the executed epochs.  When the
    next epoch would push it past ``max_samples`` the run stops and returns
    the last estimate with ``terminated=False``.
    """
    if eps <= 0 or not 0 < delta_target < 1:
        raise ValueError("need eps > 0 and delta_target in (0, 1)")
    if sampler.num_actions != 1:
        raise ValueError("policy evaluation needs an MRP sampler")
    g, s, rbar = sampler.discount, sampler.num_states, sampler.reward_bound
    delta0 = delta_target / 3
    v_init, init_n = _initialiser(sampler, init)
    result = EmpireResult(v_init, 0, 0, None, False, init_samples=init_n)
    main = left = right = None
    m = 0
    while True:
        m += 1
        plan = epoch_schedule(m, delta0, g, s, guarantee)
        if result.samples_used + plan.batch + 2 * plan.holdout > max_samples:
            break
        left = _grow(left, plan.holdout, sampler)
        main = _grow(main, plan.batch, sampler)
        right = _grow(right, plan.holdout, sampler)
        result.samples_used += plan.batch + 2 * plan.holdout

        v_hat = np.asarray(algo(main, plan.delta, v_init), dtype=float)
        z1, z2 = holdout_means(PeDataSplit(main, left, right))
        sigma = sandwich_estimate(v_statistic_cov(v_hat, main, g), z1, z2, g)
        err = pe_error_terms(math.sqrt(diag_norm(sigma.matrix)), v_hat, plan.batch, plan.delta, guarantee, rbar, g)
        eps_fast, eps_slow = err.leading, err.slow + err.bernstein
        done = eps_fast + eps_slow < eps

        result.estimate, result.predicted_error, result.epochs = v_hat, err, m
        result.trace.append(EpochTrace(m, plan.delta, plan.batch, plan.holdout, eps_fast, eps_slow, result.samples_used, done))
        # three failure events per epoch, each at delta_m
        assert sum(3 * t.delta for t in result.trace) <= 3 * delta0 * (1 + 1e-12)
        if done:
            result.terminated = True
            break
    result.distinct_samples = init_n + sum(len(d) for d in (main, left, right) if d is not None)
    return result


def empire_q(
    sampler: GenerativeSampler,
    algo: Solver,
    guarantee: SolverGuarantee,
    eps: float,
    delta_target: float,
    max_samples: int = 10**8,
    init=None,
) -> EmpireResult:
    """Early-stopped optimal Q-function estimation; one dataset feeds both the solver and the variance estimate."""
    if eps <= 0 or not 0 < delta_target < 1:
        raise ValueError("need eps > 0 and delta_target in (0, 1)")
    g, rbar = sampler.discount, sampler.reward_bound
    dims = sampler.num_states * sampler.num_actions
    delta0 = delta_target / 2
    q_init, init_n = _initialiser(sampler, init)
    result = EmpireResult(q_init, 0, 0, None, False, init_samples=init_n)
    data = None
    m = 0
    while True:
        m += 1
        plan = q_epoch_schedule(m, delta0, g, dims, guarantee)
        if result.samples_used + plan.batch > max_samples:
            break
        data = _grow(data, plan.batch, sampler)
        result.samples_used += plan.batch

        q_hat = np.asarray(algo(data, plan.delta, q_init), dtype=float)
        cov = q_diag_cov(q_hat, data, g)
        err = q_error_terms(math.sqrt(cov.max), q_hat, plan.batch, plan.delta, guarantee, rbar, g)
        eps_fast, eps_slow = err.leading, err.slow + err.bernstein
        done = eps_fast + eps_slow < eps

        result.estimate, result.predicted_error, result.epochs = q_hat, err, m
        result.trace.append(EpochTrace(m, plan.delta, plan.batch, 0, eps_fast, eps_slow, result.samples_used, done))
        assert sum(2 * t.delta for t in result.trace) <= 2 * delta0 * (1 + 1e-12)
        if done:
            result.terminated = True
            break
    result.distinct_samples = init_n + (len(data) if data is not None else 0)
    return result


@dataclass(frozen=True)
class EpochBoundInputs:
    """Inputs of the epoch-count bound; ``complexity`` is the diag-norm itself, not its root."""

    complexity: float
    b_star: float
    eps: float
    delta0: float
    discount: float
    c0: float
    num_states: int

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not val > 0:
                raise ValueError(f"{name} must be positive")


def epoch_bound(inputs: EpochBoundInputs) -> float:
    g, eps = inputs.discount, inputs.eps
    first = (1 - g) ** 2 * inputs.complexity / eps**2
    second = inputs.c0 * (1 - g) ** 2 / (4 * eps) + (1 - g) * inputs.b_star / eps * math.sqrt(
        math.log(8 * inputs.num_states / inputs.delta0)
    )
    return math.log2(max(first, second))
