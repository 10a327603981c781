"""Instance-optimal base solvers.

Variance-reduced Q-learning (VRQL) runs epochs of recentred stochastic
fixed-point iterations.  Policy evaluation uses the same engine on the
single-action embedding of an MRP, where the max over actions is the
identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .sampling import Dataset
from .tabular import Mdp, Mrp, solve_q_exact, solve_value_exact


@dataclass(frozen=True)
class SolverGuarantee:
    """Tolerance functions ``(phi_fast, phi_slow)`` of an instance-optimal solver.

    The solver's l_inf error is at most
    ``phi_fast(delta)/sqrt(n) * complexity + phi_slow(delta)/n`` with
    probability ``1 - delta``.
    """

    phi_fast: Callable[[float], float]
    phi_slow: Callable[[float], float]
    label: str = ""

    def check(self, grid=None) -> None:
        """Raise if either function drops below 1 or increases on ``grid``."""
        grid = np.sort(np.asarray(grid if grid is not None else np.geomspace(1e-9, 0.999, 60)))
        for name, fn in (("phi_fast", self.phi_fast), ("phi_slow", self.phi_slow)):
            vals = np.array([fn(d) for d in grid])
            if np.any(vals < 1.0):
                raise ValueError(f"{name} takes values below 1")
            if np.any(np.diff(vals) > 1e-12 * np.abs(vals[:-1])):
                raise ValueError(f"{name} is not non-increasing in delta")


@dataclass(frozen=True)
class VrqlConfig:
    num_epochs: int
    epoch_length: int
    recenter_sizes: tuple[int, ...]
    c1: float
    delta: float

    def __post_init__(self):
        if self.num_epochs < 1 or self.epoch_length < 0:
            raise ValueError("need at least one epoch and a non-negative epoch length")
        if len(self.recenter_sizes) != self.num_epochs or min(self.recenter_sizes) < 1:
            raise ValueError("one positive recentring size per epoch is required")
        if self.c1 <= 0 or not 0 < self.delta < 1:
            raise ValueError("c1 must be positive and delta in (0, 1)")

    @property
    def budget(self) -> int:
        return sum(self.recenter_sizes) + self.num_epochs * self.epoch_length

    def epoch_slices(self) -> list[tuple[int, int]]:
        """Disjoint ``[start, stop)`` sample ranges, one per epoch."""
        out, start = [], 0
        for n_m in self.recenter_sizes:
            stop = start + n_m + self.epoch_length
            out.append((start, stop))
            start = stop
        return out


def _raw_epoch_count(n: int, delta: float, discount: float, dims: int) -> int:
    denom = 8.0 * math.log((16.0 * dims / delta) * math.log(max(n, 3)))
    ratio = n * (1.0 - discount) ** 2 / denom
    if ratio < 4.0:
        return 1
    return max(1, int(math.floor(math.log(ratio, 4))))


def _recenter_sizes(num_epochs, delta, discount, dims, c1):
    log4 = math.log(16.0 * num_epochs * dims / delta, 4)
    return tuple(
        int(math.ceil(c1 * 4**m / (1.0 - discount) ** 2 * log4)) for m in range(1, num_epochs + 1)
    )


def vrql_params(n: int, delta: float, discount: float, dims: int, c1: float = 1.0) -> VrqlConfig:
    """Epoch count, recentring sizes and epoch length for a budget of ``n`` draws.

    The epoch count is reduced until the whole schedule fits in ``n``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    m = _raw_epoch_count(n, delta, discount, dims)
    while True:
        sizes = _recenter_sizes(m, delta, discount, dims, c1)
        length = n // (2 * m)
        if sum(sizes) + m * length <= n and length >= 1:
            return VrqlConfig(m, length, sizes, c1, delta)
        if m == 1:
            raise ValueError(f"n={n} is too small for a single VRQL epoch (needs more than {sizes[0]} draws)")
        m -= 1


@numba.njit(cache=True)
def _epoch_kernel(q_bar, next_state, reward, recenter_count, discount):
    n_total, s, a = next_state.shape
    v_bar = np.empty(s)
    for x in range(s):
        v_bar[x] = q_bar[x, 0]
        for u in range(1, a):
            if q_bar[x, u] > v_bar[x]:
                v_bar[x] = q_bar[x, u]
    recenter = np.zeros((s, a))
    for i in range(recenter_count):
        for x in range(s):
            for u in range(a):
                recenter[x, u] += reward[i, x, u] + discount * v_bar[next_state[i, x, u]]
    recenter /= recenter_count

    q = q_bar.copy()
    v = np.empty(s)
    for k in range(1, n_total - recenter_count + 1):
        i = recenter_count + k - 1
        alpha = 1.0 / (1.0 + (1.0 - discount) * k)
        for x in range(s):
            v[x] = q[x, 0]
            for u in range(1, a):
                if q[x, u] > v[x]:
                    v[x] = q[x, u]
        for x in range(s):
            for u in range(a):
                nxt = next_state[i, x, u]
                # sample rewards cancel between T_k(Q_k) and T_k(Q_bar)
                target = discount * (v[nxt] - v_bar[nxt]) + recenter[x, u]
                q[x, u] = (1.0 - alpha) * q[x, u] + alpha * target
    return q


def _as_table(q, data: Dataset) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if q.shape != (data.num_states, data.num_actions):
        raise ValueError(f"estimate shape {q.shape} does not match the data")
    return np.ascontiguousarray(q)


def vrql_run_epoch(q_bar, epoch_samples: Dataset, recenter_count: int, discount: float) -> np.ndarray:
    """One recentred epoch; the first ``recenter_count`` draws form the recentring batch."""
    if recenter_count < 1 or recenter_count > len(epoch_samples):
        raise ValueError(
            f"epoch slice of {len(epoch_samples)} draws cannot supply a recentring batch of {recenter_count}"
        )
    q0 = np.asarray(q_bar, dtype=float)
    q = _epoch_kernel(
        _as_table(q0, epoch_samples),
        np.ascontiguousarray(epoch_samples.next_state),
        np.ascontiguousarray(epoch_samples.reward, dtype=float),
        int(recenter_count),
        float(discount),
    )
    return q.reshape(q0.shape)


def vrql(dataset: Dataset, config: VrqlConfig, q_init, discount: float) -> np.ndarray:
    if len(dataset) < config.budget:
        raise ValueError(f"dataset has {len(dataset)} draws but the schedule needs {config.budget}")
    q = np.asarray(q_init, dtype=float)
    for (start, stop), n_m in zip(config.epoch_slices(), config.recenter_sizes):
        q = vrql_run_epoch(q, dataset.part(start, stop), n_m, discount)
    return q


@dataclass(frozen=True)
class VrqlSolver:
    """Base-solver callable ``(data, delta, init) -> estimate`` used by the stopping protocols."""

    discount: float
    c1: float = 1.0

    def __call__(self, data: Dataset, delta: float, init) -> np.ndarray:
        cfg = vrql_params(len(data), delta, self.discount, data.num_states * data.num_actions, self.c1)
        return vrql(data, cfg, init, self.discount)


def vrql_guarantee(
    dims: int,
    discount: float,
    max_samples: int = 10**8,
    fast_constant: float = 1.0,
    slow_constant: float = 1.0,
) -> SolverGuarantee:
    """Default ``(phi_fast, phi_slow)`` for VRQL.

    ``phi_fast = c_f * sqrt(log(8 D M / delta))`` and
    ``phi_slow = c_s * log(8 D M / delta) / (1 - discount)``, where ``M`` bounds
    the epoch count of any VRQL run within ``max_samples`` draws.  The epoch
    count grows with delta, so it is evaluated at delta = 1 to keep both
    functions non-increasing.
    """
    m_bar = _raw_epoch_count(max_samples, 1.0, discount, dims)

    def log_term(delta):
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        return math.log(8.0 * dims * m_bar / delta)

    return SolverGuarantee(
        phi_fast=lambda d: fast_constant * math.sqrt(log_term(d)),
        phi_slow=lambda d: slow_constant * log_term(d) / (1.0 - discount),
        label=f"vrql(D={dims}, c_f={fast_constant}, c_s={slow_constant})",
    )


def guarantee_bound(
    guarantee: SolverGuarantee, delta: float, n: int, complexity: float, discount: float, kind: str = "pe"
) -> float:
    """Error level promised by the guarantee; ``kind='q'`` divides the leading term by ``1 - discount``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if n < 1:
        raise ValueError("n must be positive")
    lead = guarantee.phi_fast(delta) / math.sqrt(n) * complexity
    if kind == "q":
        lead /= 1.0 - discount
    elif kind != "pe":
        raise ValueError(f"unknown guarantee kind {kind!r}")
    return lead + guarantee.phi_slow(delta) / n


def plugin_estimate(dataset: Dataset, discount: float) -> np.ndarray:
    """Solve the empirical model built from averaged rewards and transition frequencies.

    Returns a value vector for MRP data (one action) and a Q-table otherwise.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    p_hat = dataset.mean_transitions()
    p_hat /= p_hat.sum(axis=2, keepdims=True)
    r_hat = dataset.mean_reward()
    if dataset.num_actions == 1:
        return solve_value_exact(Mrp(p_hat[0], r_hat[:, 0], discount))
    return solve_q_exact(Mdp(p_hat, r_hat, discount))


def plugin_size(discount: float) -> int:
    """Number of draws set aside for the plug-in initialiser, ``2/(1-discount)^2``."""
    return int(math.ceil(round(2.0 / (1.0 - discount) ** 2, 9)))
