"""Generative-model sampling and single-sample empirical Bellman operators.

Every draw produces, for *every* state(-action) row at once, one next state
and one noisy reward.  Next states are stored as index arrays
``next_state[i, x, u]``; the 0/1 matrices are only materialised on request.
MRP datasets are the ``num_actions == 1`` case of the same container.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tabular import Mdp, Mrp

DETERMINISTIC = "deterministic"
UNIFORM_BOUNDED = "uniform_bounded"


@dataclass(frozen=True)
class RewardModel:
    """Zero-mean reward noise. ``bound`` is the half-width of the noise support."""

    kind: str = DETERMINISTIC
    bound: float = 0.0

    def __post_init__(self):
        if self.kind not in (DETERMINISTIC, UNIFORM_BOUNDED):
            raise ValueError(f"unknown reward model kind {self.kind!r}")
        if self.bound < 0:
            raise ValueError("reward bound must be non-negative")
        if self.kind == DETERMINISTIC and self.bound != 0.0:
            raise ValueError("a deterministic reward model has bound 0")

    @property
    def noise_variance(self) -> float:
        if self.kind == UNIFORM_BOUNDED:
            return self.bound**2 / 3.0
        return 0.0

    @classmethod
    def uniform(cls, bound: float) -> "RewardModel":
        return cls(UNIFORM_BOUNDED, float(bound))


def make_rng(seed: int, trial_index: int = 0) -> np.random.Generator:
    """Counter-based generator for the substream ``seed XOR trial_index``."""
    return np.random.Generator(np.random.Philox(int(seed) ^ int(trial_index)))


@dataclass(frozen=True, eq=False)
class MrpSample:
    noisy_reward: np.ndarray  # (S,)
    next_state: np.ndarray  # (S,)

    @property
    def one_hot(self) -> np.ndarray:
        s = self.next_state.shape[0]
        z = np.zeros((s, s))
        z[np.arange(s), self.next_state] = 1.0
        return z


@dataclass(frozen=True, eq=False)
class MdpSample:
    noisy_reward: np.ndarray  # (S, A)
    next_state: np.ndarray  # (S, A)

    @property
    def one_hot(self) -> np.ndarray:
        """Per-action 0/1 matrices, shape ``(A, S, S)``."""
        s, a = self.next_state.shape
        z = np.zeros((a, s, s))
        for u in range(a):
            z[u, np.arange(s), self.next_state[:, u]] = 1.0
        return z


@dataclass(eq=False)
class Dataset:
    """Ordered collection of i.i.d. generative draws.

    ``next_state`` and ``reward`` both have shape ``(n, S, A)``.
    """

    next_state: np.ndarray
    reward: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.next_state.shape != self.reward.shape or self.next_state.ndim != 3:
            raise ValueError("next_state and reward must share shape (n, S, A)")

    def __len__(self) -> int:
        return self.next_state.shape[0]

    @property
    def num_states(self) -> int:
        return self.next_state.shape[1]

    @property
    def num_actions(self) -> int:
        return self.next_state.shape[2]

    def part(self, start: int, stop: int) -> "Dataset":
        """Contiguous slice ``[start, stop)``; views, no copy."""
        if not 0 <= start <= stop <= len(self):
            raise IndexError(f"slice [{start}, {stop}) outside dataset of size {len(self)}")
        return Dataset(self.next_state[start:stop], self.reward[start:stop], self.seed)

    def extend(self, other: "Dataset") -> "Dataset":
        if other.next_state.shape[1:] != self.next_state.shape[1:]:
            raise ValueError("datasets have different shapes")
        return Dataset(
            np.concatenate([self.next_state, other.next_state]),
            np.concatenate([self.reward, other.reward]),
            self.seed,
        )

    def sample(self, i: int) -> MrpSample | MdpSample:
        if self.num_actions == 1:
            return MrpSample(self.reward[i, :, 0], self.next_state[i, :, 0])
        return MdpSample(self.reward[i], self.next_state[i])

    def mean_transitions(self) -> np.ndarray:
        """Average of the one-hot matrices, shape ``(A, S, S)``; rows sum to one."""
        n, s, a = self.next_state.shape
        if n == 0:
            raise ValueError("empty dataset")
        out = np.zeros((a, s, s))
        for u in range(a):
            for x in range(s):
                out[u, x] = np.bincount(self.next_state[:, x, u], minlength=s) / n
        return out

    def mean_reward(self) -> np.ndarray:
        return self.reward.mean(axis=0)

    def to_csv(self, path) -> None:
        """Rows ``(sample, state, action, next_state, reward)``."""
        n, s, a = self.next_state.shape
        with open(Path(path), "w", newline="") as fh:
            if self.seed is not None:
                fh.write(f"# seed={self.seed}\n")
            w = csv.writer(fh)
            w.writerow(["sample", "state", "action", "next_state", "reward"])
            for i in range(n):
                for x in range(s):
                    for u in range(a):
                        w.writerow([i, x, u, int(self.next_state[i, x, u]), repr(float(self.reward[i, x, u]))])


def empty_like_model(model: Mrp | Mdp) -> Dataset:
    s = model.num_states
    a = 1 if isinstance(model, Mrp) else model.num_actions
    return Dataset(np.zeros((0, s, a), dtype=np.int32), np.zeros((0, s, a)))


def _kernel_and_reward(model: Mrp | Mdp):
    if isinstance(model, Mrp):
        return model.transition[None, :, :], model.reward[:, None]
    return model.transitions, model.reward


def sample_dataset(model: Mrp | Mdp, reward_model: RewardModel, n: int, rng: np.random.Generator) -> Dataset:
    """Draw ``n`` i.i.d. generative samples (vectorised)."""
    kernel, reward = _kernel_and_reward(model)
    a, s, _ = kernel.shape
    cdf = np.cumsum(kernel, axis=2)
    uni = rng.random((n, s, a))
    nxt = np.empty((n, s, a), dtype=np.int32)
    for u in range(a):
        for x in range(s):
            idx = np.searchsorted(cdf[u, x], uni[:, x, u], side="right")
            nxt[:, x, u] = np.minimum(idx, s - 1)
    if reward_model.kind == UNIFORM_BOUNDED and reward_model.bound > 0:
        noise = rng.uniform(-reward_model.bound, reward_model.bound, size=(n, s, a))
        assert np.all(np.abs(noise) <= reward_model.bound)
        rew = reward[None, :, :] + noise
    else:
        rew = np.broadcast_to(reward[None, :, :], (n, s, a)).copy()
    return Dataset(nxt, rew)


def draw_mrp_sample(mrp: Mrp, reward_model: RewardModel, rng: np.random.Generator) -> MrpSample:
    ds = sample_dataset(mrp, reward_model, 1, rng)
    return ds.sample(0)


def draw_mdp_sample(mdp: Mdp, reward_model: RewardModel, rng: np.random.Generator) -> MdpSample:
    ds = sample_dataset(mdp, reward_model, 1, rng)
    return MdpSample(ds.reward[0], ds.next_state[0])


def empirical_bellman_eval(sample: MrpSample, v, discount: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != sample.noisy_reward.shape:
        raise ValueError("value function does not match the sample's state count")
    return sample.noisy_reward + discount * v[sample.next_state]


def empirical_bellman_opt(sample: MdpSample, q, discount: float) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != sample.noisy_reward.shape:
        raise ValueError("Q-function does not match the sample's shape")
    return sample.noisy_reward + discount * q.max(axis=1)[sample.next_state]


def batch_bellman(data: Dataset, q, discount: float) -> np.ndarray:
    """``T_i(q)`` for every draw ``i``, shape ``(n, S, A)``.

    ``q`` may be a value vector (S,) for MRP data or a Q-table (S, A).
    """
    q = np.asarray(q, dtype=float)
    v = q if q.ndim == 1 else q.max(axis=1)
    if v.shape[0] != data.num_states:
        raise ValueError("estimate does not match the dataset's state count")
    return data.reward + discount * v[data.next_state]


class GenerativeSampler:
    """Generative-model oracle handed to the stopping protocols.

    Exposes only what a user of the oracle would know (sizes, discount,
    reward-noise bound) plus fresh draws; the model itself stays private.
    """

    def __init__(self, model: Mrp | Mdp, reward_model: RewardModel, rng: np.random.Generator):
        self._model = model
        self._reward_model = reward_model
        self._rng = rng
        self.draws = 0

    @property
    def num_states(self) -> int:
        return self._model.num_states

    @property
    def num_actions(self) -> int:
        return 1 if isinstance(self._model, Mrp) else self._model.num_actions

    @property
    def discount(self) -> float:
        return self._model.discount

    @property
    def reward_bound(self) -> float:
        return self._reward_model.bound

    def draw(self, n: int) -> Dataset:
        if n < 0:
            raise ValueError("cannot draw a negative number of samples")
        self.draws += n
        return sample_dataset(self._model, self._reward_model, n, self._rng)
