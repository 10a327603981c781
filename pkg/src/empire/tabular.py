"""Exact finite MRP/MDP models, Bellman operators and fixed-point solvers.

Transition matrices are stored with ``row = current state`` and
``column = next state`` so that the evaluation operator reads
``r + discount * P @ v``.  MDP kernels are indexed ``[action, state, next]``
and rewards ``[state, action]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STOCHASTIC_TOL = 1e-12


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_discount(discount):
    if not 0.0 <= discount < 1.0:
        raise ValueError(f"discount must lie in [0, 1), got {discount}")


def _check_stochastic(p, what):
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{what} has non-finite entries")
    if np.any(p < 0.0):
        raise ValueError(f"{what} has negative entries")
    rows = p.sum(axis=-1)
    if np.any(np.abs(rows - 1.0) > STOCHASTIC_TOL):
        raise ValueError(f"{what} rows must sum to 1 (max deviation {np.max(np.abs(rows - 1.0)):.3e})")


@dataclass(frozen=True, eq=False)
class Mrp:
    """Markov reward process ``(reward, transition, discount)``.

    A zero discount is accepted as a degenerate case so that the one-step
    identities can be exercised directly.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        p = _frozen(self.transition)
        r = _frozen(self.reward)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"transition must be square, got shape {p.shape}")
        if r.shape != (p.shape[0],):
            raise ValueError(f"reward must have shape ({p.shape[0]},), got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ValueError("reward has non-finite entries")
        _check_stochastic(p, "transition")
        _check_discount(self.discount)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    def as_mdp(self) -> "Mdp":
        """Single-action embedding, used to run Q-style solvers on an MRP."""
        return Mdp(self.transition[None, :, :], self.reward[:, None], self.discount)


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with kernels ``transitions[u, x, x']`` and rewards ``reward[x, u]``."""

    transitions: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        p = _frozen(self.transitions)
        r = _frozen(self.reward)
        if p.ndim != 3 or p.shape[1] != p.shape[2] or p.shape[0] < 1:
            raise ValueError(f"transitions must have shape (actions, states, states), got {p.shape}")
        if r.shape != (p.shape[1], p.shape[0]):
            raise ValueError(f"reward must have shape ({p.shape[1]}, {p.shape[0]}), got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ValueError("reward has non-finite entries")
        _check_stochastic(p, "transitions")
        _check_discount(self.discount)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[0]

    @property
    def dims(self) -> int:
        return self.num_states * self.num_actions


def check_policy(policy, num_states: int, num_actions: int) -> np.ndarray:
    pi = np.asarray(policy)
    if pi.shape != (num_states,) or not np.issubdtype(pi.dtype, np.integer):
        raise ValueError(f"policy must be an integer vector of length {num_states}")
    if np.any(pi < 0) or np.any(pi >= num_actions):
        raise ValueError("policy contains an invalid action index")
    return pi


# ---------------------------------------------------------------------------
# operators


def bellman_eval_apply(mrp: Mrp, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mrp.num_states,):
        raise ValueError(f"value function must have shape ({mrp.num_states},), got {v.shape}")
    return mrp.reward + mrp.discount * (mrp.transition @ v)


def bellman_opt_apply(mdp: Mdp, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != mdp.reward.shape:
        raise ValueError(f"Q-function must have shape {mdp.reward.shape}, got {q.shape}")
    v = q.max(axis=1)
    # (A, S, S) @ (S,) -> (A, S), transposed to (S, A)
    return mdp.reward + mdp.discount * (mdp.transitions @ v).T


def solve_value_exact(mrp: Mrp) -> np.ndarray:
    a = np.eye(mrp.num_states) - mrp.discount * mrp.transition
    try:
        return np.linalg.solve(a, mrp.reward)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - impossible for a valid Mrp
        raise RuntimeError("internal error: I - discount*P is singular") from exc


def solve_q_exact(mdp: Mdp, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Q-value iteration from zero.

    Stops once successive iterates differ by at most ``tol*(1-g)/(2g)`` so the
    returned table has Bellman residual at most ``tol*(1-g)`` and therefore
    lies within ``tol`` of the fixed point.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = mdp.discount
    q = bellman_opt_apply(mdp, np.zeros_like(mdp.reward))
    if g == 0.0:
        return q
    threshold = tol * (1.0 - g) / (2.0 * g)
    for _ in range(max_iter):
        q_next = bellman_opt_apply(mdp, q)
        if np.max(np.abs(q_next - q)) <= threshold:
            return q_next
        q = q_next
    raise RuntimeError("value iteration did not converge")  # pragma: no cover


def reduce_to_mrp(mdp: Mdp, policy) -> Mrp:
    pi = check_policy(policy, mdp.num_states, mdp.num_actions)
    states = np.arange(mdp.num_states)
    return Mrp(mdp.transitions[pi, states, :], mdp.reward[states, pi], mdp.discount)


def policy_q_kernel(mdp: Mdp, policy) -> np.ndarray:
    """Matrix of ``Q -> sum_x' P_u(x'|x) Q(x', pi(x'))`` on flattened ``(x, u)`` pairs.

    Pairs are flattened row-major, i.e. index ``x * num_actions + u``.
    """
    pi = check_policy(policy, mdp.num_states, mdp.num_actions)
    s, a = mdp.num_states, mdp.num_actions
    kernel = np.zeros((s * a, s * a))
    cols = np.arange(s) * a + pi
    for x in range(s):
        for u in range(a):
            kernel[x * a + u, cols] = mdp.transitions[u, x, :]
    return kernel


def resolvent(p_matrix, discount: float) -> np.ndarray:
    """Dense ``(I - discount * P)^{-1}`` for a row-stochastic ``P``."""
    p = np.asarray(p_matrix, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError("p_matrix must be square")
    _check_discount(discount)
    try:
        return np.linalg.inv(np.eye(p.shape[0]) - discount * p)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise RuntimeError("internal error: I - discount*P is singular") from exc


def diag_norm(m) -> float:
    """Largest absolute diagonal entry of a square matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"diag_norm needs a square matrix, got shape {m.shape}")
    return float(np.max(np.abs(np.diag(m))))


def greedy_policy(q) -> np.ndarray:
    # np.argmax returns the first maximiser, which is the smallest-index tie-break
    return np.argmax(np.asarray(q, dtype=float), axis=1)


def bfun(v_or_q, reward_bound: float, discount: float) -> float:
    if reward_bound < 0:
        raise ValueError("reward_bound must be non-negative")
    return float(reward_bound + discount * np.max(np.abs(v_or_q)))


# ---------------------------------------------------------------------------
# JSON documents


def to_json_dict(model: Mrp | Mdp) -> dict:
    mdp = model.as_mdp() if isinstance(model, Mrp) else model
    return {
        "discount": mdp.discount,
        "states": mdp.num_states,
        "actions": mdp.num_actions,
        "reward": mdp.reward.tolist(),
        "transitions": mdp.transitions.tolist(),
    }


def from_json_dict(doc: dict) -> Mrp | Mdp:
    """Build a model from a JSON document; single-action documents become an Mrp."""
    p = np.asarray(doc["transitions"], dtype=float)
    r = np.asarray(doc["reward"], dtype=float)
    s, a = int(doc["states"]), int(doc["actions"])
    if p.shape != (a, s, s):
        raise ValueError(f"transitions must be [actions][states][states] = ({a}, {s}, {s}), got {p.shape}")
    if r.shape != (s, a):
        raise ValueError(f"reward must be [states][actions] = ({s}, {a}), got {r.shape}")
    if a == 1:
        return Mrp(p[0], r[:, 0], doc["discount"])
    return Mdp(p, r, doc["discount"])


def load_model(path) -> Mrp | Mdp:
    return from_json_dict(json.loads(Path(path).read_text()))


def save_model(model: Mrp | Mdp, path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(model), indent=2))
