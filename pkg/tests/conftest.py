import numpy as np
import pytest

from empire.experiments import BatteryConfig, run_trials
from empire.tabular import Mdp, Mrp


def two_state_closed_form(gamma, lam):
    """Hand-derived V* and Q* of the two-state family (policy u1 everywhere is optimal)."""
    p = (4 * gamma - 1) / (3 * gamma)
    tau = 1 - (1 - gamma) ** lam
    v2 = tau / (1 - gamma)
    v1 = (1 + gamma * (1 - p) * v2) / (1 - gamma * p)
    q = np.array([[v1, gamma * v1], [v2, gamma * v2]])
    return p, tau, np.array([v1, v2]), q


def random_mdp(rng, states=2, actions=2, discount=None, reward_scale=1.0):
    p = rng.dirichlet(np.ones(states) * 0.7, size=(actions, states))
    r = rng.uniform(-reward_scale, reward_scale, size=(states, actions))
    g = rng.uniform(0.3, 0.97) if discount is None else discount
    return Mdp(p, r, g)


def random_mrp(rng, states=3, discount=None):
    p = rng.dirichlet(np.ones(states), size=states)
    r = rng.uniform(-1, 1, size=states)
    g = rng.uniform(0.3, 0.97) if discount is None else discount
    return Mrp(p, r, g)


def deterministic_cycle(discount=0.8):
    """Three states visited in a fixed cycle; every transition is certain."""
    p = np.roll(np.eye(3), 1, axis=1)
    return Mrp(p, np.array([1.0, 0.0, 0.5]), discount)


def deterministic_mdp(discount=0.8):
    p = np.array([np.roll(np.eye(3), 1, axis=1), np.eye(3)])
    r = np.array([[1.0, 0.2], [0.0, 0.3], [0.5, 0.1]])
    return Mdp(p, r, discount)


@pytest.fixture(scope="session")
def pe_battery():
    """200 seeded policy-evaluation runs per (gamma, lambda) cell on the desk grid."""
    config = BatteryConfig(mode="pe", eps=0.1, delta=0.1, trials=200, seed=20240101)
    return config, run_trials(config)


@pytest.fixture(scope="session")
def q_battery():
    config = BatteryConfig(mode="q", eps=0.05, delta=0.1, trials=200, seed=20240102)
    return config, run_trials(config)


CRITERIA_LINES = []


def report_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
