"""Two-state example family, seeded trial batteries and figure data.

Ground truth is computed here with the exact solvers and only ever compared
against the protocol's output after the run has finished.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .protocol import PE, Q, TRACE_COLUMNS, empire_pe, empire_q
from .sampling import GenerativeSampler, RewardModel, make_rng
from .solvers import VrqlSolver, vrql_guarantee
from .tabular import Mdp, Mrp, reduce_to_mrp, solve_q_exact, solve_value_exact

DESK_GAMMAS = (0.90, 0.92, 0.95)
FULL_GAMMAS = tuple(float(1 - x) for x in np.geomspace(0.1, 0.01, 5))
LAMBDAS = (1.0, 1.5)

TRIALS_FILE = "trials.csv"
TRACE_FILE = "trace.csv"


@dataclass(frozen=True)
class ExampleFamily:
    """Two states, two actions; ``u1`` moves ``x1 -> x2`` with probability ``1-p`` and ``u2`` stays put."""

    discount: float
    hardness: float

    def __post_init__(self):
        if not 0.25 < self.discount < 1:
            raise ValueError("discount must lie in (1/4, 1)")
        if self.hardness < 0:
            raise ValueError("hardness must be non-negative")

    @property
    def p(self) -> float:
        return (4 * self.discount - 1) / (3 * self.discount)

    @property
    def tau(self) -> float:
        return 1 - (1 - self.discount) ** self.hardness

    def mdp(self) -> Mdp:
        p = self.p
        stay_or_drift = [[p, 1 - p], [0.0, 1.0]]
        transitions = np.array([stay_or_drift, np.eye(2)])
        reward = np.array([[1.0, 0.0], [self.tau, 0.0]])
        return Mdp(transitions, reward, self.discount)

    def mrp(self) -> Mrp:
        return reduce_to_mrp(self.mdp(), np.zeros(2, dtype=np.int64))


def build_example(gamma: float, lam: float, mode: str = "mdp") -> Mdp | Mrp:
    fam = ExampleFamily(gamma, lam)
    if mode == "mdp":
        return fam.mdp()
    if mode == "mrp":
        return fam.mrp()
    raise ValueError(f"mode must be 'mdp' or 'mrp', got {mode!r}")


def worst_case_samples(eps: float, gamma: float) -> float:
    return 1.0 / (eps**2 * (1 - gamma) ** 3)


@dataclass(frozen=True)
class BatteryConfig:
    mode: str = PE
    gammas: tuple[float, ...] = DESK_GAMMAS
    lambdas: tuple[float, ...] = LAMBDAS
    eps: float = 0.1
    delta: float = 0.1
    trials: int = 100
    seed: int = 0
    max_samples: int = 10**8
    reward_noise: float = 0.0  # half-width of uniform reward noise; 0 means deterministic rewards
    c1: float = 1.0
    fast_constant: float = 1.0
    slow_constant: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.mode not in (PE, Q):
            raise ValueError(f"mode must be {PE!r} or {Q!r}")
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        if not self.gammas or not self.lambdas or self.trials < 1:
            raise ValueError("need at least one discount, one hardness value and one trial")
        for g in self.gammas:
            ExampleFamily(g, 0.0)
        if self.eps <= 0 or not 0 < self.delta < 1 or self.workers < 1:
            raise ValueError("need eps > 0, delta in (0, 1) and workers >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "BatteryConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def results_dict(self) -> dict:
        """Everything that influences the results (worker count excluded)."""
        doc = asdict(self)
        doc.pop("workers")
        doc["gammas"], doc["lambdas"] = list(self.gammas), list(self.lambdas)
        return doc

    @property
    def hash(self) -> str:
        blob = json.dumps(self.results_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def cells(self) -> list[tuple[float, float]]:
        return [(g, lam) for g in self.gammas for lam in self.lambdas]


@dataclass
class TrialRecord:
    trial_id: int
    seed: int
    mode: str
    gamma: float
    lam: float
    eps: float
    delta_target: float
    samples_used: int
    epochs: int
    predicted_error: float
    true_error: float
    worst_case_n: float
    factor_savings: float
    terminated: bool
    init_samples: int
    trace: list[dict] = field(default_factory=list, repr=False, compare=False)


RECORD_COLUMNS = [f.name for f in fields(TrialRecord) if f.name != "trace"]


def _trial_task(args) -> TrialRecord:
    config, trial_id, gamma, lam = args
    return run_trial(config, trial_id, gamma, lam)


def run_trial(config: BatteryConfig, trial_id: int, gamma: float, lam: float) -> TrialRecord:
    """One seeded protocol run followed by the (test-side) true-error computation."""
    model = build_example(gamma, lam, "mrp" if config.mode == PE else "mdp")
    reward_model = RewardModel.uniform(config.reward_noise) if config.reward_noise > 0 else RewardModel()
    sampler = GenerativeSampler(model, reward_model, make_rng(config.seed, trial_id))
    dims = model.num_states if config.mode == PE else model.dims
    guarantee = vrql_guarantee(dims, gamma, config.max_samples, config.fast_constant, config.slow_constant)
    run = empire_pe if config.mode == PE else empire_q
    res = run(sampler, VrqlSolver(gamma, config.c1), guarantee, config.eps, config.delta, config.max_samples)

    truth = solve_value_exact(model) if config.mode == PE else solve_q_exact(model, tol=1e-12)
    worst = worst_case_samples(config.eps, gamma)
    used = max(res.samples_used, 1)
    return TrialRecord(
        trial_id=trial_id,
        seed=config.seed,
        mode=config.mode,
        gamma=gamma,
        lam=lam,
        eps=config.eps,
        delta_target=config.delta,
        samples_used=res.samples_used,
        epochs=res.epochs,
        predicted_error=res.predicted_error.total if res.predicted_error else math.inf,
        true_error=float(np.max(np.abs(res.estimate - truth))),
        worst_case_n=worst,
        factor_savings=worst / used,
        terminated=res.terminated,
        init_samples=res.init_samples,
        trace=res.trace_rows(trial_id),
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _header_line(config: BatteryConfig) -> str:
    return f"# config_hash={config.hash} config={json.dumps(config.results_dict(), sort_keys=True)}\n"


def _csv_line(values) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([_fmt(v) for v in values])
    return buf.getvalue()


def _load_complete(path: Path, header: str, columns: list[str]) -> list[dict]:
    """Rows of a previous run with the same config; a torn last line is dropped."""
    if not path.exists():
        return []
    text = path.read_text()
    if not text.startswith(header):
        raise ValueError(f"{path} was written by a different configuration; use a fresh --out directory")
    lines = text[len(header):].splitlines(keepends=True)
    if not lines or lines[0] != _csv_line(columns):
        return []
    rows = []
    for line in lines[1:]:
        if not line.endswith("\n"):
            break
        vals = next(csv.reader([line]))
        if len(vals) != len(columns):
            break
        rows.append(dict(zip(columns, vals)))
    return rows


def _record_from_row(row: dict) -> TrialRecord:
    ints = {"trial_id", "seed", "samples_used", "epochs", "init_samples"}
    strs = {"mode"}
    out = {}
    for k, v in row.items():
        if k in ints:
            out[k] = int(v)
        elif k in strs:
            out[k] = v
        elif k == "terminated":
            out[k] = v == "1"
        else:
            out[k] = float(v)
    return TrialRecord(**out)


def _trace_values(row: dict) -> list:
    return [row[c] for c in TRACE_COLUMNS]


def run_trials(config: BatteryConfig, out_dir=None) -> list[TrialRecord]:
    """Run every (discount, hardness, trial) combination in trial-id order.

    With ``out_dir`` set, rows are appended to ``trials.csv`` and ``trace.csv``
    as trials finish; trials already present (same configuration) are skipped,
    so an interrupted battery can be resumed and a finished one rerun for free.
    """
    jobs = [
        (config, cell * config.trials + t, g, lam)
        for cell, (g, lam) in enumerate(config.cells())
        for t in range(config.trials)
    ]
    done: dict[int, TrialRecord] = {}
    trial_fh = trace_fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = _header_line(config)
        trial_path, trace_path = out / TRIALS_FILE, out / TRACE_FILE
        for row in _load_complete(trial_path, header, RECORD_COLUMNS):
            rec = _record_from_row(row)
            done[rec.trial_id] = rec
        traces = [r for r in _load_complete(trace_path, header, TRACE_COLUMNS) if int(r["trial_id"]) in done]
        # rewrite both files with only complete rows, then append
        trial_path.write_text(
            header + _csv_line(RECORD_COLUMNS)
            + "".join(_csv_line([getattr(done[k], c) for c in RECORD_COLUMNS]) for k in sorted(done))
        )
        trace_path.write_text(header + _csv_line(TRACE_COLUMNS) + "".join(_csv_line(_trace_values(r)) for r in traces))
        trial_fh, trace_fh = open(trial_path, "a"), open(trace_path, "a")

    pending = [j for j in jobs if j[1] not in done]
    try:
        if config.workers > 1 and len(pending) > 1:
            with ProcessPoolExecutor(config.workers) as pool:
                results = pool.map(_trial_task, pending, chunksize=max(1, len(pending) // (8 * config.workers)))
                for rec in results:
                    _persist(rec, trial_fh, trace_fh)
                    done[rec.trial_id] = rec
        else:
            for job in pending:
                rec = _trial_task(job)
                _persist(rec, trial_fh, trace_fh)
                done[rec.trial_id] = rec
    finally:
        for fh in (trial_fh, trace_fh):
            if fh is not None:
                fh.close()
    return [done[k] for k in sorted(done)]


def _persist(rec: TrialRecord, trial_fh, trace_fh) -> None:
    if trial_fh is None:
        return
    # trace first: a trial row is the commit marker for its trace rows
    trace_fh.write("".join(_csv_line(_trace_values(r)) for r in rec.trace))
    trace_fh.flush()
    trial_fh.write(_csv_line([getattr(rec, c) for c in RECORD_COLUMNS]))
    trial_fh.flush()


def records_frame(records) -> pd.DataFrame:
    if not records:
        raise ValueError("no records")
    return pd.DataFrame([{c: getattr(r, c) for c in RECORD_COLUMNS} for r in records])


def factor_savings_table(records) -> pd.DataFrame:
    """Mean and standard deviation of savings and errors per (gamma, lambda) cell."""
    df = records_frame(records)
    grouped = df.groupby(["gamma", "lam"], sort=True)
    table = grouped.agg(
        trials=("trial_id", "size"),
        savings_mean=("factor_savings", "mean"),
        savings_std=("factor_savings", "std"),
        samples_mean=("samples_used", "mean"),
        epochs_max=("epochs", "max"),
        pred_err_mean=("predicted_error", "mean"),
        pred_err_std=("predicted_error", "std"),
        true_err_mean=("true_error", "mean"),
        true_err_std=("true_error", "std"),
        terminated_frac=("terminated", "mean"),
    )
    # a single trial has no spread
    return table.fillna({c: 0.0 for c in table.columns if c.endswith("_std")}).reset_index()


FIGURES = {
    "fig1b": (PE, "savings"),
    "fig2": (PE, "errors"),
    "fig3": (Q, "savings"),
    "fig4": (Q, "errors"),
}

SAVINGS_COLUMNS = ["gamma", "lambda", "log_discount_complexity", "savings_mean", "savings_std", "trials"]
ERROR_COLUMNS = [
    "gamma",
    "lambda",
    "log_discount_complexity",
    "true_err_mean",
    "true_err_std",
    "pred_err_mean",
    "pred_err_std",
    "trials",
]


def plotdata_frame(records, figure: str) -> pd.DataFrame:
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; choose from {sorted(FIGURES)}")
    mode, kind = FIGURES[figure]
    if any(r.mode != mode for r in records):
        raise ValueError(f"{figure} needs {mode!r} records")
    table = factor_savings_table(records).rename(columns={"lam": "lambda"})
    table["log_discount_complexity"] = np.log(1.0 / (1.0 - table["gamma"]))
    return table[SAVINGS_COLUMNS if kind == "savings" else ERROR_COLUMNS]


def emit_plotdata(records, figure: str, out_dir) -> Path:
    """Write ``<figure>.csv``: x is the log discount complexity (gamma kept too), y means, yerr stds."""
    frame = plotdata_frame(records, figure)
    path = Path(out_dir) / f"{figure}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.12g")
    return path


def load_records(path) -> list[TrialRecord]:
    """Read a trials CSV written by :func:`run_trials`."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return [_record_from_row(row) for row in csv.DictReader(lines)]
