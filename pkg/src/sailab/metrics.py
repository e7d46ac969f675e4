"""Evaluation arithmetic: relative improvement, normalized median, gap and staleness diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .replay import Batch

CSV_FIELDS = ("method", "env", "seed", "step", "eval_return", "mean_action_gap", "stale_fraction", "loss")
SUMMARY_FIELDS = ("method", "env", "rel_improvement_vs_baseline", "final_score_mean", "final_score_median")


@dataclass(frozen=True)
class EvalRow:
    method: str
    env: str
    seed: int
    step: int
    eval_return: float
    mean_action_gap: float = float("nan")
    stale_fraction: float = float("nan")
    loss: float = float("nan")

    def sort_key(self):
        return (self.method, self.env, self.seed, self.step)


@dataclass
class RunRecord:
    method: str
    env: str
    seed: int
    steps: list[int]
    scores: list[float]

    def __post_init__(self):
        if len(self.steps) != len(self.scores):
            raise ValueError("steps and scores must have equal length")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("evaluation steps must be strictly increasing")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    @property
    def final_score(self) -> float:
        return self.scores[-1]


def run_records(rows: Iterable[EvalRow]) -> list[RunRecord]:
    grouped: dict[tuple, list[EvalRow]] = {}
    for row in rows:
        grouped.setdefault((row.method, row.env, row.seed), []).append(row)
    out = []
    for (method, env, seed), rs in sorted(grouped.items()):
        rs.sort(key=lambda r: r.step)
        out.append(RunRecord(method, env, seed, [r.step for r in rs], [r.eval_return for r in rs]))
    return out


def seed_average(records: Sequence[RunRecord]) -> np.ndarray:
    """Per-step score averaged across seeds; all records must share eval steps."""
    if not records:
        raise ValueError("no run records")
    steps = records[0].steps
    if any(r.steps != steps for r in records):
        raise ValueError("run records use different evaluation steps")
    return np.mean([r.scores for r in records], axis=0)


def mean_relative_improvement(scores_x: Sequence[float], scores_base: Sequence[float], eps: float = 1e-6) -> float:
    """``(mean(x) - mean(base)) / (|mean(base)| + eps)`` over seed-averaged curves.

    Blows up as the baseline mean approaches zero.
    """
    x = np.asarray(scores_x, dtype=np.float64)
    base = np.asarray(scores_base, dtype=np.float64)
    if x.shape != base.shape or x.ndim != 1 or len(x) == 0:
        raise ValueError(f"score curves must be non-empty and equally long, got {x.shape} and {base.shape}")
    mean_base = base.mean()
    return float((x.mean() - mean_base) / (abs(mean_base) + eps))


@dataclass(frozen=True)
class BaselineAnchors:
    random: Mapping[str, float]
    reference: Mapping[str, float]

    def __post_init__(self):
        for env, ref in self.reference.items():
            if env in self.random and ref == self.random[env]:
                raise ValueError(f"reference and random anchors coincide for {env!r}")


def normalized_score(score: float, env: str, anchors: BaselineAnchors) -> float:
    if env not in anchors.random or env not in anchors.reference:
        raise KeyError(f"no anchor scores for environment {env!r}")
    lo, hi = anchors.random[env], anchors.reference[env]
    return (score - lo) / abs(hi - lo)


def normalized_median(per_env_scores: Mapping[str, float], anchors: BaselineAnchors) -> float:
    """Median across environments of anchor-normalized (seed-averaged) scores."""
    if not per_env_scores:
        raise ValueError("no environment scores")
    return float(np.median([normalized_score(s, env, anchors) for env, s in per_env_scores.items()]))


def mean_action_gap(q_rows: np.ndarray) -> float:
    """Mean over rows of best minus second-best action value."""
    q = np.asarray(q_rows, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] == 0:
        raise ValueError("need a non-empty (states, actions) array")
    if q.shape[1] < 2:
        return 0.0
    top2 = np.partition(q, q.shape[1] - 2, axis=1)[:, -2:]
    return float(np.mean(top2[:, 1] - top2[:, 0]))


def qf_mean_action_gap(qf, states: Sequence[int]) -> float:
    return mean_action_gap(qf.forward(np.asarray(states)))


def stale_fraction(batch: Batch, target_qf) -> float:
    """Fraction of records whose stored return exceeds the target network's Q(s, a)."""
    q = target_qf.forward(batch.states)[np.arange(len(batch.actions)), batch.actions]
    return stale_fraction_from_values(batch.returns, q)


def stale_fraction_from_values(returns: np.ndarray, q_sa: np.ndarray) -> float:
    if np.isnan(returns).any():
        raise ValueError("batch contains placeholder returns")
    return float(np.mean(returns > q_sa))


# ---------------------------------------------------------------------------
# Anchor scores for the desk-scale environments


def policy_return(env, policy, seed: int) -> float:
    env.reset(seed)
    total, done = 0.0, False
    while not done:
        out = env.step(policy(env))
        total += out.reward
        done = out.done
    return total


@lru_cache(maxsize=None)
def anchor_scores(env_name: str, sticky: float = 0.0, seed: int = 0, episodes: int = 100) -> tuple[float, float]:
    """``(random, reference)`` scores: uniform-random policy mean and a scripted shortest-path policy."""
    from .envs import make_env

    env = make_env(env_name, sticky=sticky, seed=seed)
    rng = np.random.default_rng(seed)
    n_actions = env.n_actions
    rand = np.mean([policy_return(env, lambda _e: int(rng.integers(n_actions)), seed + i) for i in range(episodes)])
    ref_env = make_env(env_name, sticky=0.0, seed=seed)
    plan = ref_env.shortest_path()
    it = iter(plan)
    ref = policy_return(ref_env, lambda _e: next(it), seed)
    return float(rand), float(ref)


# ---------------------------------------------------------------------------
# CSV I/O


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_csv(rows: Iterable[EvalRow], path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for r in sorted(rows, key=EvalRow.sort_key):
                writer.writerow([r.method, r.env, r.seed, r.step, _fmt(r.eval_return), _fmt(r.mean_action_gap),
                                 _fmt(r.stale_fraction), _fmt(r.loss)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path: str | Path) -> list[EvalRow]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"results file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [EvalRow(r["method"], r["env"], int(r["seed"]), int(r["step"]), float(r["eval_return"]),
                        float(r["mean_action_gap"]), float(r["stale_fraction"]), float(r["loss"]))
                for r in reader]


def summarize(rows: Sequence[EvalRow], baseline: str, eps: float = 1e-6) -> list[dict]:
    """One summary row per (method, env): improvement over ``baseline`` and final-score statistics."""
    by_key: dict[tuple[str, str], list[RunRecord]] = {}
    for rec in run_records(rows):
        by_key.setdefault((rec.method, rec.env), []).append(rec)
    out = []
    for (method, env), recs in sorted(by_key.items()):
        base = by_key.get((baseline, env))
        if base is None:
            raise KeyError(f"baseline {baseline!r} has no runs on {env!r}")
        finals = [r.final_score for r in recs]
        out.append({
            "method": method,
            "env": env,
            "rel_improvement_vs_baseline": mean_relative_improvement(seed_average(recs), seed_average(base), eps),
            "final_score_mean": float(np.mean(finals)),
            "final_score_median": float(np.median(finals)),
        })
    return out


def emit_summary(summary: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in summary:
            writer.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
