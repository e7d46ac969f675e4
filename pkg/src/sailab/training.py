"""The interaction/update loop for one seed, and multi-run dispatch."""

from __future__ import annotations

import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import Agent, NonFiniteError, epsilon_at
from .config import RunConfig
from .envs import make_env
from .metrics import EvalRow, emit_csv, mean_action_gap
from .replay import ReplayBuffer

log = logging.getLogger(__name__)


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one component, derived from the master seed by a fixed label."""
    return np.random.default_rng([seed, zlib.crc32(label.encode())])


def derived_seed(seed: int, label: str) -> int:
    return int(rng_stream(seed, label).integers(2**31 - 1))


def build_env(cfg: RunConfig, seed: int):
    e = cfg.env
    return make_env(e.name, sticky=e.sticky, seed=seed, step_limit=e.step_limit, map_path=e.map_path,
                    chain_length=e.chain_length)


@dataclass
class RunResult:
    method: str
    env: str
    seed: int
    rows: list[EvalRow] = field(default_factory=list)
    mean_abs_bonus: list[float] = field(default_factory=list)
    episode_returns: list[float] = field(default_factory=list)
    episode_ends: list[int] = field(default_factory=list)
    episodes: int = 0
    failed: bool = False
    error: str = ""

    @property
    def final_return(self) -> float:
        return self.rows[-1].eval_return if self.rows else float("nan")

    @property
    def best_return(self) -> float:
        return max((r.eval_return for r in self.rows), default=float("nan"))


def evaluate(agent: Agent, env, episodes: int, epsilon: float, rng: np.random.Generator, seed_base: int) -> float:
    q_table = agent.qf.forward(np.arange(agent.qf.n_states))
    greedy = np.argmax(q_table, axis=1).tolist()
    n_actions = agent.qf.n_actions
    total = 0.0
    for k in range(episodes):
        state = env.reset(seed_base + k)
        done = False
        while not done:
            if epsilon > 0.0 and rng.random() < epsilon:
                a = int(rng.integers(n_actions))
            else:
                a = greedy[state]
            out = env.step(a)
            total += out.reward
            state = out.next_observation
            done = out.done
    return total / episodes


def _nanmean(xs: list[float]) -> float:
    return float(np.mean(xs)) if xs else float("nan")


def train_seed(cfg: RunConfig, seed: int) -> RunResult:
    """One full training run: act, store, backfill returns at episode end, update 1:1 after warmup."""
    acfg = cfg.agent
    env = build_env(cfg, derived_seed(seed, "env"))
    eval_env = build_env(cfg, derived_seed(seed, "eval"))
    eval_seed_base = derived_seed(seed, "eval-episodes")
    act_rng = rng_stream(seed, "epsilon-greedy")
    replay_rng = rng_stream(seed, "replay")
    eval_rng = rng_stream(seed, "eval-policy")
    agent = Agent.create(acfg, env.n_states, env.n_actions, rng_stream(seed, "agent-init"))
    buffer = ReplayBuffer(acfg.buffer_capacity)
    result = RunResult(cfg.method_name, cfg.env.label(), seed)

    losses: list[float] = []
    stale: list[float] = []
    gaps: list[float] = []
    bonus: list[float] = []
    state = env.reset()
    episode_id = t = 0
    ep_return = 0.0
    batch_idx = np.arange(acfg.batch_size)
    n_batch = acfg.batch_size
    try:
        for step in range(1, cfg.steps + 1):
            action = agent.act(state, epsilon_at(step - 1, acfg), act_rng)
            out = env.step(action)
            terminal = out.done and not out.info["truncated"]
            buffer.add(state, action, out.reward, out.next_observation, terminal, episode_id, t)
            t += 1
            ep_return += out.reward
            if out.done:
                result.episode_returns.append(ep_return)
                result.episode_ends.append(step)
                ep_return = 0.0
                buffer.finalize_episode(acfg.gamma)
                episode_id += 1
                t = 0
                state = env.reset()
            else:
                state = out.next_observation

            if buffer.n_finalized >= acfg.warmup:
                batch = buffer.sample_uniform(acfg.batch_size, replay_rng)
                info = agent.update(batch)
                losses.append(info.loss)
                q_sa_target = info.q_target_s[batch_idx, batch.actions]
                stale.append(np.count_nonzero(batch.returns > q_sa_target) / n_batch)
                gaps.append(mean_action_gap(info.q_online))
                bonus.append(float(np.abs(info.r_mod - batch.rewards).sum()) / n_batch)

            if step % acfg.target_sync_period == 0:
                agent.sync_target()

            if step % cfg.eval_period == 0 or step == cfg.steps:
                score = evaluate(agent, eval_env, cfg.eval_episodes, cfg.eval_epsilon, eval_rng, eval_seed_base)
                result.rows.append(EvalRow(result.method, result.env, seed, step, score,
                                           _nanmean(gaps), _nanmean(stale), _nanmean(losses)))
                result.mean_abs_bonus.append(_nanmean(bonus))
                losses, stale, gaps, bonus = [], [], [], []
    except NonFiniteError as exc:
        result.failed = True
        result.error = f"seed {seed}: {exc} at step {step}"
        log.error(result.error)
    result.episodes = episode_id
    return result


def result_path(out_dir: str | Path, result: RunResult) -> Path:
    return Path(out_dir) / f"{result.method}_{result.env}_seed{result.seed}.csv"


def _run_job(job: tuple[RunConfig, int]) -> RunResult:
    cfg, seed = job
    return train_seed(cfg, seed)


def run_jobs(jobs: list[tuple[RunConfig, int]], workers: int | None = None) -> list[RunResult]:
    """Run independent (config, seed) jobs on a bounded process pool, results in job order."""
    workers = workers or os.cpu_count() or 1
    workers = min(workers, len(jobs)) if jobs else 1
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def write_results(results: list[RunResult], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for res in results:
        path = result_path(out_dir, res)
        emit_csv(res.rows, path)
        paths.append(path)
    return paths
