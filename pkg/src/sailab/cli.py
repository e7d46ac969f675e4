"""Command-line driver: ``sailab {train,compare,oracle,sweep}``.

Exit codes: 0 success, 1 usage or configuration error, 2 run failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .agents import LossVariant
from .config import ConfigError, RunConfig, load_config
from .metrics import EvalRow, emit_summary, mean_action_gap, read_csv, summarize
from .mdp import al_fixed_point, greedy_policy, load_mdp, random_mdp, value_iteration
from .training import RunResult, run_jobs, write_results

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2
AXES = ("variant", "stickiness", "alpha")
DEFAULT_AXIS_VALUES = {
    "variant": ["dqn", "al", "strsil", "sail"],
    "stickiness": ["0", "0.25", "0.5"],
    "alpha": ["0", "0.5", "0.9"],
}

log = logging.getLogger("sailab")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config resolution


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable); overrides the config list")
    p.add_argument("--out", help="output directory")
    p.add_argument("--variant", choices=[v.value for v in LossVariant])
    p.add_argument("--sticky", type=float, help="sticky-action probability")
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--workers", type=int, default=None, help="process pool size (default: CPU count)")


def resolve_config(path: str | None, args: argparse.Namespace) -> RunConfig:
    """Config file (or defaults) with command-line flags layered on top."""
    cfg = load_config(path) if path else RunConfig()
    try:
        if args.seed:
            cfg = cfg.replace(seeds=tuple(args.seed))
        if args.out:
            cfg = cfg.replace(out_dir=args.out)
        if args.steps is not None:
            cfg = cfg.replace(steps=args.steps)
        if args.sticky is not None:
            cfg = cfg.with_env(sticky=args.sticky)
        if args.variant:
            cfg = cfg.with_agent(loss_variant=LossVariant.parse(args.variant))
        if args.alpha is not None:
            cfg = cfg.with_agent(alpha=args.alpha)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _report_failures(results: list[RunResult]) -> int:
    failed = [r for r in results if r.failed]
    for r in failed:
        print(f"run failed: {r.method} on {r.env}: {r.error}", file=sys.stderr)
    return EXIT_FAILURE if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Subcommands


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args)
    results = run_jobs([(cfg, s) for s in cfg.seeds], args.workers)
    for path in write_results(results, cfg.out_dir):
        print(path)
    return _report_failures(results)


def _load_side(source: str, label: str, args) -> tuple[list[EvalRow], list[RunResult]]:
    """Rows for one side of a comparison: a results CSV, a directory of them, or a config to run."""
    path = Path(source)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise FileNotFoundError(f"no result CSVs in directory: {path}")
        rows = [row for f in files for row in read_csv(f)]
    elif path.suffix == ".csv":
        rows = read_csv(path)
    else:
        cfg = resolve_config(source, args)
        out = Path(args.out or cfg.out_dir) / label
        results = run_jobs([(cfg, s) for s in cfg.seeds], args.workers)
        write_results(results, out)
        return [row for r in results for row in r.rows], results
    return rows, []


def _relabel(rows: list[EvalRow], method: str) -> list[EvalRow]:
    return [EvalRow(method, r.env, r.seed, r.step, r.eval_return, r.mean_action_gap, r.stale_fraction, r.loss)
            for r in rows]


def cmd_compare(args) -> int:
    rows_a, res_a = _load_side(args.a, "a", args)
    rows_b, res_b = _load_side(args.b, "b", args)
    methods_a = {r.method for r in rows_a}
    methods_b = {r.method for r in rows_b}
    name_a = "/".join(sorted(methods_a)) or "a"
    name_b = "/".join(sorted(methods_b)) or "b"
    if name_a == name_b:
        name_a, name_b = f"{name_a}[a]", f"{name_b}[b]"
    rows = _relabel(rows_a, name_a) + _relabel(rows_b, name_b)
    summary = summarize(rows, baseline=name_a)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / "summary.csv"
    emit_summary(summary, out)
    for row in summary:
        print(f"{row['method']:>16} {row['env']:>8}  rel_improvement={row['rel_improvement_vs_baseline']:+.2%}  "
              f"final_median={row['final_score_median']:.3f}")
    print(out)
    return _report_failures(res_a + res_b)


def oracle_report(mdp, alpha: float, tol: float = 1e-10) -> dict:
    """Greedy-policy agreement and action-gap statistics of the AL fixed point against Q*."""
    q_star = value_iteration(mdp, tol=tol)
    q_al = al_fixed_point(mdp, alpha, tol=tol)
    agree = float(np.mean(greedy_policy(q_star) == greedy_policy(q_al)))
    gap_star = mean_action_gap(q_star)
    gap_al = mean_action_gap(q_al)
    if gap_star > 0.0:
        ratio = gap_al / gap_star
    else:
        ratio = 1.0 if gap_al == 0.0 else float("inf")
    return {"policy_agreement": agree, "mean_gap_qstar": gap_star, "mean_gap_al": gap_al, "gap_ratio": ratio,
            "max_abs_diff": float(np.max(np.abs(q_al - q_star)))}


def cmd_oracle(args) -> int:
    if args.mdp:
        mdp = load_mdp(args.mdp)
    else:
        rng = np.random.default_rng(args.random_seed)
        mdp = random_mdp(args.states, args.actions, args.gamma, rng)
    rep = oracle_report(mdp, args.alpha)
    print(f"states={mdp.n_states} actions={mdp.n_actions} gamma={mdp.gamma} alpha={args.alpha}")
    print(f"policy_agreement={rep['policy_agreement']:.2%}")
    print(f"mean_gap_qstar={rep['mean_gap_qstar']:.6g} mean_gap_al={rep['mean_gap_al']:.6g} "
          f"gap_ratio={rep['gap_ratio']:.6g}")
    print(f"max_abs_diff={rep['max_abs_diff']:.3g}")
    return EXIT_OK


def expand_sweep(cfg: RunConfig, axis: str, values: list[str]) -> list[RunConfig]:
    """One config per axis value, each labelled so its runs stay distinguishable."""
    if axis not in AXES:
        raise UsageError(f"unknown sweep axis {axis!r}; choose from {', '.join(AXES)}")
    if not values:
        raise UsageError(f"empty value list for sweep axis {axis!r}")
    out = []
    try:
        for v in values:
            if axis == "variant":
                variant = LossVariant.parse(v)
                out.append(cfg.with_agent(loss_variant=variant).replace(method=variant.value))
            elif axis == "stickiness":
                c = cfg.with_env(sticky=float(v))
                out.append(c.replace(method=f"{c.method_name}_p{float(v):g}"))
            else:
                c = cfg.with_agent(alpha=float(v))
                out.append(c.replace(method=f"{cfg.agent.loss_variant.value}_alpha{float(v):g}"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad {axis} value: {exc}") from None
    return out


def cmd_sweep(args) -> int:
    cfg = resolve_config(args.config, args)
    values = DEFAULT_AXIS_VALUES[args.axis] if args.values is None else args.values
    configs = expand_sweep(cfg, args.axis, values)
    jobs = [(c, s) for c in configs for s in c.seeds]
    results = run_jobs(jobs, args.workers)
    paths = write_results(results, cfg.out_dir)
    # aggregate from the files on disk so the summary always matches them
    rows = [row for p in paths for row in read_csv(p)]
    summary = summarize(rows, baseline=configs[0].method_name)
    out = Path(cfg.out_dir) / f"summary_{args.axis}.csv"
    emit_summary(summary, out)
    print(f"{len(results)} runs; summary: {out}")
    return _report_failures(results)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sailab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration over its seeds")
    p.add_argument("--config")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="relative improvement of B over A")
    p.add_argument("a", help="baseline: results CSV, directory of CSVs, or config file")
    p.add_argument("b", help="candidate: results CSV, directory of CSVs, or config file")
    _add_run_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle", help="value iteration vs the AL fixed point on a tabular MDP")
    p.add_argument("mdp", nargs="?", help="MDP text file (omit for a random MDP)")
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--random-seed", type=int, default=0)
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--actions", type=int, default=3)
    p.add_argument("--gamma", type=float, default=0.9)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sweep", help="expand one axis of a config and run every point")
    p.add_argument("--config")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", nargs="*", default=None, help="axis values (defaults per axis)")
    _add_run_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, FileNotFoundError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
