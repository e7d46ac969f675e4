import csv

import pytest

from sailab.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, expand_sweep, main, oracle_report
from sailab.config import RunConfig
from sailab.mdp import format_mdp, random_mdp
from sailab.metrics import EvalRow, emit_csv, read_csv, summarize

import numpy as np

SMALL = """
[agent]
warmup = 100
hidden = 8

[run]
steps = 300
eval_period = 150
eval_episodes = 1
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def constant_csv(path, method, value, seeds=(0, 1)):
    emit_csv([EvalRow(method, "kdt", s, k * 1000, value) for s in seeds for k in (1, 2, 3)], path)
    return path


def test_train_writes_one_csv_per_seed(small_cfg, tmp_path, capsys):
    out = tmp_path / "runs"
    code = main(["train", "--config", str(small_cfg), "--seed", "0", "--seed", "5", "--out", str(out),
                 "--variant", "al", "--workers", "1"])
    assert code == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["al_kdt_seed0.csv", "al_kdt_seed5.csv"]
    assert [r["step"] for r in read_rows(out / "al_kdt_seed5.csv")] == ["150", "300"]


def test_flags_override_file(small_cfg, tmp_path):
    out = tmp_path / "runs"
    assert main(["train", "--config", str(small_cfg), "--steps", "150", "--sticky", "0", "--alpha", "0.5",
                 "--out", str(out), "--workers", "1"]) == EXIT_OK
    assert [r["step"] for r in read_rows(out / "sail_kdt_seed0.csv")] == ["150"]


def test_bad_config_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[agent]\nalpha = 3\n")
    assert main(["train", "--config", str(bad)]) == EXIT_USAGE
    assert "alpha" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.ini")]) == EXIT_USAGE
    assert main(["train", "--seed", "1", "--seed", "1"]) == EXIT_USAGE
    assert main(["train", "--variant", "ppo"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_run_failure_exit_code(small_cfg, tmp_path, monkeypatch):
    from sailab import training
    from sailab.agents import NonFiniteError

    def boom(cfg, seed):
        res = training.RunResult("sail", "kdt", seed)
        res.failed, res.error = True, str(NonFiniteError("non-finite gradient"))
        return res

    monkeypatch.setattr(training, "train_seed", boom)
    assert main(["train", "--config", str(small_cfg), "--out", str(tmp_path / "o"), "--workers", "1"]) == EXIT_FAILURE


def test_compare_identical_inputs(tmp_path, capsys):
    a = constant_csv(tmp_path / "a.csv", "sail", 3.0)
    assert main(["compare", str(a), str(a), "--out", str(tmp_path)]) == EXIT_OK
    rows = read_rows(tmp_path / "summary.csv")
    assert {float(r["rel_improvement_vs_baseline"]) for r in rows} == {0.0}


def test_compare_double_is_plus_hundred(tmp_path):
    a = constant_csv(tmp_path / "a.csv", "dqn", 1.0)
    b = constant_csv(tmp_path / "b.csv", "sail", 2.0)
    assert main(["compare", str(a), str(b), "--out", str(tmp_path)]) == EXIT_OK
    rows = {r["method"]: r for r in read_rows(tmp_path / "summary.csv")}
    assert float(rows["sail"]["rel_improvement_vs_baseline"]) == pytest.approx(1.0, rel=1e-5)


def test_compare_directories(tmp_path):
    (tmp_path / "da").mkdir(), (tmp_path / "db").mkdir()
    constant_csv(tmp_path / "da" / "x.csv", "dqn", 1.0)
    constant_csv(tmp_path / "db" / "y.csv", "sail", 1.5)
    assert main(["compare", str(tmp_path / "da"), str(tmp_path / "db"), "--out", str(tmp_path)]) == EXIT_OK


def test_compare_missing_csv(tmp_path, capsys):
    a = constant_csv(tmp_path / "a.csv", "dqn", 1.0)
    missing = tmp_path / "gone.csv"
    assert main(["compare", str(a), str(missing)]) == EXIT_USAGE
    assert str(missing) in capsys.readouterr().err


def test_compare_runs_configs(small_cfg, tmp_path):
    assert main(["compare", str(small_cfg), str(small_cfg), "--out", str(tmp_path), "--workers", "1"]) == EXIT_OK
    rows = read_rows(tmp_path / "summary.csv")
    assert [float(r["rel_improvement_vs_baseline"]) for r in rows] == [0.0, 0.0]


def test_oracle_random_mdp(capsys):
    assert main(["oracle", "--alpha", "0.9", "--random-seed", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "policy_agreement=100.00%" in out


def test_oracle_alpha_zero_is_identity():
    mdp = random_mdp(5, 3, 0.9, np.random.default_rng(0))
    rep = oracle_report(mdp, 0.0)
    assert rep["gap_ratio"] == 1.0 and rep["max_abs_diff"] == 0.0


def test_oracle_file_and_parse_error(tmp_path, capsys):
    good = tmp_path / "m.mdp"
    good.write_text(format_mdp(random_mdp(3, 2, 0.8, np.random.default_rng(1))))
    assert main(["oracle", str(good), "--alpha", "0.5"]) == EXIT_OK
    bad = tmp_path / "bad.mdp"
    bad.write_text("2 1 0.9\n0 1 0\n0 0.3 0.3\n")
    assert main(["oracle", str(bad)]) == EXIT_USAGE
    assert f"{bad}:3:" in capsys.readouterr().err
    assert main(["oracle", "--alpha", "1.0"]) == EXIT_USAGE


def test_sweep_expansion_counts():
    cfg = RunConfig(seeds=(0, 1, 2))
    configs = expand_sweep(cfg, "variant", ["dqn", "al", "strsil", "sail"])
    assert [c.method_name for c in configs] == ["dqn", "al", "strsil", "sail"]
    assert sum(len(c.seeds) for c in configs) == 12
    sticky = expand_sweep(cfg, "stickiness", ["0", "0.25", "0.5"])
    assert [c.env.sticky for c in sticky] == [0.0, 0.25, 0.5]
    assert len({c.method_name for c in sticky}) == 3


def test_sweep_empty_axis(capsys):
    assert main(["sweep", "--axis", "variant", "--values"]) == EXIT_USAGE
    assert "empty" in capsys.readouterr().err


def test_sweep_summary_matches_files(small_cfg, tmp_path):
    out = tmp_path / "sw"
    code = main(["sweep", "--config", str(small_cfg), "--axis", "stickiness", "--values", "0", "0.5",
                 "--seed", "0", "--seed", "1", "--out", str(out), "--workers", "1"])
    assert code == EXIT_OK
    csvs = sorted(p for p in out.glob("*.csv") if not p.name.startswith("summary"))
    assert len(csvs) == 4
    rows = [r for p in csvs for r in read_csv(p)]
    expected = summarize(rows, baseline="sail_p0")
    got = read_rows(out / "summary_stickiness.csv")
    assert [r["method"] for r in got] == [e["method"] for e in expected]
    for g, e in zip(got, expected):
        assert float(g["rel_improvement_vs_baseline"]) == e["rel_improvement_vs_baseline"]
        assert float(g["final_score_median"]) == e["final_score_median"]
