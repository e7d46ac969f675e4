from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sailab.agents import QFunction
from sailab.envs import KeyDoorTreasureEnv
from sailab.metrics import (BaselineAnchors, EvalRow, RunRecord, anchor_scores, emit_csv, emit_summary,
                            mean_action_gap, mean_relative_improvement, normalized_median, normalized_score,
                            qf_mean_action_gap, read_csv, run_records, seed_average, stale_fraction, summarize)
from sailab.replay import Batch

DATA = Path(__file__).parent / "data"


def rows_for(method, seeds, curve):
    return [EvalRow(method, "kdt", s, 1000 * (k + 1), v) for s in seeds for k, v in enumerate(curve)]


# --- relative improvement ------------------------------------------------------------------


def test_identical_curves_zero():
    assert mean_relative_improvement([1.0, 3.0, 2.0], [1.0, 3.0, 2.0]) == 0.0


def test_double_is_plus_hundred_percent():
    assert mean_relative_improvement([2.0] * 5, [1.0] * 5, eps=0.0) == 1.0


def test_zero_baseline_explodes():
    assert mean_relative_improvement([1.0] * 3, [0.0] * 3, eps=1e-6) == pytest.approx(1e6)


def test_length_mismatch():
    with pytest.raises(ValueError):
        mean_relative_improvement([1.0, 2.0], [1.0])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=10), st.lists(st.floats(-100, 100), min_size=1, max_size=10))
def test_numerator_sign_flips_on_swap(x, y):
    n = min(len(x), len(y))
    x, y = x[:n], y[:n]
    a = mean_relative_improvement(x, y)
    b = mean_relative_improvement(y, x)
    assert a * b <= 0.0


# --- normalised median -------------------------------------------------------------------


ANCHORS = BaselineAnchors(random={"a": 0.0, "b": -1.0, "c": 10.0}, reference={"a": 1.0, "b": 3.0, "c": 20.0})


def test_all_at_reference():
    assert normalized_median({"a": 1.0, "b": 3.0, "c": 20.0}, ANCHORS) == 1.0


def test_all_at_random():
    assert normalized_median({"a": 0.0, "b": -1.0, "c": 10.0}, ANCHORS) == 0.0


def test_median_of_three():
    assert normalized_median({"a": 0.2, "b": -1.0 + 0.5 * 4, "c": 10.0 + 0.9 * 10}, ANCHORS) == pytest.approx(0.5)


def test_missing_anchor():
    with pytest.raises(KeyError):
        normalized_median({"a": 0.5, "zzz": 1.0}, ANCHORS)


def test_anchor_collision_rejected():
    with pytest.raises(ValueError):
        BaselineAnchors(random={"a": 1.0}, reference={"a": 1.0})


@given(st.floats(0.1, 10), st.floats(-10, 10), st.floats(-5, 5))
def test_normalization_absorbs_affine_rescaling(scale, shift, score):
    base = normalized_score(score, "b", ANCHORS)
    moved = BaselineAnchors(random={"b": -1.0 * scale + shift}, reference={"b": 3.0 * scale + shift})
    assert normalized_score(score * scale + shift, "b", moved) == pytest.approx(base, abs=1e-9)


# --- action gap ------------------------------------------------------------------------------


def test_constant_rows_have_zero_gap():
    assert mean_action_gap(np.full((4, 3), 2.5)) == 0.0


def test_gap_by_hand():
    assert mean_action_gap(np.array([[3.0, 1.0], [5.0, 5.0]])) == 1.0


def test_single_action_gap_is_zero():
    assert mean_action_gap(np.array([[1.0], [2.0]])) == 0.0


@given(st.integers(0, 2**31 - 1))
def test_gap_shift_invariant(seed):
    rng = np.random.default_rng(seed)
    q = rng.integers(-5, 5, size=(6, 4)).astype(float)
    shift = rng.integers(-5, 5, size=(6, 1)).astype(float)
    assert mean_action_gap(q + shift) == mean_action_gap(q)


def test_gap_of_q_function():
    qf = QFunction("tabular", 2, 2)
    qf.params["table"][...] = [[3.0, 1.0], [5.0, 5.0]]
    assert qf_mean_action_gap(qf, [0, 1]) == 1.0


# --- stale fraction ---------------------------------------------------------------------


def stale_batch(returns):
    n = len(returns)
    return Batch(np.arange(n) % 2, np.zeros(n, dtype=int), np.zeros(n), np.zeros(n, dtype=int),
                 np.zeros(n, dtype=bool), np.asarray(returns, dtype=float))


def constant_target(value):
    qf = QFunction("tabular", 2, 2)
    qf.theta[:] = value
    return qf


def test_stale_extremes():
    batch = stale_batch([0.5, 1.0, 2.0, 7.0])
    assert stale_fraction(batch, constant_target(1e9)) == 0.0
    assert stale_fraction(batch, constant_target(-1e9)) == 1.0


def test_stale_half():
    qf = QFunction("tabular", 2, 2)
    qf.params["table"][:, 0] = [1.0, 2.0]
    batch = stale_batch([1.5, 2.5, 0.5, 1.0])  # states 0,1,0,1
    assert stale_fraction(batch, qf) == 0.5


def test_stale_fresh_untrained_target():
    qf = QFunction("mlp", 2, 2, hidden=4)
    assert stale_fraction(stale_batch([0.1, 0.5, 3.0]), qf) == 1.0


# --- run records and CSV -----------------------------------------------------------------


def test_run_record_validation():
    with pytest.raises(ValueError):
        RunRecord("m", "e", 0, [2, 1], [0.0, 0.0])
    with pytest.raises(ValueError):
        RunRecord("m", "e", 0, [1], [float("nan")])


def test_seed_average():
    recs = run_records(rows_for("x", [0], [1.0, 2.0]) + rows_for("x", [1], [3.0, 4.0]))
    np.testing.assert_array_equal(seed_average(recs), [2.0, 3.0])


def test_emit_empty_is_header_only(tmp_path):
    path = tmp_path / "e.csv"
    emit_csv([], path)
    assert path.read_text() == "method,env,seed,step,eval_return,mean_action_gap,stale_fraction,loss\n"


def test_emit_roundtrip(tmp_path):
    rows = [EvalRow("sail", "kdt", 2, 3000, 1 / 3, 0.1, 0.2, 1e-7),
            EvalRow("al", "chain", 0, 1000, 7.0, float("nan"), float("nan"), float("nan"))]
    path = tmp_path / "r.csv"
    emit_csv(rows, path)
    back = read_csv(path)
    assert [r.sort_key() for r in back] == sorted(r.sort_key() for r in rows)
    assert back[1] == rows[0]
    assert np.isnan(back[0].loss) and back[0].eval_return == 7.0


def test_golden_fixture(tmp_path):
    rows = [EvalRow("sail", "kdt", 0, 1000, 0.5, 0.25, 0.125, 0.0625),
            EvalRow("dqn", "kdt", 1, 2000, 7.0, 1.5, 0.0, 0.001)]
    path = tmp_path / "g.csv"
    emit_csv(rows, path)
    assert path.read_bytes() == (DATA / "golden_eval.csv").read_bytes()


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.csv"
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        read_csv(missing)


def test_write_error_names_path(tmp_path):
    with pytest.raises(OSError, match="no_dir"):
        emit_csv([], tmp_path / "no_dir" / "x.csv")


def test_summary(tmp_path):
    rows = rows_for("dqn", [0, 1], [1.0, 1.0]) + rows_for("sail", [0, 1], [2.0, 2.0])
    summary = summarize(rows, baseline="dqn", eps=0.0)
    by_method = {s["method"]: s for s in summary}
    assert by_method["dqn"]["rel_improvement_vs_baseline"] == 0.0
    assert by_method["sail"]["rel_improvement_vs_baseline"] == 1.0
    assert by_method["sail"]["final_score_median"] == 2.0
    path = tmp_path / "s.csv"
    emit_summary(summary, path)
    assert path.read_text().splitlines()[0] == "method,env,rel_improvement_vs_baseline,final_score_mean,final_score_median"


def test_summary_needs_baseline():
    with pytest.raises(KeyError):
        summarize(rows_for("sail", [0], [1.0]), baseline="dqn")


def test_anchor_scores_bracket():
    rand, ref = anchor_scores("kdt", 0.0, 0, episodes=20)
    assert ref == 7.0
    assert 0.0 <= rand < ref
    assert len(KeyDoorTreasureEnv().shortest_path()) > 0
