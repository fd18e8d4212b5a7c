import csv
import math

import numpy as np
import pytest

from hqdm.analysis import (
    ActivationRecorder, block_dominance, block_rms, capture_activations, channel_outlier_stats,
    collect_outlier_reports, compare_layer, compare_schemes, emit_report, emit_scheme_report, outlier_report,
    outlier_rows, select_timesteps, transform_rows,
)
from hqdm.constants import OUTLIER_COLUMNS, SCHEME_COLUMNS
from hqdm.errors import ValidationError
from hqdm.hadamard import HadamardPlan, block_transform, make_plan


def test_channel_stats_of_a_known_matrix():
    X = np.array([[1.0, -2.0], [3.0, 0.0]])
    stats = channel_outlier_stats(X)
    assert stats.max_abs.tolist() == [3.0, 2.0]
    assert stats.signed_min.tolist() == [1.0, -2.0]
    assert stats.signed_max.tolist() == [3.0, 0.0]
    assert stats.rms[0] == pytest.approx(math.sqrt(5.0))
    assert stats.ratio == pytest.approx(3.0 / math.sqrt(14.0 / 4))


def test_gaussian_kurtosis_is_near_three(rng):
    assert channel_outlier_stats(rng.standard_normal((4000, 16))).kurtosis == pytest.approx(3.0, abs=0.15)


def test_constant_input_has_zero_kurtosis():
    assert channel_outlier_stats(np.ones((3, 4))).kurtosis == 0.0


@pytest.mark.parametrize("X", [np.zeros((0, 4)), np.zeros(5)])
def test_stats_need_a_non_empty_matrix(X):
    with pytest.raises(ValidationError):
        channel_outlier_stats(X)


def test_spike_channel_is_flattened(rng):
    X = 0.1 * rng.standard_normal((64, 32))
    X[:, 7] = 50.0
    report = outlier_report(X, make_plan(32, 5), "fc1", 3)
    assert report.pre.max_abs.max() == pytest.approx(50.0, abs=1.0)
    assert report.post.max_abs.max() < report.pre.max_abs.max() / 4
    assert report.post.kurtosis < report.pre.kurtosis
    assert block_dominance(X, report.plan) > 1.0


def test_transform_preserves_block_rms(rng):
    X = rng.standard_t(2, size=(10, 48))
    plan = make_plan(48, 5)
    assert np.allclose(block_rms(X, plan), block_rms(block_transform(X, plan), plan))


def test_dominance_of_a_flat_block_is_below_one():
    plan = HadamardPlan(k=2, m=1)
    # constant rows turn into a single spike, so the maximum grows
    assert block_dominance(np.ones((2, 4)), plan) < 1.0
    assert block_dominance(np.zeros((2, 4)), plan) == 0.0


def test_report_plan_must_cover_channels(rng):
    with pytest.raises(ValidationError):
        outlier_report(rng.standard_normal((4, 16)), make_plan(32, 5))


def test_transform_rows_layouts():
    assert transform_rows("mid", np.zeros((2, 32, 8, 8))).shape == (2 * 32 * 8, 8)
    assert transform_rows("fc1", np.zeros((5, 32))).shape == (5, 32)
    with pytest.raises(ValidationError):
        transform_rows("nope", np.zeros((1, 1)))


class TestRecorder:
    def test_filters_by_layer_and_timestep(self):
        recorder = ActivationRecorder(["fc1"], [3])
        recorder("fc1", np.ones((2, 4)), 3)
        recorder("fc1", np.ones((1, 4)), 3)
        recorder("fc1", np.ones((2, 4)), 4)
        recorder("fc2", np.ones((2, 4)), 3)
        assert recorder.keys() == [("fc1", 3)]
        assert recorder.get("fc1", 3).shape == (3, 4)

    def test_copies_its_input(self):
        recorder = ActivationRecorder()
        x = np.zeros((1, 2))
        recorder("fc1", x, 0)
        x[0, 0] = 5.0
        assert recorder.get("fc1", 0)[0, 0] == 0.0

    def test_missing_entry(self):
        with pytest.raises(ValidationError):
            ActivationRecorder().get("fc1", 0)

    def test_rejects_mixed_timesteps(self):
        with pytest.raises(ValidationError):
            ActivationRecorder()("fc1", np.zeros((2, 2)), np.array([0, 1]))


def test_capture_covers_visited_timesteps(small_teacher, small_schedule):
    recorder = capture_activations(small_teacher, small_schedule, 4, 3, seed=0)
    assert {t for _, t in recorder.keys()} == {0, 6, 13, 19}
    assert recorder.get("conv_in", 19).shape == (3, 1, 16, 16)
    assert recorder.get("fc1", 6).shape == (3 * 8 * 8, 32)


def test_collect_reports_one_per_entry(small_teacher, small_schedule):
    recorder = capture_activations(small_teacher, small_schedule, 4, 2, seed=1,
                                   recorder=ActivationRecorder(["mid", "fc2"], [13]))
    reports = collect_outlier_reports(recorder, 5)
    assert [(r.layer, r.timestep) for r in reports] == [("fc2", 13), ("mid", 13)]
    assert reports[0].plan.dim == 64
    assert reports[1].plan.dim == 8
    assert len(outlier_rows(reports)) == 64 + 8


def test_transform_on_captured_activations(small_teacher, small_schedule):
    recorder = capture_activations(small_teacher, small_schedule, 4, 4, seed=0,
                                   recorder=ActivationRecorder(timesteps=[19, 6, 0]))
    for name, t in recorder.keys():
        X = transform_rows(name, recorder.get(name, t))
        plan = make_plan(X.shape[1], 5)
        post = block_transform(X, plan)
        assert np.allclose(block_rms(X, plan), block_rms(post, plan), rtol=1e-6, atol=1e-12), (name, t)

        segments = X.reshape(X.shape[0], plan.m, plan.block)
        pre_max = np.max(np.abs(segments), axis=2)
        post_max = np.max(np.abs(post.reshape(segments.shape)), axis=2)
        # a segment whose own peak beats the transform's bound must shrink
        dominated = pre_max > plan.norm * np.sum(np.abs(segments), axis=2)
        assert np.all(post_max[dominated] < pre_max[dominated]), (name, t)


def test_outlier_rows_carry_matrix_statistics(rng, tmp_path):
    X = rng.standard_normal((32, 16))
    X[:, 4] += 20.0
    report = outlier_report(X, make_plan(16, 5), "fc1", 0)
    rows = outlier_rows([report])
    assert all(row["ratio_pre"] == report.pre.ratio and row["kurtosis_post"] == report.post.kurtosis
               for row in rows)
    assert rows[0]["ratio_post"] < rows[0]["ratio_pre"]

    path = emit_report(rows, tmp_path / "outliers.csv")
    with open(path, newline="") as f:
        header, *values = list(csv.reader(f))
    assert tuple(header) == OUTLIER_COLUMNS
    assert len(values) == 16
    assert float(values[0][header.index("kurtosis_pre")]) == pytest.approx(report.pre.kurtosis, rel=1e-5)


@pytest.mark.parametrize("requested,expected", [((), [19, 6, 0]), ((13,), [13])])
def test_select_timesteps(requested, expected):
    assert select_timesteps([19, 13, 6, 0], requested) == expected


def test_select_timesteps_rejects_unvisited():
    with pytest.raises(ValidationError):
        select_timesteps([19, 13, 6, 0], [5])


def test_compare_layer_row(rng):
    x = rng.standard_normal((128, 32))
    x[:, 2] += 12.0
    weight = rng.standard_normal((32, 16)) / 6.0
    row = compare_layer("fc1", weight, np.zeros(16), x, 0, 4, make_plan(32, 5), T=1)
    assert set(SCHEME_COLUMNS) <= set(row)
    assert row["mse_single"] < row["mse_plain"]
    assert row["wmax_plain"] == row["wmax_single"] == np.max(np.abs(weight))
    assert row["wmax_double"] == pytest.approx(np.max(np.abs(block_transform(weight.T, make_plan(32, 5)))))


def test_compare_schemes_rows(small_teacher, small_schedule):
    rows = compare_schemes(small_teacher, small_schedule, ["fc1", "fc2"], [19, 0], [4, 8], n_steps=4, n_samples=2)
    assert len(rows) == 2 * 2 * 2
    assert all(row["mse_plain"] >= 0 for row in rows)
    eight = [row for row in rows if row["bits"] == 8]
    four = [row for row in rows if row["bits"] == 4]
    for lo, hi in zip(four, eight):
        assert hi["mse_single"] < lo["mse_single"]


@pytest.mark.parametrize("layers", [["mid"], ["nope"]])
def test_compare_schemes_linear_only(small_teacher, small_schedule, layers):
    with pytest.raises(ValidationError):
        compare_schemes(small_teacher, small_schedule, layers, [0], [4], n_steps=4, n_samples=1)


def test_emit_report_formats_floats(tmp_path):
    row = {c: 0 for c in OUTLIER_COLUMNS}
    row.update(layer="fc1", max_pre=1.0 / 3.0, max_post=np.float64(2.5e-7))
    path = emit_report([row], tmp_path / "out" / "outliers.csv")
    with open(path, newline="") as f:
        header, values = list(csv.reader(f))
    assert tuple(header) == OUTLIER_COLUMNS
    assert values[header.index("max_pre")] == "0.333333"
    assert values[header.index("max_post")] == "2.5e-07"
    assert values[header.index("layer")] == "fc1"


def test_emit_report_rejects_incomplete_rows(tmp_path):
    with pytest.raises(ValidationError):
        emit_scheme_report([{"layer": "fc1"}], tmp_path / "schemes.csv")
