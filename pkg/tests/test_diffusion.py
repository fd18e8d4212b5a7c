import numpy as np
import pytest

from hqdm.diffusion import (
    FloatOps, NoiseSchedule, SyntheticDataset, ToyDenoiser, ddim_sample, ddim_timesteps, forward_noise,
    load_model, make_schedule, save_model, train_teacher,
)
from hqdm.constants import SAMPLE_CHUNK
from hqdm.diffusion.checkpoint import read_manifest, write_manifest
from hqdm.diffusion.data import STRIPE_COLUMNS
from hqdm.diffusion.model import LAYER_ORDER, first_nonfinite_layer
from hqdm.errors import ValidationError


class TestSchedule:
    def test_alphas_bar_decrease(self):
        sched = make_schedule(100, 1e-3, 0.2)
        assert sched.T == 100
        assert np.all(np.diff(sched.alphas_bar) < 0)
        assert sched.alphas_bar[0] == pytest.approx(1 - 1e-3)

    @pytest.mark.parametrize("T,start,end", [(1, 1e-3, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 1e-3, 1.0)])
    def test_invalid(self, T, start, end):
        with pytest.raises(ValidationError):
            make_schedule(T, start, end)

    def test_manifest_round_trip(self):
        sched = make_schedule(50, 2e-3, 0.1)
        again = make_schedule(**sched.to_manifest())
        assert np.array_equal(again.alphas_bar, sched.alphas_bar)

    def test_forward_noise_per_sample(self, small_schedule, rng):
        x0 = rng.standard_normal((2, 1, 4, 4))
        eps = rng.standard_normal(x0.shape)
        xt = forward_noise(x0, np.array([0, 5]), eps, small_schedule)
        a = small_schedule.alphas_bar
        assert np.allclose(xt[1], np.sqrt(a[5]) * x0[1] + np.sqrt(1 - a[5]) * eps[1])
        assert np.allclose(xt[0], np.sqrt(a[0]) * x0[0] + np.sqrt(1 - a[0]) * eps[0])

    @pytest.mark.parametrize("t", [0, 10, 19])
    def test_forward_noise_variance(self, small_schedule, rng, t):
        x0 = rng.uniform(-1.0, 1.0, size=(10_000, 1, 2, 2))
        eps = rng.standard_normal(x0.shape)
        x_t = forward_noise(x0, np.full(len(x0), t), eps, small_schedule)
        a = small_schedule.alphas_bar[t]
        assert x_t.var() == pytest.approx(a * x0.var() + (1 - a), rel=0.05)

    def test_forward_noise_rejects_bad_timestep(self, small_schedule):
        with pytest.raises(ValidationError):
            forward_noise(np.zeros((1, 1, 2, 2)), 20, np.zeros((1, 1, 2, 2)), small_schedule)


class TestDataset:
    def test_shape_and_range(self):
        images = SyntheticDataset(5, seed=1).images()
        assert images.shape == (5, 1, 16, 16)
        assert images.min() >= -1.0 and images.max() <= 1.0

    def test_seeded(self):
        assert np.array_equal(SyntheticDataset(3, seed=2).images(), SyntheticDataset(3, seed=2).images())
        assert not np.array_equal(SyntheticDataset(3, seed=2).images(), SyntheticDataset(3, seed=4).images())

    def test_stripe_columns(self):
        images = SyntheticDataset(2, seed=0).images()
        for col in STRIPE_COLUMNS:
            assert np.array_equal(np.abs(images[:, 0, :, col]), np.ones((2, 16)))

    def test_empty(self):
        with pytest.raises(ValidationError):
            SyntheticDataset(0)


class TestModel:
    def test_output_shape(self, untrained_model, rng):
        out = untrained_model.predict(rng.standard_normal((3, 1, 16, 16)), 4)
        assert out.shape == (3, 1, 16, 16)

    def test_rejects_wrong_input_shape(self, untrained_model):
        with pytest.raises(ValidationError):
            untrained_model.predict(np.zeros((1, 1, 8, 8)), 0)

    def test_rejects_timestep_outside_schedule(self, untrained_model):
        with pytest.raises(ValidationError):
            untrained_model.predict(np.zeros((1, 1, 16, 16)), 20)

    def test_missing_parameter(self, untrained_model):
        params = dict(untrained_model.params)
        del params["fc1.weight"]
        with pytest.raises(ValidationError):
            ToyDenoiser(params, untrained_model.T)

    def test_recorder_sees_every_layer_in_order(self, untrained_model):
        seen = []
        untrained_model.forward(np.zeros((1, 1, 16, 16)), 2, recorder=lambda name, x, t: seen.append(name))
        assert tuple(seen) == LAYER_ORDER

    @pytest.mark.parametrize("name,idx", [
        ("conv_in.weight", (3, 0, 1, 1)),
        ("down.weight", (5, 2, 0, 2)),
        ("mid.bias", (7,)),
        ("fc1.weight", (4, 9)),
        ("fc2.weight", (10, 3)),
        ("up.weight", (1, 4, 2, 2)),
        ("conv_out.bias", (0,)),
        ("temb.down", (7, 2)),
    ])
    def test_backward_matches_finite_difference(self, untrained_model, rng, name, idx):
        model = untrained_model.copy()
        x = rng.standard_normal((2, 1, 16, 16))
        t = np.array([3, 7])

        ops = FloatOps(model.params, track_grads=True)
        out, tape = model.forward(x, t, ops)
        param_grads = model.backward(tape, out, ops)
        grads = {**ops.grads, **param_grads}

        def loss():
            return 0.5 * np.sum(model.predict(x, t) ** 2)

        eps = 1e-6
        saved = model.params[name][idx]
        model.params[name][idx] = saved + eps
        up = loss()
        model.params[name][idx] = saved - eps
        down = loss()
        model.params[name][idx] = saved
        assert grads[name][idx] == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-7)

    def test_first_nonfinite_layer(self):
        tape = {"outputs": {"conv_in": np.zeros(2), "down": np.array([np.inf]), "mid": np.array([np.nan])}}
        assert first_nonfinite_layer(tape) == "down"
        assert first_nonfinite_layer({"outputs": {"conv_in": np.zeros(2)}}) is None


class TestSampler:
    def test_timesteps(self):
        steps = ddim_timesteps(20, 4)
        assert steps.tolist() == [19, 13, 6, 0]
        assert ddim_timesteps(100, 100).tolist() == list(range(99, -1, -1))

    @pytest.mark.parametrize("n", [0, 21])
    def test_step_count_range(self, n):
        with pytest.raises(ValidationError):
            ddim_timesteps(20, n)

    def test_sample_is_seeded(self, small_teacher, small_schedule):
        a = ddim_sample(small_teacher, small_schedule, 4, seed=3, n_samples=3)
        b = ddim_sample(small_teacher, small_schedule, 4, seed=3, n_samples=3)
        assert a.shape == (3, 1, 16, 16)
        assert np.array_equal(a, b)
        assert a.min() >= -1.0 and a.max() <= 1.0

    def test_thread_count_does_not_change_samples(self, small_teacher, small_schedule, monkeypatch):
        serial = ddim_sample(small_teacher, small_schedule, 4, seed=3, n_samples=2 * SAMPLE_CHUNK + 3,
                             parallel=False)
        monkeypatch.setenv("HQDM_THREADS", "4")
        threaded = ddim_sample(small_teacher, small_schedule, 4, seed=3, n_samples=2 * SAMPLE_CHUNK + 3)
        assert np.array_equal(serial, threaded)

    @pytest.mark.slow
    def test_full_step_samples_match_data_statistics(self, default_teacher):
        teacher, schedule, dataset = default_teacher
        samples = ddim_sample(teacher, schedule, schedule.T, seed=0, n_samples=256)
        images = dataset.images()
        assert samples.mean() == pytest.approx(images.mean(), rel=0.2)
        assert samples.var() == pytest.approx(images.var(), rel=0.2)

    def test_trajectory_covers_sub_schedule(self, small_teacher, small_schedule):
        samples, trajectory = ddim_sample(small_teacher, small_schedule, 4, seed=0, n_samples=2,
                                          return_trajectory=True)
        assert sorted(trajectory) == [0, 6, 13, 19]
        assert all(v.shape == (2, 1, 16, 16) for v in trajectory.values())

    def test_rejects_empty_batch(self, small_teacher, small_schedule):
        with pytest.raises(ValidationError):
            ddim_sample(small_teacher, small_schedule, 4, n_samples=0)


class TestTraining:
    def test_teacher_is_seeded(self, small_schedule):
        data = SyntheticDataset(16, seed=1)
        a = train_teacher(data, small_schedule, epochs=1, seed=2, batch_size=8)
        b = train_teacher(data, small_schedule, epochs=1, seed=2, batch_size=8)
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name])
        assert len(a.loss_history) == 1

    @pytest.mark.slow
    def test_default_budget_halves_the_loss(self, default_teacher):
        history = default_teacher[0].loss_history
        assert history[-1] <= 0.5 * history[0]

    def test_trained_teacher_denoises(self, small_teacher, small_schedule, rng):
        x0 = SyntheticDataset(8, seed=21).images()
        t = np.full(len(x0), 10)
        eps = rng.standard_normal(x0.shape)
        x_t = forward_noise(x0, t, eps, small_schedule)
        a = small_schedule.alphas_bar[10]
        x0_hat = (x_t - np.sqrt(1 - a) * small_teacher.predict(x_t, t)) / np.sqrt(a)
        assert np.mean((x0_hat - x0) ** 2) < np.mean((x_t - x0) ** 2)


class TestCheckpoint:
    def test_round_trip(self, small_teacher, small_schedule, tmp_path):
        save_model(small_teacher, small_schedule, tmp_path / "teacher")
        model, sched = load_model(tmp_path / "teacher")
        assert isinstance(sched, NoiseSchedule)
        assert np.array_equal(sched.alphas_bar, small_schedule.alphas_bar)
        for name, value in small_teacher.params.items():
            assert np.array_equal(model.params[name], value.astype(np.float32).astype(np.float64))
        assert model.loss_history == pytest.approx(small_teacher.loss_history)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ValidationError):
            load_model(tmp_path)

    def test_wrong_kind(self, small_teacher, small_schedule, tmp_path):
        save_model(small_teacher, small_schedule, tmp_path)
        manifest = read_manifest(tmp_path)
        manifest["kind"] = "student"
        write_manifest(tmp_path, manifest)
        with pytest.raises(ValidationError):
            load_model(tmp_path)
