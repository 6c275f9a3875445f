import os

import numpy as np
import pytest

from emofuse.data import Dataset, Sample, SynthConfig, load_dataset, synth_generate
from emofuse.train import (
    EmptySplitError,
    TrainConfig,
    TrainingDivergedError,
    build_model,
    evaluate,
    load_checkpoint,
    train,
)


def tiny_dataset(tmp_path, name="d", **kw):
    defaults = dict(
        n_classes=3, train_per_class=6, test_per_class=3,
        text_dim=8, audio_dim=10, seq_len_min=2, seq_len_max=4,
        center_spread=2.0, noise_std=0.2, consistency=1.0, seed=11,
    )
    defaults.update(kw)
    return load_dataset(synth_generate(SynthConfig(**defaults), tmp_path / name))


def tiny_config(**kw):
    defaults = dict(d_model=8, n_heads=2, epochs=2, seed=3, batch_size=4, learning_rate=1e-3)
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestTrainLoop:
    def test_zero_epochs_checkpoint_equals_init(self, tmp_path):
        ds = tiny_dataset(tmp_path)
        cfg = tiny_config(epochs=0)
        result = train(cfg, ds, out_dir=tmp_path / "out")
        fresh = build_model(cfg, ds)
        for got, want in zip(result.model.parameters(), fresh.parameters()):
            assert got.name == want.name
            assert got.data.tobytes() == want.data.tobytes()
        assert result.history == []
        assert os.path.exists(result.checkpoint_path)

    def test_disable_joo_logs_zero_apc(self, tmp_path):
        ds = tiny_dataset(tmp_path)
        result = train(tiny_config(disable_joo=True, epochs=3), ds)
        assert all(row["apc"] == 0.0 for row in result.history)

    def test_empty_train_split(self, tmp_path):
        ds = tiny_dataset(tmp_path, train_per_class=0)
        with pytest.raises(EmptySplitError):
            train(tiny_config(), ds)

    def test_history_and_log_lines(self, tmp_path):
        ds = tiny_dataset(tmp_path)
        lines = []
        result = train(tiny_config(epochs=2), ds, out_dir=tmp_path / "out", log_fn=lines.append)
        assert len(result.history) == 2
        assert len(lines) == 2
        assert lines[0].startswith("epoch=0 ce=")
        logged = open(tmp_path / "out" / "train_log.txt").read().splitlines()
        assert logged == lines

    def test_non_finite_loss_names_epoch_and_step(self):
        rng = np.random.default_rng(0)
        text = rng.normal(size=(3, 8)).astype(np.float32)
        text[1, 2] = np.nan
        sample = Sample("bad", text, rng.normal(size=(2, 10)).astype(np.float32), 0)
        good = Sample("ok", rng.normal(size=(3, 8)).astype(np.float32),
                      rng.normal(size=(2, 10)).astype(np.float32), 1)
        ds = Dataset(class_names=["a", "b"], text_dim=8, audio_dim=10,
                     samples={"train": [sample, good]})
        with pytest.raises(TrainingDivergedError, match="epoch 0.*step 0"):
            train(tiny_config(), ds)

    def test_learns_separable_data(self, tmp_path):
        ds = tiny_dataset(tmp_path, train_per_class=8, noise_std=0.1)
        result = train(tiny_config(epochs=12, learning_rate=2e-3), ds)
        assert result.history[-1]["train_wa"] >= 0.9


class TestDeterminism:
    def test_reruns_bit_identical(self, tmp_path):
        ds = tiny_dataset(tmp_path)
        cfg = tiny_config(epochs=2)
        train(cfg, ds, out_dir=tmp_path / "a")
        train(cfg, ds, out_dir=tmp_path / "b")
        a = open(tmp_path / "a" / "checkpoint.lsgc", "rb").read()
        b = open(tmp_path / "b" / "checkpoint.lsgc", "rb").read()
        assert a == b

    def test_checkpoint_resume_matches_uninterrupted(self, tmp_path):
        ds = tiny_dataset(tmp_path)
        first = train(tiny_config(epochs=1), ds, out_dir=tmp_path / "stage1")
        resumed = train(tiny_config(epochs=2), ds, resume_from=first.checkpoint_path)
        straight = train(tiny_config(epochs=2), ds)
        for got, want in zip(resumed.model.parameters(), straight.model.parameters()):
            assert got.data.tobytes() == want.data.tobytes(), got.name
        assert np.array_equal(resumed.model.labels.snapshot, straight.model.labels.snapshot)
        for m1, m2 in zip(resumed.optimizer.m, straight.optimizer.m):
            assert m1.tobytes() == m2.tobytes()

    def test_ablation_flags_do_not_change_forward(self, tmp_path):
        # the consistency term only alters the loss; pre-update activations match bitwise
        ds = tiny_dataset(tmp_path)
        sample = ds.split("train")[0]
        base = build_model(tiny_config(disable_joo=False), ds)
        ablated = build_model(tiny_config(disable_joo=True), ds)
        r1 = base.forward(sample.text, sample.audio, collect_activations=True)
        r2 = ablated.forward(sample.text, sample.audio, collect_activations=True)
        for key in r1.activations:
            assert np.array_equal(r1.activations[key], r2.activations[key]), key


class TestCheckpointFile:
    def test_round_trip_parameters_and_state(self, tmp_path):
        ds = tiny_dataset(tmp_path)
        cfg = tiny_config(epochs=1)
        result = train(cfg, ds, out_dir=tmp_path / "out")
        model, optimizer, epoch, config = load_checkpoint(result.checkpoint_path)
        assert epoch == 1
        assert config["d_model"] == cfg.d_model
        for got, want in zip(model.parameters(), result.model.parameters()):
            assert got.name == want.name
            assert got.data.tobytes() == want.data.tobytes()
        assert optimizer.t == result.optimizer.t
        for m1, m2 in zip(optimizer.m, result.optimizer.m):
            assert m1.tobytes() == m2.tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "x.lsgc"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_ablated_models_round_trip(self, tmp_path):
        ds = tiny_dataset(tmp_path)
        for flags in ({"disable_lsma": True}, {"disable_joo": True},
                      {"disable_lsma": True, "disable_joo": True}):
            cfg = tiny_config(epochs=1, **flags)
            result = train(cfg, ds, out_dir=tmp_path / ("out" + "_".join(flags)))
            model, _, _, _ = load_checkpoint(result.checkpoint_path)
            assert len(model.parameters()) == len(result.model.parameters())


class TestEvaluate:
    def test_metrics_on_test_split(self, tmp_path):
        ds = tiny_dataset(tmp_path)
        result = train(tiny_config(epochs=1), ds)
        report = evaluate(result.model, ds, "test")
        assert report.confusion.sum() == len(ds.split("test"))
        assert 0.0 <= report.wa <= 1.0

    def test_empty_split_rejected(self, tmp_path):
        ds = tiny_dataset(tmp_path, test_per_class=0)
        result = train(tiny_config(epochs=0), ds)
        with pytest.raises(EmptySplitError):
            evaluate(result.model, ds, "test")

    def test_class_count_mismatch(self, tmp_path):
        ds = tiny_dataset(tmp_path)
        other = tiny_dataset(tmp_path, name="other", n_classes=4)
        result = train(tiny_config(epochs=0), ds)
        with pytest.raises(ValueError, match="class-count mismatch"):
            evaluate(result.model, other, "test")


class TestConfig:
    def test_from_json_and_profile(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text('{"d_model": 16, "profile": "seven_class"}')
        cfg = TrainConfig.from_json(p)
        assert cfg.d_model == 16
        assert cfg.apc_weight == 0.1

    def test_explicit_apc_weight_wins_over_profile(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text('{"profile": "seven_class", "apc_weight": 0.2}')
        assert TrainConfig.from_json(p).apc_weight == 0.2

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text('{"learning_rat": 0.1}')
        with pytest.raises(ValueError, match="unknown config keys"):
            TrainConfig.from_json(p)

    def test_invalid_values(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(profile="nonsense")
