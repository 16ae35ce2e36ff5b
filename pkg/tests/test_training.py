import json
import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

import rsformer.training as training
from rsformer.ablation import AXES, ablation_run, variant_config
from rsformer.checkpoint import load_checkpoint
from rsformer.dataset import DatasetManifest, save_image, synthetic_pairs, write_pairs
from rsformer.errors import ConfigError, ContractError, ManifestError, TrainingError
from rsformer.metrics import psnr
from rsformer.network import build_model, desk_config
from rsformer.synthesis import ImagePair
from rsformer.training import TrainConfig, cosine_lr, evaluate, preflight, train


def tiny_config(**changes):
    base = dict(model=desk_config(), batch_size=2, patch_size=16, total_steps=4, lr_initial=1e-3, checkpoint_every=2)
    base.update(changes)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def pairs():
    return synthetic_pairs(3, 24, 24, seed=2)


class TestSchedule:
    def test_endpoints(self):
        assert cosine_lr(0, 1000, 2e-4, 1e-7) == 2e-4
        assert cosine_lr(1000, 1000, 2e-4, 1e-7) == 1e-7

    def test_midpoint(self):
        assert cosine_lr(500, 1000, 2e-4, 1e-7) == (2e-4 + 1e-7) / 2

    def test_formula(self):
        lr = cosine_lr(123, 1000, 2e-4, 1e-7)
        ref = 1e-7 + 0.5 * (2e-4 - 1e-7) * (1 + math.cos(math.pi * 0.123))
        assert math.isclose(lr, ref, rel_tol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(total=st.integers(2, 5000), data=st.data())
    def test_strictly_decreasing(self, total, data):
        s = data.draw(st.integers(1, total - 1))
        assert cosine_lr(s - 1, total) > cosine_lr(s, total) > cosine_lr(s + 1, total)

    @pytest.mark.parametrize("step,total", [(-1, 10), (11, 10), (0, 0)])
    def test_out_of_range(self, step, total):
        with pytest.raises(ContractError):
            cosine_lr(step, total)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "changes",
        [
            {"lr_final": 1e-2},
            {"patch_size": 17},
            {"batch_size": 0},
            {"total_steps": None},
            {"betas": (0.9, 1.0)},
            {"grad_clip": 0.0},
            {"lr_initial": -1.0},
        ],
    )
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            tiny_config(**changes)

    def test_patch_divisibility_names_multiple(self):
        with pytest.raises(ConfigError, match="2\\*\\*\\(levels-1\\) = 4"):
            TrainConfig(model=desk_config(levels=3, blocks_per_stage=(1,) * 5), patch_size=30)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr_initial, cfg.lr_final, cfg.batch_size, cfg.patch_size) == (2e-4, 1e-7, 32, 128)
        assert cfg.betas == (0.9, 0.999) and cfg.adam_eps == 1e-8 and cfg.grad_clip == 1.0

    def test_dict_round_trip(self):
        cfg = tiny_config(loss={"kind": "l1"})
        again = TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg

    def test_unknown_fields(self):
        with pytest.raises(ConfigError, match="unknown train config"):
            TrainConfig.from_dict({"learning_rate": 1.0})
        with pytest.raises(ConfigError, match="unknown loss config"):
            TrainConfig.from_dict({"loss": {"gamma": 1.0}})
        with pytest.raises(ConfigError, match="unknown model config"):
            TrainConfig.from_dict({"model": {"depth": 2}})

    def test_epochs_to_steps(self):
        cfg = tiny_config(total_steps=None, epochs=3, batch_size=2)
        assert cfg.steps_for(5) == 9


def test_preflight_reports_checks():
    names = preflight(desk_config())
    assert names == ["forward_shape", "zero_head_identity", "zero_layer_scale_identity", "sampler_contracts", "pad_unpad_round_trip"]


@pytest.mark.parametrize("axis", sorted(AXES))
def test_preflight_passes_for_every_variant(axis):
    for label in AXES[axis]:
        preflight(variant_config(tiny_config(), axis, label).model)


def test_preflight_gates_training(monkeypatch, pairs):
    def broken(x, m):
        raise ContractError("broken padding")

    called = []
    monkeypatch.setattr(training, "pad_to_multiple", broken)
    monkeypatch.setattr(training, "PairSampler", lambda *a, **k: called.append(1))
    with pytest.raises(ContractError, match="broken padding"):
        train(tiny_config(), pairs=pairs)
    assert not called


class TestTrain:
    def test_deterministic(self, pairs):
        a = train(tiny_config(), pairs=pairs)
        b = train(tiny_config(), pairs=pairs)
        assert a.log.losses == b.log.losses
        assert a.log.data_signature() == b.log.data_signature()
        for pa, pb in zip(a.model.parameters(), b.model.parameters()):
            assert torch.equal(pa, pb)

    def test_seed_changes_run(self, pairs):
        a = train(tiny_config(), pairs=pairs)
        b = train(tiny_config(seed=1), pairs=pairs)
        assert a.log.losses != b.log.losses

    def test_lr_column_follows_schedule(self, pairs):
        cfg = tiny_config(total_steps=6)
        log = train(cfg, pairs=pairs).log
        assert [e["step"] for e in log.steps] == list(range(6))
        assert log.learning_rates == [cosine_lr(s, 6, cfg.lr_initial, cfg.lr_final) for s in range(6)]

    def test_checkpoints_logs_and_validation(self, tmp_path, pairs):
        cfg = tiny_config(checkpoint_dir=str(tmp_path / "ck"), log_path=str(tmp_path / "log" / "train.jsonl"), val_every=2)
        result = train(cfg, pairs=pairs, val_pairs=pairs[:1])
        assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["step_000002.ckpt", "step_000004.ckpt"]
        assert result.checkpoint == tmp_path / "ck" / "step_000004.ckpt"
        lines = [json.loads(l) for l in (tmp_path / "log" / "train.jsonl").read_text(encoding="utf-8").splitlines()]
        assert [l["step"] for l in lines if "step" in l] == [0, 1, 2, 3]
        assert [l["validation"]["step"] for l in lines if "validation" in l] == [1, 3]
        assert len(result.log.validations) == 2
        _, meta = load_checkpoint(result.checkpoint)
        assert meta["step"] == 4 and meta["train"]["total_steps"] == 4

    def test_loss_decreases(self, pairs):
        log = train(tiny_config(total_steps=40, lr_initial=2e-3, augment=False), pairs=pairs).log
        assert sum(log.losses[-5:]) < sum(log.losses[:5])

    def test_non_finite_loss_reports_step(self):
        bad = ImagePair(torch.rand(1, 3, 16, 16), torch.full((1, 3, 16, 16), float("inf")))
        with pytest.raises(TrainingError, match="at step 0"):
            train(tiny_config(), pairs=[bad])

    def test_from_manifest(self, tmp_path, pairs):
        write_pairs(tmp_path / "data", pairs)
        result = train(tiny_config(train_manifest=str(tmp_path / "data"), total_steps=2))
        assert len(result.log.steps) == 2

    def test_bad_manifest_aborts(self, tmp_path):
        with pytest.raises(ManifestError):
            train(tiny_config(train_manifest=str(tmp_path / "nowhere")))

    def test_log_steps_strictly_increase(self):
        log = training.TrainingLog()
        log.append({"step": 0, "loss": 1.0, "lr": 1.0, "batch": []})
        with pytest.raises(TrainingError):
            log.append({"step": 0, "loss": 1.0, "lr": 1.0, "batch": []})


class TestEvaluate:
    def _identity(self):
        model = build_model(desk_config())
        with torch.no_grad():
            model.head.weight.zero_()
            model.head.bias.zero_()
        return model

    def test_identity_model_reproduces_input_psnr(self, pairs):
        report = evaluate(self._identity(), pairs)
        assert report.psnr == [psnr(p.degraded, p.clean) for p in pairs]

    def test_means_are_arithmetic(self, pairs):
        report = evaluate(build_model(desk_config()), pairs)
        assert report.mean_psnr == sum(report.psnr) / len(report.psnr)
        assert report.mean_ssim == sum(report.ssim) / len(report.ssim)

    def test_empty_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            evaluate(self._identity(), DatasetManifest(tmp_path, []))
        with pytest.raises(ManifestError):
            evaluate(self._identity(), [])

    def test_mismatched_pairs_are_skipped(self, tmp_path, pairs):
        write_pairs(tmp_path, pairs)
        save_image(torch.rand(1, 3, 24, 20), tmp_path / "clean" / "0001.png")
        warnings = []
        report = evaluate(self._identity(), tmp_path, warn=warnings.append)
        assert report.skipped == ["0001"] and report.count == 2
        assert len(warnings) == 1 and "0001" in warnings[0]

    def test_from_checkpoint_path(self, tmp_path, pairs):
        from rsformer.checkpoint import save_checkpoint

        model = self._identity()
        path = save_checkpoint(model, tmp_path / "m.ckpt")
        write_pairs(tmp_path / "d", pairs)
        assert evaluate(path, tmp_path / "d") == evaluate(model, tmp_path / "d")


class TestAblation:
    @pytest.mark.parametrize("axis", sorted(AXES))
    def test_rows_enumerate_axis_and_share_data_order(self, axis, pairs):
        table = ablation_run(tiny_config(total_steps=2), axis, pairs=pairs)
        assert table.labels == list(AXES[axis])
        assert len({r["data_signature"] for r in table.rows}) == 1
        assert all(math.isfinite(r["psnr"]) and 0 < r["ssim"] <= 1 for r in table.rows)
        assert axis in table.to_table()

    def test_variants_differ_where_expected(self):
        base = tiny_config()
        assert variant_config(base, "token_mixer", "identity").model.token_mixer == "identity"
        assert variant_config(base, "sampling", "gasm").model.sampling_mode == "gasm"
        assert variant_config(base, "loss", "frequency").loss.kind == "frequency"
        assert variant_config(base, "attention_core", "spatial").model.attention_sampling_core == "spatial"
        assert base.model.token_mixer == "cam"

    def test_all_variants_preflight_before_any_training(self, monkeypatch, pairs):
        events = []
        real_preflight, real_train = training.preflight, training.train
        import rsformer.ablation as ablation

        monkeypatch.setattr(ablation, "preflight", lambda cfg, seed=0: events.append("preflight") or real_preflight(cfg, seed))
        monkeypatch.setattr(ablation, "train", lambda cfg, **kw: events.append("train") or real_train(cfg, **kw))
        ablation_run(tiny_config(total_steps=1), "sampling", pairs=pairs)
        assert events == ["preflight"] * 4 + ["train"] * 4

    def test_unknown_axis_and_value(self):
        with pytest.raises(ConfigError):
            ablation_run(tiny_config(), "optimizer")
        with pytest.raises(ConfigError):
            variant_config(tiny_config(), "loss", "ssim")
