"""Unit tests for configuration, the joint objective, checkpoints and the training loop."""

from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.autodiff.rng import Rng
from src.autodiff.tensor import Tape, backward
from src.backbone.assembly import count_forwards_reset
from src.errors import ConfigError, ContractError, FormatError, TrainingError
from src.linguistic_cot.decoder import FrozenDecoderParams
from src.training.checkpoint import (
    TrainerState,
    load_checkpoint,
    load_decoder,
    save_checkpoint,
    save_decoder,
)
from src.training.config import (
    FULL_SCALE_LR,
    TrainConfig,
    apply_overrides,
    dump_config,
    load_config,
    parse_assignments,
    variant_name,
)
from src.training.joint import joint_loss
from src.training.model import build_model
from src.training.trainer import (
    METRIC_COLUMNS,
    Trainer,
    TrainingData,
    advance_order_hash,
    checkpoint_path,
    final_checkpoint_path,
    load_training_data,
    loss_drop,
    metrics_path,
    resolve_decoder,
    train,
)
from src.world.dataset import iter_cot_ids


@pytest.fixture
def training_data(dataset_path):
    return load_training_data(dataset_path)


@pytest.fixture
def model(tiny_config, vocab, frozen_decoder, dataset):
    return build_model(tiny_config, vocab, frozen_decoder, dataset.feature_stats)


FD_STEP = 1e-5
# Parameter entries checked per module group, 32 in all.
GRADIENT_SPOTS = {"backbone.": 10, "spatial.": 3, "vis_proj.": 5, "prefix_proj.": 4, "dit.": 10}


def batch_of(data, n=2):
    return [data.sample(i) for i in range(n)]


# ──────────────────────────────────────────────
# Configuration
# ──────────────────────────────────────────────


class TestTrainConfig:

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lambda_vis, cfg.lambda_lin, cfg.lambda_act) == (0.1, 0.1, 1.0)
        assert cfg.lr == 1e-3 and FULL_SCALE_LR == 2.5e-5
        assert cfg.horizon == 7
        assert cfg.variant == "dual_cot"

    def test_variant_names(self):
        assert [variant_name(v, l) for v in (True, False) for l in (True, False)] == [
            "dual_cot", "visual_cot", "linguistic_cot", "no_cot"]

    @pytest.mark.parametrize("field, value", [
        ("lambda_vis", -0.1),
        ("lr", 0.0),
        ("batch", 0),
        ("n_heads", 3),
        ("decoder_ppl_target", 0.5),
    ])
    def test_invalid_values(self, field, value):
        with pytest.raises(ConfigError):
            TrainConfig(**{field: value})

    def test_overrides(self):
        cfg = apply_overrides(TrainConfig(), ["lr=0.01", "use_visual_cot = false", "steps=3"])
        assert cfg.lr == 0.01
        assert cfg.use_visual_cot is False
        assert cfg.steps == 3
        assert cfg.variant == "linguistic_cot"

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="Unknown"):
            apply_overrides(TrainConfig(), ["learning_rate=0.1"])

    @pytest.mark.parametrize("assignment", ["use_visual_cot=maybe", "steps=ten", "lr=fast"])
    def test_bad_values(self, assignment):
        with pytest.raises(ConfigError, match="Bad value"):
            apply_overrides(TrainConfig(), [assignment])

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="config:2"):
            parse_assignments(["steps = 1", "steps"])

    def test_file_with_comments_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# desk run\nbatch = 4   # small\n\nseed = 9\n")
        cfg = load_config(path, ["seed=10"])
        assert cfg.batch == 4
        assert cfg.seed == 10

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.cfg")

    def test_dump_reloads(self, tmp_path, tiny_config):
        cfg = replace(tiny_config, use_linguistic_cot=False, lambda_vis=0.25)
        path = tmp_path / "dumped.cfg"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg

    def test_from_dict_ignores_unknown(self):
        assert TrainConfig.from_dict({"steps": 5, "legacy": 1}).steps == 5


# ──────────────────────────────────────────────
# Model and joint loss
# ──────────────────────────────────────────────


class TestBuildModel:

    def test_linguistic_stream_needs_decoder(self, tiny_config, vocab):
        with pytest.raises(ContractError, match="decoder"):
            build_model(tiny_config, vocab)

    def test_decoder_must_be_frozen(self, tiny_config, vocab):
        with pytest.raises(ContractError, match="frozen"):
            build_model(tiny_config, vocab, FrozenDecoderParams.init(Rng(3), len(vocab)))

    def test_decoder_is_not_trainable(self, model):
        names = model.trainable_parameters()
        assert names
        assert not any(n.startswith("decoder.") for n in names)

    def test_disabled_streams_have_no_parameters(self, tiny_config, vocab):
        cfg = replace(tiny_config, use_visual_cot=False, use_linguistic_cot=False)
        names = build_model(cfg, vocab).trainable_parameters()
        assert not any(n.startswith(("spatial.", "vis_proj.", "prefix_proj.")) for n in names)
        assert "backbone.queries.q_vis" not in names
        assert "backbone.queries.q_lin" not in names

    def test_shared_parts_share_initial_values(self, tiny_config, vocab, frozen_decoder):
        full = build_model(tiny_config, vocab, frozen_decoder)
        bare = build_model(replace(tiny_config, use_visual_cot=False, use_linguistic_cot=False), vocab)
        np.testing.assert_array_equal(full.dit.out.weight.data, bare.dit.out.weight.data)
        np.testing.assert_array_equal(full.backbone.blocks[0].attn.wq.weight.data,
                                      bare.backbone.blocks[0].attn.wq.weight.data)

    def test_act_is_one_forward_and_clamped(self, model, training_data):
        s = training_data.sample(0)
        count_forwards_reset()
        chunk = model.act(s.image, s.instruction_ids, s.state, Rng(1))
        assert count_forwards_reset() == 1
        assert chunk.shape == (7, 3)
        assert np.abs(chunk[:, :2]).max() <= 0.1


class TestJointLoss:

    def test_components_recombine(self, model, training_data):
        c = joint_loss(batch_of(training_data), model, Rng(0)).components()
        expected = 0.1 * c["l_vis"] + 0.1 * c["l_lin"] + 1.0 * c["l_act"]
        assert abs(c["l_total"] - expected) < 1e-10
        assert min(c["l_vis"], c["l_lin"], c["l_act"]) > 0

    def test_zero_reasoning_weights(self, tiny_config, vocab, frozen_decoder, training_data):
        cfg = replace(tiny_config, lambda_vis=0.0, lambda_lin=0.0)
        m = build_model(cfg, vocab, frozen_decoder)
        c = joint_loss(batch_of(training_data), m, Rng(0)).components()
        assert c["l_total"] == c["l_act"]

    def test_disabled_streams_contribute_zero(self, tiny_config, vocab, training_data):
        cfg = replace(tiny_config, use_visual_cot=False, use_linguistic_cot=False)
        breakdown = joint_loss(batch_of(training_data), build_model(cfg, vocab), Rng(0))
        assert breakdown.l_vis is None and breakdown.l_lin is None
        c = breakdown.components()
        assert c["l_vis"] == c["l_lin"] == 0.0
        assert c["l_total"] == c["l_act"]

    def test_bitwise_reproducible(self, model, training_data):
        a = joint_loss(batch_of(training_data), model, Rng(0)).total.item()
        b = joint_loss(batch_of(training_data), model, Rng(0)).total.item()
        assert a == b

    def test_total_gradient_matches_finite_differences(self, model, training_data):
        batch = batch_of(training_data)
        params = model.trainable_parameters()
        with Tape() as tape:
            total = joint_loss(batch, model, Rng(0)).total
        backward(total, tape)

        picker = Rng(11)
        spots = []
        for group, n in GRADIENT_SPOTS.items():
            names = sorted(k for k in params if k.startswith(group))
            for _ in range(n):
                name = names[int(picker.integers(0, len(names)))]
                spots.append((name, int(picker.integers(0, params[name].size))))
        assert len(spots) == 32

        for name, i in spots:
            p = params[name]
            analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[i])
            original = p.data.copy()
            values = []
            for step in (FD_STEP, -FD_STEP):
                bumped = original.copy()
                bumped.reshape(-1)[i] += step
                p.data = bumped
                values.append(joint_loss(batch, model, Rng(0)).total.item())
            p.data = original
            numeric = (values[0] - values[1]) / (2 * FD_STEP)
            assert abs(analytic - numeric) <= 1e-4 * (abs(analytic) + abs(numeric)) + 1e-8, (name, i)

    def test_action_loss_reaches_reasoning_queries(self, tiny_config, vocab, frozen_decoder, training_data):
        m = build_model(replace(tiny_config, lambda_vis=0.0, lambda_lin=0.0), vocab, frozen_decoder)
        with Tape() as tape:
            breakdown = joint_loss(batch_of(training_data), m, Rng(0))
        backward(breakdown.total, tape)
        assert np.abs(m.backbone.queries.q_vis.grad).sum() > 0
        assert np.abs(m.backbone.queries.q_lin.grad).sum() > 0
        assert all(p.grad is None for p in m.decoder.parameters())


# ──────────────────────────────────────────────
# Checkpoints
# ──────────────────────────────────────────────


class TestCheckpoint:

    def test_round_trip(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        state = TrainerState(step=7, data_rng=Rng(5, 12), flow_rng=Rng(6, 3), data_order_hash="ab")
        save_checkpoint(path, model, state=state)
        loaded, _, meta = load_checkpoint(path)
        assert meta["step"] == 7
        assert meta["data_rng"] == {"seed": 5, "counter": 12}
        assert loaded.config == model.config
        assert loaded.vocab.tokens == model.vocab.tokens
        assert loaded.decoder.is_frozen
        for (na, pa), (nb, pb) in zip(model.named_parameters(), loaded.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_decoder_archive_round_trip(self, frozen_decoder, vocab, tmp_path):
        path = tmp_path / "decoder.ckpt"
        save_decoder(path, frozen_decoder, vocab, {"steps": 2})
        loaded, loaded_vocab = load_decoder(path)
        assert loaded.is_frozen
        assert loaded_vocab.tokens == vocab.tokens
        for pa, pb in zip(frozen_decoder.parameters(), loaded.parameters()):
            assert np.array_equal(pa.data, pb.data)

    def test_kinds_are_checked(self, frozen_decoder, vocab, model, tmp_path):
        save_decoder(tmp_path / "decoder.ckpt", frozen_decoder, vocab)
        save_checkpoint(tmp_path / "m.ckpt", model)
        with pytest.raises(FormatError, match="not a policy checkpoint"):
            load_checkpoint(tmp_path / "decoder.ckpt")
        with pytest.raises(FormatError, match="not a decoder archive"):
            load_decoder(tmp_path / "m.ckpt")


# ──────────────────────────────────────────────
# Training loop
# ──────────────────────────────────────────────


class TestTrainingData:

    def test_split_excludes_held_out(self, training_data, dataset):
        assert training_data.episode_ids == list(range(len(dataset.episodes) - 1))
        assert len(training_data) == sum(len(dataset.episodes[e].frames) for e in training_data.episode_ids)

    def test_samples_are_cached(self, training_data):
        assert training_data.sample(0) is training_data.sample(0)
        assert training_data.sample(0).teacher.shape == (64, 16)

    def test_empty_split(self, dataset):
        with pytest.raises(ContractError):
            TrainingData(dataset=dataset, episode_ids=[], stats=dataset.feature_stats)


class TestOrderHash:

    def test_order_sensitive(self):
        a = advance_order_hash("", np.array([1, 2]))
        assert a == advance_order_hash("", np.array([1, 2]))
        assert a != advance_order_hash("", np.array([2, 1]))
        assert advance_order_hash(a, np.array([3])) != advance_order_hash("", np.array([3]))


class TestTrainer:

    def test_outputs(self, tiny_config):
        trainer = train(tiny_config, show_progress=False)
        out = tiny_config.out_dir
        assert final_checkpoint_path(out).exists()
        assert checkpoint_path(out, 2).exists() and checkpoint_path(out, 4).exists()
        assert (trainer.model.decoder is not None) and trainer.model.decoder.is_frozen
        frame = pd.read_csv(metrics_path(out))
        assert list(frame.columns) == METRIC_COLUMNS
        assert frame["step"].tolist() == [1, 2, 3, 4]
        recombined = 0.1 * frame["l_vis"] + 0.1 * frame["l_lin"] + frame["l_act"]
        assert (recombined - frame["l_total"]).abs().max() < 1e-10

    def test_frozen_decoder_unchanged(self, tiny_config, training_data, frozen_decoder):
        before = [p.data.copy() for p in frozen_decoder.parameters()]
        trainer = Trainer.create(tiny_config, training_data, frozen_decoder, show_progress=False)
        trainer.run(2)
        for p, b in zip(trainer.model.decoder.parameters(), before):
            assert np.array_equal(p.data, b)

    def test_deterministic(self, tiny_config, training_data, frozen_decoder, tmp_path):
        runs = []
        for name in ("a", "b"):
            cfg = replace(tiny_config, out_dir=str(tmp_path / name))
            trainer = Trainer.create(cfg, training_data, frozen_decoder, show_progress=False)
            trainer.run(3)
            runs.append(trainer)
        assert [r["l_total"] for r in runs[0].metrics] == [r["l_total"] for r in runs[1].metrics]
        assert runs[0].state.data_order_hash == runs[1].state.data_order_hash

    def test_resume_matches_uninterrupted(self, tiny_config, tmp_path):
        full = train(tiny_config, show_progress=False)
        resumed_cfg = replace(tiny_config, out_dir=str(tmp_path / "resumed"))
        resumed = train(resumed_cfg, resume=checkpoint_path(tiny_config.out_dir, 2), show_progress=False)
        assert [r["step"] for r in resumed.metrics] == [3, 4]
        for a, b in zip(full.metrics[2:], resumed.metrics):
            for key in ("l_vis", "l_lin", "l_act", "l_total"):
                assert a[key] == b[key]
        assert full.state.data_order_hash == resumed.state.data_order_hash

    def test_resume_keeps_metrics_history(self, tiny_config):
        train(replace(tiny_config, steps=2), show_progress=False)
        resumed = train(tiny_config, resume=checkpoint_path(tiny_config.out_dir, 2), show_progress=False)
        assert [int(r["step"]) for r in resumed.metrics] == [1, 2, 3, 4]

    def test_non_finite_loss_aborts(self, tiny_config, training_data, frozen_decoder):
        trainer = Trainer.create(tiny_config, training_data, frozen_decoder, show_progress=False)
        trainer.model.dit.out.bias.data = np.full(3, np.nan)
        with pytest.raises(TrainingError, match="at step 1") as exc:
            trainer.train_step()
        assert exc.value.step == 1
        assert "l_act" in exc.value.components

    def test_unmet_decoder_target_stops_training(self, tiny_config):
        with pytest.raises(TrainingError, match="FAIL"):
            train(replace(tiny_config, decoder_ppl_target=1.0), show_progress=False)
        assert not final_checkpoint_path(tiny_config.out_dir).exists()

    def test_pretrained_decoder_is_scored_on_held_out_split(self, tiny_config, training_data, dataset):
        decoder = resolve_decoder(tiny_config, training_data, tiny_config.out_dir, show_progress=False)
        assert decoder.is_frozen
        assert training_data.heldout_cot_corpus() == list(iter_cot_ids(dataset.episodes[-1:]))
        assert (Path(tiny_config.out_dir) / "decoder.ckpt").exists()

    def test_no_cot_variant_trains_without_decoder(self, tiny_config):
        cfg = replace(tiny_config, use_visual_cot=False, use_linguistic_cot=False, steps=2)
        trainer = train(cfg, show_progress=False)
        assert trainer.model.decoder is None
        assert all(r["l_vis"] == 0.0 and r["l_lin"] == 0.0 for r in trainer.metrics)


class TestLossDrop:

    def test_windows(self):
        frame = pd.DataFrame({
            "step": range(1, 5),
            "l_vis": [4.0, 3.0, 2.0, 1.0],
            "l_lin": [1.0, 1.0, 1.0, 1.0],
            "l_act": [2.0, 2.0, 1.0, 1.0],
            "l_total": [3.0, 2.0, 1.0, 0.5],
        })
        drop = loss_drop(frame, window=2)
        assert drop.loc["l_vis", "early"] == 3.5
        assert drop.loc["l_vis", "late"] == 1.5
        assert bool(drop.loc["l_act", "lower"])
        assert not bool(drop.loc["l_lin", "lower"])
