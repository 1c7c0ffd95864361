import json

import pytest
import torch

import portraitdiff.core.trainer as trainer_module
from portraitdiff.core.animate import animate, beats_baseline_fraction
from portraitdiff.core.config import ConfigManager
from portraitdiff.core.dataset import CorpusReader
from portraitdiff.core.model import build_model
from portraitdiff.core.schedule import DDIMSampler, NoiseSchedule
from portraitdiff.core.synth import foreground_mask, synth_corpus
from portraitdiff.core.trainer import (
    Trainer, diffusion_loss, frozen_params, learnability_ratio, smoothed_loss, trainable_params,
)
from portraitdiff.errors import FreezeViolationError, StageOrderError
from portraitdiff.models.checkpoint import CheckpointManifest
from portraitdiff.storage.checkpoint_store import CheckpointStore
from portraitdiff.utils.hashing import changed_keys, parameter_hashes


@pytest.fixture
def trainer(tiny_config, tmp_path):
    return Trainer(tiny_config, log_dir=tmp_path / "logs")


@pytest.fixture
def dataset(trainer, corpus):
    return trainer.build_dataset('stage1', corpus)


def test_partition_is_disjoint_and_complete(tiny_model):
    tiny_model.insert_temporal()
    names = {n for n, _ in tiny_model.named_parameters()}

    for stage in ('stage1', 'gaze_ft', 'stage2'):
        trainable = trainable_params(tiny_model, stage)
        frozen = frozen_params(tiny_model, stage)
        assert trainable | frozen == names
        assert not trainable & frozen
        assert not any(n.startswith('image_encoder.') for n in trainable)


def test_stage2_trains_temporal_only(tiny_model):
    tiny_model.insert_temporal()

    trainable = trainable_params(tiny_model, 'stage2')

    assert trainable == set(tiny_model.parameter_groups()['temporal'])
    assert all('.temporal.' in n for n in trainable)
    assert not any('.temporal.' in n for n in trainable_params(tiny_model, 'stage1'))


def test_modulator_trains_with_driven_encoder(tiny_model):
    assert any(n.startswith('modulator.') for n in trainable_params(tiny_model, 'stage1'))


def test_unknown_stage(tiny_model):
    with pytest.raises(ValueError, match="Unknown stage"):
        trainable_params(tiny_model, 'stage3')


def test_zero_output_model_has_unit_loss(tiny_model, dataset, trainer):
    with torch.no_grad():
        tiny_model.unet.conv_out.weight.zero_()
        tiny_model.unet.conv_out.bias.zero_()

    loss = diffusion_loss(tiny_model, dataset[0], trainer.schedule, torch.Generator().manual_seed(0))

    assert loss.item() == pytest.approx(1.0, abs=0.1)


def test_explicit_noise_and_timesteps(tiny_model, dataset, trainer):
    batch = dataset[0]
    noise = torch.randn(4, 48, 8, 8, generator=torch.Generator().manual_seed(0))
    t = torch.tensor([10])

    with torch.no_grad():
        a = diffusion_loss(tiny_model, batch, trainer.schedule, noise=noise, timesteps=t)
        b = diffusion_loss(tiny_model, batch, trainer.schedule, noise=noise, timesteps=t)

    assert a.item() == b.item()


def test_stage1_run_writes_log(tiny_model, dataset, trainer, tmp_path):
    result = trainer.run_stage(tiny_model, 'stage1', dataset, steps=2)

    assert result.steps == 2
    assert len(result.history) == 2
    assert result.checkpoint is None
    lines = (tmp_path / "logs" / "train_log.jsonl").read_text().splitlines()
    records = [json.loads(l) for l in lines]
    assert [r['step'] for r in records] == [1, 2]
    assert {r['stage'] for r in records} == {'stage1'}
    assert not tiny_model.training


def test_stage1_is_bit_reproducible(tiny_config, corpus, tmp_path):
    histories = []
    for run in range(2):
        trainer = Trainer(tiny_config, log_dir=tmp_path / f"run{run}")
        model = build_model(tiny_config)
        result = trainer.run_stage(model, 'stage1', trainer.build_dataset('stage1', corpus), steps=2)
        histories.append(result.history)

    assert histories[0] == histories[1]


def test_run_stage_seeds_global_rngs(tiny_model, dataset, trainer, monkeypatch):
    calls = []
    monkeypatch.setattr(trainer_module, "seed_everything", calls.append)

    trainer.run_stage(tiny_model, 'stage1', dataset, steps=1)

    assert calls == [trainer.config.seed]


def test_stage1_leaves_frozen_groups_alone(tiny_model, dataset, trainer):
    image_before = parameter_hashes(tiny_model.image_encoder)
    unet_before = parameter_hashes(tiny_model.unet)

    trainer.run_stage(tiny_model, 'stage1', dataset, steps=1)

    assert changed_keys(image_before, parameter_hashes(tiny_model.image_encoder)) == []
    assert changed_keys(unet_before, parameter_hashes(tiny_model.unet))


def test_stage2_rejects_missing_prerequisite(tiny_model, dataset, trainer):
    with pytest.raises(StageOrderError, match="'gaze_ft'"):
        trainer.run_stage(tiny_model, 'stage2', dataset, init_manifest=CheckpointManifest(stage='stage1'))
    with pytest.raises(StageOrderError, match="no checkpoint"):
        trainer.run_stage(tiny_model, 'gaze_ft', dataset)


def test_stage2_updates_only_temporal(tiny_model, trainer, corpus):
    before = parameter_hashes(tiny_model)
    dataset = trainer.build_dataset('stage2', corpus)

    result = trainer.run_stage(tiny_model, 'stage2', dataset,
                               init_manifest=CheckpointManifest(stage='gaze_ft'), steps=2)

    assert tiny_model.has_temporal
    assert changed_keys(before, parameter_hashes(tiny_model, before.keys())) == []
    assert any(torch.count_nonzero(layer.temporal.proj_out.weight) > 0
               for layer in tiny_model.unet.res_trans_layers())
    assert result.steps == 2


def test_freeze_violation_detected(tiny_model, dataset, trainer):
    def tamper(step, loss):
        with torch.no_grad():
            tiny_model.image_encoder.merger.proj.bias.add_(1.0)

    with pytest.raises(FreezeViolationError, match="image_encoder"):
        trainer.run_stage(tiny_model, 'stage1', dataset, steps=1, progress=tamper)


def test_run_saves_checkpoint(tiny_config, tiny_model, dataset, tmp_path):
    store = CheckpointStore(tmp_path / "checkpoints")
    trainer = Trainer(tiny_config, store=store)

    result = trainer.run_stage(tiny_model, 'stage1', dataset, steps=2)

    assert result.checkpoint == tmp_path / "checkpoints" / "stage1"
    assert result.manifest.stage == 'stage1'
    assert result.manifest.step == 2
    assert result.manifest.final_loss == result.history[-1]
    assert 'image_encoder' in result.manifest.blobs


def test_gaze_dataset_uses_filtered_clips(trainer, corpus):
    dataset = trainer.build_dataset('gaze_ft', corpus, steps=5)

    assert len(dataset) == 5
    assert len(dataset.builder.eligible) == 2


def test_smoothed_loss():
    assert smoothed_loss([1.0, 2.0, 3.0, 4.0], window=2) == [1.0, 1.5, 2.5, 3.5]
    assert smoothed_loss([]) == []


def test_learnability_ratio():
    history = [1.0] * 10 + [0.5] * 10

    assert learnability_ratio(history, early=10, window=5) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        learnability_ratio([])


@pytest.mark.slow
def test_stage1_learns(tiny_config, corpus):
    trainer = Trainer(tiny_config)
    model = build_model(tiny_config)
    result = trainer.run_stage(model, 'stage1', trainer.build_dataset('stage1', corpus, steps=300),
                               steps=300)

    assert learnability_ratio(result.history, early=50, window=50) < 0.7


@pytest.mark.slow
def test_toy_stage1_learns_and_beats_copy_reference(tmp_path):
    config = ConfigManager(tmp_path).load(profile='toy', overrides=[
        f"workdir={tmp_path / 'runs'}", f"data.corpus_path={tmp_path / 'corpus'}",
    ])
    data = config.data
    synth_corpus(data.corpus_path, data.n_videos, data.frames_per_video, data.image_size,
                 seed=config.seed)
    corpus = CorpusReader(data.corpus_path, data.clip_cache_size)
    trainer = Trainer(config)
    model = build_model(config)

    result = trainer.run_stage_from_corpus(model, 'stage1', corpus)

    assert result.steps == config.training.stage1.steps
    assert learnability_ratio(result.history) < 0.1

    clip = corpus.load(0)
    driving = clip.select(range(8, data.frames_per_video, 12))
    reference = clip.frames[0]
    ref_mask = foreground_mask(clip.meta[0].head, clip.height, clip.width)
    sampler = DDIMSampler.from_config(NoiseSchedule.from_config(config.schedule), config.sampler)
    animation = animate(model, reference, ref_mask, driving, config.inference, sampler)

    assert len(driving) == config.inference.window
    assert beats_baseline_fraction(animation.frames, reference, driving.frames) >= 0.9
