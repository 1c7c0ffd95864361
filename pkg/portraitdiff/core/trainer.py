"""Diffusion training: stage 1, gaze fine-tune and temporal stage 2"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Set

import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from ..errors import FreezeViolationError
from ..models.checkpoint import CheckpointManifest
from ..models.config import RunConfig, StageName
from ..storage.checkpoint_store import CheckpointStore, require_stage
from ..storage.jsonl import JsonlWriter
from ..utils.hashing import changed_keys, parameter_hashes
from ..utils.seeding import seed_everything, seed_worker, torch_generator
from .dataset import CorpusReader, SampleBuilder, TrainingClipDataset, gaze_filtered_indices
from .model import PortraitModel
from .schedule import NoiseSchedule
from .temporal import load_temporal_init

logger = logging.getLogger(__name__)

STAGES = ('stage1', 'gaze_ft', 'stage2')

# Accepted stage tags of the incoming checkpoint (same tag = resume)
PREREQUISITES: Dict[str, tuple] = {
    'stage1': (None, 'stage1'),
    'gaze_ft': ('stage1', 'gaze_ft'),
    'stage2': ('gaze_ft', 'stage2'),
}

TRAINABLE_GROUPS: Dict[str, tuple] = {
    'stage1': ('driven_encoder', 'denoising_unet', 'reference_net'),
    'gaze_ft': ('driven_encoder', 'denoising_unet', 'reference_net'),
    'stage2': ('temporal',),
}


def trainable_params(model: PortraitModel, stage: str) -> Set[str]:
    """Qualified names of the parameters a stage may update"""
    if stage not in TRAINABLE_GROUPS:
        raise ValueError(f"Unknown stage '{stage}' (expected one of {', '.join(STAGES)})")
    groups = model.parameter_groups()
    return {name for g in TRAINABLE_GROUPS[stage] for name in groups[g]}


def frozen_params(model: PortraitModel, stage: str) -> Set[str]:
    return {n for n, _ in model.named_parameters()} - trainable_params(model, stage)


def diffusion_loss(
    model: PortraitModel,
    batch: Mapping[str, Any],
    schedule: NoiseSchedule,
    generator: Optional[torch.Generator] = None,
    noise: Optional[torch.Tensor] = None,
    timesteps: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Epsilon-prediction MSE over the noised target latents

    Args:
        model: portrait model
        batch: 'target' and 'driving' (B, F, 3, H, W), 'reference' (B, 3, H, W),
            'ref_mask' (B, 1, H, W); unbatched tensors are accepted
        schedule: training noise schedule
        generator: source of timesteps and noise when not given
        noise: explicit noise, shaped like the target latents (B*F, C_lat, h, w)
        timesteps: explicit per-clip timesteps (B,)

    Returns:
        Scalar loss
    """
    target = batch['target']
    driving = batch['driving']
    reference = batch['reference']
    ref_mask = batch['ref_mask']
    if target.dim() == 4:
        target, driving = target[None], driving[None]
        reference, ref_mask = reference[None], ref_mask[None]
    clips, n_frames = target.shape[:2]
    param = next(model.parameters())
    device, dtype = param.device, param.dtype

    latents = model.codec.encode(target.flatten(0, 1).to(device, dtype)).data
    state = model.prepare_reference(reference.to(device, dtype), ref_mask.to(device, dtype),
                                    detach=False)
    bundle = model.condition(driving.flatten(0, 1).to(device, dtype), state)

    if timesteps is None:
        timesteps = schedule.sample_timesteps(clips, generator)
    t = timesteps.to(device).repeat_interleave(n_frames)
    if noise is None:
        noise = torch.randn(latents.shape, generator=generator, dtype=dtype)
    noise = noise.to(device, dtype)

    noisy = schedule.add_noise(latents, noise, t)
    pred = model.predict_noise(noisy, t, bundle, state, num_frames=n_frames)
    return F.mse_loss(pred, noise)


def smoothed_loss(history: List[float], window: int = 50) -> List[float]:
    """Trailing moving average"""
    out, total = [], 0.0
    for i, value in enumerate(history):
        total += value
        if i >= window:
            total -= history[i - window]
        out.append(total / min(i + 1, window))
    return out


def learnability_ratio(history: List[float], early: int = 50, window: int = 50) -> float:
    """Final smoothed loss over the mean loss of the first early steps"""
    if not history:
        raise ValueError("empty loss history")
    baseline = sum(history[:early]) / len(history[:early])
    return smoothed_loss(history, window)[-1] / baseline


@dataclass
class StageResult:
    """Outcome of one training stage"""
    stage: str
    steps: int
    history: List[float] = field(default_factory=list)
    skipped_steps: int = 0
    checkpoint: Optional[Path] = None
    manifest: Optional[CheckpointManifest] = None

    @property
    def final_loss(self) -> Optional[float]:
        return self.history[-1] if self.history else None


class Trainer:
    """
    Runs the training stages with optimizer-level freezing and post-hoc hash verification

    Args:
        config: run configuration
        store: checkpoint store to save into (None = keep in memory only)
        log_dir: directory for train_log.jsonl
    """

    def __init__(
        self,
        config: RunConfig,
        store: Optional[CheckpointStore] = None,
        log_dir: Optional[Path] = None,
    ):
        self.config = config
        self.store = store
        self.log_dir = log_dir
        self.schedule = NoiseSchedule.from_config(config.schedule)

    def build_dataset(self, stage: StageName, corpus: CorpusReader, steps: Optional[int] = None) -> TrainingClipDataset:
        """Training dataset of a stage; gaze_ft draws from the gaze-filtered subset"""
        cfg = self.config.training.for_stage(stage)
        indices = None
        if cfg.gaze_filtered:
            result = gaze_filtered_indices(corpus, self.config.data.gaze_top_fraction)
            indices = result.selected
            logger.info(f"Gaze filter kept {len(indices)} of {len(corpus)} clips")
        builder = SampleBuilder(corpus, self.config.data, cfg, seed=self.config.seed, indices=indices)
        total = (cfg.steps if steps is None else steps) * cfg.batch_size * cfg.grad_accum_steps
        return TrainingClipDataset(builder, max(1, total))

    def run_stage(
        self,
        model: PortraitModel,
        stage: StageName,
        dataset: Dataset,
        init_manifest: Optional[CheckpointManifest] = None,
        steps: Optional[int] = None,
        progress: Optional[Callable[[int, float], None]] = None,
    ) -> StageResult:
        """
        Train one stage

        Raises:
            StageOrderError: init_manifest does not carry the prerequisite stage
            FreezeViolationError: a frozen parameter changed
        """
        cfg = self.config.training.for_stage(stage)
        require_stage(init_manifest, stage, PREREQUISITES[stage])
        seed = self.config.seed
        seed_everything(seed)

        if stage == 'stage2' and not model.has_temporal:
            model.insert_temporal(seed)
            if cfg.temporal_init:
                load_temporal_init(model.unet, cfg.temporal_init)

        trainable = trainable_params(model, stage)
        frozen = frozen_params(model, stage)
        params = dict(model.named_parameters())
        for name, p in params.items():
            p.requires_grad_(name in trainable)
        before = parameter_hashes(model, frozen)

        optimizer = torch.optim.AdamW([params[n] for n in sorted(trainable)], lr=cfg.learning_rate)
        generator = torch_generator(seed, stage, "noise")
        loader = DataLoader(
            dataset,
            batch_size=cfg.batch_size,
            shuffle=False,
            num_workers=self.config.data.num_workers,
            worker_init_fn=seed_worker,
            generator=torch_generator(seed, stage, "loader"),
        )
        total_steps = cfg.steps if steps is None else steps
        log = JsonlWriter(self.log_dir / "train_log.jsonl") if self.log_dir else None

        result = StageResult(stage=stage, steps=0)
        model.train()
        optimizer.zero_grad(set_to_none=True)
        batches = iter(loader)
        micro, accum_loss = 0, 0.0
        try:
            while result.steps < total_steps:
                try:
                    batch = next(batches)
                except StopIteration:
                    batches = iter(loader)
                    batch = next(batches)

                loss = diffusion_loss(model, batch, self.schedule, generator)
                if not torch.isfinite(loss):
                    logger.error(f"{stage} step {result.steps}: non-finite loss, skipping step")
                    optimizer.zero_grad(set_to_none=True)
                    result.skipped_steps += 1
                    result.steps += 1
                    micro, accum_loss = 0, 0.0
                    continue

                (loss / cfg.grad_accum_steps).backward()
                micro += 1
                accum_loss += loss.item()
                if micro < cfg.grad_accum_steps:
                    continue

                if cfg.max_grad_norm:
                    torch.nn.utils.clip_grad_norm_(
                        [p for p in optimizer.param_groups[0]['params']], cfg.max_grad_norm
                    )
                optimizer.step()
                optimizer.zero_grad(set_to_none=True)
                value = accum_loss / cfg.grad_accum_steps
                micro, accum_loss = 0, 0.0
                result.history.append(value)
                result.steps += 1

                if result.steps % cfg.log_every == 0 or result.steps == total_steps:
                    if log:
                        log.write({'step': result.steps, 'stage': stage, 'loss': value,
                                   'lr': cfg.learning_rate})
                    logger.debug(f"{stage} step {result.steps}: loss={value:.5f}")
                if progress:
                    progress(result.steps, value)
        finally:
            if log:
                log.close()
            model.eval()

        violated = changed_keys(before, parameter_hashes(model, frozen))
        if violated:
            raise FreezeViolationError(
                f"{len(violated)} frozen parameter(s) changed during {stage}: {violated[:5]}"
            )
        if result.skipped_steps:
            logger.warning(f"{stage}: {result.skipped_steps} step(s) skipped on non-finite loss")

        if self.store is not None:
            step = (init_manifest.step if init_manifest else 0) + result.steps
            result.checkpoint, result.manifest = self.store.save(
                model, stage, step, self.config, seed, final_loss=result.final_loss,
            )
        return result

    def run_stage_from_corpus(
        self,
        model: PortraitModel,
        stage: StageName,
        corpus: CorpusReader,
        init_manifest: Optional[CheckpointManifest] = None,
        steps: Optional[int] = None,
        progress: Optional[Callable[[int, float], None]] = None,
    ) -> StageResult:
        dataset = self.build_dataset(stage, corpus, steps)
        return self.run_stage(model, stage, dataset, init_manifest, steps, progress)
