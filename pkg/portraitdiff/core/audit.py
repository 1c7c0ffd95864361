"""Invariant suite run by `portraitdiff audit`"""
import logging
import tempfile
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import torch

from ..errors import FreezeViolationError
from ..models.checkpoint import AuditCheck, AuditReport, CheckpointManifest
from ..models.config import RunConfig
from ..utils.hashing import changed_keys, parameter_hashes
from ..utils.seeding import numpy_generator, torch_generator
from .animate import blend_windows, plan_windows
from .backbone import UNet, build_unet
from .dataset import CorpusReader, clip_span
from .model import PortraitModel, build_model
from .motion import ReferenceModulator, modulate
from .schedule import NoiseSchedule
from .synth import synth_corpus
from .temporal import insert_temporal_layers
from .trainer import TRAINABLE_GROUPS, Trainer, diffusion_loss, trainable_params

logger = logging.getLogger(__name__)

NEUTRALITY_TOL = 1e-6
GRADCHECK_TOL = 1e-3


def _context_tokens(config: RunConfig, n: int, generator: torch.Generator) -> torch.Tensor:
    tokens = 1 + config.context.num_patches
    return torch.randn(n, tokens, config.unet.context_dim, generator=generator)


def _device_dtype(module: torch.nn.Module):
    p = next(module.parameters())
    return p.device, p.dtype


@torch.no_grad()
def check_conditioning_neutrality(config: RunConfig, n_bundles: int = 100, batch: int = 10) -> AuditCheck:
    """Expanded conv-in at init ignores the conditioning channels and matches the plain UNet"""
    model = build_model(config)
    expanded = model.unet
    base = build_unet(expanded.config.model_copy(update={'extra_channels': 0}), seed=config.seed)
    base.to(config.device)
    device, dtype = _device_dtype(expanded)
    gen = torch_generator(config.seed, "audit", "neutrality")
    side = config.unet.sample_size
    extra = expanded.config.extra_channels

    worst_zero, worst_base = 0.0, 0.0
    done = 0
    while done < n_bundles:
        n = min(batch, n_bundles - done)
        noise = torch.randn(n, config.unet.latent_channels, side, side, generator=gen)
        cond = torch.randn(n, extra, side, side, generator=gen)
        t = torch.randint(0, config.schedule.num_train_timesteps, (n,), generator=gen)
        ctx = _context_tokens(config, n, gen)
        noise, cond, t, ctx = noise.to(device, dtype), cond.to(device, dtype), t.to(device), ctx.to(device, dtype)

        out_cond = expanded(torch.cat([noise, cond], dim=1), t, ctx, num_frames=1)
        out_zero = expanded(torch.cat([noise, torch.zeros_like(cond)], dim=1), t, ctx, num_frames=1)
        out_base = base(noise, t, ctx, num_frames=1)
        worst_zero = max(worst_zero, (out_cond - out_zero).abs().max().item())
        worst_base = max(worst_base, (out_cond - out_base).abs().max().item())
        done += n

    passed = worst_zero <= NEUTRALITY_TOL and worst_base <= NEUTRALITY_TOL
    return AuditCheck(
        name="conditioning_neutrality",
        passed=passed,
        detail=f"{n_bundles} bundles, max |cond - zero| = {worst_zero:.2e}, "
               f"max |expanded - base| = {worst_base:.2e}",
    )


@torch.no_grad()
def check_temporal_identity(config: RunConfig, num_frames: int = 8) -> AuditCheck:
    """Inserting zero-initialized temporal layers leaves per-frame outputs unchanged"""
    unet = build_unet(config.unet, seed=config.seed).to(config.device)
    device, dtype = _device_dtype(unet)
    gen = torch_generator(config.seed, "audit", "temporal")
    side = config.unet.sample_size
    x = torch.randn(num_frames, config.unet.latent_channels, side, side, generator=gen).to(device, dtype)
    t = torch.randint(0, config.schedule.num_train_timesteps, (1,), generator=gen).to(device)
    ctx = _context_tokens(config, 1, gen).to(device, dtype)

    before = unet(x, t, ctx, num_frames=num_frames)
    insert_temporal_layers(unet, config.temporal, seed=config.seed)
    after = unet(x, t, ctx, num_frames=num_frames)
    diff = (after - before).abs().max().item()
    return AuditCheck(
        name="temporal_identity",
        passed=diff <= NEUTRALITY_TOL,
        detail=f"{len(unet.res_trans_layers())} layers, {num_frames} frames, max diff {diff:.2e}",
    )


def injected_sites(unet: UNet) -> List[str]:
    """Attention sites whose last self-attention saw more key/value tokens than queries"""
    out = []
    for site in unet.attention_sites():
        lengths = unet.site_module(site.site_id).block.attn1.last_lengths
        if lengths is not None and lengths[1] > lengths[0]:
            out.append(site.site_id)
    return out


@torch.no_grad()
def check_injection_sites(config: RunConfig, model: Optional[PortraitModel] = None) -> AuditCheck:
    """Exactly the mid and up sites receive reference tokens during a conditioned forward"""
    model = model or build_model(config)
    model.eval()
    device, dtype = _device_dtype(model)
    gen = torch_generator(config.seed, "audit", "injection")
    size = config.data.image_size
    frames = 2
    reference = torch.rand(3, size, size, generator=gen).to(device, dtype)
    mask = torch.zeros(1, size, size)
    mask[:, size // 4: 3 * size // 4, size // 4: 3 * size // 4] = 1.0
    driving = torch.rand(frames, 3, size, size, generator=gen).to(device, dtype)

    state = model.prepare_reference(reference, mask.to(device, dtype))
    state.bank.validate(model.unet)
    bundle = model.condition(driving, state)
    noisy = torch.randn(frames, model.plan.latent, *model.latent_size, generator=gen).to(device, dtype)
    t = torch.full((frames,), config.schedule.num_train_timesteps // 2, device=device)
    model.predict_noise(noisy, t, bundle, state, num_frames=frames)

    expected = sorted(s.site_id for s in model.unet.attention_sites() if s.block_kind in ('mid', 'up'))
    got = sorted(injected_sites(model.unet))
    down_equal = all(
        model.unet.site_module(s.site_id).block.attn1.last_lengths[0]
        == model.unet.site_module(s.site_id).block.attn1.last_lengths[1]
        for s in model.unet.attention_sites() if s.block_kind == 'down'
    )
    return AuditCheck(
        name="injection_sites",
        passed=got == expected and down_equal,
        detail=f"injected {got}; expected {expected}; down sites unchanged: {down_equal}",
    )


def check_freeze_partition(config: RunConfig) -> AuditCheck:
    """Per-stage trainable sets are disjoint from the image encoder; stage2 trains temporal only"""
    model = build_model(config)
    model.insert_temporal()
    groups = model.parameter_groups()
    problems = []
    encoder = set(groups['image_encoder'])
    for stage in TRAINABLE_GROUPS:
        trainable = trainable_params(model, stage)
        if trainable & encoder:
            problems.append(f"{stage} trains image_encoder parameters")
        if not trainable:
            problems.append(f"{stage} has no trainable parameters")
    if trainable_params(model, 'stage2') != set(groups['temporal']):
        problems.append("stage2 trainable set differs from the temporal group")
    if trainable_params(model, 'gaze_ft') != trainable_params(model, 'stage1'):
        problems.append("gaze_ft trainable set differs from stage1")
    return AuditCheck(
        name="freeze_partition",
        passed=not problems,
        detail="; ".join(problems) or f"groups: {', '.join(f'{g}={len(n)}' for g, n in groups.items())}",
    )


def check_freeze_verification(
    config: RunConfig,
    steps: int = 50,
    stage1_steps: Optional[int] = None,
    workdir: Optional[Path] = None,
) -> AuditCheck:
    """
    Short stage1 then stage2 runs on a synthetic corpus

    Image-encoder hashes must survive stage1; every non-temporal hash must survive stage2.
    """
    cfg = config.model_copy(deep=True)
    cfg.training.stage2.temporal_init = None
    cfg.data.num_workers = 0
    stage1_steps = stage1_steps if stage1_steps is not None else max(1, steps // 10)
    span = max(clip_span(cfg.training.stage1.clip_length, cfg.training.stage1.stride),
               clip_span(cfg.training.stage2.clip_length, cfg.training.stage2.stride))

    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        corpus_root = Path(tmp) / "corpus"
        synth_corpus(corpus_root, 2, span, cfg.data.image_size, seed=cfg.seed)
        corpus = CorpusReader(corpus_root, cfg.data.clip_cache_size)
        trainer = Trainer(cfg)
        model = build_model(cfg)
        problems = []

        encoder_names = model.parameter_groups()['image_encoder']
        before = parameter_hashes(model, encoder_names)
        try:
            trainer.run_stage_from_corpus(model, 'stage1', corpus, steps=stage1_steps)
        except FreezeViolationError as e:
            problems.append(str(e))
        changed = changed_keys(before, parameter_hashes(model, encoder_names))
        if changed:
            problems.append(f"stage1 changed {len(changed)} image-encoder parameter(s)")

        gaze_manifest = CheckpointManifest(stage='gaze_ft', step=stage1_steps, seed=cfg.seed)
        model.insert_temporal()
        groups = model.parameter_groups()
        frozen = [n for g, names in groups.items() if g != 'temporal' for n in names]
        temporal = groups['temporal']
        before = parameter_hashes(model, frozen)
        temporal_before = parameter_hashes(model, temporal)
        try:
            trainer.run_stage_from_corpus(model, 'stage2', corpus, init_manifest=gaze_manifest, steps=steps)
        except FreezeViolationError as e:
            problems.append(str(e))
        changed = changed_keys(before, parameter_hashes(model, frozen))
        if changed:
            problems.append(f"stage2 changed {len(changed)} non-temporal parameter(s)")
        moved = len(changed_keys(temporal_before, parameter_hashes(model, temporal)))

    return AuditCheck(
        name="freeze_verification",
        passed=not problems,
        detail="; ".join(problems) or (
            f"stage1 {stage1_steps} steps, stage2 {steps} steps; "
            f"{len(frozen)} frozen hashes unchanged, {moved}/{len(temporal)} temporal tensors updated"
        ),
    )


def brute_force_coverage(windows: Sequence[tuple], total: int) -> List[int]:
    return [sum(1 for s, e in windows if s <= i < e) for i in range(total)]


def check_window_oracle(
    totals: Sequence[int] = range(1, 201),
    windows: Sequence[int] = (4, 8, 16),
    seed: int = 0,
) -> AuditCheck:
    """plan_windows coverage and blend_windows averaging against brute force"""
    gen = torch_generator(seed, "audit", "windows")
    failures = []
    plans = 0
    for window in windows:
        for overlap in range(0, window // 2 + 1):
            if overlap >= window:
                continue
            for total in totals:
                plans += 1
                plan = plan_windows(total, window, overlap)
                coverage = brute_force_coverage(plan.windows, total)
                length = min(window, total)
                if coverage != plan.coverage():
                    failures.append(f"T={total} W={window} O={overlap}: coverage map mismatch")
                elif min(coverage) < 1 or max(coverage) > 2:
                    failures.append(f"T={total} W={window} O={overlap}: multiplicity {set(coverage)}")
                elif any(e - s != length or s < 0 or e > total for s, e in plan.windows):
                    failures.append(f"T={total} W={window} O={overlap}: bad window {plan.windows}")
                else:
                    outputs = [torch.randn(e - s, 2, generator=gen, dtype=torch.float64)
                               for s, e in plan.windows]
                    blended = blend_windows(plan, outputs).tolist()
                    expected = []
                    for i in range(total):
                        values = [out[i - s].tolist() for (s, e), out in zip(plan.windows, outputs)
                                  if s <= i < e]
                        expected.append([sum(v[c] for v in values) / len(values) for c in range(2)])
                    if blended != expected:
                        failures.append(f"T={total} W={window} O={overlap}: blend mismatch")
                if len(failures) >= 5:
                    break
    return AuditCheck(
        name="window_oracle",
        passed=not failures,
        detail="; ".join(failures) or f"{plans} plans checked",
    )


@torch.no_grad()
def check_modulation_identity(config: RunConfig) -> AuditCheck:
    """Fresh reference modulation is the identity on motion features"""
    gen = torch_generator(config.seed, "audit", "modulation")
    modulator = ReferenceModulator(config.motion)
    size = config.data.image_size
    params = modulator(torch.rand(1, 3, size, size, generator=gen))
    motion = torch.randn(4, config.motion.out_channels, 4, 4, generator=gen)
    same = torch.equal(modulate(motion, params), motion)
    return AuditCheck(name="modulation_identity", passed=same,
                      detail="motion * (1 + 0) + 0 == motion" if same else "modulated motion differs")


def check_gradients(
    config: RunConfig,
    n_params: int = 16,
    eps: float = 1e-6,
    frames: int = 2,
) -> AuditCheck:
    """Analytic diffusion-loss gradients against central differences in float64"""
    model = build_model(config).to(dtype=torch.float64)
    model.eval()
    schedule = NoiseSchedule.from_config(config.schedule)
    gen = torch_generator(config.seed, "audit", "gradcheck")
    size = config.data.image_size
    mask = torch.zeros(1, size, size, dtype=torch.float64)
    mask[:, size // 4: 3 * size // 4, size // 4: 3 * size // 4] = 1.0
    batch = {
        'target': torch.rand(frames, 3, size, size, generator=gen, dtype=torch.float64),
        'driving': torch.rand(frames, 3, size, size, generator=gen, dtype=torch.float64),
        'reference': torch.rand(3, size, size, generator=gen, dtype=torch.float64),
        'ref_mask': mask,
    }
    noise = torch.randn(frames, model.plan.latent, *model.latent_size, generator=gen, dtype=torch.float64)
    timesteps = torch.tensor([config.schedule.num_train_timesteps // 3])

    def loss_fn() -> torch.Tensor:
        return diffusion_loss(model, batch, schedule, noise=noise, timesteps=timesteps)

    names = sorted(trainable_params(model, 'stage1'))
    params = dict(model.named_parameters())
    for name, p in params.items():
        p.requires_grad_(name in names)
    model.zero_grad(set_to_none=True)
    loss_fn().backward()

    rng = numpy_generator(config.seed, "audit", "gradcheck")
    worst = 0.0
    for k in rng.choice(len(names), size=min(n_params, len(names)), replace=False):
        p = params[names[int(k)]]
        flat = p.data.view(-1)
        idx = int(rng.integers(flat.numel()))
        analytic = p.grad.view(-1)[idx].item()
        original = flat[idx].item()
        with torch.no_grad():
            flat[idx] = original + eps
            plus = loss_fn().item()
            flat[idx] = original - eps
            minus = loss_fn().item()
            flat[idx] = original
        numeric = (plus - minus) / (2 * eps)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, rel)
    return AuditCheck(
        name="gradient_check",
        passed=worst <= GRADCHECK_TOL,
        detail=f"{min(n_params, len(names))} parameters, worst relative error {worst:.2e}",
    )


def run_audit(
    config: RunConfig,
    n_bundles: int = 100,
    freeze_steps: int = 50,
    gradcheck: bool = False,
    workdir: Optional[Path] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> AuditReport:
    """
    Run every invariant check on freshly built models

    A check that raises is reported as failed with the exception text.
    """
    checks: Dict[str, Callable[[], AuditCheck]] = {
        "conditioning_neutrality": lambda: check_conditioning_neutrality(config, n_bundles),
        "temporal_identity": lambda: check_temporal_identity(config),
        "injection_sites": lambda: check_injection_sites(config),
        "freeze_partition": lambda: check_freeze_partition(config),
        "freeze_verification": lambda: check_freeze_verification(config, freeze_steps, workdir=workdir),
        "window_oracle": lambda: check_window_oracle(seed=config.seed),
        "modulation_identity": lambda: check_modulation_identity(config),
    }
    if gradcheck:
        checks["gradient_check"] = lambda: check_gradients(config)

    report = AuditReport()
    for name, run in checks.items():
        if progress:
            progress(name)
        try:
            result = run()
        except Exception as e:
            logger.exception(f"Audit check {name} raised")
            result = AuditCheck(name=name, passed=False, detail=f"{type(e).__name__}: {e}")
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"{name}: {'pass' if result.passed else 'FAIL'} ({result.detail})")
        report.checks.append(result)
    return report
