"""Main CLI entry point"""
import typer
from rich.console import Console
from rich.markup import escape
from rich.table import Table
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

app = typer.Typer(
    name="portraitdiff",
    help="🎭 Raw-video driven portrait animation with conditional diffusion",
    add_completion=False,
    no_args_is_help=True
)

console = Console()

SUMMARY_NAME = "run_summary.json"
CHECKPOINT_DIR = "checkpoints"
# Config sections that define network shapes; taken from the checkpoint when one is loaded
ARCH_SECTIONS = ('codec', 'unet', 'motion', 'temporal', 'context')

# Sub-commands
from . import config_cmd, checkpoint_cmd

app.add_typer(config_cmd.app, name="config")
app.add_typer(checkpoint_cmd.app, name="checkpoint")


# ── shared options & helpers ──────────────────

def _config_option():
    return typer.Option(None, "--config", "-c", help="Config file (default: ./portraitdiff.yaml)")


def _set_option():
    return typer.Option(None, "--set", "-s", help="Override a key, e.g. training.stage1.steps=10")


def _seed_option():
    return typer.Option(None, "--seed", help="Override the run seed")


def load_run_config(
    config_path: Optional[Path],
    overrides: Optional[List[str]],
    seed: Optional[int],
):
    """Resolve preset, project file, --set overrides and --seed into a RunConfig"""
    from ..core.config import ConfigManager
    from ..errors import ConfigError

    if config_path is not None and not config_path.exists():
        raise ConfigError(f"Config file not found: {config_path}")
    manager = ConfigManager(Path.cwd(), config_path=config_path)
    config = manager.load(overrides=overrides)
    if seed is not None:
        config = config.model_copy(update={
            'seed': seed,
            'inference': config.inference.model_copy(update={'seed': seed}),
        })
    return config, manager.config_path


@contextmanager
def run_summary(command: str, config, config_path: Path) -> Iterator:
    """Write run_summary.json into the workdir when the command finishes, even on error"""
    from ..models.checkpoint import RunSummary

    summary = RunSummary(command=command, seed=config.seed, config=config.model_dump(mode='json'))
    summary.outputs['config_path'] = str(config_path)
    try:
        yield summary
    except Exception as e:
        summary.status = 'error'
        summary.error = str(e)
        raise
    finally:
        summary.finished_at = datetime.now()
        config.workdir.mkdir(parents=True, exist_ok=True)
        (config.workdir / SUMMARY_NAME).write_text(summary.model_dump_json(indent=2))


def fail(e: Exception) -> None:
    console.print(f"[red]❌ Error: {escape(str(e))}[/red]")
    raise typer.Exit(1)


def parse_face_box(value: Optional[str]):
    """'x,y,w,h' -> FaceBox"""
    from ..models.clip import FaceBox

    if value is None:
        return None
    parts = value.split(',')
    if len(parts) != 4:
        raise ValueError(f"face box must be x,y,w,h, got '{value}'")
    x, y, w, h = (int(p) for p in parts)
    return FaceBox(x=x, y=y, w=w, h=h)


def load_reference(
    path: Path,
    frame: int = 0,
    mask: Optional[Path] = None,
    face_box: Optional[str] = None,
) -> Tuple:
    """
    Reference image, foreground mask and face box

    A clip directory supplies all three from meta.json; an image file takes the mask from
    --mask (all background when absent) and the face box from --face-box.
    """
    import torch
    from ..core.synth import foreground_mask
    from ..core.video import VideoClip
    from ..utils.frames import load_frame, load_mask

    if path.is_dir():
        clip = VideoClip.load(path)
        if not 0 <= frame < len(clip):
            raise ValueError(f"reference frame {frame} outside clip of {len(clip)} frames")
        meta = clip.meta[frame]
        return (clip.frames[frame], foreground_mask(meta.head, clip.height, clip.width),
                meta.face_box)
    if not path.exists():
        raise FileNotFoundError(f"Reference image not found: {path}")
    image = load_frame(path)
    if mask is not None:
        fg = load_mask(mask)
    else:
        console.print("[yellow]⚠️  No --mask given, treating the whole reference as background[/yellow]")
        fg = torch.zeros(1, *image.shape[-2:])
    return image, fg, parse_face_box(face_box)


def load_model(config, checkpoint: Path):
    """Build a model with the checkpoint's architecture and load its weights"""
    from ..core.config import ConfigManager
    from ..core.model import build_model
    from ..storage.checkpoint_store import CheckpointStore

    store = CheckpointStore(config.workdir / CHECKPOINT_DIR)
    manifest = store.read_manifest(checkpoint)
    if manifest.config:
        saved = ConfigManager.validate(manifest.config, source=str(checkpoint))
        config = config.model_copy(update={s: getattr(saved, s) for s in ARCH_SECTIONS})
    model = build_model(config)
    store.load(checkpoint, model)
    return model, manifest


# ── commands ──────────────────────────────────

@app.command()
def init(
    profile: str = typer.Option("toy", help="Configuration profile (toy, full)"),
    force: bool = typer.Option(False, "--force", help="Overwrite an existing config file"),
    path: Optional[str] = typer.Option(None, help="Project path (default: current directory)")
):
    """🎬 Initialize a portraitdiff project"""
    from ..core.config import ConfigManager

    project_path = Path(path) if path else Path.cwd()

    console.print(f"[bold blue]Initializing portraitdiff in {project_path}[/bold blue]")

    try:
        config_manager = ConfigManager(project_path)
        if config_manager.config_path.exists() and not force:
            raise FileExistsError(f"{config_manager.config_path} exists (use --force to overwrite)")
        config = config_manager.init_project(profile)

        workdir = project_path / config.workdir
        workdir.mkdir(parents=True, exist_ok=True)

        console.print(f"[green]✅ Project initialized![/green]")
        console.print(f"   Config: {config_manager.config_path}")
        console.print(f"   Profile: {profile}")
        console.print(f"   Workdir: {workdir}")

    except Exception as e:
        fail(e)


@app.command()
def synth(
    n_videos: Optional[int] = typer.Option(None, "--n-videos", help="Number of clips (default: data.n_videos)"),
    frames: Optional[int] = typer.Option(None, "--frames", help="Frames per clip (default: data.frames_per_video)"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Corpus directory (default: data.corpus_path)"),
    config_path: Optional[Path] = _config_option(),
    overrides: Optional[List[str]] = _set_option(),
    seed: Optional[int] = _seed_option(),
):
    """🧪 Render a synthetic talking-head corpus"""
    from ..core.synth import synth_corpus

    try:
        config, resolved = load_run_config(config_path, overrides, seed)
        with run_summary("synth", config, resolved) as summary:
            root = output or config.data.corpus_path
            count = n_videos or config.data.n_videos
            length = frames or config.data.frames_per_video
            with console.status(f"[bold blue]Rendering {count} clips...") as status:
                records = synth_corpus(
                    root, count, length, config.data.image_size, seed=config.seed,
                    progress=lambda i: status.update(f"[bold blue]Rendered clip {i + 1}/{count}..."),
                )
            summary.outputs.update(corpus=str(root), clips=len(records), frames_per_video=length)
    except Exception as e:
        fail(e)

    console.print(f"[green]✅ Corpus written![/green]")
    console.print(f"   Path: {root}")
    console.print(f"   Clips: {len(records)} x {length} frames")


@app.command()
def preprocess(
    driving: Path = typer.Argument(..., help="Driving clip directory (frames + meta.json)"),
    output: Path = typer.Option(..., "--output", "-o", help="Output clip directory"),
    reference: Optional[Path] = typer.Option(None, "--reference", "-r", help="Reference image or clip directory"),
    reference_frame: int = typer.Option(0, "--reference-frame", help="Frame index when --reference is a clip"),
    face_box: Optional[str] = typer.Option(None, "--face-box", help="Reference face box x,y,w,h"),
    appearance: Optional[bool] = typer.Option(None, "--appearance/--no-appearance", help="Transfer reference appearance"),
    config_path: Optional[Path] = _config_option(),
    overrides: Optional[List[str]] = _set_option(),
    seed: Optional[int] = _seed_option(),
):
    """🎭 Face-mask a driving clip, optionally transferring the reference appearance"""
    from ..core.animate import preprocess_driving
    from ..core.video import VideoClip
    from ..models.clip import ClipMeta
    from ..utils.frames import save_frames

    try:
        config, resolved = load_run_config(config_path, overrides, seed)
        with run_summary("preprocess", config, resolved) as summary:
            clip = VideoClip.load(driving)
            transfer = config.inference.appearance_transfer if appearance is None else appearance
            ref_image, ref_box, plugin = None, None, None
            if transfer:
                if reference is None:
                    raise ValueError("appearance transfer needs --reference")
                ref_image, _, ref_box = load_reference(reference, reference_frame, face_box=face_box)
                if ref_box is None:
                    raise ValueError("appearance transfer needs the reference face box (--face-box)")
                plugin = config.inference.appearance_plugin

            frames = preprocess_driving(clip, ref_image, ref_box, plugin, config.seed)
            save_frames(frames, output)
            meta = ClipMeta(identity_id=clip.identity_id, height=clip.height, width=clip.width,
                            frames=list(clip.meta), source_tag=clip.source_tag)
            (output / "meta.json").write_text(meta.model_dump_json(indent=2))
            summary.outputs.update(output=str(output), frames=len(clip), appearance_plugin=plugin)
    except Exception as e:
        fail(e)

    console.print(f"[green]✅ Driving clip preprocessed![/green]")
    console.print(f"   Output: {output} ({len(clip)} frames)")
    if plugin:
        console.print(f"   Appearance: {plugin}")


def _train(
    command: str,
    stage: str,
    init: Optional[Path],
    steps: Optional[int],
    config_path: Optional[Path],
    overrides: Optional[List[str]],
    seed: Optional[int],
    codec_steps: int = 0,
) -> None:
    import torch
    from ..core.codec import LearnedTinyCodec, train_codec
    from ..core.dataset import CorpusReader
    from ..core.model import build_model
    from ..core.trainer import PREREQUISITES, Trainer
    from ..storage.checkpoint_store import CheckpointStore, require_stage
    from ..utils.formatters import format_loss

    try:
        config, resolved = load_run_config(config_path, overrides, seed)
        with run_summary(command, config, resolved) as summary:
            store = CheckpointStore(config.workdir / CHECKPOINT_DIR)
            if init is None and None not in PREREQUISITES[stage]:
                init = store.path_for(PREREQUISITES[stage][0])
            manifest = None
            if init is not None:
                require_stage(store.read_manifest(init), stage, PREREQUISITES[stage])
                model, manifest = load_model(config, init)
            else:
                model = build_model(config)

            corpus = CorpusReader(config.data.corpus_path, config.data.clip_cache_size)
            if codec_steps and manifest is None and isinstance(model.codec, LearnedTinyCodec):
                with console.status("[bold blue]Pre-training codec..."):
                    frames = [corpus.load(i).frames for i in range(min(4, len(corpus)))]
                    history = train_codec(model.codec, torch.cat(frames), steps=codec_steps,
                                          seed=config.seed)
                summary.outputs['codec_mse'] = history[-1] if history else None

            total = steps if steps is not None else config.training.for_stage(stage).steps
            trainer = Trainer(config, store, log_dir=config.workdir)
            with console.status(f"[bold blue]Training {stage}...") as status:
                result = trainer.run_stage_from_corpus(
                    model, stage, corpus, init_manifest=manifest, steps=steps,
                    progress=lambda step, loss: status.update(
                        f"[bold blue]{stage}: step {step}/{total}, loss {format_loss(loss)}"
                    ),
                )
            summary.outputs.update(
                checkpoint=str(result.checkpoint), steps=result.steps,
                skipped_steps=result.skipped_steps, final_loss=result.final_loss,
            )
    except Exception as e:
        fail(e)

    console.print(f"[green]✅ {stage} finished![/green]")
    console.print(f"   Steps: {result.steps} ({result.skipped_steps} skipped)")
    console.print(f"   Final loss: {format_loss(result.final_loss)}")
    console.print(f"   Checkpoint: {result.checkpoint}")


@app.command("train-stage1")
def train_stage1(
    init: Optional[Path] = typer.Option(None, "--init", help="Resume from a stage1 checkpoint"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Override training.stage1.steps"),
    codec_steps: int = typer.Option(500, "--codec-steps", help="Pre-training steps for the learned_tiny codec"),
    config_path: Optional[Path] = _config_option(),
    overrides: Optional[List[str]] = _set_option(),
    seed: Optional[int] = _seed_option(),
):
    """🏋️ Stage 1: train the DrivenEncoder, denoising UNet and ReferenceNet"""
    _train("train-stage1", "stage1", init, steps, config_path, overrides, seed, codec_steps)


@app.command("finetune-gaze")
def finetune_gaze(
    init: Optional[Path] = typer.Option(None, "--init", help="stage1 checkpoint (default: <workdir>/checkpoints/stage1)"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Override training.gaze_ft.steps"),
    config_path: Optional[Path] = _config_option(),
    overrides: Optional[List[str]] = _set_option(),
    seed: Optional[int] = _seed_option(),
):
    """👀 Fine-tune on the gaze-filtered subset"""
    _train("finetune-gaze", "gaze_ft", init, steps, config_path, overrides, seed)


@app.command("train-stage2")
def train_stage2(
    init: Optional[Path] = typer.Option(None, "--init", help="gaze_ft checkpoint (default: <workdir>/checkpoints/gaze_ft)"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Override training.stage2.steps"),
    config_path: Optional[Path] = _config_option(),
    overrides: Optional[List[str]] = _set_option(),
    seed: Optional[int] = _seed_option(),
):
    """🎞️ Stage 2: train the temporal layers only"""
    _train("train-stage2", "stage2", init, steps, config_path, overrides, seed)


@app.command("animate")
def animate_command(
    driving: Path = typer.Argument(..., help="Driving clip directory (frames + meta.json)"),
    reference: Path = typer.Option(..., "--reference", "-r", help="Reference image or clip directory"),
    reference_frame: int = typer.Option(0, "--reference-frame", help="Frame index when --reference is a clip"),
    mask: Optional[Path] = typer.Option(None, "--mask", help="Reference foreground mask image"),
    face_box: Optional[str] = typer.Option(None, "--face-box", help="Reference face box x,y,w,h"),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Checkpoint (default: <workdir>/checkpoints/stage2)"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Output frame directory (default: <workdir>/animation)"),
    window: Optional[int] = typer.Option(None, "--window", "-W", help="Window length"),
    overlap: Optional[int] = typer.Option(None, "--overlap", "-O", help="Window overlap"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Sampler steps"),
    config_path: Optional[Path] = _config_option(),
    overrides: Optional[List[str]] = _set_option(),
    seed: Optional[int] = _seed_option(),
):
    """🎬 Animate a reference portrait with a driving clip"""
    from ..core.animate import animate
    from ..core.config import ConfigManager
    from ..core.schedule import DDIMSampler, NoiseSchedule
    from ..core.video import VideoClip
    from ..utils.frames import save_frames
    from ..utils.hashing import tensor_hash

    try:
        config, resolved = load_run_config(config_path, overrides, seed)
        with run_summary("animate", config, resolved) as summary:
            inference = config.inference.model_dump()
            if window is not None:
                inference['window'] = window
            if overlap is not None:
                inference['overlap'] = overlap
            config = ConfigManager.validate(
                {**config.model_dump(), 'inference': inference}, source="--window/--overlap"
            )
            inference = config.inference
            sampler_config = config.sampler
            if steps is not None:
                sampler_config = sampler_config.model_copy(update={'steps': steps})

            checkpoint = checkpoint or config.workdir / CHECKPOINT_DIR / "stage2"
            model, manifest = load_model(config, checkpoint)
            image, fg, box = load_reference(reference, reference_frame, mask, face_box)
            clip = VideoClip.load(driving)
            sampler = DDIMSampler.from_config(
                NoiseSchedule.from_config(config.schedule), sampler_config, inference.stochastic,
            )

            with console.status("[bold blue]Animating...") as status:
                result = animate(
                    model, image, fg, clip, inference, sampler, reference_box=box,
                    progress=lambda i: status.update(f"[bold blue]Window {i + 1} done..."),
                )
            output = output or config.workdir / "animation"
            save_frames(result.frames, output)
            summary.outputs.update(
                checkpoint=str(checkpoint), checkpoint_stage=manifest.stage, output=str(output),
                frames=result.frames.shape[0], windows=[list(w) for w in result.plan.windows],
                frames_hash=tensor_hash(result.frames),
            )
    except Exception as e:
        fail(e)

    console.print(f"[green]✅ Animation written![/green]")
    console.print(f"   Frames: {result.frames.shape[0]} in {len(result.plan.windows)} window(s)")
    console.print(f"   Output: {output}")


@app.command()
def audit(
    bundles: int = typer.Option(100, "--bundles", help="Random bundles for the neutrality check"),
    freeze_steps: int = typer.Option(50, "--freeze-steps", help="Stage 2 steps for freeze verification"),
    gradcheck: bool = typer.Option(False, "--gradcheck", help="Also run the finite-difference gradient check"),
    config_path: Optional[Path] = _config_option(),
    overrides: Optional[List[str]] = _set_option(),
    seed: Optional[int] = _seed_option(),
):
    """🔍 Run the invariant suite on a fresh model"""
    from ..core.audit import run_audit

    try:
        config, resolved = load_run_config(config_path, overrides, seed)
        with run_summary("audit", config, resolved) as summary:
            with console.status("[bold blue]Running audit...") as status:
                report = run_audit(
                    config, n_bundles=bundles, freeze_steps=freeze_steps, gradcheck=gradcheck,
                    progress=lambda name: status.update(f"[bold blue]Audit: {name}..."),
                )
            summary.outputs['checks'] = [c.model_dump() for c in report.checks]
            summary.status = 'ok' if report.passed else 'failed'
    except Exception as e:
        fail(e)

    table = Table(title="Audit")
    table.add_column("Check", style="cyan")
    table.add_column("Result")
    table.add_column("Detail", style="dim")
    for check in report.checks:
        table.add_row(check.name, "[green]pass[/green]" if check.passed else "[red]FAIL[/red]",
                      escape(check.detail))
    console.print(table)

    if not report.passed:
        failed = [c.name for c in report.checks if not c.passed]
        console.print(f"[red]❌ {len(failed)} check(s) failed: {', '.join(failed)}[/red]")
        raise typer.Exit(1)
    console.print(f"[green]✅ All {len(report.checks)} checks passed[/green]")


@app.command()
def status(
    config_path: Optional[Path] = _config_option(),
    overrides: Optional[List[str]] = _set_option(),
):
    """📊 Show project status"""
    from ..core.dataset import CorpusReader
    from ..storage.checkpoint_store import CheckpointStore
    from ..utils.formatters import format_date, format_loss

    try:
        config, resolved = load_run_config(config_path, overrides, None)
        with run_summary("status", config, resolved) as summary:
            try:
                corpus = CorpusReader(config.data.corpus_path)
                corpus_info = f"{len(corpus)} clips, {len(corpus.identities)} identities"
            except FileNotFoundError:
                corpus_info = "not found (run 'portraitdiff synth')"
            checkpoints = CheckpointStore(config.workdir / CHECKPOINT_DIR).list()
            summary.outputs.update(corpus=corpus_info, checkpoints=[str(d) for d, _ in checkpoints])
    except Exception as e:
        fail(e)

    table = Table(title="Project Status")
    table.add_column("Property", style="cyan")
    table.add_column("Value", style="green")

    table.add_row("Config", str(resolved))
    table.add_row("Profile", config.profile)
    table.add_row("Seed", str(config.seed))
    table.add_row("Workdir", str(config.workdir))
    table.add_row("Corpus", f"{config.data.corpus_path}: {corpus_info}")
    table.add_row("Checkpoints", str(len(checkpoints)))

    console.print(table)

    if checkpoints:
        console.print("\n[bold]Checkpoints:[/bold]")
        ckpt_table = Table()
        ckpt_table.add_column("Name", style="cyan")
        ckpt_table.add_column("Stage", style="yellow")
        ckpt_table.add_column("Step", justify="right")
        ckpt_table.add_column("Date", style="magenta")
        ckpt_table.add_column("Loss", justify="right", style="green")

        for directory, manifest in checkpoints:
            ckpt_table.add_row(
                directory.name,
                manifest.stage or "-",
                str(manifest.step),
                format_date(manifest.created_at, "%Y-%m-%d %H:%M"),
                format_loss(manifest.final_loss),
            )

        console.print(ckpt_table)


if __name__ == "__main__":
    app()
