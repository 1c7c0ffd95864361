"""Checkpoint inspection commands"""
import typer
from rich.console import Console
from rich.markup import escape
from rich.table import Table
from pathlib import Path
from typing import List, Optional

app = typer.Typer(help="💾 Checkpoint inspection")
console = Console()


def _store(config_path: Optional[Path], overrides: Optional[List[str]]):
    from ..core.config import ConfigManager
    from ..storage.checkpoint_store import CheckpointStore
    from .main import CHECKPOINT_DIR

    config = ConfigManager(Path.cwd(), config_path=config_path).load(overrides=overrides)
    return CheckpointStore(config.workdir / CHECKPOINT_DIR)


@app.command("list")
def list_checkpoints(
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file (default: ./portraitdiff.yaml)"),
    overrides: Optional[List[str]] = typer.Option(None, "--set", "-s", help="Override a config key"),
):
    """List checkpoints in the workdir"""
    from ..utils.formatters import format_date, format_loss, format_size

    try:
        store = _store(config_path, overrides)
        checkpoints = store.list()
    except Exception as e:
        console.print(f"[red]❌ Error: {escape(str(e))}[/red]")
        raise typer.Exit(1)

    if not checkpoints:
        console.print(f"[yellow]No checkpoints found in {store.root}[/yellow]")
        return

    table = Table(title=f"Checkpoints ({len(checkpoints)})")
    table.add_column("Name", style="cyan")
    table.add_column("Date", style="magenta")
    table.add_column("Stage", style="yellow")
    table.add_column("Step", justify="right")
    table.add_column("Temporal", style="blue")
    table.add_column("Loss", justify="right", style="green")
    table.add_column("Size", justify="right")

    for directory, manifest in checkpoints:
        table.add_row(
            directory.name,
            format_date(manifest.created_at, "%Y-%m-%d %H:%M"),
            manifest.stage or "-",
            str(manifest.step),
            "yes" if manifest.has_temporal else "no",
            format_loss(manifest.final_loss),
            format_size(sum(b.compressed_size for b in manifest.blobs.values())),
        )

    console.print(table)


@app.command("show")
def show_checkpoint(
    checkpoint: str = typer.Argument(..., help="Checkpoint name (e.g. stage1) or directory"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file (default: ./portraitdiff.yaml)"),
    overrides: Optional[List[str]] = typer.Option(None, "--set", "-s", help="Override a config key"),
):
    """Show checkpoint details"""
    from ..utils.formatters import format_count, format_date, format_loss, format_size

    try:
        store = _store(config_path, overrides)
        directory = Path(checkpoint)
        if not directory.is_dir():
            directory = store.path_for(checkpoint)
        manifest = store.read_manifest(directory)
    except Exception as e:
        console.print(f"[red]❌ Error: {escape(str(e))}[/red]")
        raise typer.Exit(1)

    # Metadata table
    table = Table(title=f"Checkpoint {directory.name}")
    table.add_column("Property", style="cyan")
    table.add_column("Value", style="green")

    table.add_row("Path", str(directory))
    table.add_row("Stage", manifest.stage or "-")
    table.add_row("Step", str(manifest.step))
    table.add_row("Seed", str(manifest.seed))
    table.add_row("Date", format_date(manifest.created_at))
    table.add_row("Temporal layers", "yes" if manifest.has_temporal else "no")
    table.add_row("Final loss", format_loss(manifest.final_loss))
    table.add_row("Format", str(manifest.format_version))

    console.print(table)

    # Blobs
    blob_table = Table(title="Parameter groups")
    blob_table.add_column("Group", style="cyan")
    blob_table.add_column("Params", justify="right")
    blob_table.add_column("Size", justify="right")
    blob_table.add_column("Compressed", justify="right", style="green")
    blob_table.add_column("Hash", style="dim")

    for group, record in manifest.blobs.items():
        blob_table.add_row(
            group,
            format_count(record.num_params),
            format_size(record.size),
            format_size(record.compressed_size),
            record.hash[:12],
        )

    console.print(blob_table)
