"""Configuration management commands"""
import typer
from rich.console import Console
from rich.markup import escape
from rich.syntax import Syntax
from pathlib import Path
from typing import List, Optional

app = typer.Typer(help="⚙️ Configuration management")
console = Console()


@app.command("show")
def show_config(
    resolved: bool = typer.Option(False, "--resolved", help="Show the merged preset + file + overrides"),
    overrides: Optional[List[str]] = typer.Option(None, "--set", "-s", help="Override a key (with --resolved)"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file (default: ./portraitdiff.yaml)")
):
    """Show current configuration"""
    from ..core.config import ConfigManager
    import yaml

    config_manager = ConfigManager(Path.cwd(), config_path=config_path)
    path = config_manager.config_path

    if resolved:
        try:
            config = config_manager.load(overrides=overrides)
        except Exception as e:
            console.print(f"[red]❌ Error: {escape(str(e))}[/red]")
            raise typer.Exit(1)
        config_yaml = yaml.dump(config.model_dump(mode='json', exclude_none=True),
                                default_flow_style=False, sort_keys=False)
        title = f"Resolved configuration ({config.profile})"
    else:
        if not path.exists():
            console.print(f"[yellow]No configuration file at {path}[/yellow]")
            return
        with open(path) as f:
            config_yaml = f.read()
        title = f"Configuration: {path}"

    syntax = Syntax(config_yaml, "yaml", theme="monokai", line_numbers=True)
    console.print(f"\n[bold]{title}[/bold]\n")
    console.print(syntax)


@app.command("set")
def set_value(
    key: str = typer.Argument(..., help="Config key (e.g., 'training.stage1.steps')"),
    value: str = typer.Argument(..., help="Value to set (parsed as YAML)"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Config file (default: ./portraitdiff.yaml)")
):
    """Set a configuration value"""
    from ..core.config import ConfigManager

    config_manager = ConfigManager(Path.cwd(), config_path=config_path)

    try:
        config = config_manager.load()
        config_dict = config.model_dump(mode='json')
        _, parsed_value = ConfigManager.parse_override(f"{key}={value}")
        ConfigManager.set_dotted(config_dict, key, parsed_value)
        updated_config = ConfigManager.validate(config_dict, source=f"config set {key}")
        config_manager.save(updated_config)
    except Exception as e:
        console.print(f"[red]❌ Error: {escape(str(e))}[/red]")
        raise typer.Exit(1)

    console.print(f"[green]✅ Set {key} = {parsed_value}[/green]")
