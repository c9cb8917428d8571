# cli.py

from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import List, Optional

import click
import orjson
import typer
from rich.console import Console
from rich.logging import RichHandler

from core_model import Mode, VNoCError
from harness_functions import ConfigMismatch, compare, run_once, run_sweep
from run_stats import RunStats
from sim_config import ConfigError, get_settings, load_config
from sim_engine import WatchdogTimeout

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_FAULT = 3
EXIT_WATCHDOG = 4

app = typer.Typer(
    add_completion=False,
    help="Cycle-level simulator of a virtualized NoC reconfigurable system.",
)


def _setup_logging(verbose: bool) -> None:
    level = "DEBUG" if verbose else get_settings().log_level.upper()
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, (ConfigError, ConfigMismatch)):
        return EXIT_CONFIG
    if isinstance(exc, WatchdogTimeout):
        return EXIT_WATCHDOG
    return EXIT_FAULT


def _fail(exc: Exception) -> None:
    code = _exit_code(exc)
    logger.error(f"{type(exc).__name__}: {exc}")
    raise typer.Exit(code=code)


def _emit(data: str | bytes, out: Optional[Path]) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if out is None:
        sys.stdout.write(data.decode("utf-8"))
        if not data.endswith(b"\n"):
            sys.stdout.write("\n")
        sys.stdout.flush()
    else:
        out.write_bytes(data)
        logger.info(f"wrote {out}")


def _parse_tasks(value: str) -> List[int]:
    try:
        counts = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise typer.BadParameter(f"expected a comma-separated list of integers, got {value!r}")
    if not counts or any(n < 1 for n in counts):
        raise typer.BadParameter("task counts must be positive integers")
    return counts


@app.callback()
def main_callback(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging."),
) -> None:
    _setup_logging(verbose)


@app.command()
def run(
    config: Path = typer.Option(..., "--config", help="JSON config file."),
    mode: Optional[Mode] = typer.Option(None, "--mode", help="Override the config mode."),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Override the seed."),
    out: Optional[Path] = typer.Option(None, "--out", help="RunStats JSON file (default stdout)."),
    trace: Optional[Path] = typer.Option(None, "--trace", help="Trace CSV file."),
) -> None:
    """Run one simulation and emit its RunStats JSON."""
    try:
        cfg = load_config(str(config)).with_overrides(mode=mode, seed=seed)
        stats = run_once(cfg, trace_path=str(trace) if trace else None)
    except OSError as exc:
        logger.error(f"cannot read {config}: {exc}")
        raise typer.Exit(code=EXIT_CONFIG)
    except VNoCError as exc:
        _fail(exc)
    _emit(stats.to_json(), out)


@app.command()
def sweep(
    config: Path = typer.Option(..., "--config", help="JSON config file."),
    tasks: str = typer.Option("2,4,6,8", "--tasks", help="Comma-separated task counts."),
    out: Optional[Path] = typer.Option(None, "--out", help="Speedup CSV file (default stdout)."),
    workers: Optional[int] = typer.Option(None, "--workers", min=1, help="Worker processes."),
) -> None:
    """Run baseline and vnoc for every task count and emit the speedup CSV."""
    counts = _parse_tasks(tasks)
    n_workers = workers if workers is not None else get_settings().sweep_workers
    try:
        report = run_sweep(load_config(str(config)), counts, workers=n_workers)
    except OSError as exc:
        logger.error(f"cannot read {config}: {exc}")
        raise typer.Exit(code=EXIT_CONFIG)
    except VNoCError as exc:
        _fail(exc)
    _emit(report.to_csv(), out)


@app.command(name="compare")
def compare_command(
    a: Path = typer.Argument(..., help="RunStats JSON of the reference run."),
    b: Path = typer.Argument(..., help="RunStats JSON of the compared run."),
) -> None:
    """Print the speedup of run B over run A."""
    try:
        first = RunStats.model_validate_json(a.read_bytes())
        second = RunStats.model_validate_json(b.read_bytes())
        point = compare(first, second)
    except (OSError, ValueError) as exc:
        logger.error(f"cannot load run stats: {exc}")
        raise typer.Exit(code=EXIT_CONFIG)
    except VNoCError as exc:
        _fail(exc)
    _emit(
        orjson.dumps(point.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2),
        None,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point with the documented exit codes; usage errors exit 1."""
    try:
        code = app(args=argv, standalone_mode=False)
    except click.exceptions.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    return code if isinstance(code, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
