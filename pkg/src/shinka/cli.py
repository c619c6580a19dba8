"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

import logging
import sys
from pathlib import Path

import click

from .config import ConfigError, ablation_presets, apply_overrides, load_config
from .journal import JournalError
from .report import replay, write_report_files
from .runner import EvolutionRunner, RunError

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Evolutionary program search over island archives."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _launch(config_path: str, init: str, seed, run_dir, replay_path, preset):
    try:
        config = load_config(config_path)
        if seed is not None:
            config.seed = seed
        if preset is not None:
            config = apply_overrides(config, ablation_presets(preset))
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        runner = EvolutionRunner(config, init, run_dir=run_dir,
                                 replay_path=replay_path, preset=preset)
        report = runner.run()
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (RunError, OSError) as exc:
        _fail(EXIT_RUNTIME, str(exc))
    best = report.best_program
    click.echo(f"run complete: best fitness "
               f"{best.fitness if best else 'n/a'} ({best.id if best else '-'})")


@main.command(name="run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--init", required=True, type=click.Path(exists=True),
              help="Initial program seeded into every island.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--run-dir", default=None, type=click.Path())
@click.option("--replay", "replay_path", default=None, type=click.Path(exists=True),
              help="Replay provider responses from a transcript file.")
def run_command(config_path, init, seed, run_dir, replay_path):
    """Run a full evolution loop."""
    _launch(config_path, init, seed, run_dir, replay_path, preset=None)


@main.command(name="ablate")
@click.option("--preset", required=True)
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--init", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--run-dir", default=None, type=click.Path())
@click.option("--replay", "replay_path", default=None, type=click.Path(exists=True))
def ablate_command(preset, config_path, init, seed, run_dir, replay_path):
    """Run a named ablation arm (config delta applied over the base config)."""
    _launch(config_path, init, seed, run_dir, replay_path, preset=preset)


@main.command(name="resume")
@click.option("--run-dir", required=True, type=click.Path(exists=True))
def resume_command(run_dir):
    """Continue an interrupted run from its last checkpoint."""
    try:
        runner = EvolutionRunner.resume(run_dir)
        report = runner.run()
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (RunError, OSError, JournalError) as exc:
        _fail(EXIT_RUNTIME, str(exc))
    best = report.best_program
    click.echo(f"resume complete: best fitness "
               f"{best.fitness if best else 'n/a'}")


@main.command(name="report")
@click.option("--run-dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def report_command(run_dir, out):
    """Rebuild report files from a run's journal."""
    journal_path = Path(run_dir) / "journal.jsonl"
    if not journal_path.exists():
        _fail(EXIT_RUNTIME, f"no journal found under {run_dir}")
    language = "python"
    config_path = Path(run_dir) / "config.yaml"
    if config_path.exists():
        try:
            language = load_config(config_path).evolution.language
        except ConfigError:
            pass
    try:
        report = replay(journal_path)
        files = write_report_files(report, out, language=language)
    except (JournalError, OSError) as exc:
        _fail(EXIT_RUNTIME, str(exc))
    for path in files:
        click.echo(str(path))


@main.group(name="task")
def task_group():
    """Scaffold the bundled example tasks."""


@task_group.command(name="synthetic")
@click.option("--out", required=True, type=click.Path())
@click.option("--dimension", type=int, default=3)
@click.option("--generations", type=int, default=50)
@click.option("--seed", type=int, default=7)
@click.option("--mutator-q", type=float, default=1.0)
def task_synthetic(out, dimension, generations, seed, mutator_q):
    """Write the synthetic vector task (evaluator, initial program, config)."""
    from .tasks.synthetic import make_task

    task = make_task(out, dimension=dimension, generations=generations,
                     seed=seed, mutator_q=mutator_q)
    click.echo(str(task.evaluator_path))
    click.echo(str(task.initial_program_path))
    click.echo(str(task.config_path))


@task_group.command(name="circle-packing")
@click.option("--out", required=True, type=click.Path())
def task_circle_packing(out):
    """Write the circle-packing initial program next to its evaluator."""
    from .tasks import circle_packing

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    init = circle_packing.write_initial_program(out_dir / "initial.py")
    click.echo(str(Path(circle_packing.__file__)))
    click.echo(str(init))


if __name__ == "__main__":
    main()
