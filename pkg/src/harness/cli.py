"""Command-line entry point: ``python -m src.harness.cli <command>``.

Exit codes: 0 on success, 1 on a configuration or data error, 2 when training
diverges (a report with stop reason ``diverged`` is still written).
"""
import logging
from pathlib import Path
from typing import List, Optional

import typer

from src.data_io.datasets import Dataset
from src.data_io.idx_loader import load_idx
from src.data_io.preprocessing import preprocess
from src.data_io.usps_loader import load_usps
from src.drcn_engine.checkpoint import load_checkpoint
from src.drcn_engine.trainer import evaluate
from src.harness.config import parse_config
from src.harness.diagnostics import dump_reconstruction_grid
from src.harness.experiment import load_domain, run_repeats, run_sweep
from src.tensor_core.errors import ConfigError, DrcnError, TrainingError
from src.utils.logging_setup import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2

# numeric flags are taken as text and typed by parse_config, which names the key
GRID_FIELDS = {"lambda": "lam", "fc_width": "fc_width"}

app = typer.Typer(help="DRCN training engine and experiment runner", add_completion=False)


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging")):
    setup_logging(verbose)


def _fail(exc: Exception) -> None:
    logger.error(f"❌ {exc}")
    raise typer.Exit(EXIT_DIVERGED if isinstance(exc, TrainingError) else EXIT_CONFIG)


def _overrides(**flags) -> dict:
    return {key: value for key, value in flags.items() if value is not None}


def _load_dataset(path: Path) -> Dataset:
    """USPS container (``.bin``), IDX image file (labels alongside when present), or a dataset name/dir"""
    if path.is_file():
        if path.suffix == ".bin":
            return load_usps(path)
        labels = path.with_name(path.name.replace("images-idx3", "labels-idx1"))
        return load_idx(path, labels if labels != path and labels.is_file() else None)
    return load_domain(str(path), "test")


@app.command()
def train(
    config: Optional[Path] = typer.Option(None, "--config", help="key=value config file"),
    lam: Optional[str] = typer.Option(None, "--lambda", help="Classification weight in [0, 1]"),
    seed: Optional[str] = typer.Option(None, "--seed"),
    flavor: Optional[str] = typer.Option(
        None, "--flavor", help="drcn|drcn_s|drcn_st|convnet_src|convnet_tgt|convae|convae_convnet_src"
    ),
    source: Optional[str] = typer.Option(None, "--source", help="Dataset name or directory"),
    target: Optional[str] = typer.Option(None, "--target", help="Dataset name or directory"),
    out: Optional[Path] = typer.Option(None, "--out", help="Run directory"),
    repeat: Optional[str] = typer.Option(None, "--repeat", help="Number of seeds (seed, seed+1, ...)"),
):
    """Train one configuration and write its run directory"""
    try:
        cfg = parse_config(config, _overrides(
            **{"lambda": lam}, seed=seed, flavor=flavor, source=source, target=target, out=out, repeat=repeat,
        ))
        reports, _ = run_repeats(cfg)
    except DrcnError as exc:
        _fail(exc)
    if any(r.stop_reason == "diverged" for r in reports):
        raise typer.Exit(EXIT_DIVERGED)


def _grid(config: Optional[Path], key: str, values: List[str]) -> list:
    """Each grid value validated as the config key it overrides"""
    return [getattr(parse_config(config, {key: value}).train, GRID_FIELDS[key]) for value in values]


def _count(text: str) -> int:
    try:
        count = int(text)
    except ValueError:
        raise ConfigError(f"--count: expected integer, got {text!r}") from None
    if count < 1:
        raise ConfigError(f"--count: must be at least 1, got {count}")
    return count


@app.command()
def sweep(
    config: Optional[Path] = typer.Option(None, "--config", help="key=value config file"),
    lambdas: List[str] = typer.Option(["0.4", "0.5", "0.6", "0.7"], "--lambda", help="Repeat for each grid value"),
    fc_widths: List[str] = typer.Option([], "--fc-width", help="Repeat for each grid value"),
    out: Optional[Path] = typer.Option(None, "--out", help="Sweep directory"),
):
    """Grid search over lambda and fc width, chosen by source validation accuracy"""
    try:
        cfg = parse_config(config, _overrides(out=out))
        best, _ = run_sweep(cfg, _grid(config, "lambda", lambdas), _grid(config, "fc_width", fc_widths) or None)
    except DrcnError as exc:
        _fail(exc)
    typer.echo(f"lambda={best.train.lam} fc_width={best.train.fc_width}")


@app.command()
def reconstruct(
    checkpoint: Path = typer.Option(..., "--checkpoint"),
    images: Path = typer.Option(..., "--images", help="USPS container or IDX image file"),
    out: Path = typer.Option(..., "--out", help="Output .pgm grid"),
    count: str = typer.Option("8", "--count", help="Images in the grid"),
):
    """Write an input-over-reconstruction grid for the first images of a file"""
    try:
        model = load_checkpoint(checkpoint)
        ds = preprocess(_load_dataset(images), model.input_shape[1:])
        dump_reconstruction_grid(model, ds.images[: _count(count)], out)
    except DrcnError as exc:
        _fail(exc)
    logger.info(f"🖼️  Wrote {out}")


@app.command("eval")
def eval_command(
    checkpoint: Path = typer.Option(..., "--checkpoint"),
    data: Path = typer.Option(..., "--data", help="Labeled dataset file or directory"),
):
    """Print the classification accuracy of a checkpoint on a labeled set"""
    try:
        model = load_checkpoint(checkpoint)
        ds = preprocess(_load_dataset(data), model.input_shape[1:])
        accuracy = evaluate(model, ds)
    except DrcnError as exc:
        _fail(exc)
    typer.echo(f"{accuracy:.4f}")


if __name__ == "__main__":
    app()
