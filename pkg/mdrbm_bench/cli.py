"""Command-line interface: pretrain, train, eval, sweep and report."""

import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, TypeVar

import click
from pydantic import ValidationError

from . import bench, serialization
from .config import ExperimentConfig, ModelSpec, Theta0Source
from .core_math import RngStream
from .errors import ConfigurationError, MdrbmBenchError, UsageError
from .pelm import PelmParams
from .report import NoiseSweepReport, render_table

logger = logging.getLogger(__name__)

F = TypeVar("F", bound=Callable[..., Any])

MODEL_KINDS = ["drbm", "drbm+elm", "mdrbm", "4nn"]


class BenchGroup(click.Group):
    """Maps library errors to exit codes: 2 configuration/usage, 3 data format, 4 numeric."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except MdrbmBenchError as e:
            click.echo(f"Error: {e}", err=True)
            ctx.exit(e.exit_code)


def parse_noise_grid(value: Optional[str]) -> Optional[List[float]]:
    """Parse ``"0,0.2,0.4"`` into a list of floats."""
    if value is None:
        return None
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise click.BadParameter(f"Invalid noise grid: {value}. Use comma-separated numbers") from e


def experiment_options(func: F) -> F:
    """Options shared by every command that needs an experiment configuration."""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Experiment config (JSON)"),
        click.option("--dataset", type=click.Choice(sorted(["mnist", "fmnist", "ulc", "cifar10"])), help="Preset"),
        click.option("--seed", type=int, help="Root seed"),
        click.option("--epochs", type=int, help="Training epochs"),
        click.option("--batch-size", type=int, help="Mini-batch size"),
        click.option("--evaluate-every", type=int, help="Held-out evaluation interval in epochs"),
        click.option("--s-train", type=int, help="PELM samples per datum during training"),
        click.option("--s-infer", type=int, help="PELM samples per input during inference"),
        click.option("--noise-grid", help="Comma-separated AWGN standard deviations"),
        click.option("--repeats", type=int, help="Independent repeats"),
        click.option(
            "--noise-before-standardize",
            "before_standardize",
            is_flag=True,
            default=None,
            help="Add noise to raw inputs instead of standardized ones",
        ),
        click.option("--out", "out_dir", type=click.Path(file_okay=False), default="runs", help="Output directory"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def load_experiment(config_path: Optional[str], dataset: Optional[str], **overrides: Any) -> ExperimentConfig:
    """Load a config file or preset and apply command-line overrides."""
    if config_path:
        config = ExperimentConfig.load_from_file(config_path)
    elif dataset:
        config = ExperimentConfig.preset(dataset)
    else:
        raise ConfigurationError("either --config or --dataset is required")
    overrides["noise_grid"] = parse_noise_grid(overrides.get("noise_grid"))
    return config.with_overrides(**overrides)


def model_specs(kinds: Tuple[str, ...], theta0: Optional[str]) -> List[ModelSpec]:
    """Build model rows; ``theta0`` applies to the kinds that have an untrained layer."""
    specs = []
    for kind in kinds:
        try:
            specs.append(ModelSpec(kind=kind, theta0=theta0 if kind in ("drbm+elm", "mdrbm") else None))
        except ValidationError as e:
            raise ConfigurationError(f"invalid model '{kind}': {e}") from e
    return specs


@click.group(cls=BenchGroup)
@click.option("--verbose", "-v", count=True, help="Increase log verbosity (-v info, -vv debug)")
def cli(verbose: int) -> None:
    """Multi-layered discriminative RBM training and noise-robustness benchmarks."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command()
@experiment_options
def pretrain(config_path: Optional[str], dataset: Optional[str], out_dir: str, **overrides: Any) -> None:
    """Pretrain a GBRBM on the training inputs and export its hidden layer.

    --epochs sets the number of pretraining epochs.
    """
    epochs = overrides.pop("epochs")
    config = load_experiment(config_path, dataset, **overrides)
    if epochs is not None:
        config = config.model_copy(update={"gbrbm": config.gbrbm.model_copy(update={"epochs": epochs})})
    data = bench.prepare_data(config)
    run_id = f"gbrbm:{config.config_hash()[:12]}:seed={config.seed}"
    result, theta0 = bench.pretrain(config, data.train.X, RngStream(config.seed).substream(bench.TRAIN_STREAM), run_id)

    out = Path(out_dir) / "pretrain"
    meta = {"config_hash": config.config_hash(), "seed": config.seed, "objective": result.objective_name}
    serialization.save_model(out / "gbrbm.bin", result.params, meta)
    serialization.save_model(out / "pelm.bin", theta0, meta)
    history = [
        {"epoch": r.epoch, "objective": r.objective, "reconstruction_error": err}
        for r, err in zip(result.history, result.reconstruction_errors)
    ]
    (out / "gbrbm_history.json").write_text(json.dumps(history, indent=2) + "\n", encoding="utf-8")

    click.echo(f"Pretrained GBRBM ({theta0.width} hidden units) on {data.train.N} inputs")
    if result.history:
        click.echo(f"  final {result.objective_name}: {result.history[-1].objective:.6f}")
    click.echo(f"  GBRBM: {out / 'gbrbm.bin'}")
    click.echo(f"  PELM:  {out / 'pelm.bin'}")


@cli.command()
@experiment_options
@click.option("--model", "kind", type=click.Choice(MODEL_KINDS), default="mdrbm", help="Model family")
@click.option("--theta0", type=click.Choice(["random", "gbrbm"]), help="Untrained layer source")
@click.option("--pelm-file", type=click.Path(dir_okay=False, exists=True), help="Use a pretrained PELM layer file")
def train(
    config_path: Optional[str],
    dataset: Optional[str],
    out_dir: str,
    kind: str,
    theta0: Optional[str],
    pelm_file: Optional[str],
    **overrides: Any,
) -> None:
    """Train one model, keeping the epoch with the best test accuracy."""
    config = load_experiment(config_path, dataset, **overrides)
    if pelm_file and theta0 is None:
        theta0 = "gbrbm"
    spec = model_specs((kind,), theta0)[0]
    data = bench.prepare_data(config)

    cache: Dict[Theta0Source, PelmParams] = {}
    if pelm_file:
        if spec.theta0 is None:
            raise UsageError(f"--pelm-file has no effect on model kind '{kind}'")
        loaded = serialization.load_model(pelm_file)
        if not isinstance(loaded, PelmParams):
            raise UsageError(f"{pelm_file} does not hold PELM parameters")
        cache[spec.theta0] = loaded

    rng = RngStream(config.seed).substream(bench.TRAIN_STREAM, 0)
    model = bench.build_model(config, spec, data.train, rng, theta0_cache=cache)
    outcome = bench.train_model(config, model, data.train, rng.substream(3), data.test, label=spec.label)
    acc = bench.accuracy(outcome.best_model, data.test, config.sampling.s_infer, rng.substream(4))

    path = Path(out_dir) / "models" / f"{bench.slug(spec.label)}.bin"
    meta = {"config_hash": config.config_hash(), "seed": config.seed, "model": spec.label}
    serialization.save_model(path, outcome.best_model, meta)
    history_path = Path(out_dir) / "history" / f"{bench.slug(spec.label)}.json"
    history_path.parent.mkdir(parents=True, exist_ok=True)
    history_path.write_text(json.dumps(outcome.history_dicts(), indent=2) + "\n", encoding="utf-8")

    click.echo(f"{spec.label}: best epoch {outcome.best_epoch}, test accuracy {100 * acc:.2f}%")
    click.echo(f"  model: {path}")


@cli.command(name="eval")
@experiment_options
@click.option("--model-file", required=True, type=click.Path(dir_okay=False, exists=True), help="Trained model")
def evaluate(
    config_path: Optional[str], dataset: Optional[str], out_dir: str, model_file: str, **overrides: Any
) -> None:
    """Evaluate a trained model on the (noisy) test set."""
    config = load_experiment(config_path, dataset, **overrides)
    model = serialization.load_model(model_file)
    if not isinstance(model, bench.CLASSIFIER_TYPES):
        raise UsageError(f"{model_file} does not hold a classifier")
    data = bench.prepare_data(config)
    grid = config.noise.grid if overrides.get("noise_grid") else [0.0]
    row = bench.noise_sweep(
        model,
        data.test,
        grid,
        config.noise.repeats,
        config.sampling.s_infer,
        RngStream(config.seed).substream(bench.SWEEP_STREAM, 0),
        label=Path(model_file).stem,
        stats=data.stats if config.noise.before_standardize else None,
        raw_test=data.raw_test if config.noise.before_standardize else None,
    )
    click.echo(f"{row.model} (S = {config.sampling.s_infer}):")
    for entry in row.entries:
        click.echo(f"  sigma={entry.sigma:g}: {100 * entry.mean:.2f}% +/- {100 * entry.std:.2f}")


@cli.command()
@experiment_options
@click.option("--model", "kinds", multiple=True, type=click.Choice(MODEL_KINDS), help="Restrict the model matrix")
@click.option("--theta0", type=click.Choice(["random", "gbrbm"]), help="Untrained layer source for --model")
def sweep(
    config_path: Optional[str],
    dataset: Optional[str],
    out_dir: str,
    kinds: Tuple[str, ...],
    theta0: Optional[str],
    **overrides: Any,
) -> None:
    """Train the model matrix and sweep the noise grid."""
    if kinds:
        overrides["models"] = model_specs(kinds, theta0)
    config = load_experiment(config_path, dataset, **overrides)
    report = bench.run_experiment(config, out_dir)
    click.echo(render_table(report))
    click.echo(f"\nReport: {Path(out_dir) / 'report.json'} (hash {report.content_hash()[:12]})")


@cli.command()
@click.argument("report_path", type=click.Path(dir_okay=False, exists=True))
@click.option("--tsv", "tsv_path", type=click.Path(dir_okay=False), help="Also write the table as TSV")
def report(report_path: str, tsv_path: Optional[str]) -> None:
    """Render an existing report."""
    loaded = NoiseSweepReport.read(report_path)
    click.echo(render_table(loaded))
    if loaded.status != "complete":
        click.echo(f"\nIncomplete: failed at stage '{loaded.failed_stage}': {loaded.error}")
    if tsv_path:
        Path(tsv_path).write_text(loaded.to_tsv(), encoding="utf-8")
        click.echo(f"Wrote {tsv_path}")


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
