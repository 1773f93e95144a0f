"""
Command-line interface for frequnet.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure
(non-finite loss or failed gradient check), 4 I/O error.
"""

import json
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import click

from config import config as profiles

from .errors import ConfigError, DataError, DimensionError, NumericError
from .gradcheck import CASES, run_suite
from .harness.ablation import ablate, compare_imbalance, minority_class
from .harness.evaluation import evaluate
from .harness.phantom import normalize, save_dataset
from .harness.training import CHECKPOINT_FILE, load_splits, read_metrics, run_dir, train
from .network import init_params
from .params import ModelParams
from .run_config import RunConfig, resolve

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _profile(ctx: click.Context):
    name = ctx.obj["profile"]
    if name not in profiles:
        raise ConfigError(f"unknown profile '{name}'; valid profiles: {', '.join(sorted(profiles))}")
    return profiles[name]


def _resolve(ctx: click.Context, config_path: Optional[str], overrides: Sequence[str],
             seed: Optional[int]) -> RunConfig:
    return resolve(_profile(ctx).settings(), config_path, overrides, seed)


def _out(ctx: click.Context, out: Optional[str]) -> str:
    return out or _profile(ctx).RUNS_DIR


def _threads(ctx: click.Context, threads: Optional[int]) -> int:
    return threads if threads is not None else _profile(ctx).THREADS


def run_options(func):
    """--config, --override, --out, --seed and --threads, shared by the run commands."""
    func = click.option("--threads", type=int, default=None,
                        help="Worker threads (default FREQUNET_THREADS or 1).")(func)
    func = click.option("--seed", type=int, default=None, help="Seed for data and initialization.")(func)
    func = click.option("--out", "out", type=click.Path(file_okay=False), default=None,
                        help="Parent directory of run directories.")(func)
    func = click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE",
                        help="Config override; repeatable.")(func)
    func = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                        help="Flat 'section.key = value' config file.")(func)
    return func


def _seed_list(text: Optional[str]) -> Optional[List[int]]:
    if not text:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be a comma-separated list of integers, got {text!r}") from None


@click.group()
@click.option("--profile", default=None, help="Run profile (default FREQUNET_PROFILE or 'desk').")
@click.option("--log-level", default=None, help="Logging level (default FREQUNET_LOG_LEVEL or INFO).")
@click.pass_context
def cli(ctx, profile, log_level):
    """Frequency-domain segmentation toolkit."""
    ctx.ensure_object(dict)
    name = profile or os.environ.get("FREQUNET_PROFILE") or "desk"
    ctx.obj["profile"] = name
    level = (log_level or (profiles[name].LOG_LEVEL if name in profiles else "INFO")).upper()
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


@cli.command(name="train")
@run_options
@click.option("--cache", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Dataset cache written by gen-data.")
@click.pass_context
def train_command(ctx, config_path, overrides, out, seed, threads, cache):
    """Trains one configuration and writes its run directory."""
    cfg = _resolve(ctx, config_path, overrides, seed)
    result = train(cfg, _out(ctx, out), _threads(ctx, threads), cache=cache)
    click.echo(f"run directory: {result.run_dir}")
    click.echo(f"checkpoint: {result.checkpoint_path}")
    click.echo(f"metrics log: {result.metrics_path}")
    return EXIT_OK


@cli.command(name="eval")
@run_options
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
              help="Checkpoint to evaluate (default: the run directory of the config).")
@click.option("--split", type=click.Choice(["train", "val"]), default="val", show_default=True)
@click.option("--cache", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def eval_command(ctx, config_path, overrides, out, seed, threads, checkpoint, split, cache):
    """Evaluates a checkpoint and prints its metrics report as JSON."""
    cfg = _resolve(ctx, config_path, overrides, seed)
    path = checkpoint or os.path.join(run_dir(_out(ctx, out), cfg), CHECKPOINT_FILE)
    params = ModelParams.load(path, expected=init_params(cfg))
    workers = _threads(ctx, threads)
    train_set, val_set = normalize(*load_splits(cfg, workers, cache))
    report = evaluate(params, train_set if split == "train" else val_set, cfg, workers)
    click.echo(json.dumps(report.to_record(cfg.train.epochs, split), sort_keys=True))
    return EXIT_OK


@cli.command(name="ablate")
@run_options
@click.option("--seeds", default=None, help="Comma-separated seeds; defaults to --seed or the config seed.")
@click.option("--imbalance", is_flag=True, help="Compare full model and all-off baseline instead.")
@click.pass_context
def ablate_command(ctx, config_path, overrides, out, seed, threads, seeds, imbalance):
    """Runs the five-row switch ablation (or the imbalance comparison)."""
    cfg = _resolve(ctx, config_path, overrides, seed)
    seed_list = _seed_list(seeds) or [cfg.train.seed]
    target = _out(ctx, out)
    workers = _threads(ctx, threads)
    if imbalance:
        comparison = compare_imbalance(cfg, target, seed_list, workers)
        for key, value in comparison.summary().items():
            click.echo(f"{key}: {100.0 * value:.2f}")
        click.echo(f"full model ahead by >= 5 Dice points with smaller gap: {comparison.passes()}")
        return EXIT_OK
    result = ablate(cfg, target, seed_list, workers)
    if len(result.per_seed) > 1:
        for table in result.per_seed:
            click.echo(f"seed {table.seeds[0]}")
            click.echo(table.render())
            click.echo("")
        click.echo(f"mean over seeds {','.join(str(s) for s in seed_list)}")
    click.echo(result.mean.render())
    cls = minority_class(cfg)
    click.echo(f"full row best on class {cls} in {result.full_wins(cls)}/{len(result.per_seed)} seeds")
    return EXIT_OK


@cli.command(name="gradcheck")
@click.option("--op", "ops", multiple=True, type=click.Choice(sorted(CASES)), help="Restrict to these checks.")
@click.option("--seed", type=int, default=0, show_default=True)
def gradcheck_command(ops, seed):
    """Runs the finite-difference suite; exits 3 if any check fails."""
    results = run_suite(list(ops) or None, seed)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        click.echo(f"{r.name.ljust(width)}  {r.max_rel_error:.3e}  (< {r.threshold:.0e})  {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        click.echo(f"failed: {', '.join(failed)}", err=True)
        return EXIT_NUMERIC
    return EXIT_OK


@cli.command(name="gen-data")
@run_options
@click.option("--file", "file_path", type=click.Path(dir_okay=False), default=None,
              help="Cache file (default <out>/dataset-<config hash>.fquf).")
@click.pass_context
def gen_data_command(ctx, config_path, overrides, out, seed, threads, file_path):
    """Generates the train and validation phantoms into a dataset cache."""
    cfg = _resolve(ctx, config_path, overrides, seed)
    path = file_path or os.path.join(_out(ctx, out), f"dataset-{cfg.config_hash()}.fquf")
    train_set, val_set = load_splits(cfg, _threads(ctx, threads))
    save_dataset(path, train_set, val_set)
    click.echo(path)
    return EXIT_OK


def metrics_series(records: Sequence[Dict]) -> Dict[str, List[Tuple[float, float]]]:
    """Splits metrics-log records into named (x, y) series.

    Step records are indexed by step, epoch records by epoch.
    """
    series: Dict[str, List[Tuple[float, float]]] = {}

    def add(name: str, x: float, y: float):
        series.setdefault(name, []).append((x, y))

    for record in records:
        if record.get("kind") == "step":
            x = record["step"]
            for key in ("total", "dice", "topk", "freq", "lr"):
                add(f"step_{key}", x, record[key])
            for k, value in enumerate(record["class_dice"]):
                add(f"step_soft_dice_{k}", x, value)
        elif record.get("kind") == "epoch":
            x = record["epoch"]
            for key in ("lr", "ema_train", "ema_val", "val_loss", "dice_gap"):
                if key in record:
                    add(f"epoch_{key}", x, record[key])
            for k, value in enumerate(record["class_dice"]):
                add(f"epoch_dice_{k}", x, value)
    return series


@cli.command(name="plot-data")
@click.argument("log_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out", type=click.Path(file_okay=False), required=True,
              help="Directory for the column files.")
def plot_data_command(log_path, out):
    """Writes one two-column text file per series of a metrics log."""
    series = metrics_series(read_metrics(log_path))
    os.makedirs(out, exist_ok=True)
    for name, points in series.items():
        with open(os.path.join(out, f"{name}.dat"), "w", encoding="utf-8") as fh:
            fh.write("".join(f"{x!r} {y!r}\n" for x, y in points))
    click.echo(f"wrote {len(series)} series to {out}")
    return EXIT_OK


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Runs the CLI and returns the exit code instead of exiting."""
    try:
        code = cli.main(args=list(argv) if argv is not None else None, prog_name="frequnet",
                        standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except click.exceptions.Abort:
        return EXIT_CONFIG
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except (DimensionError, DataError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    except NumericError as exc:
        logger.debug("numeric failure term=%s", exc.term, exc_info=True)
        click.echo(f"numeric error: {exc}", err=True)
        return EXIT_NUMERIC
    except OSError as exc:
        logger.debug("i/o failure", exc_info=True)
        click.echo(f"i/o error: {exc}", err=True)
        return EXIT_IO
    return int(code or EXIT_OK)
