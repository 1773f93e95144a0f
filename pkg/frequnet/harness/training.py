"""
Training Module for frequnet
This module implements the training loop: Adam updates on the composite
deep-supervised loss, exponential moving averages of the train and
validation losses, plateau halving of the learning rate, the JSON-lines
metrics log and the checkpoint written into the run directory.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..errors import NumericError
from ..metrics import MetricsReport
from ..network import forward, init_params, supervised_loss
from ..params import ModelParams
from ..run_config import RunConfig
from ..tensor_core import Tape
from ..wavelet import WaveletSpec
from .evaluation import evaluate
from .optim import EMA, Adam, PlateauSchedule
from .phantom import SampleBatch, load_dataset, make_splits, normalize

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.cfg"
METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "checkpoint.fquf"


def run_dir(out: str, cfg: RunConfig) -> str:
    """Run directory named by the configuration hash."""
    return os.path.join(out, cfg.config_hash())


class MetricsLogger:
    """Writes one JSON object per line; keys sorted, no wall-clock values."""

    def __init__(self, path: str):
        self.path = path
        self.records: List[Dict[str, Any]] = []
        self._fh = open(path, "w", encoding="utf-8")

    def write(self, record: Dict[str, Any]):
        self.records.append(record)
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self) -> "MetricsLogger":
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False


def read_metrics(path: str) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class TrainResult:
    """Outcome of one training run.

    Attributes:
        params: Final parameters.
        run_dir: Directory holding config, metrics log and checkpoint.
        records: Every metrics-log record, in order.
        val_report: Metrics on the validation split after the last epoch.
    """
    params: ModelParams
    run_dir: str
    records: List[Dict[str, Any]] = field(repr=False)
    val_report: MetricsReport

    @property
    def checkpoint_path(self) -> str:
        return os.path.join(self.run_dir, CHECKPOINT_FILE)

    @property
    def metrics_path(self) -> str:
        return os.path.join(self.run_dir, METRICS_FILE)


def load_splits(cfg: RunConfig, threads: int = 1, cache: Optional[str] = None) -> Tuple[SampleBatch, SampleBatch]:
    """Raw (train, val) splits from the cache file or freshly generated."""
    if cache:
        logger.info("loading dataset cache path=%s", cache)
        return load_dataset(cache, expected_classes=cfg.arch.num_classes)
    return make_splits(cfg.data, cfg.train.train_size, cfg.train.val_size, threads)


def _mean_loss(params: ModelParams, batch: SampleBatch, cfg: RunConfig, spec: WaveletSpec) -> float:
    totals = []
    for part in batch.batches(cfg.train.batch_size):
        logits, aux = forward(part.tensor(), params, cfg)
        totals.append(supervised_loss(logits, aux, part.labels, cfg.effective_loss(), spec).total)
    return float(np.mean(totals))


def train(cfg: RunConfig, out: str, threads: int = 1, cache: Optional[str] = None,
          splits: Optional[Tuple[SampleBatch, SampleBatch]] = None) -> TrainResult:
    """Trains one configuration and writes its run directory.

    Args:
        cfg: Validated run configuration.
        out: Parent directory; the run goes to out/<config hash>.
        threads: Worker threads for data generation and evaluation.
        cache: Optional dataset cache file to read instead of generating.
        splits: Optional raw (train, val) splits, taking precedence over `cache`.

    Returns:
        TrainResult with final parameters and the metrics records.

    Raises:
        NumericError: If a loss term turns non-finite; the term is named.
    """
    cfg.validate()
    directory = run_dir(out, cfg)
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, CONFIG_FILE), "w", encoding="utf-8") as fh:
        fh.write(cfg.serialize())

    train_raw, val_raw = splits if splits is not None else load_splits(cfg, threads, cache)
    train_set, val_set = normalize(train_raw, val_raw)
    spec = WaveletSpec.daubechies(cfg.arch.wavelet_order)
    weights = cfg.effective_loss()
    oc = cfg.optim

    params = init_params(cfg)
    optimizer = Adam(oc.lr, oc.beta1, oc.beta2, oc.eps)
    schedule = PlateauSchedule(lr=oc.lr, lr_min=oc.lr_min, patience=oc.patience, min_delta=oc.min_delta)
    ema_train, ema_val = EMA(oc.ema_decay), EMA(oc.ema_decay)
    logger.info("training run=%s epochs=%d train=%d val=%d params=%d", os.path.basename(directory),
                cfg.train.epochs, len(train_set), len(val_set), params.count())

    step = 0
    report = None
    with MetricsLogger(os.path.join(directory, METRICS_FILE)) as log:
        for epoch in range(1, cfg.train.epochs + 1):
            epoch_losses = []
            for batch in train_set.batches(cfg.train.batch_size):
                with Tape() as tape:
                    logits, aux = forward(batch.tensor(), params, cfg)
                    try:
                        loss = supervised_loss(logits, aux, batch.labels, weights, spec)
                    except NumericError as exc:
                        logger.error("aborting epoch=%d step=%d term=%s", epoch, step, exc.term)
                        raise
                grads = tape.backward(output=loss.loss)
                params = optimizer.step(params, grads)
                step += 1
                epoch_losses.append(loss.total)
                log.write(loss.to_record(step, optimizer.lr))

            train_ema = ema_train.update(float(np.mean(epoch_losses)))
            val_loss = _mean_loss(params, val_set, cfg, spec)
            val_ema = ema_val.update(val_loss)
            optimizer.lr = schedule.step(val_ema)
            report = evaluate(params, val_set, cfg, threads)
            record = report.to_record(epoch, "val")
            record.update({"lr": optimizer.lr, "ema_train": train_ema, "ema_val": val_ema, "val_loss": val_loss})
            log.write(record)
            logger.info("epoch=%d lr=%.3g ema_train=%.5f ema_val=%.5f dice=%s gap=%.4f", epoch, optimizer.lr,
                        train_ema, val_ema, ",".join(f"{d:.3f}" for d in report.class_dice), report.dice_gap)
        records = log.records

    params.save(os.path.join(directory, CHECKPOINT_FILE))
    return TrainResult(params=params, run_dir=directory, records=records, val_report=report)
