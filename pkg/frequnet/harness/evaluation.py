"""
Evaluation runner for frequnet: argmax predictions over a split, aggregated
into global per-class hard Dice.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

from ..errors import ConfigError
from ..metrics import DiceCounter, MetricsReport
from ..network import predict
from ..params import ModelParams
from ..run_config import RunConfig
from .phantom import SampleBatch

logger = logging.getLogger(__name__)


def evaluate(params: ModelParams, dataset: SampleBatch, cfg: RunConfig, threads: int = 1) -> MetricsReport:
    """Hard Dice over `dataset`, intersections and sizes summed over all images.

    Batches may be predicted on several threads; parameters are shared read-only
    and counts are merged in batch order.

    Raises:
        ConfigError: If the dataset and the network disagree on the class count.
    """
    if dataset.num_classes != cfg.arch.num_classes:
        raise ConfigError(f"dataset has {dataset.num_classes} classes, network predicts {cfg.arch.num_classes}")
    batches = list(dataset.batches(cfg.train.batch_size))

    def count(batch: SampleBatch) -> DiceCounter:
        counter = DiceCounter(dataset.num_classes)
        counter.add(predict(batch.tensor(), params, cfg), batch.labels)
        return counter

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counters = list(pool.map(count, batches))
    else:
        counters = [count(b) for b in batches]
    total = DiceCounter(dataset.num_classes)
    for counter in counters:
        total.merge(counter)
    report = total.report()
    logger.debug("evaluated images=%d aggregation=%s gap=%.4f", len(dataset), report.aggregation, report.dice_gap)
    return report
