"""
Ablation Module for frequnet
This module runs the switch ablation (each of FLC, DB downsampling, SLD and
FAL turned off in turn, then the full model) and the imbalance comparison of
the full model against the all-off baseline, over one or more seeds.
"""

import logging
import os
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..metrics import MetricsReport
from ..run_config import RunConfig, Switches
from .training import load_splits, train

logger = logging.getLogger(__name__)

SWITCH_COLUMNS = (("flc", "FLC"), ("db_down", "DB Downsampling"), ("sld", "SLD"), ("fal", "FAL"))
FULL_VARIANT = "full"
BASELINE_VARIANT = "baseline"


def ablation_variants(base: Switches) -> List[Tuple[str, Switches]]:
    """Five variants: each switch off in turn, then all on."""
    full = replace(base, flc=True, db_down=True, sld=True, fal=True)
    rows = [(f"w/o {label}", replace(full, **{name: False})) for name, label in SWITCH_COLUMNS]
    rows.append((FULL_VARIANT, full))
    return rows


def minority_class(cfg: RunConfig) -> int:
    """Foreground class with the smallest configured area fraction."""
    fractions = [cls.area_fraction for cls in cfg.data.classes]
    return 1 + int(np.argmin(fractions))


@dataclass(frozen=True)
class AblationRow:
    """One line of the ablation table; Dice and Gap in percent."""
    variant: str
    switches: Switches
    dice: Tuple[float, ...]
    gap: float

    @classmethod
    def from_report(cls, variant: str, switches: Switches, report: MetricsReport) -> "AblationRow":
        return cls(variant, switches, tuple(100.0 * d for d in report.foreground_dice()), 100.0 * report.dice_gap)


@dataclass(frozen=True)
class AblationTable:
    rows: Tuple[AblationRow, ...]
    seeds: Tuple[int, ...]

    def columns(self) -> List[str]:
        n = len(self.rows[0].dice) if self.rows else 2
        return (["Variant"] + [label for _, label in SWITCH_COLUMNS]
                + [f"DICE {k}" for k in range(1, n + 1)] + ["Gap"])

    def row_values(self, row: AblationRow) -> List[str]:
        marks = ["on" if getattr(row.switches, name) else "off" for name, _ in SWITCH_COLUMNS]
        return [row.variant] + marks + [f"{d:.2f}" for d in row.dice] + [f"{row.gap:.2f}"]

    def render(self) -> str:
        """Fixed-width text table."""
        lines = [self.columns()] + [self.row_values(r) for r in self.rows]
        widths = [max(len(line[i]) for line in lines) for i in range(len(lines[0]))]
        out = [" | ".join(cell.ljust(w) for cell, w in zip(line, widths)) for line in lines]
        out.insert(1, "-+-".join("-" * w for w in widths))
        return "\n".join(out)

    def to_tsv(self) -> str:
        lines = [self.columns()] + [self.row_values(r) for r in self.rows]
        return "".join("\t".join(line) + "\n" for line in lines)

    def row(self, variant: str) -> AblationRow:
        for r in self.rows:
            if r.variant == variant:
                return r
        raise KeyError(f"no ablation row '{variant}'")

    @classmethod
    def mean(cls, tables: Sequence["AblationTable"]) -> "AblationTable":
        rows = []
        for i, first in enumerate(tables[0].rows):
            dice = np.mean([t.rows[i].dice for t in tables], axis=0)
            gap = float(np.mean([t.rows[i].gap for t in tables]))
            rows.append(AblationRow(first.variant, first.switches, tuple(float(d) for d in dice), gap))
        return cls(tuple(rows), tuple(s for t in tables for s in t.seeds))


@dataclass(frozen=True)
class AblationResult:
    mean: AblationTable
    per_seed: Tuple[AblationTable, ...]

    def full_wins(self, cls: int) -> int:
        """Seeds in which the full row has the best Dice of class `cls`."""
        wins = 0
        for table in self.per_seed:
            best = max(r.dice[cls - 1] for r in table.rows)
            wins += int(table.row(FULL_VARIANT).dice[cls - 1] >= best)
        return wins


def ablate(base_cfg: RunConfig, out: str, seeds: Sequence[int] = (0,), threads: int = 1) -> AblationResult:
    """Trains the five ablation variants per seed and tabulates validation Dice.

    The dataset of a seed is generated once and shared by its variants.
    """
    tables = []
    for seed in seeds:
        seeded = base_cfg.with_seed(seed)
        splits = load_splits(seeded, threads)
        rows = []
        for variant, switches in ablation_variants(seeded.switches):
            logger.info("ablation seed=%d variant=%s", seed, variant)
            result = train(seeded.with_switches(switches), out, threads, splits=splits)
            rows.append(AblationRow.from_report(variant, switches, result.val_report))
        table = AblationTable(tuple(rows), (seed,))
        tables.append(table)
        _write_table(out, f"ablation_seed{seed}.tsv", table)
    result = AblationResult(mean=AblationTable.mean(tables), per_seed=tuple(tables))
    _write_table(out, "ablation.tsv", result.mean)
    return result


def _write_table(out: str, name: str, table: AblationTable):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, name), "w", encoding="utf-8") as fh:
        fh.write(table.to_tsv())


@dataclass(frozen=True)
class ImbalanceComparison:
    """Minority-class Dice and Dice gap per seed for the full model and the baseline."""
    minority: int
    seeds: Tuple[int, ...]
    full_minority: Tuple[float, ...]
    base_minority: Tuple[float, ...]
    full_gap: Tuple[float, ...]
    base_gap: Tuple[float, ...]

    def summary(self) -> Dict[str, float]:
        return {
            "full_minority_dice": float(np.mean(self.full_minority)),
            "baseline_minority_dice": float(np.mean(self.base_minority)),
            "full_gap": float(np.mean(self.full_gap)),
            "baseline_gap": float(np.mean(self.base_gap)),
        }

    def passes(self, margin_points: float = 5.0) -> bool:
        """Full model beats the baseline's mean minority Dice by `margin_points`
        Dice points and has a strictly smaller mean gap."""
        s = self.summary()
        gain = 100.0 * (s["full_minority_dice"] - s["baseline_minority_dice"])
        return gain >= margin_points and s["full_gap"] < s["baseline_gap"]


def compare_imbalance(base_cfg: RunConfig, out: str, seeds: Sequence[int] = (0, 1, 2),
                      threads: int = 1) -> ImbalanceComparison:
    """Full configuration against the all-switches-off baseline on identical data."""
    cls = minority_class(base_cfg)
    full_switches = replace(base_cfg.switches, flc=True, db_down=True, sld=True, fal=True)
    scores: Dict[str, List[Tuple[float, float]]] = {FULL_VARIANT: [], BASELINE_VARIANT: []}
    for seed in seeds:
        seeded = base_cfg.with_seed(seed)
        splits = load_splits(seeded, threads)
        for variant, switches in ((FULL_VARIANT, full_switches), (BASELINE_VARIANT, full_switches.all_off())):
            report = train(seeded.with_switches(switches), out, threads, splits=splits).val_report
            scores[variant].append((report.class_dice[cls], report.dice_gap))
            logger.info("imbalance seed=%d variant=%s minority_dice=%.4f gap=%.4f", seed, variant,
                        report.class_dice[cls], report.dice_gap)
    return ImbalanceComparison(
        minority=cls,
        seeds=tuple(seeds),
        full_minority=tuple(d for d, _ in scores[FULL_VARIANT]),
        base_minority=tuple(d for d, _ in scores[BASELINE_VARIANT]),
        full_gap=tuple(g for _, g in scores[FULL_VARIANT]),
        base_gap=tuple(g for _, g in scores[BASELINE_VARIANT]),
    )
