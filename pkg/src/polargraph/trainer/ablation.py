"""The fifteen module-toggle variants and a runner that trains each on shared seeds."""

from __future__ import annotations

import logging
import statistics
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..synthdata import PlantedScm, Records
from .config import TrainConfig
from .metrics import MetricsReport, evaluate
from .model import Model
from .train import fit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    row: int
    name: str
    gc: bool
    sac: bool
    dis: bool
    cf: bool
    dag: bool = True

    def apply(self, cfg: TrainConfig) -> TrainConfig:
        return cfg.with_(gc=self.gc, sac=self.sac, dis=self.dis, cf=self.cf, dag=self.dag)


TABLE3 = {v.row: v for v in (
    Variant(1, "backbone", False, False, False, False),
    Variant(2, "backbone+dis", False, False, True, False),
    Variant(3, "backbone+gc", True, False, False, False),
    Variant(4, "backbone+gc+dis", True, False, True, False),
    Variant(5, "backbone+gc+cf", True, False, False, True),
    Variant(6, "backbone+gc+dis+cf", True, False, True, True),
    Variant(7, "backbone+sac", False, True, False, False),
    Variant(8, "backbone+sac+dis", False, True, True, False),
    Variant(9, "backbone+sac+cf", False, True, False, True),
    Variant(10, "backbone+sac+dis+cf", False, True, True, True),
    Variant(11, "backbone+gc+sac", True, True, False, False),
    Variant(12, "backbone+gc+sac+dis", True, True, True, False),
    Variant(13, "backbone+gc+sac+cf", True, True, False, True),
    Variant(14, "full-without-dag", True, True, True, True, dag=False),
    Variant(15, "full", True, True, True, True),
)}
FULL_ROW = 15


def resolve_rows(rows: Iterable[int]) -> list[int]:
    """Validate, deduplicate (with a warning) and sort requested rows into table order."""
    rows = list(rows)
    bad = [r for r in rows if r not in TABLE3]
    if bad:
        raise ValueError(f"unknown ablation rows {bad}; valid rows are 1..{len(TABLE3)}")
    uniq = sorted(set(rows))
    if len(uniq) != len(rows):
        dups = sorted({r for r in rows if rows.count(r) > 1})
        warnings.warn(f"duplicate ablation rows {dups} requested; each runs once", stacklevel=2)
    return uniq


@dataclass
class AblationRow:
    variant: Variant
    seeds: list[int]
    reports: list[MetricsReport] = field(default_factory=list)

    def median(self, key: str) -> Optional[float]:
        if key == "composite":
            vals = [r.composite() for r in self.reports]
        else:
            vals = [getattr(r, key) for r in self.reports]
        vals = [v for v in vals if v is not None]
        return statistics.median(vals) if vals else None

    def summary(self) -> dict:
        out = {"row": self.variant.row, "name": self.variant.name,
               "toggles": {k: getattr(self.variant, k) for k in ("gc", "sac", "dis", "cf", "dag")},
               "seeds": list(self.seeds)}
        for key in ("macro_f1", "expr_accuracy", "auroc_au", "auroc_expr", "sign_expr", "composite"):
            out[key] = self.median(key)
        return out


def run_ablation(rows: Sequence[int], base: TrainConfig, train: Records, test: Records,
                 scm: Optional[PlantedScm] = None, seeds: Sequence[int] = (0,),
                 on_run: Optional[Callable[[Variant, int, MetricsReport], None]] = None) -> list[AblationRow]:
    """Train every requested variant on every seed and return rows in table order."""
    out = []
    for row in resolve_rows(rows):
        variant = TABLE3[row]
        result = AblationRow(variant, list(seeds))
        for seed in seeds:
            cfg = variant.apply(base).with_(seed=int(seed))
            model = Model(cfg, np.random.default_rng(cfg.seed))
            hist = fit(model, train, record_every=max(1, cfg.steps // 100))
            rep = evaluate(model, test, scm, hist.totals())
            log.info("row %d seed %d composite %s", row, seed, rep.composite())
            result.reports.append(rep)
            if on_run is not None:
                on_run(variant, seed, rep)
        out.append(result)
    return out


def format_table(rows: Sequence[AblationRow]) -> str:
    head = f"{'row':>3}  {'variant':<22} {'macroF1':>8} {'exprAcc':>8} {'aurocAU':>8} {'composite':>9}"
    lines = [head]

    def fmt(v):
        return f"{v:8.4f}" if v is not None else f"{'-':>8}"

    for r in rows:
        s = r.summary()
        lines.append(f"{s['row']:>3}  {s['name']:<22} {fmt(s['macro_f1'])} {fmt(s['expr_accuracy'])} "
                     f"{fmt(s['auroc_au'])} {fmt(s['composite']):>9}")
    return "\n".join(lines)
