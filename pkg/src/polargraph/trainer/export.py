"""Graph export: CSV adjacency matrices, per-sample fused edges, JSON summary, SVG heatmaps."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .. import numcore as nc
from ..graph_global import polarity_split
from .metrics import MetricsReport, population_graphs
from .model import Model

VALUE_FORMAT = "%.9g"


def au_names(n: int) -> list[str]:
    return [f"AU{i}" for i in range(n)]


def expr_names(n: int) -> list[str]:
    return [f"EXPR{k}" for k in range(n)]


@dataclass
class GraphExport:
    """Signed adjacency (targets x sources) with its polarity split and node names."""

    values: np.ndarray
    targets: list[str]
    sources: list[str]

    @property
    def pos(self) -> np.ndarray:
        return np.maximum(self.values, 0.0)

    @property
    def neg(self) -> np.ndarray:
        return np.maximum(-self.values, 0.0)


def write_adjacency(path, g: GraphExport, values: Optional[np.ndarray] = None) -> Path:
    """CSV with a header row of source names and one row per target (name first)."""
    values = g.values if values is None else values
    if values.shape != (len(g.targets), len(g.sources)):
        raise ValueError(f"matrix {values.shape} does not match {len(g.targets)}x{len(g.sources)} names")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target"] + list(g.sources))
        for name, row in zip(g.targets, values):
            w.writerow([name] + [VALUE_FORMAT % v for v in row])
    return path


def read_adjacency(path) -> GraphExport:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise ValueError(f"{path}: not an adjacency CSV")
    sources = rows[0][1:]
    targets, vals = [], []
    for r in rows[1:]:
        if len(r) != len(sources) + 1:
            raise ValueError(f"{path}: ragged row for {r[0] if r else '?'}")
        targets.append(r[0])
        vals.append([float(v) for v in r[1:]])
    return GraphExport(np.array(vals, dtype=np.float64).reshape(len(targets), len(sources)), targets, sources)


def _color(v: float) -> str:
    # red for excitatory, blue for inhibitory, white at zero
    a = min(1.0, abs(v))
    fade = int(round(255 * (1.0 - a)))
    return f"rgb(255,{fade},{fade})" if v >= 0 else f"rgb({fade},{fade},255)"


def heatmap_svg(g: GraphExport, cell: int = 28, title: str = "") -> str:
    """One <rect> per edge; labels are text elements so the rect count is exactly T*N."""
    t, n = g.values.shape
    left, top = 70, 60 if title else 40
    width, height = left + n * cell + 10, top + t * cell + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="10">']
    if title:
        parts.append(f'<text x="{left}" y="16" font-size="12">{escape(title)}</text>')
    for i, name in enumerate(g.sources):
        x = left + i * cell + cell / 2
        parts.append(f'<text x="{x}" y="{top - 6}" text-anchor="middle">{escape(name)}</text>')
    for j, name in enumerate(g.targets):
        y = top + j * cell + cell / 2 + 3
        parts.append(f'<text x="{left - 6}" y="{y}" text-anchor="end">{escape(name)}</text>')
        for i in range(n):
            v = float(g.values[j, i])
            parts.append(f'<rect x="{left + i * cell}" y="{top + j * cell}" width="{cell}" height="{cell}" '
                         f'fill="{_color(v)}" stroke="#999" stroke-width="0.5">'
                         f'<title>{escape(g.sources[i])}-&gt;{escape(name)}: {VALUE_FORMAT % v}</title></rect>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def global_graphs(model: Model, x: np.ndarray) -> dict[str, GraphExport]:
    e_au, e_ex = population_graphs(model, x)
    if e_au is None:
        raise ValueError("model has neither the global nor the sample-adaptive graph enabled")
    c = model.cfg
    return {"au": GraphExport(e_au, au_names(c.n_au), au_names(c.n_au)),
            "expr": GraphExport(e_ex, expr_names(c.n_expr), au_names(c.n_au))}


def sample_graphs(model: Model, x: np.ndarray) -> dict[str, np.ndarray]:
    """Fused per-sample edges, shape (B, T, N) per graph; requires the sample-adaptive branch."""
    if not model.cfg.sac:
        raise ValueError("per-sample graphs need the sample-adaptive branch (sac) enabled")
    with nc.no_grad():
        fw = model.forward(np.atleast_2d(x))
    return {"au": fw.s_au.fused.data.copy(), "expr": fw.s_expr.fused.data.copy()}


def export_graph(model: Model, out_dir, x_ref: np.ndarray, samples: Sequence[int] = (),
                 x_samples: Optional[np.ndarray] = None, report: Optional[MetricsReport] = None,
                 svg: bool = False) -> list[Path]:
    """Write global adjacency CSVs (signed, pos, neg), per-sample CSVs and summary.json.

    ``x_ref`` provides inputs for the population graph when the global graph
    is off; ``x_samples[k]`` is exported for each index k in ``samples``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    graphs = global_graphs(model, x_ref)
    for key, g in graphs.items():
        written.append(write_adjacency(out / f"global_{key}.csv", g))
        written.append(write_adjacency(out / f"global_{key}_pos.csv", g, g.pos))
        written.append(write_adjacency(out / f"global_{key}_neg.csv", g, g.neg))
        if svg:
            p = out / f"global_{key}.svg"
            p.write_text(heatmap_svg(g, title=f"global {key} graph"))
            written.append(p)
    if samples:
        if x_samples is None:
            raise ValueError("sample indices given without sample inputs")
        idx = list(samples)
        bad = [k for k in idx if not 0 <= k < len(x_samples)]
        if bad:
            raise IndexError(f"sample indices {bad} out of range for {len(x_samples)} records")
        fused = sample_graphs(model, x_samples[idx])
        for row, k in enumerate(idx):
            for key, g in graphs.items():
                sg = GraphExport(fused[key][row], g.targets, g.sources)
                written.append(write_adjacency(out / f"sample_{k}_{key}.csv", sg))
                if svg:
                    p = out / f"sample_{k}_{key}.svg"
                    p.write_text(heatmap_svg(sg, title=f"sample {k} {key} graph"))
                    written.append(p)
    summary = {
        "config": model.cfg.to_dict(),
        "metrics": report.to_dict() if report is not None else None,
        "graphs": {k: {"targets": g.targets, "sources": g.sources, "file": f"global_{k}.csv"}
                   for k, g in graphs.items()},
        "samples": list(samples),
    }
    p = out / "summary.json"
    p.write_text(json.dumps(summary, indent=2) + "\n")
    written.append(p)
    return written
