"""Deterministic CSV and text output for experiment results."""

from __future__ import annotations

import math
from pathlib import Path

ROW_HEADER = "n,N,K,seed,metric,value,exponent,constant"


def _num(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".12g")


def rows_csv(rows) -> str:
    lines = [ROW_HEADER]
    for r in sorted(rows, key=lambda r: r.key):
        lines.append(",".join([str(r.n), str(r.N), _num(r.K), str(r.seed), r.metric,
                               _num(r.value), _num(r.exponent), _num(r.constant)]))
    return "\n".join(lines) + "\n"


def plots_csv(plots) -> str:
    lines = ["figure,series,x,y"]
    for fig, series, x, y in sorted(plots, key=lambda p: (p[0], p[1], float(p[2]))):
        lines.append(f"{fig},{series},{_num(x)},{_num(y)}")
    return "\n".join(lines) + "\n"


def summary_text(result, cfg) -> str:
    out = [f"experiment: {result.experiment}",
           f"seed: {cfg.seed}",
           f"n: {cfg.n}  N: {cfg.N}  K: {[format(k, 'g') for k in cfg.K]}",
           f"rows: {len(result.rows)}",
           "",
           "checks:"]
    for c in result.checks:
        out.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
    if not result.checks:
        out.append("  (none)")
    out.append("")
    out.append(f"overall: {'PASS' if result.passed else 'FAIL'}")
    return "\n".join(out) + "\n"


def emit_report(result, cfg, out_dir) -> dict:
    """Write <experiment>.csv, plot_data.csv, summary.txt and any artifacts; return paths."""
    if not result.rows:
        raise ValueError("refusing to write a report without rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "rows": out / f"{result.experiment}.csv",
        "plots": out / "plot_data.csv",
        "summary": out / "summary.txt",
    }
    paths["rows"].write_text(rows_csv(result.rows))
    paths["plots"].write_text(plots_csv(result.plots))
    paths["summary"].write_text(summary_text(result, cfg))
    (out / "config.yaml").write_text(cfg.to_yaml())
    for name, writer in sorted(result.artifacts.items()):
        writer(out / name)
        paths[name] = out / name
    return paths
