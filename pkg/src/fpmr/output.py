"""Result files: CSV tables, a JSON document and optional SVG plots.

File names are derived from the configuration stem and the table name, so
repeated runs overwrite the same files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return {"real": x.real, "imag": x.imag}
    return x


def write_csv(path: Path, table: dict) -> Path:
    cols = list(table)
    data = [np.asarray(table[c]).ravel() for c in cols]
    n = {d.size for d in data}
    if len(n) != 1:
        raise ValueError(f"columns of {path.name} have different lengths")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*data):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(head)}


def result_document(report, config_name: str) -> dict:
    res = report.result
    return _plain({
        "config": config_name,
        "metadata": res.metadata,
        "wall_time_s": report.wall_time_s,
        "converged": report.converged,
        "convergence": report.convergence,
        "tables": res.tables,
    })


def write_outputs(report, directory, stem: str, formats=("csv",), plot: bool = False) -> list:
    """Write every table of ``report.result``; returns the written paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if "csv" in formats:
        for name, table in report.result.tables.items():
            paths.append(write_csv(out / f"{stem}_{name}.csv", table))
    if "json" in formats:
        p = out / f"{stem}.json"
        p.write_text(json.dumps(result_document(report, stem), indent=1))
        paths.append(p)
    if plot:
        paths += plot_tables(report.result.tables, out, stem)
    report.outputs = [str(p) for p in paths]
    return paths


def plot_tables(tables: dict, directory: Path, stem: str) -> list:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for name, table in tables.items():
        cols = list(table)
        x = np.asarray(table[cols[0]])
        if x.size < 2:
            continue
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for c in cols[1:]:
            ax.plot(x, np.asarray(table[c]), label=c, lw=1)
        ax.set_xlabel(cols[0])
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        p = Path(directory) / f"{stem}_{name}.svg"
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    return paths
