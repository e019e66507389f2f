"""Render figure CSVs to PNG.

A figure CSV starts with ``# key: value`` comment lines (``figure``,
``title``, ``anchor``, ``x``, ``y``, ``scale``, ``kind``) followed by a
header row and data.  The first column is the abscissa; every further
column is drawn as one series.
"""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "savefig.bbox": "tight",
}


def read_figure_csv(path):
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    return meta, rows[0], rows[1:]


def render_figure(csv_path, png_path=None) -> Path:
    csv_path = Path(csv_path)
    png_path = Path(png_path) if png_path else csv_path.with_suffix(".png")
    meta, header, rows = read_figure_csv(csv_path)
    kind = meta.get("kind", "line")
    scale = meta.get("scale", "linear")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if kind == "bar":
            labels = [r[0] for r in rows]
            for j, name in enumerate(header[1:], start=1):
                offset = (j - 1 - (len(header) - 2) / 2) * 0.35
                ax.bar([i + offset for i in range(len(rows))],
                       [float(r[j]) for r in rows], width=0.35, label=name)
            ax.set_xticks(range(len(rows)))
            ax.set_xticklabels(labels, rotation=20, ha="right")
        else:
            x = [float(r[0]) for r in rows]
            for j, name in enumerate(header[1:], start=1):
                y = [float(r[j]) for r in rows]
                if kind == "stem":
                    ax.stem(x, y, label=name, basefmt=" ")
                else:
                    ax.plot(x, y, marker="o" if len(x) <= 30 else None, ms=3, label=name)
        ys = [float(r[j]) for r in rows for j in range(1, len(header))]
        positive = all(v > 0 for v in ys)
        if scale in ("loglog", "semilogy") and positive:
            ax.set_yscale("log")
        if scale == "loglog" and kind != "bar":
            ax.set_xscale("log")
        ax.set_xlabel(meta.get("x", header[0]))
        ax.set_ylabel(meta.get("y", ""))
        title = meta.get("title", csv_path.stem)
        if "anchor" in meta:
            title += "\n" + meta["anchor"]
        ax.set_title(title, fontsize=8)
        if len(header) > 2:
            ax.legend()
        fig.savefig(png_path, metadata={"Software": None})
        plt.close(fig)
    return png_path
