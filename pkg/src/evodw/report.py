"""Report rendering: one cube query result to a CSV file plus a bar chart."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_report(result: dict, spec: dict, out_dir: Path, name: str = "report") -> list[Path]:
    """Write ``<name>.csv`` and ``<name>.png`` for an answer_query result."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = result["rows"]
    group_by = list(spec.get("group_by", ()))
    measures = [k for k in (rows[0] if rows else {}) if k not in group_by]

    csv_path = out_dir / f"{name}.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(group_by + measures)
        for row in rows:
            writer.writerow([row[a] for a in group_by] + [row[m] for m in measures])

    png_path = out_dir / f"{name}.png"
    labels = [" / ".join("null" if row[a] is None else str(row[a]) for a in group_by) or "total" for row in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(labels) + 2.0), 4.0))
    width = 0.8 / max(len(measures), 1)
    xs = range(len(labels))
    for i, measure in enumerate(measures):
        values = [row[measure] if row[measure] is not None else 0 for row in rows]
        ax.bar([x + i * width for x in xs], values, width=width, label=measure)
    ax.set_xticks([x + width * (len(measures) - 1) / 2 for x in xs])
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_xlabel(" / ".join(group_by) or "grand total")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    return [csv_path, png_path]
