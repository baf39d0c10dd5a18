"""Human-readable and machine-readable reports over a results store.

One aggregation pass feeds four artifacts: a markdown table (attributes on
the left, per-detector error rates with the top wrong class in parentheses
on the right, "-" for marginalized attributes, an average row at the
bottom), a JSON twin with exact rational rates, a CSV flattening, and
static PNG charts.  Everything needed to recompute any number (thresholds,
rounding rule, universe) is echoed into the report itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .analysis import (
    RecordSet,
    aggregate,
    average_error_rate,
    build_universe,
    detector_specific,
    format_percent,
    rank_subgroups,
    to_fraction,
)
from .errors import EmptySubgroup, ReportError
from .model import ORIGINAL, Outpaint, PlainColor, SubgroupSpec
from .sweep import GridSpec

# Markdown column layout mirrors the attribute table convention:
# scale, angle, object color (O), background (BG), type, then location.
_COLUMNS = (
    ("scale", "scale_factor"),
    ("angle", "orientation_deg"),
    ("O", "object_color"),
    ("BG", "background"),
    ("type", "object_type"),
    ("loc", "location"),
)


@dataclass(frozen=True)
class ReportOptions:
    top_k: int = 10
    tau_high: Fraction = Fraction(9, 10)
    tau_low: Fraction = Fraction(1, 2)
    universe: str = "cells+margin1"

    def to_json(self) -> dict:
        return {
            "top_k": self.top_k,
            "tau_high": str(self.tau_high),
            "tau_low": str(self.tau_low),
            "universe": self.universe,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReportOptions":
        return cls(
            top_k=int(obj.get("top_k", 10)),
            tau_high=to_fraction(obj.get("tau_high", Fraction(9, 10))),
            tau_low=to_fraction(obj.get("tau_low", Fraction(1, 2))),
            universe=obj.get("universe", "cells+margin1"),
        )


def _attr_cell(subgroup: SubgroupSpec, attr: str) -> str:
    if attr in subgroup.marginalized:
        return "-"
    fixed = subgroup.fixed_map
    if attr not in fixed:
        return "*"
    value = fixed[attr]
    if attr == "location":
        return f"({value[0]:.2f},{value[1]:.2f})"
    if attr == "background":
        if isinstance(value, PlainColor):
            return value.color
        if isinstance(value, Outpaint):
            return "outpaint"
    if attr == "object_color" and value == ORIGINAL:
        return ORIGINAL
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def build_report(
    records,
    grid: GridSpec,
    detector_ids: Sequence[str],
    options: ReportOptions = ReportOptions(),
) -> dict:
    """Aggregate once and return the full report structure.

    Rows are the union of each detector's top-k subgroups (first-seen
    order); every row carries each detector's exact rate, display percent,
    top wrong class and detector-specific flag.
    """
    rs = records if isinstance(records, RecordSet) else RecordSet(records)
    if not rs.outcomes:
        raise ReportError("results store holds no evaluated records")
    universe = build_universe(grid, options.universe)

    row_specs: list[SubgroupSpec] = []
    owners: dict[str, list[str]] = {}
    for det in detector_ids:
        for result in rank_subgroups(rs, universe, options.top_k, det):
            key = result.subgroup.canonical_key()
            if key not in owners:
                owners[key] = []
                row_specs.append(result.subgroup)
            owners[key].append(det)

    rows = []
    for sub in row_specs:
        cells = {}
        for det in detector_ids:
            try:
                res = aggregate(rs, sub, det)
            except EmptySubgroup:
                cells[det] = None
                continue
            others = [d for d in detector_ids if d != det]
            try:
                flag = bool(others) and detector_specific(
                    rs, sub, det, others, options.tau_high, options.tau_low
                )
            except EmptySubgroup:
                flag = False
            cells[det] = {
                "n_samples": res.n_samples,
                "n_errors": res.n_errors,
                "error_rate": f"{res.n_errors}/{res.n_samples}",
                "percent": format_percent(res.error_rate),
                "top_wrong_class": list(res.top_wrong_class)
                if res.top_wrong_class
                else None,
                "detector_specific": flag,
            }
        rows.append(
            {
                "subgroup": sub.to_json(),
                "attributes_display": {
                    attr: _attr_cell(sub, attr) for _, attr in _COLUMNS
                },
                "owners": owners[sub.canonical_key()],
                "cells": cells,
            }
        )

    averages = {}
    for det in detector_ids:
        try:
            avg = average_error_rate(rs, det, universe)
            averages[det] = {
                "error_rate": f"{avg.numerator}/{avg.denominator}",
                "percent": format_percent(avg),
            }
        except EmptySubgroup as exc:
            averages[det] = {"error": str(exc)}

    return {
        "config": {
            "detectors": list(detector_ids),
            "options": options.to_json(),
            "universe_size": len(universe),
            "rounding": "integer percent, half away from zero",
            "grid": grid.to_json(),
        },
        "rows": rows,
        "averages": averages,
    }


def _cell_text(cell: Optional[dict]) -> str:
    if cell is None:
        return "n/a"
    text = cell["percent"]
    if cell["top_wrong_class"]:
        text += f" ({cell['top_wrong_class'][0]})"
    if cell["detector_specific"]:
        text = f"**{text}**"
    return text


def render_markdown(report: dict) -> str:
    detectors = report["config"]["detectors"]
    head = [label for label, _ in _COLUMNS] + detectors
    lines = [
        "# Subgroup error report",
        "",
        "| " + " | ".join(head) + " |",
        "|" + "|".join("---" for _ in head) + "|",
    ]
    for row in report["rows"]:
        attrs = [row["attributes_display"][attr] for _, attr in _COLUMNS]
        cells = [_cell_text(row["cells"][det]) for det in detectors]
        lines.append("| " + " | ".join(attrs + cells) + " |")
    avg_cells = []
    for det in detectors:
        avg = report["averages"][det]
        avg_cells.append(avg.get("percent", "n/a"))
    lines.append(
        "| " + " | ".join(["*average*", "", "", "", "", ""] + avg_cells) + " |"
    )
    opts = report["config"]["options"]
    lines += [
        "",
        "Bold cells are detector-specific: error rate >= "
        f"{opts['tau_high']} for that detector and <= {opts['tau_low']} for every other.",
        f"Averages are unweighted means over the {report['config']['universe_size']} "
        f"subgroups of the '{opts['universe']}' universe.",
        f"Rounding: {report['config']['rounding']}.",
        "",
    ]
    return "\n".join(lines)


def render_csv(report: dict) -> str:
    cols = [label for label, _ in _COLUMNS]
    header = cols + [
        "detector",
        "n_samples",
        "n_errors",
        "error_rate",
        "percent",
        "top_wrong_class",
        "detector_specific",
    ]
    lines = [",".join(header)]
    for row in report["rows"]:
        attrs = [row["attributes_display"][attr] for _, attr in _COLUMNS]
        for det in report["config"]["detectors"]:
            cell = row["cells"][det]
            if cell is None:
                lines.append(",".join(attrs + [det, "", "", "", "", "", ""]))
                continue
            top = cell["top_wrong_class"][0] if cell["top_wrong_class"] else ""
            lines.append(
                ",".join(
                    attrs
                    + [
                        det,
                        str(cell["n_samples"]),
                        str(cell["n_errors"]),
                        cell["error_rate"],
                        cell["percent"],
                        top,
                        str(cell["detector_specific"]).lower(),
                    ]
                )
            )
    return "\n".join(lines) + "\n"


def write_figures(report: dict, fig_dir: str | Path) -> list[Path]:
    """Static charts next to the tables: per-detector rates on the reported
    subgroups, and the average error rate per detector."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    detectors = report["config"]["detectors"]
    rows = report["rows"]
    paths = []

    if rows:
        labels = [
            " ".join(
                row["attributes_display"][attr]
                for _, attr in _COLUMNS
                if attr != "location"
            )
            for row in rows
        ]
        x = np.arange(len(rows))
        width = 0.8 / max(1, len(detectors))
        fig, ax = plt.subplots(figsize=(max(6.0, 0.5 * len(rows) + 3), 4.5))
        for i, det in enumerate(detectors):
            pcts = [
                int(row["cells"][det]["percent"].rstrip("%"))
                if row["cells"][det]
                else 0
                for row in rows
            ]
            ax.bar(x + (i - (len(detectors) - 1) / 2) * width, pcts, width, label=det)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel("error rate (%)")
        ax.set_ylim(0, 105)
        ax.set_title("Top subgroup error rates per detector")
        ax.legend()
        fig.tight_layout()
        path = fig_dir / "top_subgroups.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    pcts = []
    for det in detectors:
        avg = report["averages"][det]
        pcts.append(int(avg["percent"].rstrip("%")) if "percent" in avg else 0)
    fig, ax = plt.subplots(figsize=(1.2 * len(detectors) + 3, 3.5))
    ax.bar(detectors, pcts, color="tab:blue")
    ax.set_ylabel("average error rate (%)")
    ax.set_ylim(0, 105)
    ax.set_title("Average error rate across the subgroup universe")
    fig.tight_layout()
    path = fig_dir / "average_error_rate.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def write_report(
    report: dict, out_dir: str | Path, figures: bool = True
) -> dict[str, Path]:
    """Write report.md / report.json / report.csv (+ figures/) into out_dir."""
    import json

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "markdown": out_dir / "report.md",
        "json": out_dir / "report.json",
        "csv": out_dir / "report.csv",
    }
    paths["markdown"].write_text(render_markdown(report))
    paths["json"].write_text(json.dumps(report, indent=2, sort_keys=True))
    paths["csv"].write_text(render_csv(report))
    if figures:
        for i, fig_path in enumerate(write_figures(report, out_dir / "figures")):
            paths[f"figure_{i}"] = fig_path
    return paths
