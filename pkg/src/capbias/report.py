"""Human-readable artifacts: scatter figures (SVG), fixed-width text tables,
and the machine-readable JSON bundle they are derived from.

Figure output is byte-deterministic for identical inputs: the SVG hash salt
is pinned and no timestamps are embedded, so tests can compare raw bytes.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .audit import BiasLabel

LABEL_COLORS = {
    BiasLabel.MAN_BIASED: "#1f77b4",
    BiasLabel.WOMAN_BIASED: "#2ca02c",
    BiasLabel.NEUTRAL: "#ff7f0e",
}
LABEL_NAMES = {
    BiasLabel.MAN_BIASED: "man-biased",
    BiasLabel.WOMAN_BIASED: "woman-biased",
    BiasLabel.NEUTRAL: "not significant",
}
#: concepts farther than this from the diagonal get a text label
ANNOTATE_DISTANCE = 0.1

_DETERMINISTIC_RC = {
    "svg.hashsalt": "capbias",
    "svg.fonttype": "none",
    "figure.max_open_warning": 0,
}


@dataclass(frozen=True)
class ScatterPoint:
    concept: str
    x: float  # accuracy on man images
    y: float  # accuracy on woman images
    label: BiasLabel

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError(f"scatter point {self.concept!r} outside unit square")


def render_scatter(points: list[ScatterPoint], title: str) -> bytes:
    """Unit-square accuracy scatter with a diagonal reference line; man-biased
    points blue, woman-biased green, non-significant orange."""
    with plt.rc_context(_DETERMINISTIC_RC):
        fig, ax = plt.subplots(figsize=(5.0, 5.0))
        try:
            ax.plot([0, 1], [0, 1], color="#999999", linewidth=0.8, linestyle="--", zorder=1)
            for label in (BiasLabel.NEUTRAL, BiasLabel.MAN_BIASED, BiasLabel.WOMAN_BIASED):
                group = [p for p in points if p.label is label]
                if not group:
                    continue
                ax.scatter(
                    [p.x for p in group],
                    [p.y for p in group],
                    s=24,
                    color=LABEL_COLORS[label],
                    label=LABEL_NAMES[label],
                    zorder=2,
                )
            for p in sorted(points, key=lambda p: p.concept):
                if abs(p.y - p.x) > ANNOTATE_DISTANCE:
                    ax.annotate(p.concept, (p.x, p.y), fontsize=7, xytext=(3, 3), textcoords="offset points")
            ax.set_xlim(0.0, 1.0)
            ax.set_ylim(0.0, 1.0)
            ax.set_xlabel("accuracy on man images")
            ax.set_ylabel("accuracy on woman images")
            ax.set_title(title)
            if points:
                ax.legend(loc="lower right", fontsize=8)
            buf = io.BytesIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buf.getvalue()


def scatter_points_from_summary(summary_json: dict) -> dict[str, list[ScatterPoint]]:
    """Group a bias summary's concept verdicts into per-category point lists."""
    by_category: dict[str, list[ScatterPoint]] = {}
    for row in summary_json["concepts"]:
        point = ScatterPoint(
            concept=row["concept"],
            x=row["acc_man"],
            y=row["acc_woman"],
            label=BiasLabel(row["label"]),
        )
        by_category.setdefault(row["category"], []).append(point)
    return by_category


# --------------------------------------------------------------------------
# Text tables (derived views over the JSON bundle, never the source of truth)
# --------------------------------------------------------------------------

def _format_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [
        max(len(str(headers[i])), *(len(str(r[i])) for r in rows)) if rows else len(str(headers[i]))
        for i in range(len(headers))
    ]
    def fmt(cells):
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()

    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(headers), sep] + [fmt(r) for r in rows])


def _bias_table(bias_summaries: dict[str, dict]) -> str:
    metrics = sorted(bias_summaries)
    categories = sorted(
        {cat for s in bias_summaries.values() for cat in s["per_category"]}
    )
    headers = ["category"] + metrics
    rows = []
    for cat in categories:
        row = [cat]
        for m in metrics:
            stats = bias_summaries[m]["per_category"].get(cat)
            row.append(f"{stats['pct_biased']:.2f}" if stats else "-")
        rows.append(row)
    rows.append(
        ["overall"] + [f"{bias_summaries[m]['overall']['pct_biased']:.2f}" for m in metrics]
    )
    return "Percent of concepts flagged biased (p < alpha)\n" + _format_table(headers, rows)


def _error_table(error_reports: dict[str, dict]) -> str:
    headers = ["system", "evaluated", "errors", "rate %", "95% CI", "excluded (neutral/mixed)"]
    rows = []
    for name in sorted(error_reports):
        rep = error_reports[name]
        if rep["error_rate"] is None:
            rows.append([name, 0, 0, "-", "-", f"{rep['n_neutral']}/{rep['n_mixed']}"])
            continue
        rows.append(
            [
                name,
                rep["n_evaluated"],
                rep["n_errors"],
                f"{100 * rep['error_rate']:.2f}",
                f"[{100 * rep['ci_low']:.2f}, {100 * rep['ci_high']:.2f}]",
                f"{rep['n_neutral']}/{rep['n_mixed']}",
            ]
        )
    return "Gender prediction errors\n" + _format_table(headers, rows)


def _win_table(win_reports: dict[str, dict]) -> str:
    headers = ["comparison", "n", "mean A", "mean B", "win % A", "win % B"]
    rows = []
    for name in sorted(win_reports):
        rep = win_reports[name]
        rows.append(
            [
                name,
                rep["n"],
                f"{rep['mean_a']:.4f}",
                f"{rep['mean_b']:.4f}",
                f"{rep['win_pct_a']:.2f}",
                f"{rep['win_pct_b']:.2f}",
            ]
        )
    return "System comparison (metric value and win rate)\n" + _format_table(headers, rows)


def _correlation_table(correlation: dict[str, float]) -> str:
    headers = ["metric", "tau_c"]
    rows = [[spec, f"{correlation[spec]:.3f}"] for spec in sorted(correlation)]
    return "Correlation with human judgments\n" + _format_table(headers, rows)


def render_tables(bundle: dict) -> str:
    """Fixed-width text rendering of every section present in the bundle."""
    sections = []
    if bundle.get("bias_summaries"):
        sections.append(_bias_table(bundle["bias_summaries"]))
    if bundle.get("error_reports"):
        sections.append(_error_table(bundle["error_reports"]))
    if bundle.get("win_reports"):
        sections.append(_win_table(bundle["win_reports"]))
    if bundle.get("correlation"):
        sections.append(_correlation_table(bundle["correlation"]))
    return "\n\n".join(sections) + "\n"


def write_report(bundle: dict, outdir: str | Path) -> list[Path]:
    """Write report.json, tables.txt and per-(category, metric) scatter SVGs."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    report_path = outdir / "report.json"
    report_path.write_text(
        json.dumps(bundle, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written.append(report_path)

    tables_path = outdir / "tables.txt"
    tables_path.write_text(render_tables(bundle), encoding="utf-8")
    written.append(tables_path)

    for metric, summary in sorted(bundle.get("bias_summaries", {}).items()):
        for category, points in sorted(scatter_points_from_summary(summary).items()):
            svg = render_scatter(points, f"{metric} accuracy by gender: {category}")
            path = outdir / f"scatter_{category}_{metric}.svg"
            path.write_bytes(svg)
            written.append(path)
    return written
