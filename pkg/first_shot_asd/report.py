"""
Report Output Module

Writes evaluation results as a CSV table plus Markdown and HTML summaries,
one row per machine type and an aggregate row of harmonic means.
"""

import csv
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import markdown
from markdown.extensions.tables import TableExtension

from .errors import AsdError
from .metrics import EvalReport, harmonic_mean
from .tuner import TuningResult

AGGREGATE_NAME = "average"
REPORT_COLUMNS = ("machine_type", "auc", "pauc", "objective", "n_pos", "n_neg")


class ReportError(AsdError):
    """Exception raised for errors during report generation."""
    pass


class ReportWriter:
    """Handles the final report generation and output."""

    def __init__(self, output_directory: Path, title: str = "Anomalous sound detection results"):
        """Initialize the report writer.

        Args:
            output_directory: Directory receiving report.csv/.md/.html
            title: Heading of the Markdown/HTML summary
        """
        self.output_directory = Path(output_directory)
        self.title = title
        self.logger = logging.getLogger(__name__)

    def aggregate(self, reports: Sequence[EvalReport]) -> EvalReport:
        """Harmonic means of AUC, pAUC and objective across machine types."""
        if not reports:
            raise ReportError("No per-machine results to aggregate")
        return EvalReport(
            auc=harmonic_mean([r.auc for r in reports]),
            pauc=harmonic_mean([r.pauc for r in reports]),
            p=reports[0].p,
            n_pos=sum(r.n_pos for r in reports),
            n_neg=sum(r.n_neg for r in reports),
            objective=harmonic_mean([r.objective for r in reports]),
            mode=reports[0].mode,
            machine_type=AGGREGATE_NAME,
        )

    def write(self, reports: Sequence[EvalReport],
              tuning: Optional[Dict[str, TuningResult]] = None) -> Dict[str, Path]:
        """Write report.csv, report.md and report.html.

        Args:
            reports: Per-machine EvalReports
            tuning: Optional tuning results keyed by machine type, listed in the summary

        Returns:
            Dictionary mapping format name to written path
        """
        self.output_directory.mkdir(parents=True, exist_ok=True)
        rows = sorted(reports, key=lambda r: r.machine_type) + [self.aggregate(reports)]

        start_time = time.time()
        try:
            outputs = {
                "csv": self._write_csv(rows),
                "markdown": self.output_directory / "report.md",
                "html": self.output_directory / "report.html",
            }
            text = self.render_markdown(rows, tuning or {})
            outputs["markdown"].write_text(text, encoding="utf-8")
            html = markdown.markdown(text, extensions=[TableExtension()], output_format="html5")
            outputs["html"].write_text(html + "\n", encoding="utf-8")
        except OSError as e:
            error_msg = f"Error writing report to {self.output_directory}: {e}"
            self.logger.error(error_msg)
            raise ReportError(error_msg) from e

        for path in outputs.values():
            self.logger.info(f"Created {path.name} ({self._format_size(path.stat().st_size)})")
        self.logger.info(f"Report written in {time.time() - start_time:.2f} seconds")
        return outputs

    def _write_csv(self, rows: Sequence[EvalReport]) -> Path:
        path = self.output_directory / "report.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for r in rows:
                writer.writerow([r.machine_type, repr(r.auc), repr(r.pauc), repr(r.objective), r.n_pos, r.n_neg])
        return path

    def render_markdown(self, rows: Sequence[EvalReport], tuning: Dict[str, TuningResult]) -> str:
        lines: List[str] = [f"# {self.title}", ""]
        p = rows[0].p if rows else 0.1
        lines.append(f"pAUC is computed over the false-positive-rate range [0, {p:g}].")
        lines.append("")
        lines.append("| Machine type | AUC (%) | pAUC (%) | Objective | Anomalies | Normals |")
        lines.append("|---|---:|---:|---:|---:|---:|")
        for r in rows:
            lines.append(
                f"| {r.machine_type} | {100 * r.auc:.2f} | {100 * r.pauc:.2f} | {r.objective:.4f} | {r.n_pos} | {r.n_neg} |"
            )

        if tuning:
            lines.extend(["", "## Selected pooling exponent", ""])
            lines.append("| Machine type | r | Objective | Objective at r=0 | Objective at r=1 |")
            lines.append("|---|---:|---:|---:|---:|")
            for machine_type in sorted(tuning):
                result = tuning[machine_type]
                r0 = result.baselines.get("max_pooling")
                r1 = result.baselines.get("average_pooling")
                lines.append(
                    f"| {machine_type} | {result.r_selected:.2f} | {result.best_objective:.4f} | "
                    f"{r0.objective:.4f} | {r1.objective:.4f} |"
                    if r0 and r1 else
                    f"| {machine_type} | {result.r_selected:.2f} | {result.best_objective:.4f} | - | - |"
                )
        return "\n".join(lines) + "\n"

    def _format_size(self, size_bytes: float) -> str:
        """Format a file size in a human-readable format."""
        for unit in ["B", "KB", "MB", "GB"]:
            if size_bytes < 1024 or unit == "GB":
                break
            size_bytes /= 1024

        return f"{size_bytes:.1f} {unit}"


def write_report(reports: Sequence[EvalReport], output_directory: Path,
                 tuning: Optional[Dict[str, TuningResult]] = None) -> Dict[str, Path]:
    """Write the evaluation report files.

    Args:
        reports: Per-machine EvalReports
        output_directory: Destination directory
        tuning: Optional tuning results keyed by machine type

    Returns:
        Dictionary mapping format name to written path
    """
    writer = ReportWriter(output_directory)
    return writer.write(reports, tuning)
