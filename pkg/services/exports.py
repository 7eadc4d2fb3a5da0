# services/exports.py - RUN REPORT EXPORTS (JSON / CSV / XLSX / PDF)
import io
import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER, TA_LEFT
from reportlab.lib.pagesizes import A4, landscape, portrait
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import cm
from reportlab.platypus import LongTable, Paragraph, SimpleDocTemplate, Spacer, TableStyle

from config import Config
from services.errors import SchemaError

logger = logging.getLogger(__name__)

# Top-level keys every report carries, with the type each must have.
REPORT_SCHEMA = {
    "schema_version": int,
    "mode": str,
    "config": dict,
    "seeds": dict,
    "dataset": dict,
    "timings": dict,
    "evaluations": dict,
}
MODE_SECTIONS = {
    "full": ("null", "observed"),
    "fast": ("null", "observed", "training", "naive_null"),
    "compare": ("null", "observed", "comparison"),
    "sweep": ("rows",),
    "rmt": ("rows",),
}


# ============================================================================
# SCHEMA
# ============================================================================

def validate_report(report: Dict[str, Any]) -> Dict[str, Any]:
    """Check required keys and types; raise SchemaError listing every problem."""
    problems: List[str] = []
    for key, kind in REPORT_SCHEMA.items():
        if key not in report:
            problems.append(f"missing '{key}'")
        elif not isinstance(report[key], kind):
            problems.append(f"'{key}' should be {kind.__name__}, got {type(report[key]).__name__}")
    if isinstance(report.get("schema_version"), int) and report["schema_version"] != Config.REPORT_SCHEMA_VERSION:
        problems.append(f"unsupported schema_version {report['schema_version']}")
    mode = report.get("mode")
    if mode not in MODE_SECTIONS:
        problems.append(f"unknown mode {mode!r}")
    else:
        for section in MODE_SECTIONS[mode]:
            if section not in report:
                problems.append(f"mode '{mode}' needs '{section}'")
    null = report.get("null")
    if isinstance(null, dict):
        for key in ("trial_count", "bin_width", "thresholds"):
            if key not in null:
                problems.append(f"null section missing '{key}'")
    if problems:
        raise SchemaError("; ".join(problems))
    return report


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    return value


def report_to_json(report: Dict[str, Any]) -> str:
    """Deterministic JSON (sorted keys) of a validated report."""
    validate_report(report)
    return json.dumps(_jsonable(report), indent=2, sort_keys=True, allow_nan=False)


def write_json_report(report: Dict[str, Any], path: str) -> None:
    text = report_to_json(report)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")
    logger.info(f"✅ JSON report written to {path}")


# ============================================================================
# TABLES
# ============================================================================

def thresholds_frame(report: Dict[str, Any]) -> pd.DataFrame:
    null = report.get("null", {})
    rows = []
    bonferroni = report.get("bonferroni", {})
    errors = report.get("comparison", {}).get("threshold_abs_error", {})
    for alpha, value in null.get("thresholds", {}).items():
        rows.append({
            "alpha": float(alpha),
            "level": 1.0 - float(alpha),
            "threshold": value,
            "bonferroni": bonferroni.get(alpha),
            "abs_error_vs_full": errors.get(alpha),
        })
    frame = pd.DataFrame(rows, columns=["alpha", "level", "threshold", "bonferroni", "abs_error_vs_full"])
    return frame.dropna(axis=1, how="all")


def histogram_frame_from_report(report: Dict[str, Any]) -> pd.DataFrame:
    hist = report.get("null", {}).get("histogram")
    if not hist:
        return pd.DataFrame(columns=["bin_left", "bin_right", "count"])
    return pd.DataFrame(hist)


def p_values_frame(report: Dict[str, Any]) -> pd.DataFrame:
    observed = report.get("observed", {})
    stats = observed.get("statistics", [])
    pvals = observed.get("p_values", [])
    return pd.DataFrame({"feature": np.arange(len(stats)), "statistic": stats, "corrected_p": pvals})


def report_tables(report: Dict[str, Any]) -> Dict[str, pd.DataFrame]:
    """Every tabular view of a report, keyed by table name."""
    if report.get("mode") in ("sweep", "rmt"):
        tables = {report["mode"]: pd.DataFrame(report.get("rows", []))}
        if report.get("realizations"):
            tables["realizations"] = pd.DataFrame(report["realizations"])
        return tables
    tables = {
        "thresholds": thresholds_frame(report),
        "histogram": histogram_frame_from_report(report),
        "p_values": p_values_frame(report),
    }
    timings = report.get("timings", {})
    if timings:
        tables["timings"] = pd.DataFrame({"phase": list(timings), "seconds": list(timings.values())})
    return tables


def write_csv_tables(report: Dict[str, Any], directory: str, prefix: str = "") -> List[str]:
    os.makedirs(directory, exist_ok=True)
    written = []
    for name, frame in report_tables(report).items():
        path = os.path.join(directory, f"{prefix}{name}.csv")
        frame.to_csv(path, index=False)
        written.append(path)
    logger.info(f"✅ {len(written)} CSV table(s) written to {directory}")
    return written


# ============================================================================
# EXCEL EXPORT
# ============================================================================

def dataframe_to_excel_bytes(df: pd.DataFrame, sheet_name: str = "Sheet1",
                             additional_sheets: Optional[Dict[str, pd.DataFrame]] = None) -> bytes:
    """Convert DataFrame to Excel bytes."""
    output = io.BytesIO()
    with pd.ExcelWriter(output, engine="xlsxwriter") as writer:
        df.to_excel(writer, index=False, sheet_name=sheet_name)

        if additional_sheets:
            for sheet, sheet_df in additional_sheets.items():
                sheet_df.to_excel(writer, index=False, sheet_name=sheet[:31])

    output.seek(0)
    return output.getvalue()


def report_to_excel_bytes(report: Dict[str, Any]) -> bytes:
    tables = report_tables(report)
    first, *rest = tables.items()
    return dataframe_to_excel_bytes(first[1], first[0], dict(rest))


# ============================================================================
# PDF EXPORT
# ============================================================================

class PDFConfig:
    """Configuration for PDF generation."""

    MARGINS = {
        'landscape': {'left': 1.5, 'right': 1.5, 'top': 2.0, 'bottom': 1.8},
        'portrait': {'left': 2.0, 'right': 2.0, 'top': 2.5, 'bottom': 2.0}
    }

    FONT_SIZES = {
        'landscape': {'title': 16, 'subtitle': 12, 'heading': 11, 'body': 9, 'small': 8},
        'portrait': {'title': 14, 'subtitle': 11, 'heading': 10, 'body': 8, 'small': 7}
    }

    HEADER_COLOR = "#003366"
    MAX_ROWS = 200


def _format_cell(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _styled_table(df: pd.DataFrame, font_sizes: Dict[str, int], width: float) -> LongTable:
    headers = [str(c) for c in df.columns]
    rows = [[_format_cell(v) for v in row] for row in df.itertuples(index=False)]
    col_width = width / max(1, len(headers))
    table = LongTable([headers] + rows, colWidths=[col_width] * len(headers), repeatRows=1)

    style = TableStyle([
        ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor(PDFConfig.HEADER_COLOR)),
        ("TEXTCOLOR", (0, 0), (-1, 0), colors.whitesmoke),
        ("ALIGN", (0, 0), (-1, 0), "CENTER"),
        ("VALIGN", (0, 0), (-1, -1), "MIDDLE"),
        ("FONTSIZE", (0, 0), (-1, -1), font_sizes['body']),
        ("GRID", (0, 0), (-1, -1), 0.5, colors.grey),
        ("BOX", (0, 0), (-1, -1), 1, colors.black),
        ("TOPPADDING", (0, 0), (-1, -1), 3),
        ("BOTTOMPADDING", (0, 0), (-1, -1), 3),
    ])
    # Alternate row colors for better readability
    for row_num in range(1, len(rows) + 1):
        bg = colors.HexColor("#f8f9fa") if row_num % 2 == 0 else colors.HexColor("#ffffff")
        style.add("BACKGROUND", (0, row_num), (-1, row_num), bg)
    table.setStyle(style)
    return table


def report_summary_stats(report: Dict[str, Any]) -> Dict[str, Any]:
    dataset = report.get("dataset", {})
    evaluations = report.get("evaluations", {})
    summary = {
        "Mode": report.get("mode"),
        "Subjects": dataset.get("subjects"),
        "Features": dataset.get("features"),
        "Trials": report.get("config", {}).get("trial_count"),
        "Evaluations": evaluations.get("permutation"),
    }
    if "evaluation_ratio" in evaluations:
        summary["Evaluation ratio"] = f"{evaluations['evaluation_ratio']:.2f}x"
    comparison = report.get("comparison")
    if comparison:
        summary["KL"] = f"{comparison['kl']:.3g}"
        summary["BD"] = f"{comparison['bd']:.3g}"
    return {k: v for k, v in summary.items() if v is not None}


def report_to_pdf_bytes(report: Dict[str, Any], title: str = "Permutation FWER Report",
                        orientation: str = 'portrait', include_footer: bool = True) -> bytes:
    """
    One PDF section per report table, with a summary band under the title.
    Tables longer than PDFConfig.MAX_ROWS are truncated with a note.
    """
    output = io.BytesIO()
    pagesize = landscape(A4) if orientation == 'landscape' else portrait(A4)
    margins = PDFConfig.MARGINS[orientation]
    doc = SimpleDocTemplate(
        output,
        pagesize=pagesize,
        leftMargin=margins['left'] * cm,
        rightMargin=margins['right'] * cm,
        topMargin=margins['top'] * cm,
        bottomMargin=margins['bottom'] * cm,
    )
    font_sizes = PDFConfig.FONT_SIZES[orientation]
    styles = getSampleStyleSheet()

    title_style = ParagraphStyle(
        "ReportTitle",
        parent=styles["Title"],
        fontSize=font_sizes['title'],
        alignment=TA_CENTER,
        spaceAfter=12,
        textColor=colors.HexColor(PDFConfig.HEADER_COLOR)
    )
    heading_style = ParagraphStyle(
        "SectionHeading",
        parent=styles["Heading3"],
        fontSize=font_sizes['heading'],
        alignment=TA_LEFT,
        spaceBefore=10,
        spaceAfter=6,
    )
    summary_style = ParagraphStyle(
        "Summary",
        parent=styles["Normal"],
        fontSize=font_sizes['body'],
        backColor=colors.HexColor("#f0f8ff"),
        borderPadding=8,
        borderColor=colors.HexColor("#d0e0f0"),
        borderWidth=1,
        spaceAfter=12
    )

    elements = [Paragraph(title, title_style)]
    summary = report_summary_stats(report)
    if summary:
        elements.append(Paragraph(" | ".join(f"<b>{k}:</b> {v}" for k, v in summary.items()), summary_style))

    for name, frame in report_tables(report).items():
        elements.append(Paragraph(name.replace("_", " ").title(), heading_style))
        if frame.empty:
            elements.append(Paragraph("No data available", styles["Normal"]))
            continue
        shown = frame.head(PDFConfig.MAX_ROWS)
        elements.append(_styled_table(shown, font_sizes, doc.width))
        if len(frame) > len(shown):
            elements.append(Paragraph(f"({len(frame) - len(shown)} more rows in the CSV export)", styles["Italic"]))
        elements.append(Spacer(1, 6))

    def add_footer(canvas, doc):
        canvas.saveState()
        canvas.setFont("Helvetica", font_sizes['small'])
        footer_y = doc.bottomMargin / 2
        canvas.setLineWidth(0.5)
        canvas.line(doc.leftMargin, footer_y, doc.width + doc.leftMargin, footer_y)
        canvas.drawCentredString(doc.width / 2 + doc.leftMargin, footer_y - 10, f"Page {canvas.getPageNumber()}")
        canvas.drawString(doc.leftMargin, footer_y - 10, title[:30] + "..." if len(title) > 30 else title)
        canvas.drawRightString(doc.width + doc.leftMargin, footer_y - 10, datetime.now().strftime("%d-%b-%Y"))
        canvas.restoreState()

    if include_footer:
        doc.build(elements, onFirstPage=add_footer, onLaterPages=add_footer)
    else:
        doc.build(elements)

    output.seek(0)
    return output.getvalue()


def write_bytes(path: str, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(payload)
    logger.info(f"✅ Wrote {len(payload)} bytes to {path}")
