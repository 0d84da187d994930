"""CSV / markdown export of evaluation reports."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .suite import THRESHOLDS, EvalReport

CSV_COLUMNS = ("method", "layout_r1", "pose_r1", "median_cm",
               "under_1cm", "under_5cm", "under_10cm", "under_1m")


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def _pct(x: float) -> str:
    return "-" if math.isnan(x) else f"{100 * x:.1f}%"


def export_report(report: EvalReport, fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in report.rows:
            s = row.summary()
            w.writerow([row.method] + [_num(s[c]) for c in CSV_COLUMNS[1:]])
        return buf.getvalue()
    if fmt == "markdown":
        head = ["Method", "Layout R@1", "Pose R@1", "Median (cm)",
                *(f"<{n.split('_')[1]}" for n, _ in THRESHOLDS), "Correct room"]
        lines = [f"## {report.name}", "",
                 "| " + " | ".join(head) + " |",
                 "|" + "---|" * len(head)]
        for row in report.rows:
            s = row.summary()
            cells = [row.method, _pct(s["layout_r1"]), _pct(s["pose_r1"]), f"{s['median_cm']:.1f}",
                     *(_pct(s[n]) for n, _ in THRESHOLDS), _pct(s["correct_room"])]
            lines.append("| " + " | ".join(cells) + " |")
        n = len(report.rows[0].errors) if report.rows else 0
        lines += ["", f"{n} queries per row."]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report_csv(text: str) -> list:
    """Rows of an exported CSV as dicts with float values."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    out = []
    for line, rec in enumerate(reader, start=2):
        if len(rec) != len(CSV_COLUMNS):
            raise ValueError(f"line {line}: expected {len(CSV_COLUMNS)} fields, got {len(rec)}")
        out.append({"method": rec[0], **{c: float(v) for c, v in zip(CSV_COLUMNS[1:], rec[1:])}})
    return out


def export_queries_csv(report: EvalReport) -> str:
    """One line per (method, query) with the raw error and hit flags."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "query", "error_m", "layout_hit", "pose_hit", "correct_room"])
    flag = lambda seq, i: "" if not seq else int(seq[i])
    for row in report.rows:
        for i, e in enumerate(row.errors):
            w.writerow([row.method, i, repr(e), flag(row.layout_hits, i),
                        flag(row.pose_hits, i), flag(row.room_hits, i)])
    return buf.getvalue()


def write_report(report: EvalReport, out_dir, stem: str | None = None) -> list:
    """Write CSV, markdown, per-query CSV and a JSON summary; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or report.name
    files = {
        f"{stem}.csv": export_report(report, "csv"),
        f"{stem}.md": export_report(report, "markdown"),
        f"{stem}_queries.csv": export_queries_csv(report),
        f"{stem}.json": json.dumps({"name": report.name, "corpus": report.corpus,
                                    "rows": [r.summary() for r in report.rows]}, indent=1),
    }
    paths = []
    for name, text in files.items():
        (out / name).write_text(text)
        paths.append(out / name)
    return paths
