"""Report serialisation: JSON summary (with schema), CSV curves and attribute tables."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import jsonschema

from .metrics import MetricReport

METRIC_KEYS = list(MetricReport.SCALARS)

_SCALARS = {k: {"type": "number", "minimum": 0.0, "maximum": 1.0} for k in METRIC_KEYS}
_SUMMARY = {
    "type": "object",
    "required": METRIC_KEYS + ["n_frames", "n_visible"],
    "properties": {**_SCALARS, "n_frames": {"type": "integer", "minimum": 0},
                   "n_visible": {"type": "integer", "minimum": 0}},
}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["overall", "sequences", "attributes", "thresholds"],
    "properties": {
        "overall": {
            "allOf": [_SUMMARY, {"type": "object", "required": ["curves"], "properties": {"curves": {
                "type": "object",
                "required": list(MetricReport.CURVES),
                "additionalProperties": {"type": "array", "items": {"type": "number"}},
            }}}]
        },
        "sequences": {"type": "object", "additionalProperties": _SUMMARY},
        "attributes": {"type": "object", "additionalProperties": _SUMMARY},
        "thresholds": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "number"}}},
    },
}


def build_report(overall: MetricReport, per_sequence: dict, slices: dict) -> dict:
    return {
        "overall": overall.to_dict(curves=True),
        "sequences": {k: r.to_dict(curves=False) for k, r in sorted(per_sequence.items())},
        "attributes": {k: r.to_dict(curves=False) for k, r in slices.items()},
        "thresholds": {name: [float(t) for t in th] for name, (_, th) in MetricReport.CURVES.items()},
    }


def validate_report(report: dict) -> None:
    jsonschema.validate(report, REPORT_SCHEMA)


def write_report(path, report: dict) -> None:
    validate_report(report)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def read_report(path) -> dict:
    report = json.loads(Path(path).read_text())
    validate_report(report)
    return report


def write_curves(out_dir, report: dict) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, values in report["overall"]["curves"].items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "value"])
        for t, v in zip(report["thresholds"][name], values):
            w.writerow([repr(float(t)), repr(float(v))])
        p = out / f"{name}.csv"
        p.write_text(buf.getvalue())
        written.append(p)
    return written


def summary_rows(report: dict, attributes: bool = False) -> list[dict]:
    rows = [{"slice": "overall", **{k: report["overall"][k] for k in METRIC_KEYS},
             "n_frames": report["overall"]["n_frames"]}]
    if attributes:
        for name, r in report["attributes"].items():
            rows.append({"slice": name, **{k: r[k] for k in METRIC_KEYS}, "n_frames": r["n_frames"]})
    return rows


def format_rows(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
