"""Experiment reports and deterministic CSV output."""

import csv
from dataclasses import dataclass, field
import io
import json
import math
from pathlib import Path

from .. import __version__


@dataclass
class ExperimentReport:
    experiment: str
    columns: tuple
    rows: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def records(self):
        return [dict(zip(self.columns, r)) for r in self.rows]


def format_value(v):
    """Shortest round-trip decimal for floats, blank for None."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if hasattr(v, "item") and type(v).__module__ == "numpy":
        return format_value(v.item())
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def to_csv_text(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def emit_csv(report, path, *, sidecar=True):
    """Write the report as CSV; provenance goes to ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_csv_text(report))
    if sidecar:
        meta = dict(report.provenance)
        meta.setdefault("version", __version__)
        meta["rows"] = len(report.rows)
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader)
