"""Comparison reports: per-method rows and their CSV/JSON encodings."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import FormatError, InvalidArgumentError

CSV_HEADER = ("method", "steps", "wall_seconds", "relative_mse", "plain_mse")
REPORT_FORMAT = "AHTS-REPORT v1"
_SEP = "|"


@dataclass
class ReportRow:
    method: str
    steps: int
    wall_seconds: float
    relative_mse: float
    plain_mse: float
    system: str = ""
    noise_pct: float = 0.0

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidArgumentError(f"{self.method}: steps must be a positive integer, got {self.steps}")
        self.steps = int(self.steps)
        for name in ("wall_seconds", "relative_mse", "plain_mse"):
            value = float(getattr(self, name))
            if not value >= 0:
                raise InvalidArgumentError(f"{self.method}: {name} must be non-negative, got {value}")
            setattr(self, name, value)
        self.noise_pct = float(self.noise_pct)

    def key(self):
        """Everything except timing, for reproducibility comparisons."""
        return (self.system, self.noise_pct, self.method, self.steps, self.relative_mse, self.plain_mse)


@dataclass
class ComparisonReport:
    rows: list[ReportRow]
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def row(self, method: str, noise_pct: float | None = None) -> ReportRow:
        for r in self.rows:
            if r.method == method and (noise_pct is None or r.noise_pct == noise_pct):
                return r
        raise KeyError(method)

    def methods(self) -> list[str]:
        return [r.method for r in self.rows]

    def extend(self, other: "ComparisonReport") -> "ComparisonReport":
        return ComparisonReport(self.rows + other.rows, {**self.metadata, **other.metadata})

    def _grouped(self) -> bool:
        return len({(r.system, r.noise_pct) for r in self.rows}) > 1

    def to_csv(self) -> str:
        """Fixed five-column CSV. When rows span several systems or noise
        levels the method cell is qualified as ``system|noise|method``."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        grouped = self._grouped()
        for r in self.rows:
            label = _SEP.join((r.system, repr(r.noise_pct), r.method)) if grouped else r.method
            writer.writerow((label, r.steps, repr(r.wall_seconds), repr(r.relative_mse), repr(r.plain_mse)))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, system: str = "", noise_pct: float = 0.0) -> "ComparisonReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise FormatError(f"unexpected CSV header {header}", field="header")
        rows = []
        for rec in reader:
            if len(rec) != len(CSV_HEADER):
                raise FormatError(f"row has {len(rec)} cells", field="row")
            label, steps, wall, rel, plain = rec
            sys_name, pct, method = system, noise_pct, label
            if label.count(_SEP) == 2:
                sys_name, pct_text, method = label.split(_SEP)
                pct = float(pct_text)
            rows.append(ReportRow(method, int(steps), float(wall), float(rel), float(plain), sys_name, pct))
        return cls(rows)

    def to_json(self) -> str:
        doc = {
            "format": REPORT_FORMAT,
            "columns": list(CSV_HEADER),
            "metadata": self.metadata,
            "rows": [asdict(r) for r in self.rows],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ComparisonReport":
        doc = json.loads(text)
        if doc.get("format") != REPORT_FORMAT:
            raise FormatError(f"not a report document: {doc.get('format')!r}", field="format")
        return cls([ReportRow(**r) for r in doc["rows"]], doc.get("metadata", {}))


def emit_report(report: ComparisonReport, path_stem, formats=("csv", "json")) -> list[Path]:
    """Write ``<stem>.csv`` and/or ``<stem>.json``; returns the written paths."""
    if not report.rows:
        raise InvalidArgumentError("report has no rows")
    unknown = set(formats) - {"csv", "json"}
    if unknown:
        raise InvalidArgumentError(f"unknown report formats {sorted(unknown)}")
    stem = Path(path_stem)
    out = []
    for fmt in formats:
        path = stem.with_name(stem.name + "." + fmt)
        path.write_text(report.to_csv() if fmt == "csv" else report.to_json())
        out.append(path)
    return out


def load_report(path) -> ComparisonReport:
    path = Path(path)
    text = path.read_text()
    return ComparisonReport.from_json(text) if path.suffix == ".json" else ComparisonReport.from_csv(text)
