"""Comparison reports and their CSV, JSON and plot-data renderings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .. import __version__
from .compare import Row

CSV_COLUMNS = ("observable", "x", "y", "a", "a_err", "b", "b_err", "mode", "discrepancy",
               "score", "tolerance", "verdict", "note")


@dataclass
class Series:
    """Columnar plot data: one ``(x, value, error)`` triple per point."""

    name: str
    x: list = field(default_factory=list)
    value: list = field(default_factory=list)
    error: list = field(default_factory=list)

    def add(self, x: float, value: float, error: float = 0.0) -> None:
        self.x.append(float(x))
        self.value.append(float(value))
        self.error.append(float(error))


@dataclass
class ComparisonReport:
    name: str
    kind: str
    task: str
    rows: list[Row]
    config: dict
    config_hash: str
    seed: int
    details: dict = field(default_factory=dict)
    series: list[Series] = field(default_factory=list)
    attempts: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def failing(self) -> list[Row]:
        return [r for r in self.rows if not r.passed]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "task": self.task,
            "verdict": self.verdict,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "environment": {"version": __version__, **self.environment},
            "rows": [_clean(asdict(r)) for r in self.rows],
            "details": _clean(self.details),
            "series": [_clean(asdict(s)) for s in self.series],
            "attempts": _clean(self.attempts),
        }

    def summary(self) -> str:
        lines = [f"{self.name} [{self.kind}/{self.task}] seed={self.seed}: {self.verdict.upper()}"]
        for r in self.rows:
            where = "" if math.isnan(r.x) else f" x={r.x:g}" + ("" if math.isnan(r.y) else f" y={r.y:g}")
            if r.mode == "record":
                lines.append(f"  {r.verdict:5s} {r.observable}{where}: {r.a:.6g} +- {r.a_err:.2g}")
            else:
                lines.append(f"  {r.verdict:5s} {r.observable}{where}: {r.a:.6g} vs {r.b:.6g} "
                             f"({r.mode} score={r.score:.3g}, tol={r.tolerance:.3g})")
        return "\n".join(lines)


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, tuples become lists."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalars
        return _clean(obj.item())
    return obj


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(report: ComparisonReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.rows:
        d = asdict(r)
        writer.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def render_json(report: ComparisonReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def render_plotdata(report: ComparisonReport) -> str:
    out = [f"# {report.name} config_hash={report.config_hash}"]
    for s in report.series:
        out.append(f"# series {s.name}")
        out.append("# x value error")
        out.extend(f"{x!r} {v!r} {e!r}" for x, v, e in zip(s.x, s.value, s.error))
        out.append("")
    return "\n".join(out) + "\n"


RENDERERS = {"csv": (".csv", render_csv), "json": (".json", render_json),
             "plotdata": (".plot.txt", render_plotdata)}


def emit_report(report: ComparisonReport, out_dir: str | Path,
                formats=("csv", "json", "plotdata")) -> dict[str, Path]:
    """Write the requested renderings; returns the path of each format."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror}") from None
    paths = {}
    for fmt in formats:
        if fmt not in RENDERERS:
            raise ValueError(f"unknown report format {fmt!r}")
        suffix, render = RENDERERS[fmt]
        path = out_dir / f"{report.name}{suffix}"
        try:
            path.write_text(render(report))
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from None
        paths[fmt] = path
    return paths
