"""Result rows, tables and their CSV/JSON encodings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

COLUMNS = ("name", "variant", "m", "rho", "n", "replicates", "estimate", "stderr",
           "reference", "provenance", "pass")
REPORT_COLUMNS = COLUMNS + ("tolerance",)
FORMATS = ("csv", "json")


@dataclass
class ResultRow:
    name: str
    variant: str
    m: int
    rho: float
    n: int
    replicates: int
    estimate: float | None
    stderr: float | None = None
    reference: float | None = None
    provenance: str | None = None
    passed: bool | None = None
    tolerance: float | None = None

    def as_record(self, columns) -> dict:
        rec = {
            "name": self.name, "variant": self.variant, "m": self.m, "rho": self.rho,
            "n": self.n, "replicates": self.replicates, "estimate": self.estimate,
            "stderr": self.stderr, "reference": self.reference,
            "provenance": self.provenance, "pass": self.passed, "tolerance": self.tolerance,
        }
        return {c: rec[c] for c in columns}


@dataclass
class ResultTable:
    """Monte Carlo summary rows.  ``samples`` holds raw draws and is not persisted."""

    rows: list[ResultRow] = field(default_factory=list)
    samples: dict = field(default_factory=dict, compare=False, repr=False)

    columns = COLUMNS

    def add(self, row: ResultRow) -> ResultRow:
        if row.reference is not None and not row.provenance:
            raise ValueError(f"row {row.name!r} has a reference value but no provenance")
        self.rows.append(row)
        return row

    def row(self, name: str) -> ResultRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def extend(self, other: "ResultTable") -> None:
        for r in other.rows:
            self.add(r)

    @property
    def all_passed(self) -> bool:
        return all(r.passed is not False for r in self.rows)


@dataclass
class VerificationReport(ResultTable):
    """Named checks with observed value, reference, tolerance and verdict."""

    columns = REPORT_COLUMNS


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return "%.17g" % value
    return str(value)


def _json_value(value):
    if isinstance(value, float) and (math.isnan(value) or math.isinf(value)):
        return _fmt(value)
    if isinstance(value, float):
        return float("%.17g" % value)
    return value


def encode(table: ResultTable, fmt: str) -> str:
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
    cols = table.columns
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in table.rows:
            rec = r.as_record(cols)
            w.writerow([_fmt(rec[c]) for c in cols])
        return buf.getvalue()
    records = [{k: _json_value(v) for k, v in r.as_record(cols).items()} for r in table.rows]
    return json.dumps(records, indent=1, allow_nan=False) + "\n"


def write_results(table: ResultTable, path, fmt: str = "csv") -> None:
    """Persist a table; identical tables give identical bytes."""
    text = encode(table, fmt)
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def _parse_float(text):
    if text is None or text == "":
        return None
    return float(text)


def _parse_bool(text):
    if text is None or text == "":
        return None
    if isinstance(text, bool):
        return text
    return {"true": True, "false": False}[text]


def _row_from_record(rec: dict) -> ResultRow:
    return ResultRow(
        name=str(rec["name"]), variant=str(rec["variant"]), m=int(rec["m"]),
        rho=float(rec["rho"]), n=int(rec["n"]), replicates=int(rec["replicates"]),
        estimate=_parse_float(rec.get("estimate")), stderr=_parse_float(rec.get("stderr")),
        reference=_parse_float(rec.get("reference")),
        provenance=(rec.get("provenance") or None), passed=_parse_bool(rec.get("pass")),
        tolerance=_parse_float(rec.get("tolerance")),
    )


def decode(text: str, fmt: str) -> ResultTable:
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(text))
        cols = tuple(reader.fieldnames or ())
        rows = [_row_from_record(rec) for rec in reader]
    elif fmt == "json":
        records = json.loads(text)
        cols = tuple(records[0].keys()) if records else COLUMNS
        rows = [_row_from_record({k: ("" if v is None else v) for k, v in rec.items()}) for rec in records]
    else:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
    cls = VerificationReport if "tolerance" in cols else ResultTable
    return cls(rows=rows)


def read_results(path, fmt: str | None = None) -> ResultTable:
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "csv")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read results from {path}: {exc}") from exc
    return decode(text, fmt)


def format_table(table: ResultTable) -> str:
    """Fixed-width text rendering for terminals."""
    cols = table.columns
    body = [[_fmt(v) if not isinstance(v, float) or v is None else "%.6g" % v
             for v in r.as_record(cols).values()] for r in table.rows]
    widths = [max([len(c)] + [len(b[i]) for b in body]) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)
