"""Inequality records and deterministic JSON/CSV output."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


def inequality_tol(lhs: float, rhs: float) -> float:
    return 1e-8 * (1.0 + abs(lhs) + abs(rhs))


@dataclass(frozen=True)
class BoundCheck:
    """One checked inequality ``lhs >= rhs``.

    ``passed`` holds iff ``margin = lhs - rhs >= -1e-8 (1 + |lhs| + |rhs|)``.
    Checks of the form ``a <= b`` are stored with ``lhs = b`` and ``rhs = a``.
    """

    name: str
    lhs: float
    rhs: float
    margin: float
    passed: bool
    context: dict = field(default_factory=dict)

    @classmethod
    def make(cls, name: str, lhs: float, rhs: float, context: dict | None = None,
             tol: float | None = None) -> "BoundCheck":
        lhs, rhs = float(lhs), float(rhs)
        margin = lhs - rhs
        if tol is None:
            tol = inequality_tol(lhs, rhs)
        ok = bool(np.isfinite(margin) and margin >= -tol)
        return cls(name, lhs, rhs, margin, ok, dict(context or {}))

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin,
                "pass": self.passed, "context": self.context}

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: lhs={self.lhs:.6g} rhs={self.rhs:.6g} "
                f"margin={self.margin:.3g}")


def summarize(checks, seeds=()) -> dict:
    checks = list(checks)
    return {"checks_total": len(checks),
            "checks_passed": sum(c.passed for c in checks),
            "seeds": list(seeds)}


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}" if x != 0 or math.copysign(1, x) > 0 else "-0.0"
    return format(x, ".17g")


def _encode(obj, indent, level, out):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, BoundCheck):
        obj = obj.to_dict()
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for i, (k, v) in enumerate(items):
            out.append(pad + json.dumps(str(k)) + ": ")
            _encode(v, indent, level + 1, out)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
               for v in obj):
            parts = []
            for v in obj:
                _encode(v, indent, level + 1, parts)
            out.append("[" + ", ".join(parts) + "]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad)
            _encode(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 1) -> str:
    """JSON with floats written to 17 significant digits (exact round trip)."""
    out: list[str] = []
    _encode(obj, indent, 0, out)
    return "".join(out) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def write_rows(path, header, rows) -> None:
    """CSV writer; floats to 17 significant digits, None as an empty cell."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else
                        (format(float(v), ".17g") if isinstance(v, (float, np.floating)) else v)
                        for v in row])
