"""Deterministic report files: canonical JSON, CSV tables and the run index.

Floats are written with 17 significant digits, keys are sorted and the
layout is fixed, so identical inputs and seed give byte-identical files.
Non-finite floats become JSON null.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

STATUS_OK = "ok"
STATUS_CERT_FAILED = "certification-failed"
STATUS_ERROR = "error"

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_CERT_FAILED = 2


def format_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == 0.0:
        return "-0.0" if math.copysign(1.0, x) < 0 else "0.0"
    text = f"{x:.17g}"
    # keep a float marker so readers do not see an integer
    if all(c not in text for c in ".eEn"):
        text += ".0"
    return text


def _plain(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Fraction):
        return float(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


def dumps(obj: Any, indent: int = 1) -> str:
    """Canonical JSON text (sorted keys, 17-digit floats, trailing newline)."""
    out: list[str] = []
    _write(obj, 0, indent, out)
    out.append("\n")
    return "".join(out)


def _write(obj: Any, level: int, indent: int, out: list[str]) -> None:
    obj = _plain(obj)
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, Mapping):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        for i, (k, v) in enumerate(items):
            out.append(f"{pad}{json.dumps(str(k))}: ")
            _write(v, level + 1, indent, out)
            out.append(",\n" if i + 1 < len(items) else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        if all(isinstance(_plain(v), (int, float, bool)) or v is None for v in obj):
            out.append("[" + ", ".join(_scalar(v) for v in obj) + "]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad)
            _write(v, level + 1, indent, out)
            out.append(",\n" if i + 1 < len(obj) else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def _scalar(v: Any) -> str:
    v = _plain(v)
    if v is None or isinstance(v, bool):
        return json.dumps(v)
    if isinstance(v, int):
        return str(v)
    return format_float(float(v))


def csv_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Comma-separated table with a header row; floats at 17 significant digits."""

    def cell(v: Any) -> str:
        v = _plain(v)
        if v is None:
            return ""
        if isinstance(v, bool):
            return str(v).lower()
        if isinstance(v, float):
            return f"{v:.17g}"
        text = str(v)
        if any(c in text for c in ',"\n'):
            text = '"' + text.replace('"', '""') + '"'
        return text

    lines = [",".join(header)]
    lines.extend(",".join(cell(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


@dataclass
class ActionResult:
    """Outcome of one action: its artifacts keyed by file name and a status."""

    action: str
    status: str = STATUS_OK
    files: dict[str, Any] = field(default_factory=dict)
    message: str = ""
    summary: dict[str, Any] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return {STATUS_OK: EXIT_OK, STATUS_CERT_FAILED: EXIT_CERT_FAILED}.get(self.status, EXIT_INPUT_ERROR)


def combined_exit_code(results: Sequence[ActionResult]) -> int:
    codes = {r.exit_code for r in results}
    if EXIT_INPUT_ERROR in codes:
        return EXIT_INPUT_ERROR
    if EXIT_CERT_FAILED in codes:
        return EXIT_CERT_FAILED
    return EXIT_OK


def emit_report(results: Sequence[ActionResult], out_dir: str | os.PathLike, meta: Mapping[str, Any] | None = None
                ) -> list[Path]:
    """Write every artifact plus index.json and return the written paths.

    Dict payloads go through :func:`dumps`; string payloads (CSV) are
    written verbatim.  File names must be unique across actions.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    seen: set[str] = set()
    for r in results:
        for name, payload in r.files.items():
            if name in seen or name == "index.json":
                raise ValueError(f"file name {name!r} is produced twice")
            seen.add(name)
            text = payload if isinstance(payload, str) else dumps(payload)
            path = out / name
            path.write_text(text, encoding="utf-8", newline="\n")
            written.append(path)
    index = {
        "actions": [
            {"action": r.action, "status": r.status, "files": sorted(r.files), "message": r.message,
             "summary": r.summary}
            for r in results
        ],
        "exit_code": combined_exit_code(results),
    }
    index.update(meta or {})
    path = out / "index.json"
    path.write_text(dumps(index), encoding="utf-8", newline="\n")
    written.append(path)
    return written
