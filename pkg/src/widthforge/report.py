"""Report bundles: one canonical JSON document per run.

Bundles are byte-stable: keys are sorted, floats use their shortest round-trip
repr, non-finite floats become null, and timings are left out unless asked for.
"""
from __future__ import annotations

import json
import math
import platform

from .bounds import DomainError

BUNDLE_FORMAT = "widthforge-report/1"


class ParseError(DomainError):
    def __init__(self, source: str, line: int, column: int, offset: int, msg: str):
        super().__init__(f"{source}:{line}:{column} (offset {offset}): {msg}")
        self.source, self.line, self.column, self.offset = source, line, column, offset


def plain(obj):
    """JSON-ready copy with numpy scalars and arrays turned into Python values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if hasattr(obj, "tolist"):
        return plain(obj.tolist())
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return int(obj)
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if hasattr(obj, "to_json"):
        return plain(obj.to_json())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def versions() -> dict:
    import numpy
    import scipy

    from . import __version__, kernels

    return {
        "widthforge": __version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "kernels": kernels.BACKEND,
    }


def report_bundle(results: dict | None = None, config: dict | None = None, timing: dict | None = None) -> str:
    doc = {
        "format": BUNDLE_FORMAT,
        "config": plain(config or {}),
        "seed": (config or {}).get("seed"),
        "versions": versions(),
        "results": plain(results or {}),
    }
    if timing is not None:
        doc["wall_clock"] = plain(timing)
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse_json(text: str, source: str = "<input>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(source, exc.lineno, exc.colno, exc.pos, exc.msg) from None


def parse_bundle(text: str, source: str = "<bundle>") -> dict:
    doc = parse_json(text, source)
    if not isinstance(doc, dict) or doc.get("format") != BUNDLE_FORMAT:
        raise ParseError(source, 1, 1, 0, f"not a {BUNDLE_FORMAT} document")
    return doc
