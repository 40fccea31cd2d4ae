"""Engine configuration: a small JSON file validated up front."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EngineError
from .model import HighwayLevelDef

FAULT_MODES = ("NONE", "ABORT_MID_APPLY")

DEFAULT_LEVELS = (
    HighwayLevelDef(0, 1, "raw source copies"),
    HighwayLevelDef(1, 1, "cleaned and typed"),
    HighwayLevelDef(2, 2, "integrated and aggregated"),
    HighwayLevelDef(3, 4, "star warehouse"),
)


@dataclass
class EngineConfig:
    data_dir: Path
    http_port: int = 8600
    levels: tuple[HighwayLevelDef, ...] = DEFAULT_LEVELS
    max_attrs: int = 2
    fault_injection: str = "NONE"


def _invalid(key: str, detail: str) -> EngineError:
    return EngineError("CONFIG_INVALID", f"{key}: {detail}")


def parse_config(doc: dict) -> EngineConfig:
    if not isinstance(doc, dict):
        raise _invalid("$", "config must be a JSON object")
    if "data_dir" not in doc:
        raise _invalid("data_dir", "missing")
    if not isinstance(doc["data_dir"], str) or not doc["data_dir"]:
        raise _invalid("data_dir", "must be a non-empty path")

    http_port = doc.get("http_port", 8600)
    if not isinstance(http_port, int) or not 1 <= http_port <= 65535:
        raise _invalid("http_port", f"bad port {http_port!r}")

    levels = DEFAULT_LEVELS
    if "levels" in doc:
        try:
            levels = tuple(HighwayLevelDef.from_doc(item) for item in doc["levels"])
        except (EngineError, KeyError, TypeError, ValueError) as exc:
            raise _invalid("levels", f"cannot parse: {exc}") from exc
        numbers = sorted(l.level for l in levels)
        if numbers != list(range(len(numbers))):
            raise _invalid("levels", f"must be contiguous from 0, got {numbers}")
        by_level = {l.level: l for l in levels}
        periods = [by_level[n].tick_period for n in numbers]
        if any(b < a for a, b in zip(periods, periods[1:])):
            raise _invalid("levels", f"tick_periods must be non-decreasing, got {periods}")

    max_attrs = doc.get("max_attrs", 2)
    if not isinstance(max_attrs, int) or max_attrs < 0:
        raise _invalid("max_attrs", f"must be a non-negative integer, got {max_attrs!r}")

    fault = doc.get("fault_injection", "NONE")
    if fault not in FAULT_MODES:
        raise _invalid("fault_injection", f"must be one of {list(FAULT_MODES)}, got {fault!r}")

    return EngineConfig(
        data_dir=Path(doc["data_dir"]),
        http_port=http_port,
        levels=levels,
        max_attrs=max_attrs,
        fault_injection=fault,
    )


def load_config(path: str | Path) -> EngineConfig:
    p = Path(path)
    if not p.exists():
        raise _invalid("path", f"{p} does not exist")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise _invalid("path", f"cannot read {p}: {exc}") from exc
    return parse_config(doc)
