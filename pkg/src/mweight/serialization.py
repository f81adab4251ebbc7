"""Canonical JSON output."""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Any

import numpy as np
from pydantic import BaseModel


def _float(value: float) -> str:
    if not math.isfinite(value):
        return "null"
    text = format(value, ".17g")
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def _plain(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return _plain(obj.model_dump())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return _plain(obj.to_dict())
        return _plain(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_encode(k, indent, level + 1)}: {_encode(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + close + "]"
    raise TypeError(f"Cannot serialise {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """
    Serialise models, dataclasses and numpy values to JSON.

    Floats are written with 17 significant digits so they round-trip
    exactly; NaN and infinities become null. Key order is preserved.
    """
    return _encode(_plain(obj), indent, 0)
