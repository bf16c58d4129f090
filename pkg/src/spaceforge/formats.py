"""File formats: schema JSON, evaluation-history JSON Lines, and learned-space files.

Floats are written with Python's shortest round-trip representation, so
reading a file back gives the same doubles bit for bit.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .core import (BoxSpace, CategoricalDim, EllipsoidSpace, EvaluationRecord, NumericDim,
                   ParameterSchema, SchemaError, SlackReport)

__all__ = [
    "FORMAT_VERSION",
    "InputError",
    "schema_to_dict",
    "schema_from_dict",
    "load_schema",
    "dump_schema",
    "parse_history",
    "load_history",
    "dump_history",
    "SpaceFile",
    "load_space",
    "file_digest",
]

FORMAT_VERSION = 1


class InputError(ValueError):
    """Malformed or missing input; the message names the file and, when known, the line."""


def _read_text(path) -> str:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except OSError as exc:
        raise InputError(f"{path}: cannot read file ({exc.strerror})") from None
    except UnicodeDecodeError:
        raise InputError(f"{path}: not valid UTF-8") from None


def _json_load(text: str, where: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{where}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _dumps(obj: Any, indent: int | None = 2) -> str:
    return json.dumps(obj, indent=indent, sort_keys=False, allow_nan=False, ensure_ascii=False)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- schema -----------------------------------------------------------------

def schema_to_dict(schema: ParameterSchema) -> dict:
    return {
        "numeric": [{"name": d.name, "lower": float(d.lower), "upper": float(d.upper), "integer": d.is_integer}
                    for d in schema.dims],
        "categorical": [{"name": c.name, "values": list(c.values)} for c in schema.cats],
    }


def _number(v: Any, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{what} must be a number, got {v!r}")
    return float(v)


def schema_from_dict(d: Any) -> ParameterSchema:
    if not isinstance(d, Mapping):
        raise SchemaError("schema must be a JSON object")
    unknown = set(d) - {"numeric", "categorical"}
    if unknown:
        raise SchemaError(f"unknown schema keys {sorted(unknown)}")
    dims = []
    for k, item in enumerate(d.get("numeric", [])):
        if not isinstance(item, Mapping) or "name" not in item:
            raise SchemaError(f"numeric[{k}]: expected an object with a name")
        integer = item.get("integer", False)
        if not isinstance(integer, bool):
            raise SchemaError(f"numeric[{k}]: 'integer' must be true or false")
        try:
            lo, hi = item["lower"], item["upper"]
        except KeyError as exc:
            raise SchemaError(f"numeric[{k}] ({item['name']!r}): missing {exc.args[0]!r}") from None
        dims.append(NumericDim(str(item["name"]), _number(lo, f"numeric[{k}].lower"),
                               _number(hi, f"numeric[{k}].upper"), integer))
    cats = []
    for k, item in enumerate(d.get("categorical", [])):
        if not isinstance(item, Mapping) or "name" not in item or not isinstance(item.get("values"), list):
            raise SchemaError(f"categorical[{k}]: expected an object with name and a values list")
        cats.append(CategoricalDim(str(item["name"]), tuple(item["values"])))
    return ParameterSchema(tuple(dims), tuple(cats))


def load_schema(path) -> ParameterSchema:
    d = _json_load(_read_text(path), str(path))
    try:
        return schema_from_dict(d)
    except SchemaError as exc:
        raise InputError(f"{path}: {exc}") from None


def dump_schema(schema: ParameterSchema, path) -> None:
    Path(path).write_text(_dumps(schema_to_dict(schema)) + "\n", encoding="utf-8")


# --- history ----------------------------------------------------------------

def parse_history(text: str, where: str = "<history>") -> list[EvaluationRecord]:
    """One record per non-blank line: ``{"task_id", "config", "objective"}``."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        loc = f"{where}:{lineno}"
        d = _json_load(line, loc)
        if not isinstance(d, dict):
            raise InputError(f"{loc}: expected a JSON object")
        missing = [k for k in ("task_id", "config", "objective") if k not in d]
        if missing:
            raise InputError(f"{loc}: missing field(s) {missing}")
        if not isinstance(d["task_id"], str):
            raise InputError(f"{loc}: task_id must be a string")
        if not isinstance(d["config"], dict):
            raise InputError(f"{loc}: config must be an object")
        y = d["objective"]
        if isinstance(y, bool) or not isinstance(y, (int, float)) or not math.isfinite(y):
            raise InputError(f"{loc}: objective must be a finite number, got {y!r}")
        out.append(EvaluationRecord(d["task_id"], d["config"], float(y)))
    return out


def load_history(path) -> list[EvaluationRecord]:
    return parse_history(_read_text(path), str(path))


def dump_history(records: Sequence[EvaluationRecord], path) -> None:
    lines = [_dumps({"task_id": r.task_id, "config": dict(r.config), "objective": r.objective}, None)
             for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# --- space files ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpaceFile:
    """A learned space plus everything needed to audit and reuse it."""

    space: BoxSpace | EllipsoidSpace
    schema: ParameterSchema
    slack: SlackReport | None = None
    calibration: Mapping[str, Any] | None = None
    provenance: Mapping[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def geometry(self) -> str:
        return "box" if isinstance(self.space, BoxSpace) else "ellipsoid"

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"format_version": self.format_version, "type": self.geometry,
                             "names": self.schema.names}
        if isinstance(self.space, BoxSpace):
            d["lower"] = self.space.lower.tolist()
            d["upper"] = self.space.upper.tolist()
        else:
            d["A"] = self.space.A.reshape(-1).tolist()
            d["b"] = self.space.b.tolist()
        d["categorical"] = schema_to_dict(self.schema)["categorical"]
        d["schema"] = schema_to_dict(self.schema)
        d["slack"] = None if self.slack is None else self.slack.to_dict()
        d["calibration"] = None if self.calibration is None else dict(self.calibration)
        d["provenance"] = dict(self.provenance)
        return d

    def dumps(self) -> str:
        return _dumps(self.to_dict()) + "\n"

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: Any) -> "SpaceFile":
        if not isinstance(d, Mapping):
            raise SchemaError("space file must be a JSON object")
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise SchemaError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
        schema = schema_from_dict(d.get("schema", {}))
        names = d.get("names")
        if names != schema.names:
            raise SchemaError(f"dimension names {names!r} do not match the embedded schema {schema.names!r}")
        p = schema.p
        try:
            if d.get("type") == "box":
                space = BoxSpace(_vector(d["lower"], p, "lower"), _vector(d["upper"], p, "upper"))
            elif d.get("type") == "ellipsoid":
                A = _vector(d["A"], p * p, "A").reshape(p, p)
                space = EllipsoidSpace(A, _vector(d["b"], p, "b"))
            else:
                raise SchemaError(f"unknown space type {d.get('type')!r}")
        except KeyError as exc:
            raise SchemaError(f"missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise SchemaError(str(exc)) from None
        slack = d.get("slack")
        return cls(space, schema, None if slack is None else SlackReport.from_dict(slack),
                   d.get("calibration"), d.get("provenance", {}), version)

    @classmethod
    def loads(cls, text: str, where: str = "<space>") -> "SpaceFile":
        try:
            return cls.from_dict(_json_load(text, where))
        except SchemaError as exc:
            raise InputError(f"{where}: {exc}") from None


def _vector(v: Any, n: int, what: str) -> np.ndarray:
    if not isinstance(v, list) or len(v) != n:
        raise SchemaError(f"{what!r} must be a list of {n} numbers")
    return np.array([_number(x, what) for x in v], dtype=float)


def load_space(path) -> SpaceFile:
    return SpaceFile.loads(_read_text(path), str(path))
