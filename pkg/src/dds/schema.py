"""Versioned document schemas, outcome validation, and form derivation.

The dialect covers scalars, enumerations, numeric bounds, lists and nested
records. It is deliberately small: enough to validate every outcome the
kernel stores and to generate data-entry forms for the operator console.
Validation is total and returns violations as data, never raises on document
content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import SchemaViolation

SCALAR_FIELD_TYPES = ("string", "integer", "number", "boolean")
FIELD_TYPES = SCALAR_FIELD_TYPES + ("enum", "list", "record")


def violation(code: str, path: str) -> dict:
    return {"code": code, "path": path}


@dataclass(frozen=True)
class FieldSpec:
    name: str
    type: str
    required: bool = False
    values: tuple[str, ...] = ()  # enum
    item: Optional["FieldSpec"] = None  # list
    fields: tuple["FieldSpec", ...] = ()  # record
    min: Optional[float] = None
    max: Optional[float] = None
    min_items: Optional[int] = None
    max_items: Optional[int] = None

    def to_doc(self) -> dict:
        doc: dict = {"name": self.name, "required": self.required, "type": self.type}
        if self.type == "enum":
            doc["values"] = list(self.values)
        if self.type == "list":
            doc["item"] = self.item.to_doc()
            if self.min_items is not None:
                doc["minItems"] = self.min_items
            if self.max_items is not None:
                doc["maxItems"] = self.max_items
        if self.type == "record":
            doc["fields"] = [f.to_doc() for f in self.fields]
        if self.min is not None:
            doc["min"] = self.min
        if self.max is not None:
            doc["max"] = self.max
        return doc


@dataclass(frozen=True)
class OutcomeSchema:
    """A named, versioned document schema. Versions are assigned when the
    schema document is stored, never chosen by clients."""

    name: str
    version: int
    fields: tuple[FieldSpec, ...]

    def to_doc(self) -> dict:
        return {
            "$kind": "outcome-schema",
            "fields": [f.to_doc() for f in self.fields],
            "name": self.name,
            "version": self.version,
        }


# --- Schema document parsing (the meta check for "outcome-schema" docs) ---

_FIELD_KEYS = {
    "name", "type", "required", "values", "item", "fields",
    "min", "max", "minItems", "maxItems",
}


def parse_schema_doc(doc: dict, assigned_version: Optional[int] = None) -> OutcomeSchema:
    """Parse and structurally check an outcome-schema document.

    Raises SchemaViolation listing every defect. ``assigned_version``
    overrides whatever version the document claims.
    """
    problems: list[dict] = []
    if not isinstance(doc, dict):
        raise SchemaViolation([violation("TypeViolation", "")])
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        problems.append(violation("MissingRequired", "name"))
    fields_doc = doc.get("fields")
    specs: tuple[FieldSpec, ...] = ()
    if not isinstance(fields_doc, list):
        problems.append(violation("MissingRequired", "fields"))
    else:
        specs = tuple(
            _parse_field(f, f"fields[{i}]", problems) for i, f in enumerate(fields_doc)
        )
        seen = set()
        for i, s in enumerate(specs):
            if s.name in seen:
                problems.append(violation("DuplicateField", f"fields[{i}]"))
            seen.add(s.name)
    if problems:
        raise SchemaViolation(problems)
    version = assigned_version if assigned_version is not None else int(doc.get("version", 0))
    return OutcomeSchema(name=name, version=version, fields=specs)


def _parse_field(doc, path: str, problems: list[dict]) -> FieldSpec:
    if not isinstance(doc, dict):
        problems.append(violation("TypeViolation", path))
        return FieldSpec(name="?", type="string")
    for key in doc:
        if key not in _FIELD_KEYS:
            problems.append(violation("UnknownField", f"{path}.{key}"))
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        problems.append(violation("MissingRequired", f"{path}.name"))
        name = "?"
    ftype = doc.get("type")
    if ftype not in FIELD_TYPES:
        problems.append(violation("UnknownType", f"{path}.type"))
        return FieldSpec(name=name, type="string")
    values: tuple[str, ...] = ()
    item = None
    subfields: tuple[FieldSpec, ...] = ()
    if ftype == "enum":
        raw = doc.get("values")
        if not isinstance(raw, list) or not raw or not all(isinstance(v, str) for v in raw):
            problems.append(violation("BadEnum", f"{path}.values"))
        elif len(set(raw)) != len(raw):
            problems.append(violation("BadEnum", f"{path}.values"))
        else:
            values = tuple(raw)
    if ftype == "list":
        raw = doc.get("item")
        if raw is None:
            problems.append(violation("MissingRequired", f"{path}.item"))
            item = FieldSpec(name="item", type="string")
        else:
            item = _parse_field(raw, f"{path}.item", problems)
    if ftype == "record":
        raw = doc.get("fields")
        if not isinstance(raw, list):
            problems.append(violation("MissingRequired", f"{path}.fields"))
        else:
            subfields = tuple(
                _parse_field(f, f"{path}.fields[{i}]", problems) for i, f in enumerate(raw)
            )
    fmin, fmax = doc.get("min"), doc.get("max")
    for bound, key in ((fmin, "min"), (fmax, "max")):
        if bound is not None and (isinstance(bound, bool) or not isinstance(bound, (int, float))):
            problems.append(violation("TypeViolation", f"{path}.{key}"))
    if (
        isinstance(fmin, (int, float)) and isinstance(fmax, (int, float))
        and not isinstance(fmin, bool) and not isinstance(fmax, bool) and fmin > fmax
    ):
        problems.append(violation("BadBounds", path))
    mini, maxi = doc.get("minItems"), doc.get("maxItems")
    for bound, key in ((mini, "minItems"), (maxi, "maxItems")):
        if bound is not None and (isinstance(bound, bool) or not isinstance(bound, int)):
            problems.append(violation("TypeViolation", f"{path}.{key}"))
    if isinstance(mini, int) and isinstance(maxi, int) and mini > maxi:
        problems.append(violation("BadBounds", path))
    return FieldSpec(
        name=name,
        type=ftype,
        required=bool(doc.get("required", False)),
        values=values,
        item=item,
        fields=subfields,
        min=fmin,
        max=fmax,
        min_items=mini if isinstance(mini, int) else None,
        max_items=maxi if isinstance(maxi, int) else None,
    )


# --- Outcome validation ---------------------------------------------------


def validate_outcome(schema: OutcomeSchema, doc) -> list[dict]:
    """Validate a document tree. Returns every violation with its path, in
    document order; empty list means valid. Never raises on content."""
    out: list[dict] = []
    if not isinstance(doc, dict):
        return [violation("TypeViolation", "")]
    _validate_record(schema.fields, doc, "", out)
    return out


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def _validate_record(specs, doc: dict, prefix: str, out: list[dict]) -> None:
    known = {s.name for s in specs}
    for spec in specs:
        path = _join(prefix, spec.name)
        if spec.name not in doc:
            if spec.required:
                out.append(violation("MissingRequired", path))
            continue
        _validate_value(spec, doc[spec.name], path, out)
    for key in doc:
        if key not in known:
            out.append(violation("UnknownField", _join(prefix, key)))


def _validate_value(spec: FieldSpec, value, path: str, out: list[dict]) -> None:
    t = spec.type
    if t == "string":
        if not isinstance(value, str):
            out.append(violation("TypeViolation", path))
        return
    if t == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            out.append(violation("TypeViolation", path))
            return
        _check_bounds(spec, value, path, out)
        return
    if t == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            out.append(violation("TypeViolation", path))
            return
        _check_bounds(spec, value, path, out)
        return
    if t == "boolean":
        if not isinstance(value, bool):
            out.append(violation("TypeViolation", path))
        return
    if t == "enum":
        if not isinstance(value, str) or value not in spec.values:
            out.append(violation("EnumViolation", path))
        return
    if t == "list":
        if not isinstance(value, list):
            out.append(violation("TypeViolation", path))
            return
        if spec.min_items is not None and len(value) < spec.min_items:
            out.append(violation("LengthViolation", path))
        if spec.max_items is not None and len(value) > spec.max_items:
            out.append(violation("LengthViolation", path))
        for i, member in enumerate(value):
            _validate_value(spec.item, member, f"{path}[{i}]", out)
        return
    if t == "record":
        if not isinstance(value, dict):
            out.append(violation("TypeViolation", path))
            return
        _validate_record(spec.fields, value, path, out)
        return
    out.append(violation("UnknownType", path))


def _check_bounds(spec: FieldSpec, value, path: str, out: list[dict]) -> None:
    if spec.min is not None and value < spec.min:
        out.append(violation("BoundViolation", path))
    elif spec.max is not None and value > spec.max:
        out.append(violation("BoundViolation", path))


# --- Form model -------------------------------------------------------------

_INPUT_KINDS = {
    "string": "text",
    "integer": "integer",
    "number": "number",
    "boolean": "checkbox",
    "enum": "select",
    "list": "list",
    "record": "group",
}


@dataclass(frozen=True)
class Widget:
    label: str
    input_kind: str
    path: str
    required: bool
    constraints: dict = field(default_factory=dict)
    options: tuple[str, ...] = ()
    children: tuple["Widget", ...] = ()

    def to_doc(self) -> dict:
        doc = {
            "constraints": dict(self.constraints),
            "input-kind": self.input_kind,
            "label": self.label,
            "path": self.path,
            "required": self.required,
        }
        if self.options:
            doc["options"] = list(self.options)
        if self.children:
            doc["children"] = [c.to_doc() for c in self.children]
        return doc


@dataclass(frozen=True)
class FormModel:
    schema_name: str
    schema_version: int
    widgets: tuple[Widget, ...]

    def to_doc(self) -> dict:
        return {
            "schema-name": self.schema_name,
            "schema-version": self.schema_version,
            "widgets": [w.to_doc() for w in self.widgets],
        }


def form_model(schema: OutcomeSchema) -> FormModel:
    """Derive the data-entry form: one widget per field, schema order, list
    fields become repeatable groups carrying their item template."""
    return FormModel(
        schema_name=schema.name,
        schema_version=schema.version,
        widgets=tuple(_widget(f, f.name) for f in schema.fields),
    )


def _widget(spec: FieldSpec, path: str) -> Widget:
    constraints: dict = {}
    if spec.min is not None:
        constraints["min"] = spec.min
    if spec.max is not None:
        constraints["max"] = spec.max
    if spec.min_items is not None:
        constraints["minItems"] = spec.min_items
    if spec.max_items is not None:
        constraints["maxItems"] = spec.max_items
    children: tuple[Widget, ...] = ()
    if spec.type == "list":
        children = (_widget(spec.item, f"{path}[]"),)
    elif spec.type == "record":
        children = tuple(_widget(f, f"{path}.{f.name}") for f in spec.fields)
    return Widget(
        label=spec.name,
        input_kind=_INPUT_KINDS[spec.type],
        path=path,
        required=spec.required,
        constraints=constraints,
        options=spec.values,
        children=children,
    )


# --- Defaults (used by tests and the console round-trip) -------------------


def default_value(spec: FieldSpec):
    if spec.type == "string":
        return ""
    if spec.type == "integer":
        value = 0
        if spec.min is not None and value < spec.min:
            value = math.ceil(spec.min)
        if spec.max is not None and value > spec.max:
            value = math.floor(spec.max)
        return int(value)
    if spec.type == "number":
        return float(_clamped(spec, 0.0))
    if spec.type == "boolean":
        return False
    if spec.type == "enum":
        return spec.values[0]
    if spec.type == "list":
        count = spec.min_items or 0
        return [default_value(spec.item) for _ in range(count)]
    if spec.type == "record":
        return {f.name: default_value(f) for f in spec.fields}
    raise SchemaViolation([violation("UnknownType", spec.name)])


def _clamped(spec: FieldSpec, zero):
    value = zero
    if spec.min is not None and value < spec.min:
        value = spec.min
    if spec.max is not None and value > spec.max:
        value = spec.max
    return value


def default_document(schema: OutcomeSchema) -> dict:
    """A document with every field present at its in-constraint default.
    Always validates against ``schema``."""
    return {f.name: default_value(f) for f in schema.fields}
