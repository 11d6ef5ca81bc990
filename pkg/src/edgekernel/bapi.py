"""The neutral effect boundary.

Everything a program learns about the outside world crosses this layer as a
canonically encoded value, so recording, validation, and binding generation
all hang off one choke point.  Three concerns live here:

* plain-value bridge: heap handles <-> plain Python values <-> canonical
  interchange text;
* capability registry: named packages of typed operations with handlers,
  invoked synchronously per request;
* binding emission: OpenAPI / JSON-RPC documents derived from api
  signatures.

Canonical form rules: record keys sorted bytewise, integers as decimal
strings, bytes as base64, no whitespace, NFC-free verbatim strings.  The
encoding is injective up to structural equality.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

from .heap import (
    TAG_BOOL,
    TAG_BYTES,
    TAG_ENUM,
    TAG_INT64,
    TAG_LIST,
    TAG_RECORD,
    TAG_STRING,
    TAG_UNIT,
    Heap,
    ValueHandle,
)
from .lang.ast import TypeExpr


class BoundaryError(Exception):
    pass


class DuplicateRegistration(BoundaryError):
    pass


class CapabilityNotAvailable(BoundaryError):
    pass


class ValidationError(BoundaryError):
    def __init__(self, path: str, rule: str) -> None:
        super().__init__(f"validation failed at {path or '.'}: {rule}")
        self.path = path or "."
        self.rule = rule


@dataclass(frozen=True)
class EnumVal:
    """Plain-Python form of an enum value."""

    enum_name: str
    variant: str
    payload: object = None


# Plain value universe: None | bool | int | str | bytes | tuple (list) |
# dict (record) | EnumVal.  `tuple` rather than `list` keeps plain values
# hashable-ish and visibly immutable.


def to_plain(heap: Heap, h: ValueHandle) -> object:
    tag = heap.tag(h)
    if tag in (TAG_UNIT, TAG_BOOL, TAG_INT64, TAG_STRING, TAG_BYTES):
        return heap.scalar(h)
    if tag == TAG_LIST:
        return tuple(to_plain(heap, c) for c in heap.list_items(h))
    if tag == TAG_RECORD:
        return {k: to_plain(heap, c) for k, c in heap.record_fields(h)}
    name, variant, payload = heap.enum_parts(h)
    return EnumVal(name, variant, to_plain(heap, payload))


def from_plain(heap: Heap, v: object) -> ValueHandle:
    """Inflate a plain value, temp-rooting intermediates so a collection
    triggered mid-construction cannot sweep them."""
    mark = len(heap.temp_roots)
    try:
        return _from_plain(heap, v)
    finally:
        del heap.temp_roots[mark:]


def _from_plain(heap: Heap, v: object) -> ValueHandle:
    if v is None:
        return heap.unit()
    if isinstance(v, bool):
        return heap.boolean(v)
    if isinstance(v, int):
        return heap.int64(v)
    if isinstance(v, str):
        return heap.string(v)
    if isinstance(v, bytes):
        return heap.bytes_(v)
    if isinstance(v, (tuple, list)):
        items = []
        for item in v:
            h = _from_plain(heap, item)
            heap.temp_roots.append(h)
            items.append(h)
        return heap.list_(items)
    if isinstance(v, dict):
        fields = []
        for k, item in v.items():
            if not isinstance(k, str):
                raise BoundaryError(f"record keys must be strings, got {k!r}")
            h = _from_plain(heap, item)
            heap.temp_roots.append(h)
            fields.append((k, h))
        return heap.record(fields)
    if isinstance(v, EnumVal):
        payload = _from_plain(heap, v.payload)
        heap.temp_roots.append(payload)
        return heap.enum(v.enum_name, v.variant, payload)
    raise BoundaryError(f"not a boundary value: {type(v).__name__}")


# ----------------------------------------------------------------------
# Canonical interchange text


def _jsonable(v: object) -> object:
    if v is None:
        return {"k": "unit"}
    if isinstance(v, bool):
        return {"k": "bool", "v": v}
    if isinstance(v, int):
        return {"k": "int", "v": str(v)}
    if isinstance(v, str):
        return {"k": "str", "v": v}
    if isinstance(v, bytes):
        return {"k": "bytes", "v": base64.b64encode(v).decode("ascii")}
    if isinstance(v, (tuple, list)):
        return {"k": "list", "v": [_jsonable(x) for x in v]}
    if isinstance(v, dict):
        return {"k": "rec", "v": {key: _jsonable(val) for key, val in v.items()}}
    if isinstance(v, EnumVal):
        return {"e": v.enum_name, "k": "enum", "t": v.variant, "v": _jsonable(v.payload)}
    raise BoundaryError(f"not a boundary value: {type(v).__name__}")


def encode_canonical(v: object) -> str:
    """Plain value -> canonical interchange text (deterministic JSON)."""
    return json.dumps(_jsonable(v), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def encode_handle(heap: Heap, h: ValueHandle) -> str:
    return encode_canonical(to_plain(heap, h))


def _from_jsonable(obj: object, path: str) -> object:
    if not isinstance(obj, dict) or "k" not in obj:
        raise ValidationError(path, "expected a tagged value object")
    kind = obj["k"]
    if kind == "unit":
        if set(obj) != {"k"}:
            raise ValidationError(path, "unit carries no payload")
        return None
    if kind == "bool":
        v = obj.get("v")
        if not isinstance(v, bool):
            raise ValidationError(path, "bool payload must be true or false")
        return v
    if kind == "int":
        v = obj.get("v")
        if not isinstance(v, str):
            raise ValidationError(path, "int payload must be a decimal string")
        try:
            n = int(v, 10)
        except ValueError:
            raise ValidationError(path, "malformed decimal integer") from None
        if str(n) != v:
            raise ValidationError(path, "non-canonical integer text")
        if not (-(2**63) <= n < 2**63):
            raise ValidationError(path, "integer out of 64-bit range")
        return n
    if kind == "str":
        v = obj.get("v")
        if not isinstance(v, str):
            raise ValidationError(path, "str payload must be a string")
        return v
    if kind == "bytes":
        v = obj.get("v")
        if not isinstance(v, str):
            raise ValidationError(path, "bytes payload must be base64 text")
        try:
            raw = base64.b64decode(v, validate=True)
        except Exception:
            raise ValidationError(path, "malformed base64") from None
        if base64.b64encode(raw).decode("ascii") != v:
            raise ValidationError(path, "non-canonical base64")
        return raw
    if kind == "list":
        v = obj.get("v")
        if not isinstance(v, list):
            raise ValidationError(path, "list payload must be an array")
        return tuple(_from_jsonable(x, f"{path}[{i}]") for i, x in enumerate(v))
    if kind == "rec":
        v = obj.get("v")
        if not isinstance(v, dict):
            raise ValidationError(path, "record payload must be an object")
        return {key: _from_jsonable(val, f"{path}.{key}") for key, val in v.items()}
    if kind == "enum":
        name = obj.get("e")
        variant = obj.get("t")
        if not isinstance(name, str) or not isinstance(variant, str):
            raise ValidationError(path, "enum requires string name and variant")
        return EnumVal(name, variant, _from_jsonable(obj.get("v"), f"{path}.value"))
    raise ValidationError(path, f"unknown value kind {kind!r}")


def decode_canonical(text: str | bytes) -> object:
    """Inverse of encode_canonical; rejects any non-canonical byte stream."""
    raw = text.decode("utf-8") if isinstance(text, bytes) else text
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(".", f"not valid interchange text: {exc.msg}") from None
    value = _from_jsonable(obj, "")
    if encode_canonical(value) != raw:
        raise ValidationError(".", "input is not in canonical form")
    return value


# ----------------------------------------------------------------------
# Schema conformance over the value universe

_SCALAR_TYPES = {
    "Int": int,
    "String": str,
    "Bool": bool,
    "Bytes": bytes,
    "ByteBuffer": bytes,
}


def conforms(v: object, schema: TypeExpr, path: str = "") -> None:
    """Raise ValidationError unless plain value `v` matches `schema`."""
    name = schema.name
    if not name:
        if not isinstance(v, dict):
            raise ValidationError(path, "expected a record")
        expected = dict(schema.record_fields)
        for fname in expected:
            if fname not in v:
                raise ValidationError(f"{path}.{fname}", "missing required field")
        for fname in v:
            if fname not in expected:
                raise ValidationError(f"{path}.{fname}", "unexpected field")
        for fname, ftype in expected.items():
            conforms(v[fname], ftype, f"{path}.{fname}")
        return
    if name == "Any":
        return
    if name == "Unit":
        if v is not None:
            raise ValidationError(path, "expected unit")
        return
    if name in _SCALAR_TYPES:
        pytype = _SCALAR_TYPES[name]
        # bool is an int subtype in Python; keep the kinds disjoint.
        if isinstance(v, bool) and pytype is not bool:
            raise ValidationError(path, f"expected {name}")
        if not isinstance(v, pytype):
            raise ValidationError(path, f"expected {name}")
        return
    if name == "List":
        if not isinstance(v, tuple):
            raise ValidationError(path, "expected a list")
        if schema.args:
            for i, item in enumerate(v):
                conforms(item, schema.args[0], f"{path}[{i}]")
        return
    if name == "APIResult":
        if not isinstance(v, EnumVal) or v.enum_name != "APIResult":
            raise ValidationError(path, "expected an APIResult")
        if v.variant == "Success":
            if schema.args:
                conforms(v.payload, schema.args[0], f"{path}.value")
        elif v.variant == "Error":
            if len(schema.args) > 1:
                conforms(v.payload, schema.args[1], f"{path}.value")
        else:
            raise ValidationError(path, f"unknown APIResult variant {v.variant!r}")
        return
    # Named enum: any variant accepted; payload unconstrained.
    if not isinstance(v, EnumVal) or v.enum_name != name:
        raise ValidationError(path, f"expected enum {name}")


def decode_validate(text: str | bytes, schema: TypeExpr) -> object:
    value = decode_canonical(text)
    conforms(value, schema)
    return value


# ----------------------------------------------------------------------
# Capability registry

ANY = TypeExpr("Any")
APIRESULT_ANY = TypeExpr("APIResult", (ANY, ANY))


@dataclass(frozen=True)
class OperationSig:
    name: str
    params: tuple[TypeExpr, ...]
    response: TypeExpr = APIRESULT_ANY


@dataclass(frozen=True)
class CapabilityPackage:
    name: str
    operations: tuple[OperationSig, ...]

    def operation(self, name: str) -> OperationSig | None:
        for op in self.operations:
            if op.name == name:
                return op
        return None


class Deferred:
    """Sentinel a handler may return when the response will be delivered
    later by an external driver (used by the deployment simulator)."""


DEFERRED = Deferred()


class CapabilityRegistry:
    """Immutable-after-setup map of package name -> (package, handler).

    Handlers take (operation name, plain args tuple) and return a plain
    APIResult-shaped value, raise, or return DEFERRED.
    """

    def __init__(self) -> None:
        self._entries: dict[str, tuple[CapabilityPackage, object]] = {}

    def register(self, pkg: CapabilityPackage, handler) -> None:
        if pkg.name in self._entries:
            raise DuplicateRegistration(f"capability {pkg.name!r} already registered")
        self._entries[pkg.name] = (pkg, handler)

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self._entries))

    def lookup(self, capability: str, operation: str) -> tuple[OperationSig, object]:
        entry = self._entries.get(capability)
        if entry is None:
            raise CapabilityNotAvailable(f"capability {capability!r} not available")
        pkg, handler = entry
        sig = pkg.operation(operation)
        if sig is None:
            raise CapabilityNotAvailable(f"operation {capability}::{operation} not available")
        return sig, handler


def success(payload: object = None) -> EnumVal:
    return EnumVal("APIResult", "Success", payload)


def error(info: object) -> EnumVal:
    return EnumVal("APIResult", "Error", info)


# ----------------------------------------------------------------------
# Stock capability packages

FS_PACKAGE = CapabilityPackage(
    "Fs",
    (
        OperationSig("ReadFile", (TypeExpr("String"),), TypeExpr("APIResult", (TypeExpr("Bytes"), TypeExpr("String")))),
        OperationSig("WriteFile", (TypeExpr("String"), TypeExpr("Bytes")), TypeExpr("APIResult", (TypeExpr("Unit"), TypeExpr("String")))),
    ),
)

CLOCK_PACKAGE = CapabilityPackage(
    "Clock",
    (OperationSig("Now", (), TypeExpr("APIResult", (TypeExpr("Int"), TypeExpr("Unit")))),),
)

KV_PACKAGE = CapabilityPackage(
    "Kv",
    (
        OperationSig("Get", (TypeExpr("String"),), TypeExpr("APIResult", (TypeExpr("String"), TypeExpr("String")))),
        OperationSig("Put", (TypeExpr("String"), TypeExpr("String")), TypeExpr("APIResult", (TypeExpr("Unit"), TypeExpr("String")))),
    ),
)


def fs_handler(files: dict[str, bytes]):
    """In-memory file store; WriteFile mutates the passed dict."""

    def handle(op: str, args: tuple) -> EnumVal:
        if op == "ReadFile":
            (path,) = args
            data = files.get(path)
            if data is None:
                return error(f"no such file: {path}")
            return success(data)
        (path, data) = args
        files[path] = data
        return success(None)

    return handle


def clock_handler():
    """Logical clock: strictly increasing tick counter, no host time."""
    state = {"tick": 0}

    def handle(op: str, args: tuple) -> EnumVal:
        state["tick"] += 1
        return success(state["tick"])

    return handle


def kv_handler(store: dict[str, str] | None = None):
    data: dict[str, str] = {} if store is None else store

    def handle(op: str, args: tuple) -> EnumVal:
        if op == "Get":
            (key,) = args
            if key not in data:
                return error(f"missing key: {key}")
            return success(data[key])
        (key, value) = args
        data[key] = value
        return success(None)

    return handle


# ----------------------------------------------------------------------
# Binding emission

_SCALAR_BINDING_SCHEMAS = {
    "Int": {
        "type": "object",
        "properties": {"k": {"const": "int"}, "v": {"type": "string", "pattern": "^-?[0-9]+$"}},
        "required": ["k", "v"],
        "additionalProperties": False,
    },
    "String": {
        "type": "object",
        "properties": {"k": {"const": "str"}, "v": {"type": "string"}},
        "required": ["k", "v"],
        "additionalProperties": False,
    },
    "Bool": {
        "type": "object",
        "properties": {"k": {"const": "bool"}, "v": {"type": "boolean"}},
        "required": ["k", "v"],
        "additionalProperties": False,
    },
    "Unit": {
        "type": "object",
        "properties": {"k": {"const": "unit"}},
        "required": ["k"],
        "additionalProperties": False,
    },
}
_SCALAR_BINDING_SCHEMAS["Bytes"] = {
    "type": "object",
    "properties": {"k": {"const": "bytes"}, "v": {"type": "string", "contentEncoding": "base64"}},
    "required": ["k", "v"],
    "additionalProperties": False,
}
_SCALAR_BINDING_SCHEMAS["ByteBuffer"] = _SCALAR_BINDING_SCHEMAS["Bytes"]


def binding_schema(t: TypeExpr) -> dict:
    """JSON-schema description of the canonical encoding of values of `t`."""
    if not t.name:
        return {
            "type": "object",
            "properties": {
                "k": {"const": "rec"},
                "v": {
                    "type": "object",
                    "properties": {n: binding_schema(ft) for n, ft in t.record_fields},
                    "required": [n for n, _ in t.record_fields],
                    "additionalProperties": False,
                },
            },
            "required": ["k", "v"],
            "additionalProperties": False,
        }
    if t.name in _SCALAR_BINDING_SCHEMAS:
        return dict(_SCALAR_BINDING_SCHEMAS[t.name])
    if t.name == "List":
        item = binding_schema(t.args[0]) if t.args else {}
        return {
            "type": "object",
            "properties": {"k": {"const": "list"}, "v": {"type": "array", "items": item}},
            "required": ["k", "v"],
            "additionalProperties": False,
        }
    if t.name == "APIResult":
        success_schema = binding_schema(t.args[0]) if t.args else {}
        error_schema = binding_schema(t.args[1]) if len(t.args) > 1 else {}
        return {
            "oneOf": [
                _enum_wrapper("APIResult", "Success", success_schema),
                _enum_wrapper("APIResult", "Error", error_schema),
            ]
        }
    # Named enum or unknown user type: any canonical value object.
    return {"type": "object", "required": ["k"]}


def _enum_wrapper(enum_name: str, variant: str, payload_schema: dict) -> dict:
    return {
        "type": "object",
        "properties": {
            "k": {"const": "enum"},
            "e": {"const": enum_name},
            "t": {"const": variant},
            "v": payload_schema,
        },
        "required": ["k", "e", "t", "v"],
        "additionalProperties": False,
    }


def _request_schema(decl) -> dict:
    return {
        "type": "object",
        "properties": {name: binding_schema(ptype) for name, ptype in decl.params},
        "required": [name for name, _ in decl.params],
        "additionalProperties": False,
    }


def emit_bindings(program, flavor: str) -> dict:
    """Interchange document with one operation per api declaration."""
    if flavor == "openapi":
        paths = {}
        for decl in program.apis:
            paths[f"/api/{decl.name}"] = {
                "post": {
                    "operationId": decl.name,
                    "requestBody": {
                        "required": True,
                        "content": {"application/json": {"schema": _request_schema(decl)}},
                    },
                    "responses": {
                        "200": {
                            "description": "api result",
                            "content": {
                                "application/json": {"schema": binding_schema(decl.return_type)}
                            },
                        }
                    },
                }
            }
        return {
            "openapi": "3.0.3",
            "info": {"title": "edgekernel api", "version": "1.0.0"},
            "paths": paths,
        }
    if flavor == "jsonrpc":
        methods = []
        for decl in program.apis:
            methods.append(
                {
                    "name": decl.name,
                    "params": [
                        {"name": pname, "schema": binding_schema(ptype)}
                        for pname, ptype in decl.params
                    ],
                    "result": {"name": "result", "schema": binding_schema(decl.return_type)},
                }
            )
        return {"jsonrpc": "2.0", "methods": methods}
    raise ValueError(f"unknown binding flavor {flavor!r}")


def emit_bindings_text(program, flavor: str) -> str:
    return json.dumps(emit_bindings(program, flavor), sort_keys=True, indent=2, ensure_ascii=False) + "\n"
