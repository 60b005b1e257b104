"""ONNX ModelProto serializer over the raw protobuf wire format.

Writes standard ONNX (opset 13): float tensors as raw_data initializers,
static float32 value_info shapes, INT/INTS/FLOAT attributes. No dependency on
the onnx package.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

IR_VERSION = 8
OPSET_VERSION = 13

_FLOAT = 1
_INT64 = 7


def _varint(v: int) -> bytes:
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _tag(field_no: int, wire: int) -> bytes:
    return _varint(field_no << 3 | wire)


def _ld(field_no: int, payload: bytes) -> bytes:
    return _tag(field_no, 2) + _varint(len(payload)) + payload


def _uint(field_no: int, v: int) -> bytes:
    return _tag(field_no, 0) + _varint(v)


def _text(field_no: int, s: str) -> bytes:
    return _ld(field_no, s.encode())


def _fixed32(field_no: int, v: float) -> bytes:
    return _tag(field_no, 5) + struct.pack("<f", v)


def encode_tensor(name: str, arr: np.ndarray) -> bytes:
    if arr.dtype == np.float32:
        dtype = _FLOAT
    elif arr.dtype == np.int64:
        dtype = _INT64
    else:
        raise TypeError(f"initializer {name}: unsupported dtype {arr.dtype}")
    msg = b"".join(_uint(1, d) for d in arr.shape)
    msg += _uint(2, dtype)
    msg += _text(8, name)
    msg += _ld(9, np.ascontiguousarray(arr).tobytes())
    return msg


def encode_value_info(name: str, shape: tuple[int, ...], elem_type: int = _FLOAT) -> bytes:
    dims = b"".join(_ld(1, _uint(1, d)) for d in shape)
    tensor_type = _uint(1, elem_type) + _ld(2, dims)
    return _text(1, name) + _ld(2, _ld(1, tensor_type))


def encode_attribute(name: str, value) -> bytes:
    msg = _text(1, name)
    if isinstance(value, bool):
        raise TypeError("bool attributes are ambiguous; use int")
    if isinstance(value, int):
        msg += _uint(3, value) + _uint(20, 2)          # INT
    elif isinstance(value, float):
        msg += _fixed32(2, value) + _uint(20, 1)       # FLOAT
    elif isinstance(value, (list, tuple)) and all(isinstance(v, int) for v in value):
        msg += _ld(8, b"".join(_varint(v) for v in value)) + _uint(20, 7)  # INTS
    else:
        raise TypeError(f"unsupported attribute {name}={value!r}")
    return msg


@dataclass
class GraphBuilder:
    """Accumulates nodes/initializers in execution order."""

    name: str
    inputs: list = field(default_factory=list)    # (name, shape)
    outputs: list = field(default_factory=list)
    initializers: dict = field(default_factory=dict)
    nodes: list = field(default_factory=list)     # encoded NodeProto bytes
    _counter: int = 0

    def add_input(self, name: str, shape):
        self.inputs.append((name, tuple(shape)))

    def add_output(self, name: str, shape):
        self.outputs.append((name, tuple(shape)))

    def add_initializer(self, name: str, arr: np.ndarray) -> str:
        self.initializers[name] = arr
        return name

    def fresh(self, prefix: str) -> str:
        self._counter += 1
        return f"{prefix}_{self._counter}"

    def node(self, op_type: str, inputs, outputs, **attrs):
        msg = b"".join(_text(1, s) for s in inputs)
        msg += b"".join(_text(2, s) for s in outputs)
        msg += _text(3, f"{op_type.lower()}_{len(self.nodes)}")
        msg += _text(4, op_type)
        msg += b"".join(_ld(5, encode_attribute(k, v)) for k, v in attrs.items())
        self.nodes.append(msg)
        return outputs[0] if len(outputs) == 1 else outputs

    def serialize(self, producer: str = "maskforge-export") -> bytes:
        g = b"".join(_ld(1, n) for n in self.nodes)
        g += _text(2, self.name)
        g += b"".join(_ld(5, encode_tensor(k, v))
                      for k, v in self.initializers.items())
        g += b"".join(_ld(11, encode_value_info(n, s)) for n, s in self.inputs)
        g += b"".join(_ld(12, encode_value_info(n, s)) for n, s in self.outputs)
        m = _uint(1, IR_VERSION)
        m += _text(2, producer)
        m += _text(3, "0.1.0")
        m += _ld(7, g)
        m += _ld(8, _text(1, "") + _uint(2, OPSET_VERSION))
        return m
