"""Neural backend: run an exported promptable model from ONNX graphs.

The runtime is self-contained: a minimal reader for the ONNX protobuf wire
format plus a numpy executor for the op subset the exported graphs use
(Conv, ConvTranspose, Relu, Add, Mul, Concat, Gemm, MatMul,
GlobalAveragePool, Reshape, Sigmoid). Graphs are standard ONNX files; nodes
are executed in file order, which the exporter guarantees is topological.

Prompt conventions (shared with the export component via the manifest):
pixel coordinates are scaled by input_size / max(src_w, src_h) into the
top-left-padded square input frame; the second point slot is padding with
label -1 when no negative click exists; absent box/mask prompts are zeroed
with their flag input set to 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .prompts import ImageEmbedding, PromptSet
from .rasters import resize_bilinear
from .segmenter import (
    CANDIDATE_COUNT,
    Capabilities,
    ManifestError,
    ModelManifest,
    MultiMaskOutput,
    NoPromptError,
    load_manifest,
)


class GraphLoadError(RuntimeError):
    """Graph file missing or not parseable as ONNX."""


class BackendDimError(ValueError):
    """Manifest dimensions disagree with the actual graph I/O."""


# ---------------------------------------------------------------------------
# Protobuf wire-format reader (only what ONNX ModelProto needs)
# ---------------------------------------------------------------------------

def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7


def _fields(data: bytes):
    """Yield (field_number, wire_type, payload) triples of one message."""
    pos = 0
    n = len(data)
    while pos < n:
        tag, pos = _read_varint(data, pos)
        field_no, wire = tag >> 3, tag & 7
        if wire == 0:
            val, pos = _read_varint(data, pos)
            yield field_no, wire, val
        elif wire in (1, 5):
            size = 8 if wire == 1 else 4
            if pos + size > n:
                raise GraphLoadError("truncated fixed-width field")
            yield field_no, wire, data[pos:pos + size]
            pos += size
        elif wire == 2:
            ln, pos = _read_varint(data, pos)
            if pos + ln > n:
                raise GraphLoadError("truncated length-delimited field")
            yield field_no, wire, data[pos:pos + ln]
            pos += ln
        else:
            raise GraphLoadError(f"unsupported protobuf wire type {wire}")


def _packed_varints(data: bytes) -> list[int]:
    out = []
    pos = 0
    while pos < len(data):
        v, pos = _read_varint(data, pos)
        out.append(v)
    return out


_TENSOR_DTYPES = {1: np.float32, 6: np.int32, 7: np.int64, 9: np.bool_, 11: np.float64}


def _parse_tensor(data: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    dtype = 1
    raw = b""
    floats: list[float] = []
    int64s: list[int] = []
    name = ""
    for field_no, wire, val in _fields(data):
        if field_no == 1:
            dims.extend(_packed_varints(val) if wire == 2 else [val])
        elif field_no == 2:
            dtype = val
        elif field_no == 4:
            floats.extend(struct.unpack(f"<{len(val) // 4}f", val))
        elif field_no == 7:
            int64s.extend(_packed_varints(val) if wire == 2 else [val])
        elif field_no == 8:
            name = val.decode()
        elif field_no == 9:
            raw = val
    if dtype not in _TENSOR_DTYPES:
        raise GraphLoadError(f"initializer {name!r}: unsupported data type {dtype}")
    np_dtype = _TENSOR_DTYPES[dtype]
    if raw:
        arr = np.frombuffer(raw, dtype=np_dtype)
    elif floats:
        arr = np.asarray(floats, dtype=np_dtype)
    else:
        arr = np.asarray(int64s, dtype=np_dtype)
    return name, arr.reshape(dims if dims else ())


def _parse_value_info(data: bytes) -> tuple[str, tuple[int, ...]]:
    name = ""
    shape: tuple[int, ...] = ()
    for field_no, _, val in _fields(data):
        if field_no == 1:
            name = val.decode()
        elif field_no == 2:  # TypeProto
            for f2, _, v2 in _fields(val):
                if f2 == 1:  # tensor_type
                    for f3, _, v3 in _fields(v2):
                        if f3 == 2:  # shape
                            dims = []
                            for f4, _, v4 in _fields(v3):
                                if f4 == 1:  # dim
                                    dv = 0
                                    for f5, _, v5 in _fields(v4):
                                        if f5 == 1:
                                            dv = v5
                                    dims.append(int(dv))
                            shape = tuple(dims)
    return name, shape


def _parse_attribute(data: bytes) -> tuple[str, object]:
    name = ""
    a_type = 0
    f = i = None
    s = None
    ints: list[int] = []
    floats: list[float] = []
    for field_no, wire, val in _fields(data):
        if field_no == 1:
            name = val.decode()
        elif field_no == 2:
            f = struct.unpack("<f", val)[0]
        elif field_no == 3:
            i = val
        elif field_no == 4:
            s = val
        elif field_no == 7:
            floats.extend(struct.unpack(f"<{len(val) // 4}f", val) if wire == 2
                          else [struct.unpack("<f", val)[0]])
        elif field_no == 8:
            ints.extend(_packed_varints(val) if wire == 2 else [val])
        elif field_no == 20:
            a_type = val
    if a_type == 1:
        return name, f
    if a_type == 2:
        return name, int(i)
    if a_type == 3:
        return name, s.decode() if s is not None else ""
    if a_type == 6:
        return name, list(floats)
    if a_type == 7:
        return name, [int(v) for v in ints]
    raise GraphLoadError(f"attribute {name!r}: unsupported attribute type {a_type}")


@dataclass
class _Node:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    attrs: dict


@dataclass
class OnnxGraph:
    inputs: dict[str, tuple[int, ...]]
    outputs: dict[str, tuple[int, ...]]
    initializers: dict[str, np.ndarray]
    nodes: list[_Node]


def _parse_node(data: bytes) -> _Node:
    inputs: list[str] = []
    outputs: list[str] = []
    op_type = ""
    attrs: dict = {}
    for field_no, _, val in _fields(data):
        if field_no == 1:
            inputs.append(val.decode())
        elif field_no == 2:
            outputs.append(val.decode())
        elif field_no == 4:
            op_type = val.decode()
        elif field_no == 5:
            k, v = _parse_attribute(val)
            attrs[k] = v
    return _Node(op_type, inputs, outputs, attrs)


def load_graph(path: str | Path) -> OnnxGraph:
    p = Path(path)
    if not p.is_file():
        raise GraphLoadError(f"graph file not found: {p}")
    data = p.read_bytes()
    graph_msg = None
    try:
        for field_no, _, val in _fields(data):
            if field_no == 7:  # ModelProto.graph
                graph_msg = val
        if graph_msg is None:
            raise GraphLoadError(f"no graph message in {p}")
        inputs: dict[str, tuple[int, ...]] = {}
        outputs: dict[str, tuple[int, ...]] = {}
        initializers: dict[str, np.ndarray] = {}
        nodes: list[_Node] = []
        for field_no, _, val in _fields(graph_msg):
            if field_no == 1:
                nodes.append(_parse_node(val))
            elif field_no == 5:
                name, arr = _parse_tensor(val)
                initializers[name] = arr
            elif field_no == 11:
                name, shape = _parse_value_info(val)
                inputs[name] = shape
            elif field_no == 12:
                name, shape = _parse_value_info(val)
                outputs[name] = shape
    except GraphLoadError as e:
        if str(p) in str(e):
            raise
        raise GraphLoadError(f"corrupt graph file {p}: {e}") from e
    except (IndexError, struct.error, UnicodeDecodeError) as e:
        raise GraphLoadError(f"corrupt graph file {p}: {e}") from e
    return OnnxGraph(inputs, outputs, initializers, nodes)


# ---------------------------------------------------------------------------
# Numpy executor
# ---------------------------------------------------------------------------

def _conv2d(x, w, b, strides, pads):
    n, c, h, wid = x.shape
    m, _, kh, kw = w.shape
    sh, sw = strides
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    oh = (h + pt + pb - kh) // sh + 1
    ow = (wid + pl + pr - kw) // sw + 1
    out = np.zeros((n, m, oh, ow), dtype=np.float32)
    for ky in range(kh):
        for kx in range(kw):
            patch = xp[:, :, ky:ky + oh * sh:sh, kx:kx + ow * sw:sw]
            out += np.einsum("nchw,mc->nmhw", patch, w[:, :, ky, kx],
                             dtype=np.float32)
    if b is not None:
        out += b[None, :, None, None]
    return out


def _conv_transpose2d(x, w, b, strides, pads):
    n, c, h, wid = x.shape
    _, m, kh, kw = w.shape
    sh, sw = strides
    pt, pl, pb, pr = pads
    full_h = (h - 1) * sh + kh
    full_w = (wid - 1) * sw + kw
    out = np.zeros((n, m, full_h, full_w), dtype=np.float32)
    for ky in range(kh):
        for kx in range(kw):
            contrib = np.einsum("nchw,cm->nmhw", x, w[:, :, ky, kx],
                                dtype=np.float32)
            out[:, :, ky:ky + (h - 1) * sh + 1:sh,
                kx:kx + (wid - 1) * sw + 1:sw] += contrib
    out = out[:, :, pt:full_h - pb, pl:full_w - pr]
    if b is not None:
        out = out + b[None, :, None, None]
    return out


def _gemm(a, b, c, attrs):
    alpha = attrs.get("alpha", 1.0)
    beta = attrs.get("beta", 1.0)
    if attrs.get("transA", 0):
        a = a.T
    if attrs.get("transB", 0):
        b = b.T
    out = alpha * (a @ b)
    if c is not None:
        out = out + beta * c
    return out.astype(np.float32)


def _reshape(x, shape):
    dims = []
    for i, d in enumerate(shape.tolist()):
        if d == 0:
            dims.append(x.shape[i])
        else:
            dims.append(int(d))
    return x.reshape(dims)


def run_graph(graph: OnnxGraph, feeds: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Execute nodes in file order; returns the graph's declared outputs."""
    env: dict[str, np.ndarray] = dict(graph.initializers)
    for name, shape in graph.inputs.items():
        if name not in feeds:
            raise ValueError(f"missing graph input {name!r}")
        x = np.ascontiguousarray(feeds[name], dtype=np.float32)
        if shape and tuple(x.shape) != shape:
            raise BackendDimError(f"input {name!r}: got {x.shape}, graph wants {shape}")
        env[name] = x
    for node in graph.nodes:
        ins = [env[k] for k in node.inputs if k]
        op = node.op_type
        if op == "Conv":
            b = ins[2] if len(ins) > 2 else None
            out = _conv2d(ins[0], ins[1], b, node.attrs.get("strides", [1, 1]),
                          node.attrs.get("pads", [0, 0, 0, 0]))
        elif op == "ConvTranspose":
            b = ins[2] if len(ins) > 2 else None
            out = _conv_transpose2d(ins[0], ins[1], b,
                                    node.attrs.get("strides", [1, 1]),
                                    node.attrs.get("pads", [0, 0, 0, 0]))
        elif op == "Relu":
            out = np.maximum(ins[0], 0)
        elif op == "Sigmoid":
            out = (1.0 / (1.0 + np.exp(-ins[0].astype(np.float64)))).astype(np.float32)
        elif op == "Add":
            out = ins[0] + ins[1]
        elif op == "Mul":
            out = ins[0] * ins[1]
        elif op == "Concat":
            out = np.concatenate(ins, axis=node.attrs["axis"])
        elif op == "Gemm":
            out = _gemm(ins[0], ins[1], ins[2] if len(ins) > 2 else None, node.attrs)
        elif op == "MatMul":
            out = (ins[0] @ ins[1]).astype(np.float32)
        elif op == "GlobalAveragePool":
            out = ins[0].mean(axis=(2, 3), keepdims=True, dtype=np.float32)
        elif op == "Reshape":
            out = _reshape(ins[0], ins[1])
        else:
            raise GraphLoadError(f"unsupported op {op}")
        for out_name in node.outputs:
            env[out_name] = out
    return {name: env[name] for name in graph.outputs}


# ---------------------------------------------------------------------------
# Backend
# ---------------------------------------------------------------------------

class NeuralSegmenter:
    """Prompted segmenter over exported encoder/decoder ONNX graphs."""

    def __init__(self, manifest: ModelManifest, encoder: OnnxGraph, decoder: OnnxGraph):
        self.manifest = manifest
        self._encoder = encoder
        self._decoder = decoder
        self._validate_dims()

    def _validate_dims(self):
        m = self.manifest
        gh, gw, c = m.embedding_grid
        enc_out = next(iter(self._encoder.outputs.values()))
        if enc_out != (1, c, gh, gw):
            raise BackendDimError(
                f"encoder output {enc_out} != manifest embedding grid (1, {c}, {gh}, {gw})")
        dec = self._decoder.outputs
        if "hidden" not in dec or dec["hidden"] != (1, CANDIDATE_COUNT, m.hidden_dim):
            raise BackendDimError(
                f"decoder hidden output {dec.get('hidden')} != "
                f"(1, {CANDIDATE_COUNT}, {m.hidden_dim})")
        lh, lw = m.logit_grid
        if dec.get("logits") != (1, CANDIDATE_COUNT, lh, lw):
            raise BackendDimError(
                f"decoder logits output {dec.get('logits')} != (1, {CANDIDATE_COUNT}, {lh}, {lw})")
        pw, ph = m.prompt_grid
        dec_in = self._decoder.inputs
        if dec_in.get("mask_prompt") != (1, 1, ph, pw):
            raise BackendDimError(
                f"decoder mask_prompt input {dec_in.get('mask_prompt')} != (1, 1, {ph}, {pw})")

    @property
    def capabilities(self) -> Capabilities:
        m = self.manifest
        return Capabilities(candidate_count=m.candidate_count,
                            hidden_dim=m.hidden_dim,
                            prompt_grid=m.prompt_grid,
                            embedding_grid=m.embedding_grid)

    # -- preprocessing ------------------------------------------------------

    def _scale_for(self, src_w: int, src_h: int) -> float:
        return self.manifest.input_size / max(src_w, src_h)

    def preprocess(self, image: np.ndarray) -> np.ndarray:
        """uint8 (H, W, 3) -> normalized (1, 3, S, S) in the padded frame."""
        m = self.manifest
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
        src_h, src_w = image.shape[:2]
        scale = self._scale_for(src_w, src_h)
        out_h = max(1, int(round(src_h * scale)))
        out_w = max(1, int(round(src_w * scale)))
        x = np.zeros((m.input_size, m.input_size, 3), dtype=np.float32)
        for ch in range(3):
            x[:out_h, :out_w, ch] = resize_bilinear(
                image[:, :, ch].astype(np.float64), out_h, out_w)
        x = x / m.norm_scale
        x = (x - np.asarray(m.norm_mean, dtype=np.float32)) \
            / np.asarray(m.norm_std, dtype=np.float32)
        return np.ascontiguousarray(x.transpose(2, 0, 1)[None], dtype=np.float32)

    def embed(self, image: np.ndarray | None = None) -> ImageEmbedding:
        if image is None:
            raise ValueError("neural backend needs image pixels to embed")
        src_h, src_w = image.shape[:2]
        feeds = {"image": self.preprocess(image)}
        out = run_graph(self._encoder, feeds)
        emb = next(iter(out.values()))[0]           # (c, gh, gw)
        data = np.ascontiguousarray(emb.transpose(1, 2, 0), dtype=np.float64)
        return ImageEmbedding(data, src_w, src_h)

    # -- prompt encoding ----------------------------------------------------

    def decoder_feeds(self, emb: ImageEmbedding, prompts: PromptSet) -> dict[str, np.ndarray]:
        m = self.manifest
        scale = self._scale_for(emb.src_w, emb.src_h)
        coords = np.zeros((1, 2, 2), dtype=np.float32)
        labels = np.full((1, 2), -1.0, dtype=np.float32)
        if "point" in prompts.enabled:
            coords[0, 0] = (prompts.positive.x * scale, prompts.positive.y * scale)
            labels[0, 0] = 1.0
            if prompts.negative is not None:
                coords[0, 1] = (prompts.negative.x * scale, prompts.negative.y * scale)
                labels[0, 1] = 0.0
        box = np.zeros((1, 4), dtype=np.float32)
        box_flag = np.zeros((1, 1), dtype=np.float32)
        if "box" in prompts.enabled and prompts.box is not None:
            box[0] = np.asarray(prompts.box.to_list(), dtype=np.float32) * scale
            box_flag[0, 0] = 1.0
        pw, ph = m.prompt_grid
        mask = np.zeros((1, 1, ph, pw), dtype=np.float32)
        mask_flag = np.zeros((1, 1), dtype=np.float32)
        if "mask" in prompts.enabled and prompts.soft_mask is not None:
            mask[0, 0] = self._soft_mask_to_padded_grid(prompts.soft_mask.data,
                                                        emb.src_w, emb.src_h)
            mask_flag[0, 0] = 1.0
        if not (labels[0, 0] == 1.0 or box_flag[0, 0] or mask_flag[0, 0]):
            raise NoPromptError("predict needs at least one enabled prompt")
        feeds = {"embedding": None, "point_coords": coords, "point_labels": labels,
                 "box_coords": box, "box_flag": box_flag,
                 "mask_prompt": mask, "mask_flag": mask_flag}
        gh, gw, c = m.embedding_grid
        feeds["embedding"] = np.ascontiguousarray(
            emb.data.transpose(2, 0, 1)[None], dtype=np.float32)
        return feeds

    def _soft_mask_to_padded_grid(self, soft: np.ndarray, src_w: int, src_h: int) -> np.ndarray:
        """Remap a source-extent prompt grid into the padded input frame."""
        m = self.manifest
        pw, ph = m.prompt_grid
        scale = self._scale_for(src_w, src_h)
        sh, sw = soft.shape
        out = np.zeros((ph, pw), dtype=np.float32)
        gy = np.arange(ph)
        gx = np.arange(pw)
        # padded-grid cell centers -> input px -> source px
        src_y = ((gy + 0.5) * m.input_size / ph) / scale
        src_x = ((gx + 0.5) * m.input_size / pw) / scale
        valid_y = src_y < src_h
        valid_x = src_x < src_w
        iy = np.minimum((src_y[valid_y] * sh / src_h).astype(int), sh - 1)
        ix = np.minimum((src_x[valid_x] * sw / src_w).astype(int), sw - 1)
        out[np.ix_(valid_y, valid_x)] = soft[np.ix_(iy, ix)]
        return out

    def run_decoder_raw(self, feeds: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Replay the decoder graph as-is (parity fixtures use this)."""
        return run_graph(self._decoder, feeds)

    def run_encoder_raw(self, feeds: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return run_graph(self._encoder, feeds)

    # -- prediction ----------------------------------------------------------

    def predict(self, emb: ImageEmbedding, prompts: PromptSet) -> MultiMaskOutput:
        if not prompts.enabled:
            raise NoPromptError("predict needs at least one enabled prompt")
        m = self.manifest
        out = run_graph(self._decoder, self.decoder_feeds(emb, prompts))
        full_logits = out["logits"][0]            # (K, lh, lw) over padded frame
        iou_pred = np.clip(out["iou_pred"][0].astype(np.float64), 0.0, 1.0)
        hidden = out["hidden"][0].astype(np.float64)
        scale = self._scale_for(emb.src_w, emb.src_h)
        lh, lw = m.logit_grid
        # crop the logit grid to the valid (unpadded) region of the frame
        vh = max(1, int(round(lh * emb.src_h * scale / m.input_size)))
        vw = max(1, int(round(lw * emb.src_w * scale / m.input_size)))
        logits = np.ascontiguousarray(full_logits[:, :vh, :vw].astype(np.float64))
        masks = np.stack([resize_bilinear(logits[i], emb.src_h, emb.src_w) > 0
                          for i in range(logits.shape[0])])
        return MultiMaskOutput(masks=masks, logits=logits, iou_pred=iou_pred,
                               hidden=hidden)


def load_neural(manifest_path: str | Path) -> NeuralSegmenter:
    """Load manifest + graphs, failing fast on version or dimension mismatch."""
    manifest = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    encoder = load_graph(base / manifest.encoder_graph)
    decoder = load_graph(base / manifest.decoder_graph)
    return NeuralSegmenter(manifest, encoder, decoder)
