"""Build the encoder/decoder ONNX graphs from a model's weights.

Each builder mirrors the corresponding torch forward pass node for node, so
fixture outputs produced natively agree with any compliant ONNX runtime.
"""

from __future__ import annotations

import numpy as np

from .model import (
    CANDIDATES,
    EMBED_CHANNELS,
    EMBED_GRID,
    HIDDEN_DIM,
    INPUT_SIZE,
    LOGIT_GRID,
    PROMPT_GRID,
    PromptableModel,
)
from .onnx_writer import GraphBuilder


def _w(params, key) -> np.ndarray:
    return params[key].detach().cpu().numpy().astype(np.float32)


def _conv(b: GraphBuilder, x: str, params, prefix: str, out: str,
          strides=(1, 1), pads=(0, 0, 0, 0)) -> str:
    w = b.add_initializer(f"{prefix}.weight", _w(params, f"{prefix}.weight"))
    bias = b.add_initializer(f"{prefix}.bias", _w(params, f"{prefix}.bias"))
    kh, kw = b.initializers[w].shape[2:]
    return b.node("Conv", [x, w, bias], [out], strides=list(strides),
                  pads=list(pads), kernel_shape=[kh, kw])


def _linear(b: GraphBuilder, x: str, params, prefix: str, out: str) -> str:
    w = b.add_initializer(f"{prefix}.weight", _w(params, f"{prefix}.weight"))
    bias = b.add_initializer(f"{prefix}.bias", _w(params, f"{prefix}.bias"))
    return b.node("Gemm", [x, w, bias], [out], transB=1)


def _shape(b: GraphBuilder, name: str, dims) -> str:
    return b.add_initializer(name, np.asarray(dims, dtype=np.int64))


def build_encoder_graph(model: PromptableModel) -> bytes:
    params = dict(model.encoder.state_dict())
    b = GraphBuilder("encoder")
    b.add_input("image", (1, 3, INPUT_SIZE, INPUT_SIZE))
    x = _conv(b, "image", params, "conv1", "c1", strides=(2, 2), pads=(1, 1, 1, 1))
    x = b.node("Relu", [x], ["r1"])
    x = _conv(b, x, params, "conv2", "c2", strides=(2, 2), pads=(1, 1, 1, 1))
    x = b.node("Relu", [x], ["r2"])
    x = _conv(b, x, params, "conv3", "c3", strides=(2, 2), pads=(1, 1, 1, 1))
    x = b.node("Relu", [x], ["r3"])
    _conv(b, x, params, "conv4", "embedding", strides=(2, 2), pads=(1, 1, 1, 1))
    b.add_output("embedding", (1, EMBED_CHANNELS, EMBED_GRID, EMBED_GRID))
    return b.serialize()


def build_decoder_graph(model: PromptableModel) -> bytes:
    params = dict(model.decoder.state_dict())
    b = GraphBuilder("decoder")
    b.add_input("embedding", (1, EMBED_CHANNELS, EMBED_GRID, EMBED_GRID))
    b.add_input("point_coords", (1, 2, 2))
    b.add_input("point_labels", (1, 2))
    b.add_input("box_coords", (1, 4))
    b.add_input("box_flag", (1, 1))
    b.add_input("mask_prompt", (1, 1, PROMPT_GRID, PROMPT_GRID))
    b.add_input("mask_flag", (1, 1))

    inv = b.add_initializer("inv_input_size",
                            np.asarray([1.0 / INPUT_SIZE], dtype=np.float32))
    pc_flat = b.node("Reshape", ["point_coords", _shape(b, "pc_shape", [1, 4])],
                     ["pc_flat"])
    pc_norm = b.node("Mul", [pc_flat, inv], ["pc_norm"])
    box_norm = b.node("Mul", ["box_coords", inv], ["box_norm"])
    sparse_in = b.node("Concat",
                       [pc_norm, "point_labels", box_norm, "box_flag", "mask_flag"],
                       ["sparse_in"], axis=1)
    s1 = _linear(b, sparse_in, params, "sparse1", "s1")
    s1r = b.node("Relu", [s1], ["s1r"])
    sparse = _linear(b, s1r, params, "sparse2", "sparse")

    m1 = _conv(b, "mask_prompt", params, "mask1", "m1", strides=(2, 2),
               pads=(1, 1, 1, 1))
    m1r = b.node("Relu", [m1], ["m1r"])
    m2 = _conv(b, m1r, params, "mask2", "m2", strides=(2, 2), pads=(1, 1, 1, 1))
    dense = b.node("Mul", [m2, "mask_flag"], ["dense"])

    sparse_sp = b.node("Reshape",
                       [sparse, _shape(b, "sp_shape", [1, EMBED_CHANNELS, 1, 1])],
                       ["sparse_sp"])
    fused0 = b.node("Add", ["embedding", dense], ["fused0"])
    fused = b.node("Add", [fused0, sparse_sp], ["fused"])

    t1 = _conv(b, fused, params, "trunk1", "t1", pads=(1, 1, 1, 1))
    t1r = b.node("Relu", [t1], ["t1r"])
    t2 = _conv(b, t1r, params, "trunk2", "t2", pads=(1, 1, 1, 1))
    trunk = b.node("Relu", [t2], ["trunk"])

    up_w = b.add_initializer("up.weight", _w(params, "up.weight"))
    up_b = b.add_initializer("up.bias", _w(params, "up.bias"))
    up = b.node("ConvTranspose", [trunk, up_w, up_b], ["up"],
                strides=[2, 2], kernel_shape=[2, 2], pads=[0, 0, 0, 0])
    upr = b.node("Relu", [up], ["upr"])
    _conv(b, upr, params, "logit_head", "logits")
    b.add_output("logits", (1, CANDIDATES, LOGIT_GRID, LOGIT_GRID))

    pooled4 = b.node("GlobalAveragePool", [trunk], ["pooled4"])
    pooled = b.node("Reshape",
                    [pooled4, _shape(b, "pool_shape", [1, EMBED_CHANNELS])],
                    ["pooled"])
    q_in = b.node("Concat", [pooled, sparse], ["q_in"], axis=1)
    q1 = _linear(b, q_in, params, "quality1", "q1")
    q1r = b.node("Relu", [q1], ["q1r"])
    q2 = _linear(b, q1r, params, "quality2", "q2")
    q2r = b.node("Relu", [q2], ["q2r"])
    b.node("Reshape", [q2r, _shape(b, "h_shape", [1, CANDIDATES, HIDDEN_DIM])],
           ["hidden"])
    b.add_output("hidden", (1, CANDIDATES, HIDDEN_DIM))

    score_w = b.add_initializer("score_w", _w(params, "score_w"))
    score_b = b.add_initializer("score_b", _w(params, "score_b"))
    mm = b.node("MatMul", ["hidden", score_w], ["score_mm"])
    sb = b.node("Add", [mm, score_b], ["score_biased"])
    flat = b.node("Reshape", [sb, _shape(b, "score_shape", [1, CANDIDATES])],
                  ["score_flat"])
    b.node("Sigmoid", [flat], ["iou_pred"])
    b.add_output("iou_pred", (1, CANDIDATES))
    return b.serialize()
