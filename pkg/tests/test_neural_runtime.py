"""Reader + executor tests against a test-local ONNX writer and loop oracles."""

import numpy as np
import onnx_testkit as tk
import pytest

from maskforge.neural import (
    GraphLoadError,
    OnnxGraph,
    _Node,
    _conv2d,
    _conv_transpose2d,
    load_graph,
    run_graph,
)


# ---------------------------------------------------------------------------
# Op oracles (direct nested loops)
# ---------------------------------------------------------------------------

def conv2d_loops(x, w, b, strides, pads):
    n, c, h, wid = x.shape
    m, _, kh, kw = w.shape
    sh, sw = strides
    pt, pl, pb, pr = pads
    oh = (h + pt + pb - kh) // sh + 1
    ow = (wid + pl + pr - kw) // sw + 1
    out = np.zeros((n, m, oh, ow), dtype=np.float64)
    for oy in range(oh):
        for ox in range(ow):
            for ky in range(kh):
                for kx in range(kw):
                    iy = oy * sh + ky - pt
                    ix = ox * sw + kx - pl
                    if 0 <= iy < h and 0 <= ix < wid:
                        out[:, :, oy, ox] += np.einsum(
                            "nc,mc->nm", x[:, :, iy, ix], w[:, :, ky, kx])
    if b is not None:
        out += b[None, :, None, None]
    return out


def conv_transpose2d_loops(x, w, b, strides, pads):
    n, c, h, wid = x.shape
    _, m, kh, kw = w.shape
    sh, sw = strides
    pt, pl, pb, pr = pads
    full_h = (h - 1) * sh + kh
    full_w = (wid - 1) * sw + kw
    out = np.zeros((n, m, full_h, full_w), dtype=np.float64)
    for iy in range(h):
        for ix in range(wid):
            for ky in range(kh):
                for kx in range(kw):
                    out[:, :, iy * sh + ky, ix * sw + kx] += np.einsum(
                        "nc,cm->nm", x[:, :, iy, ix], w[:, :, ky, kx])
    out = out[:, :, pt:full_h - pb, pl:full_w - pr]
    if b is not None:
        out += b[None, :, None, None]
    return out


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(6):
        c, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        kh = kw = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 2))
        x = rng.normal(size=(1, c, 9, 10)).astype(np.float32)
        w = rng.normal(size=(m, c, kh, kw)).astype(np.float32)
        b = rng.normal(size=m).astype(np.float32)
        got = _conv2d(x, w, b, [s, s], [p, p, p, p])
        expect = conv2d_loops(x, w, b, [s, s], [p, p, p, p])
        np.testing.assert_allclose(got, expect, atol=1e-4)


def test_conv_transpose_matches_loop_oracle():
    rng = np.random.default_rng(2)
    for _ in range(6):
        c, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        x = rng.normal(size=(1, c, 5, 6)).astype(np.float32)
        w = rng.normal(size=(c, m, k, k)).astype(np.float32)
        b = rng.normal(size=m).astype(np.float32)
        got = _conv_transpose2d(x, w, b, [s, s], [0, 0, 0, 0])
        expect = conv_transpose2d_loops(x, w, b, [s, s], [0, 0, 0, 0])
        np.testing.assert_allclose(got, expect, atol=1e-4)


# ---------------------------------------------------------------------------
# Wire-format round trip through the independent test writer
# ---------------------------------------------------------------------------

def small_model_bytes():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=4).astype(np.float32)
    g = rng.normal(size=(4, 4)).astype(np.float32)
    nodes = [
        tk.node("Conv", ["x", "w", "b"], ["conv_out"],
                strides=[2, 2], pads=[1, 1, 1, 1], kernel_shape=[3, 3]),
        tk.node("Relu", ["conv_out"], ["relu_out"]),
        tk.node("GlobalAveragePool", ["relu_out"], ["pool"]),
        tk.node("Reshape", ["pool", "flat_shape"], ["flat"]),
        tk.node("Gemm", ["flat", "g"], ["gemm_out"], transB=1),
        tk.node("Sigmoid", ["gemm_out"], ["y"]),
    ]
    init = {"w": w, "b": b, "g": g,
            "flat_shape": np.array([1, 4], dtype=np.int64)}
    data = tk.model(nodes, [("x", (1, 2, 8, 8))], [("y", (1, 4))], init)
    return data, (w, b, g)


def reference_forward(x, w, b, g):
    h = conv2d_loops(x, w, b, [2, 2], [1, 1, 1, 1])
    h = np.maximum(h, 0)
    pooled = h.mean(axis=(2, 3)).reshape(1, 4)
    z = pooled @ g.T
    return 1.0 / (1.0 + np.exp(-z))


def test_load_and_run_round_trip(tmp_path):
    data, (w, b, g) = small_model_bytes()
    p = tmp_path / "m.onnx"
    p.write_bytes(data)
    graph = load_graph(p)
    assert graph.inputs == {"x": (1, 2, 8, 8)}
    assert graph.outputs == {"y": (1, 4)}
    assert set(graph.initializers) == {"w", "b", "g", "flat_shape"}
    np.testing.assert_array_equal(graph.initializers["w"], w)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 2, 8, 8)).astype(np.float32)
    got = run_graph(graph, {"x": x})["y"]
    np.testing.assert_allclose(got, reference_forward(x, w, b, g), atol=1e-4)


def test_load_graph_missing_file(tmp_path):
    with pytest.raises(GraphLoadError, match="not found"):
        load_graph(tmp_path / "absent.onnx")


def test_load_graph_truncated(tmp_path):
    data, _ = small_model_bytes()
    p = tmp_path / "broken.onnx"
    p.write_bytes(data[: len(data) // 3])
    with pytest.raises(GraphLoadError):
        load_graph(p)


def test_run_graph_rejects_bad_input_shape(tmp_path):
    data, _ = small_model_bytes()
    p = tmp_path / "m.onnx"
    p.write_bytes(data)
    graph = load_graph(p)
    with pytest.raises(Exception):
        run_graph(graph, {"x": np.zeros((1, 2, 4, 4), dtype=np.float32)})


def test_run_graph_missing_feed(tmp_path):
    data, _ = small_model_bytes()
    p = tmp_path / "m.onnx"
    p.write_bytes(data)
    graph = load_graph(p)
    with pytest.raises(ValueError, match="missing graph input"):
        run_graph(graph, {})


def test_unsupported_op_reported():
    graph = OnnxGraph(inputs={"x": (1,)}, outputs={"y": (1,)},
                      initializers={},
                      nodes=[_Node("Softmax", ["x"], ["y"], {})])
    with pytest.raises(GraphLoadError, match="unsupported op"):
        run_graph(graph, {"x": np.zeros(1, dtype=np.float32)})


def test_elementwise_and_concat_ops():
    nodes = [
        _Node("Add", ["a", "b"], ["s"], {}),
        _Node("Mul", ["s", "c"], ["m"], {}),
        _Node("Concat", ["m", "a"], ["y"], {"axis": 1}),
    ]
    graph = OnnxGraph(inputs={"a": (1, 2), "b": (1, 2), "c": (1, 1)},
                      outputs={"y": (1, 4)}, initializers={}, nodes=nodes)
    out = run_graph(graph, {"a": np.array([[1.0, 2.0]], dtype=np.float32),
                            "b": np.array([[3.0, 4.0]], dtype=np.float32),
                            "c": np.array([[2.0]], dtype=np.float32)})
    np.testing.assert_allclose(out["y"], [[8.0, 12.0, 1.0, 2.0]])


def test_matmul_broadcast():
    nodes = [_Node("MatMul", ["h", "w"], ["y"], {})]
    graph = OnnxGraph(inputs={"h": (1, 3, 4), "w": (4, 1)},
                      outputs={"y": (1, 3, 1)}, initializers={}, nodes=nodes)
    rng = np.random.default_rng(5)
    h = rng.normal(size=(1, 3, 4)).astype(np.float32)
    w = rng.normal(size=(4, 1)).astype(np.float32)
    out = run_graph(graph, {"h": h, "w": w})
    np.testing.assert_allclose(out["y"], h @ w, atol=1e-6)
