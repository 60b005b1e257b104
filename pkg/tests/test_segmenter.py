import json

import numpy as np
import pytest
from oracles import iou_ref

from maskforge.prompts import ExcavationConfig, PromptSet, excavate, gaussian_mask
from maskforge.rasters import Box, Point, dilate, disk, erode
from maskforge.segmenter import (
    Capabilities,
    ManifestError,
    MockSegmenter,
    ModelManifest,
    MultiMaskOutput,
    NoPromptError,
    OracleScene,
    load_manifest,
    load_scene,
    save_scene,
)


def scene_two_disks(seed=0):
    h = w = 48
    s1 = disk(9, 14, 14, h, w)
    s2 = disk(7, 32, 34, h, w)
    return OracleScene(w, h, ((1, s1), (2, s2)), feature_dim=8, seed=seed)


def point_prompts(x, y):
    return PromptSet(positive=Point(x, y, True), enabled=frozenset({"point"}))


# ---------------------------------------------------------------------------
# Scene and embedding
# ---------------------------------------------------------------------------

def test_scene_rejects_duplicate_ids():
    m = disk(2, 4, 4, 8, 8)
    with pytest.raises(ValueError):
        OracleScene(8, 8, ((1, m), (1, m.copy())), feature_dim=8)


def test_scene_rejects_small_feature_dim():
    m = disk(2, 4, 4, 8, 8)
    with pytest.raises(ValueError):
        OracleScene(8, 8, ((1, m), (2, m.copy())), feature_dim=2)


def test_scene_json_round_trip(tmp_path):
    scene = scene_two_disks(seed=5)
    path = tmp_path / "scene.json"
    save_scene(scene, path)
    back = load_scene(path)
    assert back.seed == 5 and back.width == scene.width
    for (sid_a, m_a), (sid_b, m_b) in zip(scene.shapes, back.shapes):
        assert sid_a == sid_b
        np.testing.assert_array_equal(m_a, m_b)


def test_scene_json_rect_and_disk_shapes(tmp_path):
    payload = {"width": 10, "height": 8, "feature_dim": 8, "seed": 1,
               "shapes": [{"id": 1, "rect": [1, 1, 4, 5]},
                          {"id": 2, "disk": [7, 4, 2]}]}
    path = tmp_path / "s.json"
    path.write_text(json.dumps(payload))
    scene = load_scene(path)
    assert scene.shape_mask(1)[2, 2] and not scene.shape_mask(1)[6, 6]
    assert scene.shape_mask(2)[4, 7]


def test_embed_single_shape_rank_one():
    h = w = 16
    scene = OracleScene(w, h, ((1, np.ones((h, w), dtype=bool)),), feature_dim=4)
    emb = MockSegmenter(scene).embed()
    flat = emb.data.reshape(-1, 4)
    assert np.allclose(flat, flat[0])


def test_embed_two_shapes_orthogonal_clusters():
    scene = scene_two_disks()
    emb = MockSegmenter(scene).embed()
    cells = emb.data.reshape(-1, scene.feature_dim)
    norms = np.linalg.norm(cells, axis=1)
    assert np.allclose(norms, 1.0)
    cos = cells @ cells.T
    # every pairwise cosine is either ~1 (same cluster) or ~0 (different)
    assert np.all((np.abs(cos) < 1e-9) | (np.abs(cos - 1) < 1e-9))
    uniq = np.unique(np.round(cells, 9), axis=0)
    assert len(uniq) == 3  # background + two shapes
    for i in range(len(uniq)):
        for j in range(i + 1, len(uniq)):
            assert abs(float(uniq[i] @ uniq[j])) < 0.5


def test_embed_rejects_wrong_image_dims():
    scene = scene_two_disks()
    with pytest.raises(ValueError):
        MockSegmenter(scene).embed(np.zeros((10, 10, 3), dtype=np.uint8))


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def test_predict_point_inside_shape_noise_free():
    scene = scene_two_disks()
    backend = MockSegmenter(scene, noise_amplitude=0.0)
    emb = backend.embed()
    out = backend.predict(emb, point_prompts(14, 14))
    s1 = scene.shape_mask(1)
    np.testing.assert_array_equal(out.masks[0], s1)
    assert out.iou_pred[0] == 1.0
    assert out.iou_pred[1] == pytest.approx(round(iou_ref(dilate(s1, 2), s1) * 1000) / 1000)
    assert out.iou_pred[2] == pytest.approx(round(iou_ref(erode(s1, 2), s1) * 1000) / 1000)


def test_predict_box_rule_selects_target():
    scene = scene_two_disks()
    backend = MockSegmenter(scene, noise_amplitude=0.0)
    emb = backend.embed()
    prompts = PromptSet(positive=Point(0, 0, True), box=Box(26, 24, 42, 40),
                        enabled=frozenset({"box"}))
    out = backend.predict(emb, prompts)
    np.testing.assert_array_equal(out.masks[0], scene.shape_mask(2))


def test_predict_mask_rule_selects_by_support():
    scene = scene_two_disks()
    backend = MockSegmenter(scene, noise_amplitude=0.0)
    emb = backend.embed()
    soft = gaussian_mask(scene.shape_mask(2), ExcavationConfig())
    prompts = PromptSet(positive=Point(0, 0, True), soft_mask=soft,
                        enabled=frozenset({"mask"}))
    out = backend.predict(emb, prompts)
    np.testing.assert_array_equal(out.masks[0], scene.shape_mask(2))


def test_predict_point_priority_beats_box():
    scene = scene_two_disks()
    backend = MockSegmenter(scene, noise_amplitude=0.0)
    emb = backend.embed()
    prompts = PromptSet(positive=Point(14, 14, True), box=Box(26, 24, 42, 40),
                        enabled=frozenset({"point", "box"}))
    out = backend.predict(emb, prompts)
    np.testing.assert_array_equal(out.masks[0], scene.shape_mask(1))


def test_predict_no_target_returns_empty():
    scene = scene_two_disks()
    backend = MockSegmenter(scene, noise_amplitude=0.0)
    emb = backend.embed()
    out = backend.predict(emb, point_prompts(0, 0))  # background point
    assert not out.masks.any()
    np.testing.assert_array_equal(out.iou_pred, [0.0, 0.0, 0.0])


def test_predict_defected_coarse_improves():
    scene = scene_two_disks(seed=3)
    backend = MockSegmenter(scene, noise_amplitude=0.0)
    emb = backend.embed()
    s1 = scene.shape_mask(1)
    coarse = erode(s1, 1) | disk(2, 4, 40, 48, 48)  # boundary loss + FP blob
    prompts = excavate(coarse, emb, enabled={"point", "box", "mask"})
    out = backend.predict(emb, prompts)
    best = int(np.argmax(out.iou_pred))
    assert iou_ref(out.masks[best], s1) >= iou_ref(coarse, s1)


def test_predict_noise_free_argmax_is_exact_candidate():
    scene = scene_two_disks(seed=9)
    backend = MockSegmenter(scene, noise_amplitude=0.0)
    emb = backend.embed()
    for x, y in [(14, 14), (32, 34), (10, 16)]:
        out = backend.predict(emb, point_prompts(x, y))
        if out.masks.any():
            assert int(np.argmax(out.iou_pred)) == 0


def test_predict_deterministic_across_runs():
    scene = scene_two_disks(seed=11)
    emb = MockSegmenter(scene).embed()
    prompts = point_prompts(14, 14)
    a = MockSegmenter(scene).predict(emb, prompts)
    b = MockSegmenter(scene).predict(emb, prompts)
    np.testing.assert_array_equal(a.iou_pred, b.iou_pred)
    np.testing.assert_array_equal(a.masks, b.masks)
    np.testing.assert_array_equal(a.hidden, b.hidden)


def test_predict_noise_depends_on_prompts():
    scene = scene_two_disks(seed=13)
    backend = MockSegmenter(scene, noise_amplitude=0.05)
    emb = backend.embed()
    a = backend.predict(emb, point_prompts(14, 14))
    b = backend.predict(emb, point_prompts(13, 14))
    assert not np.array_equal(a.iou_pred, b.iou_pred)


def test_predict_requires_prompt():
    scene = scene_two_disks()
    backend = MockSegmenter(scene)
    with pytest.raises(ValueError):
        PromptSet(positive=Point(1, 1, True), enabled=frozenset({"bogus"}))
    with pytest.raises(NoPromptError):
        backend.predict(backend.embed(),
                        PromptSet(positive=Point(1, 1, True), enabled=frozenset()))


def test_multimask_invariant_enforced():
    masks = np.zeros((3, 4, 4), dtype=bool)
    masks[0, 1, 1] = True
    logits = np.full((3, 4, 4), -1.0)  # contradicts masks[0]
    with pytest.raises(ValueError):
        MultiMaskOutput(masks=masks, logits=logits,
                        iou_pred=np.zeros(3), hidden=np.zeros((3, 8)))


def test_capabilities():
    scene = scene_two_disks()
    caps = MockSegmenter(scene, embed_scale=4, hidden_dim=16).capabilities
    assert caps == Capabilities(candidate_count=3, hidden_dim=16,
                                prompt_grid=(48, 48), embedding_grid=(12, 12, 8))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def manifest_dict():
    return {
        "format_version": 1,
        "input_size": 128,
        "pad_rule": "top_left",
        "normalization": {"scale": 255.0, "mean": [0.5, 0.5, 0.5],
                          "std": [0.5, 0.5, 0.5]},
        "embedding_grid": {"h": 8, "w": 8, "c": 32},
        "prompt_grid": {"w": 32, "h": 32},
        "logit_grid": {"h": 16, "w": 16},
        "coordinate_transform": "longest_side_scale_top_left_pad",
        "hidden_dim": 16,
        "candidate_count": 3,
        "graphs": {"encoder": "encoder.onnx", "decoder": "decoder.onnx"},
    }


def test_manifest_round_trip(tmp_path):
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(manifest_dict()))
    m = load_manifest(p)
    assert m.input_size == 128
    assert m.embedding_grid == (8, 8, 32)
    assert m.to_json_dict() == manifest_dict()


def test_manifest_version_mismatch(tmp_path):
    d = manifest_dict()
    d["format_version"] = 99
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(d))
    with pytest.raises(ManifestError):
        load_manifest(p)


def test_manifest_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope.json")


def test_manifest_bad_dims(tmp_path):
    d = manifest_dict()
    d["embedding_grid"]["h"] = 0
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(d))
    with pytest.raises(ManifestError):
        load_manifest(p)
