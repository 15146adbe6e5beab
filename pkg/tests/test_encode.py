import logging
from dataclasses import replace

import numpy as np
import pytest

from radcam import geom
from radcam.encode import (
    CHANNELS, EmbeddingSet, GridSpec, build_pseudo_image, embedding_channels, extract_embeddings,
    save_contact_sheet,
)
from radcam.errors import ShapeMismatch
from radcam.geom import BBox2D, RadarPin
from radcam.scenesim import SensorNoiseConfig, SimConfig, generate_dataset, render_rgb

GRID = GridSpec()


def empty(frame):
    return replace(frame, pins=(), boxes=(), labels_pos=frozenset(), labels_uncertain=frozenset(),
                   truth_pos=frozenset(), objects=())


def pin_at_grid_center(frame):
    """A pin whose projection lands in the middle grid cell."""
    K, tf = frame.intrinsics, frame.extrinsics
    u, v = GRID.to_image(GRID.grid_h // 2, GRID.grid_w // 2)
    z_cam = 40.0
    X, Y = (u - K.cx) * z_cam / K.fx, (v - K.cy) * z_cam / K.fy
    # invert the radar -> camera relabel with the 0.5 m assumed height
    p = tf.inverse().apply(np.array([X, Y, z_cam]))
    pin = RadarPin(7, 0.8, float(p[0]), float(p[1]), 1.0, 0.0, frame.t_camera)
    return replace(empty(frame), pins=(pin,), t_radar=frame.t_camera), (p[2], pin)


def test_channel_contract():
    assert len(CHANNELS) == 14
    assert CHANNELS[6] == "pin_heatmap" and CHANNELS[10] == "box_heatmap" and CHANNELS[11:] == (
        "rgb_r", "rgb_g", "rgb_b")


def test_empty_frame(noisy_frames):
    f = empty(noisy_frames[0])
    ps = build_pseudo_image(f)
    assert ps.tensor.shape == (14, 96, 192)
    assert not ps.tensor[:11].any()
    assert np.allclose(ps.tensor[11:], render_rgb(f, 192, 96).astype(np.float32))
    assert not ps.anchors


def test_single_pin_at_center(noisy_frames):
    f, (height, pin) = pin_at_grid_center(noisy_frames[0])
    ps = build_pseudo_image(f, assumed_height=height)
    r, c = ps.pin_anchors[7]
    assert (r, c) == (48, 96)
    heat = ps.tensor[6]
    assert heat[r, c] == 1.0 and heat.max() == 1.0
    assert np.count_nonzero(heat) == 25
    assert set(zip(*np.nonzero(ps.tensor[1]))) == {(r, c)}
    assert ps.tensor[1, r, c] == np.float32(0.8)
    assert ps.tensor[0, r, c] == np.float32(7 / 256)
    assert ps.tensor[3, r, c] == pytest.approx(0.40, abs=1e-6)  # camera Z / 100


def test_box_attributes(noisy_frames):
    f = empty(noisy_frames[0])
    f = replace(f, boxes=(BBox2D(300, 914.0, 474.0, 182.8, 94.8, "bus"),))
    ps = build_pseudo_image(f)
    r, c = ps.box_anchors[300]
    assert (r, c) == GRID.to_grid(914.0, 474.0)
    assert ps.tensor[7:10, r, c] == pytest.approx([0.1, 0.1, 3 / 9], abs=1e-6)
    assert np.count_nonzero(ps.tensor[7]) == 1


def test_pins_outside_grid_are_dropped(noisy_frames):
    f = empty(noisy_frames[0])
    f = replace(f, pins=(RadarPin(1, 0.9, 10.0, 30.0, 0.0, 0.0, f.t_camera),), t_radar=f.t_camera)
    ps = build_pseudo_image(f)
    assert ps.pin_anchors == {} and ps.dropped == [("pin", 1, "outside grid")]


def test_collisions_move_then_drop(noisy_frames, caplog):
    f = empty(noisy_frames[0])
    boxes = tuple(BBox2D(i, 914.0, 600.0, 50.0, 50.0) for i in range(10))
    with caplog.at_level(logging.INFO, logger="radcam.encode"):
        ps = build_pseudo_image(replace(f, boxes=boxes))
    cells = list(ps.box_anchors.values())
    assert len(cells) == 9 and len(set(cells)) == 9
    r0, c0 = ps.box_anchors[0]
    assert all(abs(r - r0) <= 1 and abs(c - c0) <= 1 for r, c in cells)
    assert ps.dropped == [("box", 9, "collision")]
    assert any("box 9 dropped" in rec.getMessage() and f"frame {f.frame_id}" in rec.getMessage()
               for rec in caplog.records)


def test_shared_anchors_keep_pins_and_boxes_apart(noisy_frames):
    for f in noisy_frames[:20]:
        ps = build_pseudo_image(f, shared_anchors=True)
        assert not set(ps.pin_anchors.values()) & set(ps.box_anchors.values())


def test_anchors_unique_and_in_bounds(noisy_frames):
    for f in noisy_frames:
        ps = build_pseudo_image(f)
        for anchors in (ps.pin_anchors, ps.box_anchors):
            assert len(set(anchors.values())) == len(anchors)
            assert all(0 <= r < 96 and 0 <= c < 192 for r, c in anchors.values())
        assert set(ps.box_anchors) | {d[1] for d in ps.dropped if d[0] == "box"} == {b.id for b in f.boxes}


def test_pin_anchor_sits_near_box_bottom():
    cfg = SimConfig(n_frames=150, noise=SensorNoiseConfig.noiseless())
    far = 0
    for f in generate_dataset(cfg, 4):
        ps = build_pseudo_image(f)
        for pid, bid in f.truth_pos:
            if pid not in ps.pin_anchors or bid not in ps.box_anchors:
                continue
            b = f.box(bid)
            top, bottom = GRID.to_grid(b.center_x, b.y_min)[0], GRID.to_grid(b.center_x, b.y_max)[0]
            row = ps.pin_anchors[pid][0]
            assert top <= row <= bottom
            if geom.to_camera(f.pin(pid), f.extrinsics, 0.5).Z > 35.0:
                assert bottom - row <= 3
                far += 1
    assert far > 100


def test_extract_constant_planes(noisy_frames):
    ps = build_pseudo_image(noisy_frames[1])
    D = 8
    fm = np.broadcast_to(np.arange(D, dtype=float)[:, None, None], (D, 96, 192))
    emb = extract_embeddings(fm, ps)
    assert emb.dim == 4
    assert all(list(v) == [0, 1, 2, 3] for v in emb.pin_emb.values())
    assert all(list(v) == [4, 5, 6, 7] for v in emb.box_emb.values())
    shared = extract_embeddings(fm, ps, shared=True)
    assert shared.dim == 8


def test_extract_zero_map_and_distinct_anchors(noisy_frames):
    ps = build_pseudo_image(noisy_frames[2])
    zero = extract_embeddings(np.zeros((4, 96, 192)), ps)
    assert all(not v.any() for v in list(zero.pin_emb.values()) + list(zero.box_emb.values()))
    rows, cols = np.mgrid[0:96, 0:192]
    coord = np.stack([rows, cols, rows, cols]).astype(float)
    emb = extract_embeddings(coord, ps)
    vecs = [tuple(v) for v in emb.box_emb.values()]
    assert len(set(vecs)) == len(vecs)


def test_extract_shape_checks(noisy_frames):
    ps = build_pseudo_image(noisy_frames[0])
    with pytest.raises(ShapeMismatch):
        extract_embeddings(np.zeros((4, 48, 192)), ps)
    with pytest.raises(ShapeMismatch):
        embedding_channels(5)
    with pytest.raises(ShapeMismatch):
        EmbeddingSet({1: np.zeros(3)}, {}, dim=4)


def test_grid_divisibility():
    GridSpec().validate(16)
    with pytest.raises(ShapeMismatch):
        GridSpec(100, 96).validate(16)


def test_pseudo_image_is_deterministic(noisy_frames):
    a = build_pseudo_image(noisy_frames[3])
    b = build_pseudo_image(noisy_frames[3])
    assert np.array_equal(a.tensor, b.tensor) and a.anchors == b.anchors


def test_contact_sheet(tmp_path, noisy_frames):
    from PIL import Image

    path = tmp_path / "sheet.png"
    save_contact_sheet(build_pseudo_image(noisy_frames[0], GridSpec(64, 32)), path)
    assert Image.open(path).size == (7 * 66, 2 * 34)
