import json

import numpy as np
import pytest
from PIL import Image

from refdvgo.dataset import (
    CAMERA_RADIUS, DatasetError, Frame, SceneDataset, focal_from_angle, generate_procedural_scene, load_nerf_synthetic,
    look_at, render_analytic, write_nerf_synthetic,
)
from refdvgo.render import Camera


def test_focal_from_angle():
    assert focal_from_angle(800, np.pi / 2) == pytest.approx(400.0, rel=1e-12)


def _write_scene(root, images, poses, angle=0.8, split_names=("train", "val", "test")):
    for split in split_names:
        (root / split).mkdir(parents=True, exist_ok=True)
        frames = []
        for i, (img, pose) in enumerate(zip(images, poses)):
            Image.fromarray(img, mode="RGBA").save(root / split / f"r_{i}.png")
            frames.append({"file_path": f"./{split}/r_{i}", "transform_matrix": pose.tolist()})
        (root / f"transforms_{split}.json").write_text(json.dumps({"camera_angle_x": angle, "frames": frames}))


def test_transparent_pixel_gets_background(tmp_path):
    img = np.zeros((4, 4, 4), np.uint8)
    img[0, 0] = [255, 0, 0, 255]
    _write_scene(tmp_path, [img], [np.eye(4)])
    white = load_nerf_synthetic(tmp_path, background="white").targets("train")[0]
    black = load_nerf_synthetic(tmp_path, background="black").targets("train")[0]
    np.testing.assert_array_equal(white[1, 1], [1, 1, 1])
    np.testing.assert_array_equal(black[1, 1], [0, 0, 0])
    np.testing.assert_array_equal(white[0, 0], [1, 0, 0])


def test_round_trip_two_frames(tmp_path):
    rng = np.random.default_rng(0)
    poses = [look_at(v) for v in rng.normal(size=(2, 3)) * 3]
    frames = [Frame(rng.random((6, 8, 4)), p, focal_from_angle(8, 0.7)) for p in poses]
    ds = SceneDataset({"train": frames, "val": frames[:1], "test": frames[1:]})
    write_nerf_synthetic(ds, tmp_path)
    back = load_nerf_synthetic(tmp_path)
    for a, b in zip(ds.frames("train"), back.frames("train")):
        np.testing.assert_allclose(b.c2w, a.c2w, atol=1e-12)
        assert b.focal == pytest.approx(a.focal, rel=1e-12)
        np.testing.assert_allclose(b.image, np.round(a.image * 255) / 255, atol=1e-12)
    np.testing.assert_allclose(back.bbox.to_array(), ds.bbox.to_array())


def test_missing_transforms_file(tmp_path):
    with pytest.raises(DatasetError, match="transforms_train"):
        load_nerf_synthetic(tmp_path)


def test_malformed_json(tmp_path):
    _write_scene(tmp_path, [np.zeros((2, 2, 4), np.uint8)], [np.eye(4)])
    (tmp_path / "transforms_val.json").write_text("{not json")
    with pytest.raises(DatasetError, match="malformed"):
        load_nerf_synthetic(tmp_path)


def test_resolution_mismatch(tmp_path):
    _write_scene(tmp_path, [np.zeros((2, 2, 4), np.uint8), np.zeros((3, 2, 4), np.uint8)], [np.eye(4)] * 2)
    with pytest.raises(DatasetError, match="resolution"):
        load_nerf_synthetic(tmp_path)


def test_missing_image(tmp_path):
    _write_scene(tmp_path, [np.zeros((2, 2, 4), np.uint8)], [np.eye(4)])
    (tmp_path / "test" / "r_0.png").unlink()
    with pytest.raises(DatasetError, match="missing image"):
        load_nerf_synthetic(tmp_path)


def test_frame_validation():
    with pytest.raises(DatasetError):
        Frame(np.zeros((2, 2, 4)), np.diag([2.0, 1, 1, 1]), 1.0)
    with pytest.raises(DatasetError):
        Frame(np.full((2, 2, 4), 1.5), np.eye(4), 1.0)


def test_reflectivity_zero_is_diffuse():
    cam = Camera(32, 32, focal_from_angle(32, 0.7), look_at([2.0, -2.0, 1.5]))
    a = render_analytic("mirror_sphere", cam, 0.0, supersample=2)
    b = render_analytic("mirror_sphere", cam, 1e-300, supersample=2)
    np.testing.assert_array_equal(a, b)


def test_mirror_symmetric_cameras():
    # the cube and light are symmetric under x -> -x, so cameras at (+-a, 0, c)
    # see left-right mirrored images
    f = focal_from_angle(33, 0.7)
    pos = np.array([2.0, 0.0, 1.7])
    a = render_analytic("lambertian_cube", Camera(33, 33, f, look_at(pos)), supersample=2)
    b = render_analytic("lambertian_cube", Camera(33, 33, f, look_at(pos * [-1, 1, 1])), supersample=2)
    np.testing.assert_allclose(b, a[:, ::-1], atol=1e-12)


def test_seed_determinism():
    a = generate_procedural_scene("mirror_sphere", 0.5, 3, 32, seed=4, n_test=1, supersample=1)
    b = generate_procedural_scene("mirror_sphere", 0.5, 3, 32, seed=4, n_test=1, supersample=1)
    for fa, fb in zip(a.frames("train") + a.frames("test"), b.frames("train") + b.frames("test")):
        assert fa.image.tobytes() == fb.image.tobytes()
        assert fa.c2w.tobytes() == fb.c2w.tobytes()


def test_resolution_consistency():
    pose = look_at([CAMERA_RADIUS * 0.6, -CAMERA_RADIUS * 0.6, CAMERA_RADIUS * 0.5])
    for kind in ("lambertian_cube", "mirror_sphere"):
        lo = render_analytic(kind, Camera(40, 40, focal_from_angle(40, 0.7), pose), 0.8)
        hi = render_analytic(kind, Camera(80, 80, focal_from_angle(80, 0.7), pose), 0.8)
        down = hi.reshape(40, 2, 40, 2, 4).mean(axis=(1, 3))
        rgb_lo = lo[..., :3] * lo[..., 3:] + (1 - lo[..., 3:])
        rgb_down = down[..., :3] * down[..., 3:] + (1 - down[..., 3:])
        assert np.mean(np.abs(rgb_lo - rgb_down)) < 2 / 255


def test_cameras_look_at_origin():
    ds = generate_procedural_scene("lambertian_cube", 0.0, 4, 32, seed=1, n_test=1, supersample=1)
    for fr in ds.frames("train"):
        centre = fr.c2w[:3, 3]
        forward = -fr.c2w[:3, 2]
        np.testing.assert_allclose(forward, -centre / np.linalg.norm(centre), atol=1e-12)
        assert np.linalg.norm(centre) == pytest.approx(CAMERA_RADIUS)


@pytest.mark.parametrize("kw", [dict(kind="torus"), dict(n_views=1), dict(resolution=16), dict(reflectivity=1.5)])
def test_procedural_errors(kw):
    args = dict(kind="mirror_sphere", reflectivity=0.5, n_views=3, resolution=32)
    args.update(kw)
    with pytest.raises(DatasetError):
        generate_procedural_scene(**args)


def test_mixed_resolution_split_rejected():
    f1 = Frame(np.zeros((2, 2, 4)), np.eye(4), 1.0)
    f2 = Frame(np.zeros((3, 2, 4)), np.eye(4), 1.0)
    with pytest.raises(DatasetError):
        SceneDataset({"train": [f1, f2]})
