import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import ALL_TERMS, EXACT, random_rays, tiny_scene
from refdvgo.dataset import CUBE_HALF, generate_procedural_scene
from refdvgo.grid import Aabb
from refdvgo.loss import LossWeights
from refdvgo.model import SceneModel
from refdvgo.render import render_rays
from refdvgo.trainer import (
    TrainConfig, build_occupancy_mask, coarse_alpha, density_threshold_for_alpha, evaluate_loss, init_fine,
    loss_and_grads, pgs_schedule, refine_bbox, train, train_coarse, train_fine, validate_pgs,
)


@pytest.fixture(scope="module")
def cube32():
    return generate_procedural_scene("lambertian_cube", 0.0, 8, 32, seed=0, n_test=2, supersample=1)


def _tiny_cfg(**kw):
    base = dict(coarse_iters=20, fine_iters=12, coarse_dims=(12, 12, 12), fine_dims_final=(14, 14, 14),
                pgs_count=2, batch_rays=128, mlp_depth=1, mlp_width=8, bottleneck_dim=2, log_every=5,
                fine_alpha_init=0.01)
    base.update(kw)
    return TrainConfig(**base)


def _coarse(dims=(8, 8, 8), fill=-40.0):
    m = SceneModel.create(Aabb.cube(1.0), dims, "coarse", dtype=np.float64)
    m.grids["density"].data[...] = fill
    return m


# PGS schedule

def test_pgs_schedule_shape():
    events = pgs_schedule((64, 64, 64), 10, 1000)
    assert len(events) == 10
    assert events[0][0] == 0 and events[-1][1] == (64, 64, 64)
    its = [i for i, _ in events]
    assert its == sorted(set(its)) and its[-1] <= 500
    counts = [np.prod(d) for _, d in events]
    ratios = np.array(counts[1:]) / np.array(counts[:-1])
    assert np.all(ratios > 1.5) and np.all(ratios < 2.6)


def test_pgs_schedule_single_step():
    assert pgs_schedule((20, 30, 40), 1, 100) == [(0, (20, 30, 40))]


@pytest.mark.parametrize("events", [
    [],
    [(5, (8, 8, 8)), (10, (16, 16, 16))],
    [(0, (16, 16, 16)), (10, (8, 8, 8)), (20, (16, 16, 16))],
    [(0, (8, 8, 8)), (10, (12, 12, 12))],
    [(0, (8, 8, 8)), (20, (12, 12, 12)), (10, (16, 16, 16))],
])
def test_validate_pgs_rejects(events):
    with pytest.raises(ValueError):
        validate_pgs(events, (16, 16, 16))


def test_disable_pgs_is_a_single_event():
    cfg = TrainConfig(fine_dims_final=(32, 32, 32), disable_pgs=True)
    assert cfg.schedule() == [(0, (32, 32, 32))]


def test_disable_pgs_matches_explicit_single_event(cube32):
    a = _tiny_cfg(disable_pgs=True)
    b = _tiny_cfg(pgs_steps=[(0, (14, 14, 14))])
    _, fa, _ = train(cube32, a)
    _, fb, _ = train(cube32, b)
    for name in fa.grids:
        assert fa.grids[name].data.tobytes() == fb.grids[name].data.tobytes()


# bounding box refinement

def test_refine_bbox_octant():
    m = _coarse((9, 9, 9))
    m.grids["density"].data[4:, 4:, 4:] = 40.0
    vox = m.grids["density"].voxel_size
    bb = refine_bbox(m, 1.0)
    np.testing.assert_allclose(bb.min, -vox, atol=1e-12)
    np.testing.assert_allclose(bb.max, [1, 1, 1], atol=1e-12)


def test_refine_bbox_uniform_keeps_box():
    m = _coarse(fill=40.0)
    bb = refine_bbox(m, 1.0)
    np.testing.assert_array_equal(bb.min, m.bbox.min)
    np.testing.assert_array_equal(bb.max, m.bbox.max)


def test_refine_bbox_empty_falls_back():
    m = _coarse()
    bb = refine_bbox(m, 1.0)
    np.testing.assert_array_equal(bb.to_array(), m.bbox.to_array())
    assert bb.min is not m.bbox.min


# occupancy mask

def test_mask_single_hot_node_dilated():
    m = _coarse((9, 9, 9))
    m.grids["density"].data[4, 5, 3] = 40.0
    mask = build_occupancy_mask(m, m.bbox, 1e-3, dims=(8, 8, 8))
    expect = np.zeros((8, 8, 8), bool)
    # the 2x2x2 cells sharing the node, grown by one cell
    expect[2:6, 3:7, 1:5] = True
    np.testing.assert_array_equal(mask.occupied, expect)


def test_mask_empty_when_nothing_is_hot():
    mask = build_occupancy_mask(_coarse(), Aabb.cube(1.0), 1e-3)
    assert not mask.occupied.any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.9))
def test_mask_never_drops_a_hot_point(seed, thr):
    rng = np.random.default_rng(seed)
    m = SceneModel.create(Aabb.cube(1.0), tuple(rng.integers(3, 8, 3)), "coarse", dtype=np.float64)
    m.grids["density"].data[...] = rng.normal(-6, 5, m.grids["density"].data.shape)
    lo = rng.uniform(-1, -0.2, 3)
    bb = Aabb(lo, rng.uniform(lo + 0.3, 1.0))
    dims = tuple(rng.integers(2, 10, 3))
    mask = build_occupancy_mask(m, bb, thr, dims=dims)
    pts = rng.uniform(bb.min, bb.max, (20000, 3))
    hot = pts[coarse_alpha(m, pts) >= thr]
    cell = np.minimum(np.floor((hot - bb.min) / (bb.extent / np.array(dims))).astype(int), np.array(dims) - 1)
    assert mask.occupied[tuple(cell.T)].all()


def test_mask_iou_on_ideal_cube():
    # coarse field that is sharply occupied inside the cube
    m = SceneModel.create(Aabb.cube(1.0), (48, 48, 48), "coarse", dtype=np.float64)
    ax = np.linspace(-1, 1, 48)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    inside = np.maximum(np.maximum(np.abs(x), np.abs(y)), np.abs(z)) <= CUBE_HALF
    m.grids["density"].data[..., 0] = np.where(inside, 20.0, -40.0)
    bb = refine_bbox(m, density_threshold_for_alpha(1e-3, m.step_ratio))
    mask = build_occupancy_mask(m, bb, 1e-3, dims=(64, 64, 64))
    centres = [bb.min[a] + (np.arange(64) + 0.5) * bb.extent[a] / 64 for a in range(3)]
    cx, cy, cz = np.meshgrid(*centres, indexing="ij")
    truth = np.maximum(np.maximum(np.abs(cx), np.abs(cy)), np.abs(cz)) <= CUBE_HALF
    iou = np.sum(truth & mask.occupied) / np.sum(truth | mask.occupied)
    assert iou >= 0.7
    assert mask.occupied[truth].all()


# training stages

def test_zero_coarse_iterations_leave_init(cube32):
    cfg = _tiny_cfg(coarse_iters=0)
    model, hist = train_coarse(cube32, cfg)
    ref = SceneModel.create(cube32.bbox, cfg.coarse_dims, "coarse", alpha_init=cfg.alpha_init, seed=cfg.seed)
    for name in model.grids:
        np.testing.assert_array_equal(model.grids[name].data, ref.grids[name].data)
    assert hist.rows == []


def test_zero_coarse_iterations_skip_bbox_and_mask(cube32):
    cfg = _tiny_cfg(coarse_iters=0, fine_iters=2)
    coarse, _ = train_coarse(cube32, cfg)
    fine, _ = train_fine(cube32, coarse, cfg)
    assert fine.mask is None
    np.testing.assert_array_equal(fine.bbox.to_array(), cube32.bbox.to_array())


def test_empty_coarse_falls_back_to_no_mask(cube32, caplog):
    cfg = _tiny_cfg(fine_iters=1, bbox_alpha_threshold=0.999999, mask_alpha_threshold=0.999999)
    coarse = _coarse(fill=-40.0)
    with caplog.at_level(logging.WARNING):
        fine, _ = train_fine(cube32, coarse, cfg)
    assert fine.mask is None
    assert "without a mask" in caplog.text


def test_fine_alpha_init():
    cfg = _tiny_cfg(alpha_init=1e-6, fine_alpha_init=0.05)
    m = init_fine(Aabb.cube(1.0), cfg, dtype=np.float64)
    # alpha of an empty grid over one marching step
    assert -np.expm1(-m.activated_density()[0, 0, 0] * m.step_ratio) == pytest.approx(0.05, rel=1e-6)
    m2 = init_fine(Aabb.cube(1.0), _tiny_cfg(alpha_init=1e-6, fine_alpha_init=None), dtype=np.float64)
    assert m2.activated_density()[0, 0, 0] < m.activated_density()[0, 0, 0]


def test_training_is_deterministic(cube32):
    cfg = _tiny_cfg(seed=5)
    c1, f1, (_, h1) = train(cube32, cfg)
    c2, f2, (_, h2) = train(cube32, cfg)
    for a, b in ((c1, c2), (f1, f2)):
        for name in a.grids:
            assert a.grids[name].data.tobytes() == b.grids[name].data.tobytes()
    assert [r[2] for r in h1.rows] == [r[2] for r in h2.rows]


def test_pgs_event_resets_optimizer_and_resizes(cube32):
    cfg = _tiny_cfg(pgs_steps=[(0, (8, 8, 8)), (4, (14, 14, 14))])
    _, fine, (_, hist) = train(cube32, cfg)
    assert fine.dims == (14, 14, 14)
    # the reset restarts the per-group step counter at the event
    assert hist.optimizer.groups["density"].t == cfg.fine_iters - 4
    assert hist.optimizer.groups["mlp"].t == cfg.fine_iters


@pytest.fixture(scope="module")
def coarse_cube(cube32):
    cfg = TrainConfig(coarse_iters=600, coarse_dims=(20, 20, 20), batch_rays=512, log_every=600,
                      coarse_weights=LossWeights(w_pp=0.1, w_bg=0.01))
    return train_coarse(cube32, cfg)[0]


def test_coarse_density_concentrates_in_the_cube(coarse_cube):
    dens = coarse_cube.activated_density()
    ax = np.linspace(-1, 1, 20)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    r = np.maximum(np.maximum(np.abs(x), np.abs(y)), np.abs(z))
    inside = dens[r < CUBE_HALF - 0.15].mean()
    outside = dens[r > CUBE_HALF + 0.15].mean()
    assert inside > 10 * outside


def test_coarse_stage_renders_the_cube(coarse_cube, cube32):
    rays, gt = cube32.rays("test")
    pred = render_rays(coarse_cube, rays, keep_cache=False).rgb
    blank = np.mean((1.0 - gt) ** 2)
    assert np.mean((pred - gt) ** 2) < 0.2 * blank


@pytest.mark.parametrize("mode", ["coarse", "fine"])
def test_forward_loss_matches_training_loss(mode):
    model = tiny_scene(mode, seed=4)
    rays = random_rays(12, seed=4)
    gt = np.random.default_rng(4).random((12, 3))
    ref, _, _ = loss_and_grads(model, rays, gt, ALL_TERMS, EXACT, orientation_on_derived=True)
    got = evaluate_loss(model, rays, gt, ALL_TERMS, EXACT, orientation_on_derived=True)
    assert got.total == pytest.approx(ref.total, rel=1e-12)
    assert got == ref
