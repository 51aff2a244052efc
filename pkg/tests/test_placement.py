"""Anchor-confidence placement net: loss semantics, decoding, training."""
import math

import numpy as np
import pytest

from placekit import dataio, nncore, placement
from placekit.config import RunConfig
from placekit.errors import DataError, InputError
from placekit.geometry import Box, build_anchor_grid, diou
from placekit.nncore import autograd as ag
from placekit.nncore.autograd import Var

LN2 = math.log(2.0)


def two_anchor_setup():
    """One-row, two-column grid; gt covers exactly the left anchor."""
    grid = build_anchor_grid([(1, 2)])
    gt = Box(0.0, 0.0, 0.5, 1.0)
    conf = Var(np.array([[0.5, 0.5]]))
    # left anchor decodes to the concentric quarter-area box -> DIoU 0.25
    reg = Var(np.array([[[0.0, 0.0, math.log(0.25), math.log(0.5)],
                         [0.0, 0.0, 0.0, 0.0]]]))
    return grid, gt, conf, reg


def test_loss_hand_example():
    grid, gt, conf, reg = two_anchor_setup()
    loss = placement.placement_loss(conf, reg, grid, [gt], lam=3.0)
    assert float(loss.data) == pytest.approx(LN2 + 3.0 * 0.75, abs=1e-6)


def test_loss_lambda_zero_is_mean_bce():
    grid, gt, conf, reg = two_anchor_setup()
    loss = placement.placement_loss(conf, reg, grid, [gt], lam=0.0)
    assert float(loss.data) == pytest.approx(LN2, abs=1e-12)


def test_loss_near_zero_at_optimum():
    grid = build_anchor_grid([(1, 2)])
    gt = Box(0.0, 0.0, 0.5, 1.0)
    eps = 1e-9
    conf = Var(np.array([[1.0 - eps, eps]]))
    # left anchor decodes exactly to gt: center offset 0, log dims of gt
    reg = Var(np.array([[[0.0, 0.0, math.log(0.5), 0.0],
                         [0.0, 0.0, 0.0, 0.0]]]))
    loss = placement.placement_loss(conf, reg, grid, [gt], lam=3.0)
    assert 0.0 <= float(loss.data) < 1e-6


def test_loss_positive_when_imperfect():
    grid, gt, conf, reg = two_anchor_setup()
    loss = placement.placement_loss(conf, reg, grid, [gt], lam=3.0)
    assert float(loss.data) > 0.0


def test_batch_loss_is_mean_of_singles():
    grid = build_anchor_grid([(2, 2)])
    gts = [Box(0.1, 0.1, 0.35, 0.4), Box(0.5, 0.45, 0.4, 0.5),
           Box(0.05, 0.55, 0.3, 0.3)]
    rng = np.random.default_rng(3)
    conf_all = rng.uniform(0.1, 0.9, size=(3, 4))
    reg_all = rng.normal(0.0, 0.4, size=(3, 4, 4))

    batch = placement.placement_loss(Var(conf_all), Var(reg_all), grid, gts,
                                     lam=3.0)
    singles = [placement.placement_loss(Var(conf_all[i:i + 1]),
                                        Var(reg_all[i:i + 1]), grid,
                                        [gts[i]], lam=3.0)
               for i in range(3)]
    mean = math.fsum(float(s.data) for s in singles) / 3
    assert float(batch.data) == pytest.approx(mean, abs=1e-12)


@pytest.mark.parametrize("kind", ["diou", "iou"])
def test_loss_gradient_matches_finite_differences(kind):
    grid = build_anchor_grid([(2, 2)])
    gts = [Box(0.1, 0.15, 0.45, 0.5), Box(0.4, 0.3, 0.5, 0.6)]
    rng = np.random.default_rng(11)
    conf0 = rng.uniform(0.2, 0.8, size=(2, 4))
    reg0 = rng.normal(0.0, 0.3, size=(2, 4, 4))

    def loss_at(conf_data, reg_data):
        v = placement.placement_loss(Var(conf_data), Var(reg_data), grid,
                                     gts, lam=3.0, kind=kind)
        return float(v.data)

    conf, reg = Var(conf0), Var(reg0)
    ag.backward(placement.placement_loss(conf, reg, grid, gts, lam=3.0,
                                         kind=kind))
    step = 1e-5
    for var, data in ((conf, conf0), (reg, reg0)):
        it = np.nditer(data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            lo, hi = data.copy(), data.copy()
            lo[idx] -= step
            hi[idx] += step
            if var is conf:
                fd = (loss_at(hi, reg0) - loss_at(lo, reg0)) / (2 * step)
            else:
                fd = (loss_at(conf0, hi) - loss_at(conf0, lo)) / (2 * step)
            got = var.grad[idx]
            assert got == pytest.approx(fd, rel=1e-3, abs=1e-7), (var is conf, idx)


def test_positive_labels_match_containment():
    grid = build_anchor_grid([(8, 8), (4, 4)])
    gt = Box(0.2, 0.3, 0.35, 0.3)
    labels = placement._positive_labels(grid, gt)
    for i, cell in enumerate(grid.anchors):
        assert labels[i] == gt.contains_point(cell.center_x, cell.center_y)


def test_positive_labels_fallback_nearest_center():
    grid = build_anchor_grid([(2, 2)])
    # tiny box away from every anchor center -> exactly one fallback positive
    gt = Box(0.49, 0.49, 0.02, 0.02)
    labels = np.asarray(placement._positive_labels(grid, gt))
    assert labels.sum() == 1
    dists = [(cell.center_x - gt.cx) ** 2 + (cell.center_y - gt.cy) ** 2
             for cell in grid.anchors]
    assert labels[int(np.argmin(dists))] == 1


def test_chosen_is_argmax_with_lowest_index_ties():
    grid = build_anchor_grid([(2, 2)])
    conf = np.array([0.2, 0.9, 0.9, 0.1])
    reg = np.zeros((4, 4))
    out = placement._decode_output(conf, reg, grid)
    assert out.chosen == 1
    target = placement.RegressionTarget(*map(float, out.targets[1]))
    assert out.box == placement.decode_placement(grid.anchors[1], grid, target)


def test_chosen_invariant_under_monotonic_transform():
    grid = build_anchor_grid([(4, 4)])
    rng = np.random.default_rng(5)
    conf = rng.uniform(0.05, 0.95, size=16)
    reg = rng.normal(size=(16, 4))
    base = placement._decode_output(conf, reg, grid).chosen
    for f in (lambda c: c ** 3, lambda c: 0.4 * c + 0.1, np.sqrt):
        assert placement._decode_output(f(conf), reg, grid).chosen == base


def test_forward_deterministic():
    cfg = RunConfig()
    grid = placement.default_grid(cfg)
    params = placement.init_placement(cfg)
    rng = np.random.default_rng(0)
    hb = rng.uniform(size=(2, 5, 64, 64)).astype(np.float32)
    sb = rng.uniform(size=(2, 4, 64, 64)).astype(np.float32)
    c1, r1 = placement.forward_raw(params.as_vars(), hb, sb, grid)
    c2, r2 = placement.forward_raw(params.as_vars(), hb, sb, grid)
    assert np.array_equal(c1.data, c2.data)
    assert np.array_equal(r1.data, r2.data)
    assert c1.data.shape == (2, 80)
    assert r1.data.shape == (2, 80, 4)


def test_host_input_validation():
    rgba = np.zeros((64, 64, 4), np.uint8)
    with pytest.raises(InputError):
        placement.HostInput(rgba=rgba, fg_mask=np.zeros((32, 32), np.float32))
    with pytest.raises(InputError):
        placement.HostInput(rgba=np.zeros((64, 64, 3), np.uint8),
                            fg_mask=np.zeros((64, 64), np.float32))


def test_train_refuses_filter_only_sets():
    ds = dataio.synth_generate(30, seed=2)
    filtered = dataio.SceneSet(
        records=[r for r in ds.records if r.style_label == "filter"],
        hosts=ds.hosts, masks=ds.masks, stickers=ds.stickers)
    with pytest.raises(DataError):
        placement.train_placement(filtered, RunConfig())


def test_overfit_four_samples():
    ds = dataio.synth_generate(30, seed=7)
    recs = placement._sticker_records(ds)[:4]
    cfg = RunConfig().override(lr_placement=0.05, batch_size=4)
    hosts, stickers = placement._prep_inputs(ds, recs, cfg)
    grid = placement.default_grid(cfg)
    params = placement.init_placement(cfg)
    hb = np.stack([hosts[r.record_id] for r in recs])
    sb = np.stack([stickers[r.record_id] for r in recs])
    gts = [Box(r.x, r.y, r.w, r.h) for r in recs]

    score = -1.0
    lr = cfg.lr_placement
    for step in range(500):
        if step == 200:
            lr = 0.02
        elif step == 350:
            lr = 0.008
        vars_ = params.as_vars()
        conf, reg = placement.forward_raw(vars_, hb, sb, grid)
        loss = placement.placement_loss(conf, reg, grid, gts,
                                        lam=cfg.lam, kind=cfg.loss_kind)
        ag.backward(loss)
        params.collect_grads(vars_)
        nncore.sgd_step(params, lr, cfg.momentum)
        if step % 20 == 19:
            score = placement.mean_diou(params, recs, hosts, stickers, grid)
            if score > 0.9:
                break
    assert score > 0.9, f"mean DIoU only reached {score:.3f}"
