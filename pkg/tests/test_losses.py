"""Soft-margin classification loss, reconstruction loss, alpha ramp, totals."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import puzzlecam as pc
from puzzlecam.cams import normalize_array
from puzzlecam.losses import LOG_FLOOR, cls_loss_graph, normalize_graph, re_loss_graph
from puzzlecam import autodiff as ad
from oracles import brute_reconstruction, brute_soft_margin, fd_grad, rel_err

finite = st.floats(min_value=-30, max_value=30, allow_nan=False, width=64)
unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False, width=64)


def norm_stack(maps):
    return pc.CAMStack(maps=np.asarray(maps, dtype=np.float64), normalized=True)


# -- soft margin classification loss -------------------------------------------------


def test_cls_loss_zero_logits():
    # sigmoid(0) = 0.5 regardless of the label, so every class contributes ln 2
    got = pc.soft_margin_cls_loss(np.zeros(4), np.array([1, 0, 1, 0]))
    assert got == pytest.approx(np.log(2.0), abs=1e-10)


def test_cls_loss_confident_correct_is_small():
    got = pc.soft_margin_cls_loss(np.array([20.0, -20.0]), np.array([1, 0]))
    assert got < 1e-6


def test_cls_loss_confident_wrong_is_large():
    got = pc.soft_margin_cls_loss(np.array([-20.0, 20.0]), np.array([1, 0]))
    assert got > 19.0


def test_cls_loss_matches_brute_force(rng):
    for _ in range(20):
        c = rng.integers(1, 6)
        logits = rng.normal(scale=3.0, size=c)
        y = (rng.random(c) < 0.5).astype(np.float64)
        assert pc.soft_margin_cls_loss(logits, y) == pytest.approx(
            brute_soft_margin(logits, y), rel=1e-12
        )


def test_cls_loss_batch_is_mean_of_rows(rng):
    logits = rng.normal(size=(3, 4))
    y = (rng.random((3, 4)) < 0.5).astype(np.float64)
    rows = [pc.soft_margin_cls_loss(logits[b], y[b]) for b in range(3)]
    assert pc.soft_margin_cls_loss(logits, y) == pytest.approx(np.mean(rows), rel=1e-12)


def test_cls_loss_rejects_bad_labels():
    with pytest.raises(pc.ContractError):
        pc.soft_margin_cls_loss(np.zeros(2), np.array([0.5, 1.0]))
    with pytest.raises(pc.ContractError):
        pc.soft_margin_cls_loss(np.zeros(2), np.array([1, 0, 1]))
    with pytest.raises(pc.ContractError):
        pc.soft_margin_cls_loss(np.zeros((2, 2, 2)), np.ones((2, 2, 2)))


def test_cls_loss_accepts_label_vector():
    y = pc.LabelVector(values=np.array([1.0, 0.0]), kind=pc.GROUND_TRUTH)
    assert pc.soft_margin_cls_loss(np.zeros(2), y) == pytest.approx(np.log(2.0))
    bad = pc.LabelVector(values=np.array([0.7, 0.2]), kind=pc.PREDICTION)
    with pytest.raises(pc.ContractError):
        pc.soft_margin_cls_loss(np.zeros(2), bad)


def test_cls_loss_grad_matches_finite_differences(rng):
    for _ in range(25):
        c = int(rng.integers(1, 6))
        logits = rng.normal(scale=2.0, size=c)
        y = (rng.random(c) < 0.5).astype(np.float64)
        analytic = pc.soft_margin_cls_loss_grad(logits, y)
        numeric = fd_grad(lambda z: brute_soft_margin(z, y), logits)
        assert rel_err(analytic, numeric) < 1e-4


def test_cls_loss_grad_closed_form(rng):
    # d/dz of -log(p_true): sigma(z) - 1 for positives, sigma(z) for negatives,
    # all divided by the class count (the LOG_FLOOR shift is negligible here)
    logits = rng.normal(size=5)
    y = np.array([1, 0, 1, 0, 0], dtype=np.float64)
    s = 1.0 / (1.0 + np.exp(-logits))
    want = (s - y) / 5.0
    got = pc.soft_margin_cls_loss_grad(logits, y)
    assert np.allclose(got, want, atol=1e-9)


# -- reconstruction loss ----------------------------------------------------------


def test_re_loss_identical_stacks_is_zero(rng):
    maps = normalize_array(rng.random((3, 4, 4)))
    a = norm_stack(maps)
    assert pc.reconstruction_loss(a, norm_stack(maps.copy()), np.ones(3)) == 0.0


def test_re_loss_hand_example():
    a_s = norm_stack([[[1.0, 0.0], [0.0, 0.0]]])
    a_re = norm_stack([[[0.0, 0.0], [0.0, 1.0]]])
    # two cells differ by 1 over an extent of 4
    assert pc.reconstruction_loss(a_s, a_re, np.array([1.0])) == pytest.approx(0.5)


def test_re_loss_matches_brute_force(rng):
    for _ in range(20):
        c, h, w = (int(v) for v in rng.integers(1, 5, size=3))
        a = normalize_array(rng.random((c, h, w)))
        b = normalize_array(rng.random((c, h, w)))
        y = (rng.random(c) < 0.6).astype(np.float64)
        got = pc.reconstruction_loss(norm_stack(a), norm_stack(b), y)
        assert got == pytest.approx(brute_reconstruction(a, b, y), rel=1e-12)


def test_re_loss_absent_classes_contribute_zero(rng):
    a = normalize_array(rng.random((2, 3, 3)))
    b = normalize_array(rng.random((2, 3, 3)))
    only_first = pc.reconstruction_loss(norm_stack(a), norm_stack(b), np.array([1.0, 0.0]))
    # zeroing the absent class by hand changes nothing
    a2, b2 = a.copy(), b.copy()
    a2[1] = 0.0
    b2[1] = 0.0
    both = pc.reconstruction_loss(norm_stack(a2), norm_stack(b2), np.array([1.0, 1.0]))
    assert only_first == pytest.approx(both, rel=1e-12)


def test_re_loss_requires_normalized_and_matching_shapes(rng):
    raw = pc.CAMStack(maps=rng.normal(size=(2, 3, 3)), normalized=False)
    good = norm_stack(normalize_array(rng.random((2, 3, 3))))
    with pytest.raises(pc.ContractError):
        pc.reconstruction_loss(raw, good, np.ones(2))
    small = norm_stack(normalize_array(rng.random((2, 2, 2))))
    with pytest.raises(pc.ContractError):
        pc.reconstruction_loss(good, small, np.ones(2))


def test_re_loss_grads_match_finite_differences(rng):
    for _ in range(10):
        c, h, w = 2, 3, 3
        a = normalize_array(rng.random((c, h, w)))
        b = normalize_array(rng.random((c, h, w)))
        # keep the two stacks apart so the |.| kink never sits at a sample point
        b = np.clip(b + 0.05, 0.0, 1.0)
        y = np.array([1.0, 0.0])
        g_s, g_r = pc.reconstruction_loss_grads(norm_stack(a), norm_stack(b), y)
        f_s = fd_grad(lambda m: brute_reconstruction(m, b, y), a)
        f_r = fd_grad(lambda m: brute_reconstruction(a, m, y), b)
        assert rel_err(g_s, f_s) < 1e-4
        assert rel_err(g_r, f_r) < 1e-4


@given(arrays(np.float64, (2, 3, 3), elements=unit), arrays(np.float64, (2, 3, 3), elements=unit))
@settings(max_examples=50, deadline=None)
def test_re_loss_symmetric_and_bounded(a, b):
    sa, sb = norm_stack(a), norm_stack(b)
    y = np.ones(2)
    ab = pc.reconstruction_loss(sa, sb, y)
    ba = pc.reconstruction_loss(sb, sa, y)
    assert ab == pytest.approx(ba, rel=1e-12)
    assert 0.0 <= ab <= 1.0


# -- alpha ramp --------------------------------------------------------------------


def test_alpha_schedule_exact_points():
    sched = pc.AlphaSchedule()
    assert pc.alpha_at(0, 1000, sched) == 0.0
    assert pc.alpha_at(250, 1000, sched) == 2.0
    assert pc.alpha_at(500, 1000, sched) == 4.0
    assert pc.alpha_at(1000, 1000, sched) == 4.0


def test_alpha_schedule_linear_in_ramp():
    sched = pc.AlphaSchedule(alpha_max=8.0, ramp_end_fraction=0.25)
    assert pc.alpha_at(0, 400, sched) == 0.0
    assert pc.alpha_at(50, 400, sched) == pytest.approx(4.0)
    assert pc.alpha_at(100, 400, sched) == pytest.approx(8.0)
    assert pc.alpha_at(300, 400, sched) == pytest.approx(8.0)


def test_alpha_schedule_monotone():
    sched = pc.AlphaSchedule()
    vals = [pc.alpha_at(s, 97, sched) for s in range(98)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == sched.alpha_max


def test_alpha_schedule_validation():
    with pytest.raises(pc.ContractError):
        pc.AlphaSchedule(alpha_max=-1.0)
    with pytest.raises(pc.ContractError):
        pc.AlphaSchedule(ramp_end_fraction=0.0)
    with pytest.raises(pc.ContractError):
        pc.AlphaSchedule(ramp_end_fraction=1.5)
    sched = pc.AlphaSchedule()
    with pytest.raises(pc.ContractError):
        pc.alpha_at(-1, 100, sched)
    with pytest.raises(pc.ContractError):
        pc.alpha_at(101, 100, sched)
    with pytest.raises(pc.ContractError):
        pc.alpha_at(0, 0, sched)


# -- total ------------------------------------------------------------------------


def test_total_loss_composition():
    br = pc.total_loss(cls=0.5, p_cls=0.25, re=0.1, alpha=4.0)
    assert br.total == pytest.approx(0.5 + 0.25 + 0.4, abs=1e-12)


@given(
    st.floats(0, 10, allow_nan=False), st.floats(0, 10, allow_nan=False),
    st.floats(0, 10, allow_nan=False), st.floats(0, 4, allow_nan=False),
)
@settings(max_examples=100, deadline=None)
def test_total_loss_composition_property(cls, p_cls, re, alpha):
    br = pc.total_loss(cls, p_cls, re, alpha)
    assert abs(br.total - (cls + p_cls + alpha * re)) < 1e-6


@given(st.floats(0, 10, allow_nan=False), st.floats(0, 10, allow_nan=False), st.floats(0, 10, allow_nan=False))
@settings(max_examples=50, deadline=None)
def test_total_loss_alpha_zero_ignores_re(cls, p_cls, re):
    assert pc.total_loss(cls, p_cls, re, 0.0).total == pc.total_loss(cls, p_cls, 0.0, 0.0).total


def test_total_loss_rejects_bad_components():
    with pytest.raises(pc.ContractError):
        pc.total_loss(np.nan, 0.0, 0.0, 0.0)
    with pytest.raises(pc.ContractError):
        pc.total_loss(-0.1, 0.0, 0.0, 0.0)


def test_loss_breakdown_validates():
    with pytest.raises(pc.ContractError):
        pc.LossBreakdown(cls=-1.0, p_cls=0.0, re=0.0, alpha=0.0, total=-1.0)
    with pytest.raises(pc.ContractError):
        pc.LossBreakdown(cls=np.inf, p_cls=0.0, re=0.0, alpha=0.0, total=np.inf)


# -- tape-level helpers ----------------------------------------------------------


def test_normalize_graph_matches_numpy_path(rng):
    raw = rng.normal(size=(2, 3, 4, 4))
    got = normalize_graph(ad.Tensor(raw)).data
    want = np.stack([normalize_array(raw[b]) for b in range(2)])
    assert np.array_equal(got, want)


def test_normalize_graph_gradient_flows(rng):
    raw = ad.Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
    out = ad.mean(normalize_graph(raw))
    out.backward()
    assert raw.grad is not None
    assert np.isfinite(raw.grad).all()


def test_re_loss_graph_matches_wrapper(rng):
    a = normalize_array(rng.random((3, 4, 4)))
    b = normalize_array(rng.random((3, 4, 4)))
    y = np.array([1.0, 0.0, 1.0])
    tape_val = float(re_loss_graph(ad.Tensor(a), ad.Tensor(b), y[:, None, None]).data)
    assert tape_val == pc.reconstruction_loss(norm_stack(a), norm_stack(b), y)


def test_cls_loss_graph_matches_wrapper(rng):
    logits = rng.normal(size=(2, 4))
    y = (rng.random((2, 4)) < 0.5).astype(np.float64)
    tape_val = float(cls_loss_graph(ad.Tensor(logits), y).data)
    assert tape_val == pc.soft_margin_cls_loss(logits, y)


def test_log_floor_guards_certain_wrong_predictions():
    # a hard-saturated wrong prediction stays finite thanks to the floor
    got = pc.soft_margin_cls_loss(np.array([-800.0]), np.array([1.0]))
    assert np.isfinite(got)
    assert got == pytest.approx(-np.log(LOG_FLOOR), rel=1e-6)
