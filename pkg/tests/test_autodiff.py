import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crdonn.autodiff import (AdamState, NumericalError, TrainConfig, adam_step, backward, loss_of, train)
from crdonn.field import GridSpec
from crdonn.network import DetectorLayout, Mode, NetworkModel, forward
from crdonn.propagation import adjoint_propagate, build_kernel
from crdonn.slm import DeviceLUT, EncodedImage, GumbelLayer, builtin_lut, phase_flip_lut

from conftest import PITCH, WAVELENGTH, random_field
from gradcheck import check_gradients, random_instance


def single_pixel_model(method="conv"):
    g = GridSpec(4, 4, PITCH, WAVELENGTH)
    lut = DeviceLUT(np.array([1.0, 0.4]), np.array([0.0, 2.0]))
    rng = np.random.default_rng(3)
    layers = [GumbelLayer(g, rng.normal(size=(4, 4, 2)), lut)]
    det = DetectorLayout(((0, 0, 1, 1), (3, 3, 1, 1)), (0, 1))
    return NetworkModel(g, layers, det, 0.05, method, (0, 1))


@pytest.mark.parametrize("method", ["spectral", "conv"])
def test_single_pixel_k2_logit_gradient(method):
    m = single_pixel_model(method)
    x = random_field(np.random.default_rng(0), (1, 4, 4))
    tr = forward(m, x, Mode.SOFT)
    grad = backward(m, tr, [0]).logits[0]
    flat = m.layers[0].logits.reshape(-1)
    fd = np.empty_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + 1e-4
        lp = loss_of(m, x, [0])
        flat[i] = old - 1e-4
        lm = loss_of(m, x, [0])
        flat[i] = old
        fd[i] = (lp - lm) / 2e-4
    assert np.linalg.norm(grad.reshape(-1) - fd) / np.linalg.norm(fd) < 1e-4


def test_input_gradient_real_part_8x8():
    g = GridSpec(8, 8, PITCH, WAVELENGTH)
    m = NetworkModel.create(g, builtin_lut("phase").subsample(4), (0, 1, 7), n_layers=1, detector_size=2, z=0.05)
    x = EncodedImage.from_bright(g, np.random.default_rng(1).random((8, 8)) > 0.5).values
    tr = forward(m, x, Mode.SOFT)
    grad = backward(m, tr, [1]).inputs[0].real
    fd = np.empty((8, 8))
    for i in range(8):
        for j in range(8):
            xp, xm = x.copy(), x.copy()
            xp[i, j] += 1e-6
            xm[i, j] -= 1e-6
            fd[i, j] = (loss_of(m, xp, [1]) - loss_of(m, xm, [1])) / 2e-6
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-4


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_random_gradient_checks(seed):
    model, x, slots, gumbel, rng = random_instance(seed)
    e_logit, e_input = check_gradients(model, x, slots, gumbel, rng, n_samples=4)
    assert e_logit < 1e-4 and e_input < 1e-4


def test_one_hot_score_has_zero_gradient():
    # all light lands in the target region: one layer of pure transmission on a 1x1 grid
    g = GridSpec(1, 1, PITCH, WAVELENGTH)
    m = NetworkModel(g, [GumbelLayer(g, np.zeros((1, 1, 2)), phase_flip_lut())],
                     DetectorLayout(((0, 0, 1, 1),), (0,)), 0.1, "spectral", (0,))
    tr = forward(m, np.ones((1, 1, 1), complex), Mode.SOFT)
    b = backward(m, tr, [0])
    assert b.loss == 0
    assert not b.logits[0].any() and not b.inputs.any()


def test_dark_camera_gives_zero_gradient(small_grid):
    m = NetworkModel.create(small_grid, phase_flip_lut(), (0, 1), n_layers=1, detector_size=2)
    b = backward(m, forward(m, np.zeros(small_grid.shape), Mode.SOFT), [0])
    assert not b.logits[0].any() and not b.inputs.any()
    assert b.loss == pytest.approx(0.1)


def test_adjoint_consistency_of_propagation_graph(rng, small_grid):
    # input adjoint for a transparent layer equals two adjoint propagations of the camera adjoint
    lut = DeviceLUT(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
    layer = GumbelLayer(small_grid, np.zeros(small_grid.shape + (2,)), lut)
    m = NetworkModel(small_grid, [layer], DetectorLayout.default(small_grid, (0, 1), size=2), 0.1, "conv", (0, 1))
    x = random_field(rng, (1,) + small_grid.shape)
    from crdonn.autodiff import backward_fields, loss_and_intensity_grad
    tr = forward(m, x, Mode.SOFT)
    _, dl_di = loss_and_intensity_grad(m, tr, np.array([0]))
    g_cam = dl_di * tr.camera
    k = build_kernel("conv", small_grid, 0.1)
    expected = adjoint_propagate(adjoint_propagate(g_cam[0], k), k)
    _, _, g_x = backward_fields(m, tr, np.array([0]))
    np.testing.assert_allclose(g_x[0], expected, atol=1e-15)


def test_backward_requires_snapshots(small_grid):
    m = NetworkModel.create(small_grid, phase_flip_lut(), (0, 1), n_layers=1, detector_size=2)
    tr = forward(m, np.zeros(small_grid.shape), Mode.SOFT)
    tr.fields = tr.fields[:-1]
    with pytest.raises(ValueError):
        backward(m, tr, [0])


def test_adam_first_step_closed_form(rng):
    p = [rng.normal(size=5)]
    g = [rng.normal(size=5)]
    before = p[0].copy()
    adam_step(p, g, AdamState.zeros_like(p), lr=0.5, eps=1e-8)
    np.testing.assert_allclose(p[0], before - 0.5 * g[0] / (np.abs(g[0]) + 1e-8), rtol=1e-12)


def test_adam_zero_gradient_and_monotone(rng):
    p = [rng.normal(size=4)]
    st_ = AdamState.zeros_like(p)
    before = p[0].copy()
    adam_step(p, [np.zeros(4)], st_)
    np.testing.assert_array_equal(p[0], before)
    g = np.array([1.0, -2.0, 0.5, -0.1])
    p = [np.zeros(4)]
    st_ = AdamState.zeros_like(p)
    adam_step(p, [g], st_, lr=0.1)
    first = p[0].copy()
    adam_step(p, [g], st_, lr=0.1)
    assert np.all(np.sign(first) == -np.sign(g))
    assert np.all(np.abs(p[0]) > np.abs(first))


def test_adam_errors():
    p = [np.zeros(3)]
    with pytest.raises(ValueError):
        adam_step(p, [np.zeros(4)], AdamState.zeros_like(p))
    with pytest.raises(NumericalError):
        adam_step(p, [np.array([0, np.nan, 0])], AdamState.zeros_like(p))


def _toy_problem(seed=0):
    g = GridSpec(8, 8, PITCH, WAVELENGTH, pad=2)
    m = NetworkModel.create(g, builtin_lut("phase").subsample(4), (0, 1), n_layers=1, detector_size=2,
                            z=0.05, seed=seed)
    rng = np.random.default_rng(seed)
    x = np.stack([EncodedImage.from_bright(g, rng.random((8, 8)) > 0.5).values for _ in range(6)])
    return m, x, np.array([0, 1, 0, 1, 0, 1])


def test_train_lr_zero_leaves_model_unchanged():
    m, x, y = _toy_problem()
    before = [l.logits.copy() for l in m.layers]
    h = train(m, x[:1], y[:1], TrainConfig(epochs=1, lr=0.0, batch=1))
    assert len(h) == 1
    for a, l in zip(before, m.layers):
        np.testing.assert_array_equal(a, l.logits)


def test_train_is_deterministic():
    m1, x, y = _toy_problem()
    m2, _, _ = _toy_problem()
    h1 = train(m1, x, y, TrainConfig(epochs=3, lr=0.3, batch=4, seed=5))
    h2 = train(m2, x, y, TrainConfig(epochs=3, lr=0.3, batch=4, seed=5))
    for a, b in zip(m1.layers, m2.layers):
        assert np.array_equal(a.logits, b.logits)
    assert [r.loss for r in h1.records] == [r.loss for r in h2.records]
    assert h1.to_csv().startswith("epoch,loss,train_acc,test_acc,wall_time")


def test_small_lr_loss_non_increasing():
    # full-batch steps on the relaxed forward, where the gradient is exact
    m, x, y = _toy_problem(1)
    slots = np.array([m.slot_of_label(v) for v in y])
    losses = []
    params = [l.logits for l in m.layers]
    state = AdamState.zeros_like(params)
    for _ in range(5):
        tr = forward(m, x, Mode.SOFT)
        b = backward(m, tr, slots)
        losses.append(b.loss)
        adam_step(params, b.logits, state, lr=0.01)
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_train_input_validation():
    m, x, y = _toy_problem()
    with pytest.raises(ValueError):
        train(m, x[:0], y[:0], TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(m, x, y[:2], TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
