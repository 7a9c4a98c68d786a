import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crdonn.field import GridSpec
from crdonn.network import (DetectorLayout, Mode, NetworkModel, confusion, confusion_matrix, forward,
                            mse_loss, predict, predict_slots, readout, region_percentages)
from crdonn.propagation import build_kernel
from crdonn.slm import DeviceLUT, EncodedImage, GumbelLayer, builtin_lut

from conftest import PITCH, WAVELENGTH, random_field
from oracles import rel_l2


def tiny_model(method="conv", labels=(0, 1, 7), n=12, pad=3, layers=2, seed=0, k=4, size=2):
    g = GridSpec(n, n, PITCH, WAVELENGTH, pad)
    return NetworkModel.create(g, builtin_lut("phase").subsample(k), labels, n_layers=layers, method=method,
                               detector_size=size, seed=seed, z=0.05)


def test_default_layout_is_centred_and_spread():
    g = GridSpec(100, 100, PITCH, WAVELENGTH, pad=80)
    d = DetectorLayout.default(g, (0, 1, 7))
    assert [r[0] for r in d.regions] == [45, 45, 45]
    assert [r[1] for r in d.regions] == [12, 45, 78]
    assert all(r[2:] == (10, 10) for r in d.regions)
    m = d.region_mask(g)
    assert (m >= 0).sum() == 300


def test_layout_validation():
    with pytest.raises(ValueError):
        DetectorLayout(((0, 0, 2, 2), (1, 1, 2, 2)), (0, 1))
    with pytest.raises(ValueError):
        DetectorLayout(((0, 0, 2, 2),), (10,))
    with pytest.raises(ValueError):
        DetectorLayout(((0, 0, 2, 2), (4, 4, 2, 2)), (3, 3))
    g = GridSpec(4, 4, PITCH, WAVELENGTH)
    with pytest.raises(ValueError):
        DetectorLayout(((3, 3, 2, 2),), (0,)).check_fits(g)


def test_all_zero_image_is_degenerate():
    m = tiny_model()
    tr = forward(m, np.zeros(m.grid.shape, complex))
    assert not tr.intensity.any() and not tr.region_sums.any()
    assert tr.degenerate[0]
    np.testing.assert_allclose(tr.percentages[0], 100 / 3)
    r = readout(m, tr)
    assert r.degenerate and r.slot == 0 and r.label == 0


def test_trace_has_2k_plus_1_fields():
    m = tiny_model(layers=3)
    tr = forward(m, random_field(np.random.default_rng(0), m.grid.shape))
    assert len(tr.fields) == 7
    np.testing.assert_array_equal(tr.fields[-1], tr.camera)


def test_identity_layers_equal_long_propagation(rng):
    g = GridSpec(16, 16, PITCH, WAVELENGTH, pad=8)
    lut = DeviceLUT(np.array([1.0, 0.5]), np.array([0.0, 1.0]))
    layers = [GumbelLayer.from_levels(g, lut, np.zeros(g.shape, int)) for _ in range(2)]
    det = DetectorLayout.default(g, (0, 1), size=4)
    m = NetworkModel(g, layers, det, 0.1, "spectral", (0, 1))
    x = random_field(rng, g.shape)
    cam = forward(m, x).camera[0]
    ref = build_kernel("spectral", g, 0.3).apply(x)
    assert rel_l2(cam, ref) < 1e-8


def test_readout_arithmetic():
    pct, deg = region_percentages(np.array([10.0, 20.0, 5.0]))
    np.testing.assert_allclose(pct, [100 * 10 / 35, 100 * 20 / 35, 100 * 5 / 35])
    assert np.round(pct, 1).tolist() == [28.6, 57.1, 14.3] and not deg
    m = tiny_model()
    assert predict_slots(m, np.array([10.0, 20.0, 5.0])) == 1
    assert predict_slots(m, np.array([3.0, 3.0, 3.0])) == 0
    assert predict_slots(m, np.array([0.0, 0.0, 0.0])) == 0
    # ties break by slot, not region order
    m2 = tiny_model(labels=(7, 1, 0))
    assert predict_slots(m2, np.array([1.0, 1.0, 1.0])) == 0


def test_mse_examples():
    assert mse_loss(np.eye(10)[3], 3) == 0
    s = np.zeros(10)
    s[:3] = 1 / 3
    assert mse_loss(s, 0) == pytest.approx(((2 / 3) ** 2 + 2 * (1 / 3) ** 2) / 10)
    assert mse_loss(s, 0) == pytest.approx(0.0667, abs=1e-4)
    a = np.array([0.5, 0.2, 0.1] + [0] * 7)
    b = np.array([0.5, 0.1, 0.2] + [0] * 7)
    assert mse_loss(a, 0) == mse_loss(b, 0)
    with pytest.raises(ValueError):
        mse_loss(np.zeros(3), 0, num_slots=10)


def test_confusion_examples():
    c = confusion((0, 1, 7), [0, 1, 7, 7], [0, 1, 7, 7])
    np.testing.assert_array_equal(c.matrix, np.diag([1, 1, 2]))
    assert c.accuracy == 1
    assert confusion((0, 1, 7), [1], [7]).accuracy == 0
    other = confusion((1, 2, 7), [1, 2], [-1, 2])
    assert other.matrix.shape == (3, 4) and other.matrix[0, 3] == 1
    with pytest.raises(ValueError):
        confusion((0, 1), [], [])


def test_confusion_matrix_matches_predict(rng):
    m = tiny_model()
    imgs = np.stack([EncodedImage.from_bright(m.grid, rng.random((12, 12)) > 0.5).values for _ in range(9)])
    truth = rng.choice([0, 1, 7], 9)
    c = confusion_matrix(m, imgs, truth)
    pred = predict(m, imgs)
    assert c.accuracy == pytest.approx(np.mean(pred == truth))
    assert c.matrix.sum() == 9


def test_grid_mismatch():
    m = tiny_model()
    with pytest.raises(ValueError):
        forward(m, np.zeros((5, 5)))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.1, 10), gamma=st.floats(0, 2 * np.pi),
       spectral=st.booleans())
def test_forward_invariants(seed, alpha, gamma, spectral):
    rng = np.random.default_rng(seed)
    m = tiny_model("spectral" if spectral else "conv", seed=seed % 1000)
    x = random_field(rng, m.grid.shape)
    base = forward(m, x)
    scaled = forward(m, alpha * x)
    np.testing.assert_allclose(scaled.region_sums, alpha ** 2 * base.region_sums, rtol=1e-10)
    rotated = forward(m, np.exp(1j * gamma) * x)
    np.testing.assert_allclose(rotated.intensity, base.intensity, rtol=1e-10, atol=1e-14 * base.intensity.max())
    assert np.all(base.region_sums <= base.energy[:, None] * (1 + 1e-12))
    np.testing.assert_allclose(base.percentages.sum(-1), 100)


def test_deterministic_forward_is_bitwise_reproducible(rng):
    m = tiny_model()
    x = random_field(rng, m.grid.shape)
    a = forward(m, x).intensity
    b = forward(m, x.copy()).intensity
    assert np.array_equal(a, b)


def test_train_mode_needs_rng():
    m = tiny_model()
    with pytest.raises(ValueError):
        forward(m, np.zeros(m.grid.shape), Mode.TRAIN)


def test_train_mode_shares_noise_across_batch(rng):
    m = tiny_model()
    x = random_field(rng, m.grid.shape)
    tr = forward(m, np.stack([x, x]), Mode.TRAIN, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(tr.intensity[0], tr.intensity[1])
    assert all(g is not None for g in tr.gumbel)
