import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from locvalid.models import BackboneConfig, MultiViewAttentionClassifier, Network
from locvalid.saliency import (
    SaliencyThresholder,
    bilinear_resize,
    gradcam,
    gradcam_volume,
    normalise_maps,
    raw_gradcam,
    threshold_mask,
)
from locvalid.volume import PLANES, Volume

SMALL = BackboneConfig(channels=(3, 4), strides=(2, 2), feature_dim=6)


@pytest.fixture
def net():
    return Network.build("single", SMALL, ("axial",), random_state=2)


@pytest.fixture
def volume():
    return Volume("axial", np.random.default_rng(0).normal(size=(4, 16, 16)))


def test_threshold_examples():
    npt.assert_array_equal(threshold_mask(np.full((3, 3), 0.6), 0.6), False)
    npt.assert_array_equal(threshold_mask(np.array([[0.7, 0.2], [0.61, 0.6]]), 0.6), [[True, False], [True, False]])
    npt.assert_array_equal(threshold_mask(np.full((2, 2), 0.01), 0.0), True)
    with pytest.raises(ValueError):
        threshold_mask(np.zeros((2, 2)), 1.0)
    with pytest.raises(ValueError):
        threshold_mask(np.full((2, 2), 1.5))


@given(arrays(float, (5, 5), elements=st.floats(0, 1)), st.floats(0, 0.99), st.floats(0, 0.99))
def test_threshold_monotone(s, a, b):
    lo, hi = sorted((a, b))
    assert np.all(threshold_mask(s, hi) <= threshold_mask(s, lo))


def test_thresholder_transformer():
    s = np.array([[0.7, 0.2], [0.61, 0.6]])
    npt.assert_array_equal(SaliencyThresholder().fit_transform(s), threshold_mask(s))
    with pytest.raises(ValueError):
        SaliencyThresholder(threshold=2.0).fit(s)


def test_bilinear_resize():
    m = np.arange(4.0).reshape(2, 2)
    npt.assert_array_equal(bilinear_resize(m, 2, 2), m)
    up = bilinear_resize(m, 4, 4)
    assert up.shape == (4, 4)
    npt.assert_allclose(up[0], [0, 0.25, 0.75, 1])
    npt.assert_array_equal(bilinear_resize(np.full((3, 5), 2.0), 7, 9), 2.0)


def test_normalise_maps():
    maps = np.stack([np.zeros((2, 2)), np.array([[0.0, 2.0], [1.0, 4.0]])])
    out = normalise_maps(maps)
    npt.assert_array_equal(out[0], 0)
    npt.assert_array_equal(out[1], [[0, 0.5], [0.25, 1]])


def test_zero_head_gives_zero_map(net, volume):
    state = net.get_state()
    state["fc2.weight"][:] = 0.0
    net.set_state(state)
    out = gradcam_volume(net, volume)
    npt.assert_array_equal(out, 0.0)


def test_maps_in_unit_interval_with_unit_peak(net, volume):
    out = gradcam_volume(net, volume)
    assert out.shape == (4, 16, 16)
    assert np.all((out >= 0) & (out <= 1))
    raw = raw_gradcam(net, volume)
    for k in range(4):
        if raw[k].max() > 0:
            assert out[k].max() == 1.0
        npt.assert_array_equal(gradcam(net, volume, k), out[k])


def test_argmax_unchanged_by_fc2_scaling(net, volume):
    base = gradcam_volume(net, volume)
    state = net.get_state()
    for t in (0.1, 3.0, 50.0):
        scaled = dict(state, **{"fc2.weight": state["fc2.weight"] * t})
        other = Network.build("single", SMALL, ("axial",), random_state=0)
        other.set_state(scaled)
        out = gradcam_volume(other, volume)
        npt.assert_array_equal(out.reshape(4, -1).argmax(1), base.reshape(4, -1).argmax(1))
        npt.assert_allclose(out, base, atol=1e-9)


def test_index_errors(net, volume):
    with pytest.raises(IndexError):
        gradcam(net, volume, 4)
    with pytest.raises(IndexError):
        gradcam(net, volume, -1)
    with pytest.raises(IndexError):
        gradcam(net, volume, 0, layer=5)


def test_earlier_layer(net, volume):
    out = gradcam(net, volume, 1, layer=0)
    assert out.shape == (16, 16)


def test_multi_plane_models(volume):
    rng = np.random.default_rng(1)
    case = {p: Volume(p, rng.normal(size=(3, 16, 16))) for p in PLANES}
    for strategy in ("mpfusenet", "mp2"):
        net = Network.build(strategy, SMALL, random_state=1)
        for p in PLANES:
            assert gradcam(net, case, 2, plane=p).shape == (16, 16)
    clf = MultiViewAttentionClassifier(strategy="mplr", channels=(3, 4), strides=(2, 2), feature_dim=6).init_networks()
    assert gradcam(clf, case, 0, plane="coronal").shape == (16, 16)
    with pytest.raises(ValueError):
        gradcam(Network.build("single", SMALL, ("axial",)), case, 0, plane="sagittal")
