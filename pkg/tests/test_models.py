import numpy as np
import numpy.testing as npt
import pytest
from sklearn.base import clone
from sklearn.linear_model import LogisticRegression

from locvalid.exceptions import DegenerateFitError, EmptyStackError, FusionError, TrainingError
from locvalid.io.synth import SynthConfig, generate_synthetic
from locvalid.models import (
    FINETUNE_LEARNING_RATE,
    BackboneConfig,
    LogisticFusion,
    MultiViewAttentionClassifier,
    Network,
    TrainConfig,
    augment_slices,
    load_checkpoint,
    mplr_fit,
    mplr_predict,
    run_training,
    save_checkpoint,
    train_toy,
)
from locvalid.models.networks import base_model_forward
from locvalid.tensor import Tensor, global_avg_pool, linear, max_over_slices
from locvalid.volume import PLANES, Volume

SMALL = BackboneConfig(channels=(2, 3), strides=(2, 2), feature_dim=5)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def rand_case(rng, sizes=(3, 4, 2), hw=(8, 8)):
    return {p: rng.normal(size=(s, 1, *hw)) for p, s in zip(PLANES, sizes)}


def forward_prob(net, case):
    return sigmoid(net.forward(case).item())


# backbone shapes ------------------------------------------------------------


def test_toy_backbone_hits_8x8():
    assert BackboneConfig().output_shape(64, 64) == (32, 8, 8)


def test_full_scale_contract():
    cfg = BackboneConfig.full_scale()
    assert cfg.output_shape(256, 256) == (512, 8, 8)
    net = Network.build("single", cfg, ("sagittal",), random_state=0)
    x = np.random.default_rng(0).normal(size=(1, 1, 256, 256))
    out = base_model_forward(net.params, "bm.sagittal", cfg, Tensor(x), None, "sagittal")
    assert out.shape == (1, 512, 8, 8)


def test_config_validation():
    with pytest.raises(ValueError):
        BackboneConfig(channels=(4, 8), strides=(2,))
    with pytest.raises(ValueError):
        BackboneConfig(feature_dim=0)
    with pytest.raises(ValueError):
        BackboneConfig(attention_layer=3)


# single plane -----------------------------------------------------------------


def test_single_plane_slice_duplication_and_permutation():
    rng = np.random.default_rng(1)
    net = Network.build("single", SMALL, ("axial",), random_state=1)
    x = rng.normal(size=(5, 1, 8, 8))
    p = forward_prob(net, {"axial": x})
    assert forward_prob(net, {"axial": np.concatenate([x, x[2:3]])}) == p
    assert forward_prob(net, {"axial": x[rng.permutation(5)]}) == p


def test_single_plane_is_deterministic():
    x = np.random.default_rng(2).normal(size=(4, 1, 16, 16))
    a = Network.build("single", SMALL, ("axial",), random_state=7).forward({"axial": x}).item()
    b = Network.build("single", SMALL, ("axial",), random_state=7).forward({"axial": x}).item()
    assert a == b


def test_empty_volume_rejected():
    with pytest.raises(EmptyStackError):
        Volume("axial", np.zeros((0, 8, 8)))


def test_attention_off_equals_identity_attention():
    rng = np.random.default_rng(3)
    on = Network.build("single", SMALL, ("axial",), random_state=3)
    off = Network.build("single", BackboneConfig(channels=(2, 3), strides=(2, 2), feature_dim=5, attention=False), ("axial",), random_state=3)
    state = on.get_state()
    state["bm.axial.attn.weight"][:] = 0.0
    state["bm.axial.attn.bias"][:] = 0.0
    on.set_state(state)
    off.set_state({k: v for k, v in state.items() if ".attn." not in k})
    x = rng.normal(size=(4, 1, 8, 8))
    assert on.forward({"axial": x}).item() == off.forward({"axial": x}).item()


# MPFuseNet --------------------------------------------------------------------


def test_mpfusenet_post_max_equals_max_of_plane_maxima():
    rng = np.random.default_rng(4)
    net = Network.build("mpfusenet", SMALL, random_state=4)
    case = rand_case(rng)
    trace = {}
    net.forward(case, trace)
    per_plane = []
    for p in PLANES:
        feat = trace[f"{p}/layer1"]
        per_plane.append(max_over_slices(linear(global_avg_pool(feat), net.params["fc1.weight"], net.params["fc1.bias"])).data)
    npt.assert_allclose(trace["post_max"].data, np.max(per_plane, axis=0), rtol=0, atol=1e-12)


def test_mpfusenet_plane_order_and_slice_order():
    rng = np.random.default_rng(5)
    net = Network.build("mpfusenet", SMALL, random_state=5)
    case = rand_case(rng)
    p = forward_prob(net, case)
    shuffled = Network.build("mpfusenet", SMALL, planes=("sagittal", "axial", "coronal"), random_state=99)
    shuffled.set_state(net.get_state())
    assert forward_prob(shuffled, case) == pytest.approx(p, abs=1e-12)
    perm = {k: v[rng.permutation(v.shape[0])] for k, v in case.items()}
    assert forward_prob(net, perm) == pytest.approx(p, abs=1e-12)


def identity_backbone_state(net, planes):
    # one stage, 1 channel, centre tap 1: base model output = relu(x) for 1x1 slices
    state = net.get_state()
    for p in planes:
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        state[f"bm.{p}.conv0.weight"] = w
        state[f"bm.{p}.conv0.bias"] = np.zeros(1)
    return state


def test_mpfusenet_hand_trace():
    cfg = BackboneConfig(channels=(1,), strides=(1,), attention=False, feature_dim=1)
    net = Network.build("mpfusenet", cfg, random_state=0)
    state = identity_backbone_state(net, PLANES)
    state["fc1.weight"], state["fc1.bias"] = np.array([[0.5]]), np.array([0.1])
    state["fc2.weight"], state["fc2.bias"] = np.array([[2.0]]), np.array([-1.0])
    net.set_state(state)
    case = {"axial": np.full((1, 1, 1, 1), 1.0), "coronal": np.full((1, 1, 1, 1), 2.0), "sagittal": np.full((1, 1, 1, 1), -3.0)}
    # relu -> (1, 2, 0); fc1 -> (0.6, 1.1, 0.1); max 1.1; fc2 -> 1.2
    assert forward_prob(net, case) == pytest.approx(sigmoid(1.2), abs=1e-15)


def test_mpfusenet_rejects_mismatched_planes():
    net = Network.build("mpfusenet", SMALL, random_state=0)
    rng = np.random.default_rng(6)
    case = {"axial": rng.normal(size=(2, 1, 8, 8)), "coronal": rng.normal(size=(2, 1, 16, 16)), "sagittal": rng.normal(size=(2, 1, 8, 8))}
    with pytest.raises(FusionError):
        net.forward(case)


# MP2 --------------------------------------------------------------------------


def test_mp2_hand_trace():
    cfg = BackboneConfig(channels=(1,), strides=(1,), attention=False, feature_dim=2)
    net = Network.build("mp2", cfg, random_state=0)
    state = identity_backbone_state(net, PLANES)
    for p, (a, b) in zip(PLANES, [(1.0, -1.0), (0.5, 2.0), (-1.0, 1.0)]):
        state[f"fc1.{p}.weight"] = np.array([[a], [b]])
        state[f"fc1.{p}.bias"] = np.zeros(2)
    state["fc2.weight"] = np.array([[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]])
    state["fc2.bias"] = np.array([0.25])
    net.set_state(state)
    case = {
        "axial": np.array([1.0, 3.0]).reshape(2, 1, 1, 1),
        "coronal": np.array([2.0]).reshape(1, 1, 1, 1),
        "sagittal": np.array([-1.0, 4.0]).reshape(2, 1, 1, 1),
    }
    # axial relu (1,3): fc1 rows (1,-1),(3,-3) -> max (3,-1)
    # coronal relu 2: (1, 4); sagittal relu (0,4): (0,0),(-4,4) -> max (0,4)
    # fc2: 3 + 4 + 0.5*0 + 0.5*4 + 0.25 = 9.25
    assert forward_prob(net, case) == pytest.approx(sigmoid(9.25), abs=1e-15)


def test_mp2_zeroed_planes_depend_on_remaining_plane_only():
    rng = np.random.default_rng(7)
    net = Network.build("mp2", SMALL, random_state=7)
    state = net.get_state()
    state["fc2.weight"][:, SMALL.feature_dim:] = 0.0
    net.set_state(state)
    case = rand_case(rng)
    p = forward_prob(net, case)
    other = dict(case, coronal=rng.normal(size=(6, 1, 8, 8)), sagittal=rng.normal(size=(1, 1, 8, 8)))
    assert forward_prob(net, other) == p


def test_mp2_slice_permutation():
    rng = np.random.default_rng(8)
    net = Network.build("mp2", SMALL, random_state=8)
    case = rand_case(rng, sizes=(5, 3, 4))
    p = forward_prob(net, case)
    for plane in PLANES:
        perm = dict(case, **{plane: case[plane][rng.permutation(case[plane].shape[0])]})
        assert forward_prob(net, perm) == p


# MPLR -------------------------------------------------------------------------


def test_mplr_separable():
    P = np.array([[0.1, 0.2, 0.1], [0.2, 0.1, 0.3], [0.9, 0.8, 0.7], [0.8, 0.9, 0.95]])
    y = np.array([0, 0, 1, 1])
    clf = LogisticFusion(max_iter=20_000).fit(P, y)
    assert clf.score(P, y) == 1.0


def test_mplr_symmetry():
    rng = np.random.default_rng(9)
    P = rng.uniform(size=(300, 3))
    y = (rng.uniform(size=300) < sigmoid(P @ [2.0, -1.0, 0.5])).astype(int)
    w = mplr_fit(P, y)
    flipped = mplr_fit(P, 1 - y)
    npt.assert_allclose(flipped.coef, -w.coef, atol=1e-6)
    assert flipped.intercept == pytest.approx(-w.intercept, abs=1e-6)
    mirrored = mplr_fit(1 - P, y)
    npt.assert_allclose(mirrored.coef, -w.coef, atol=1e-6)
    assert mirrored.intercept == pytest.approx(w.intercept + w.coef.sum(), abs=1e-6)


def test_mplr_recovers_planted_weights():
    rng = np.random.default_rng(10)
    coef, intercept = np.array([4.0, -3.0, 5.0]), -2.0
    P = rng.uniform(size=(10_000, 3))
    y = (rng.uniform(size=10_000) < sigmoid(P @ coef + intercept)).astype(int)
    w = mplr_fit(P, y)
    planted = np.r_[coef, intercept]
    fitted = np.r_[w.coef, w.intercept]
    assert np.linalg.norm(fitted - planted) / np.linalg.norm(planted) < 0.05
    assert w.n_iter < 100_000
    # same optimum as an independent unpenalised solver
    sk = LogisticRegression(penalty=None, tol=1e-12, max_iter=10_000).fit(P, y)
    npt.assert_allclose(fitted, np.r_[sk.coef_[0], sk.intercept_[0]], atol=1e-4)
    npt.assert_allclose(mplr_predict(w, P[:5]), sigmoid(P[:5] @ w.coef + w.intercept))


def test_mplr_degenerate():
    with pytest.raises(DegenerateFitError):
        mplr_fit([[0.1, 0.2, 0.3], [0.3, 0.2, 0.1]], [1, 1])


# training -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_data():
    cfg = SynthConfig(seed=3, n_cases=12, slices_per_plane=(3, 5), height=16, width=16, radius_range=(2, 4), lesion_run=(1, 2))
    return generate_synthetic(cfg)


def test_one_sample_loss_decreases_monotonically(tiny_data):
    case = tiny_data[0]
    net = Network.build("single", SMALL, ("axial",), random_state=0)
    cfg = TrainConfig(learning_rate=FINETUNE_LEARNING_RATE, epochs=50, augment=False, pos_weight=1.0)
    log = run_training(net, [{"axial": case.volumes["axial"].slices}], [case.label], cfg)
    losses = np.array(log.step_losses)
    assert len(losses) == 50
    assert np.all(np.diff(losses) < 0)


def test_training_is_seed_deterministic(tiny_data):
    X = [c.volumes["axial"] for c in tiny_data]
    y = [c.label for c in tiny_data]
    a = MultiViewAttentionClassifier(channels=(2, 3), strides=(2, 2), feature_dim=8, epochs=2, random_state=5).fit(X, y)
    b = MultiViewAttentionClassifier(channels=(2, 3), strides=(2, 2), feature_dim=8, epochs=2, random_state=5).fit(X, y)
    assert a.history_.step_losses == b.history_.step_losses
    npt.assert_array_equal(a.predict_proba(X), b.predict_proba(X))


def test_single_class_training_error(tiny_data):
    X = [c.volumes["axial"] for c in tiny_data[:3]]
    with pytest.raises(TrainingError):
        MultiViewAttentionClassifier(epochs=1).fit(X, [1, 1, 1])
    with pytest.raises(TrainingError):
        train_toy("single", X, [0, 0, 0], TrainConfig(epochs=1))


@pytest.mark.parametrize("strategy", ["single", "mpfusenet", "mp2", "mplr"])
def test_every_strategy_fits_and_checkpoints(tiny_data, strategy, tmp_path):
    X = [c.volumes for c in tiny_data]
    y = [c.label for c in tiny_data]
    clf = MultiViewAttentionClassifier(strategy=strategy, channels=(2, 3), strides=(2, 2), feature_dim=4, epochs=1, random_state=1)
    clf.fit(X, y)
    proba = clf.predict_proba(X)
    assert proba.shape == (len(X), 2)
    npt.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(clf.predict(X)) <= {0, 1}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, clf)
    loaded = load_checkpoint(path)
    assert loaded.get_params() == clf.get_params() | {"channels": (2, 3), "strides": (2, 2)}
    npt.assert_allclose(loaded.predict_proba(X), proba, atol=1e-5)
    save_checkpoint(tmp_path / "again.ckpt", loaded)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_estimator_params_roundtrip():
    clf = MultiViewAttentionClassifier(strategy="mp2", epochs=3)
    c2 = clone(clf)
    assert c2.get_params() == clf.get_params()
    c2.set_params(learning_rate=FINETUNE_LEARNING_RATE)
    assert c2.learning_rate == 1e-5


def test_augment_slices_shape_and_determinism():
    x = np.random.default_rng(11).normal(size=(4, 1, 16, 16))
    a = augment_slices(x, np.random.default_rng(0))
    b = augment_slices(x, np.random.default_rng(0))
    assert a.shape == x.shape
    npt.assert_array_equal(a, b)
    ident = augment_slices(x, np.random.default_rng(0), flip_prob=0.0, max_shift=0.0, max_rotation=0.0)
    npt.assert_array_equal(ident, x)
    flipped = augment_slices(x, np.random.default_rng(0), flip_prob=1.0, max_shift=0.0, max_rotation=0.0)
    npt.assert_array_equal(flipped, x[..., ::-1])
