import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iusim.errors import ConfigError, DegenerateDataError, LabelError, ShapeError
from iusim.neural import (
    EPS,
    PARAM_NAMES,
    Architecture,
    EpuModel,
    LabeledArrays,
    SubNetwork,
    TrainConfig,
    backprop,
    binary_cross_entropy,
    epu_forward,
    evaluate,
    gradient_check,
    loss_and_grads,
    random_tiny_model,
    sgd_momentum_update,
    subnet_forward,
    tiny_architecture,
    train_epu,
)
from iusim.pfm import Image, PfmConfig, decompose


def direct_subnet(params, x):
    """Loop-level evaluation of one branch on a single H x W map, float64."""
    p = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def conv(a, w, b):
        C, H, W = a.shape
        pad = np.zeros((C, H + 2, W + 2))
        pad[:, 1:-1, 1:-1] = a
        out = np.zeros((w.shape[0], H, W))
        for f in range(w.shape[0]):
            for i in range(H):
                for j in range(W):
                    out[f, i, j] = np.sum(pad[:, i : i + 3, j : j + 3] * w[f]) + b[f]
        return out

    def pool(a):
        C, H, W = a.shape
        out = np.zeros((C, H // 2, W // 2))
        for c in range(C):
            for i in range(H // 2):
                for j in range(W // 2):
                    out[c, i, j] = a[c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()
        return out

    a = np.asarray(x, dtype=np.float64)[None]
    a = pool(np.maximum(conv(a, p["conv1_w"], p["conv1_b"]), 0))
    a = pool(np.maximum(conv(a, p["conv2_w"], p["conv2_b"]), 0))
    g = a.mean(axis=(1, 2))
    h = np.maximum(g @ p["dense1_w"] + p["dense1_b"], 0)
    return math.tanh(float(h @ p["dense2_w"][:, 0] + p["dense2_b"][0]))


def pfm_batch(rng, n, size=(8, 8)):
    return rng.uniform(0, 1, size=(n, 4) + size)


def set_responses(model, values):
    """Make every subnet emit a fixed response: zero weights, head bias atanh(v)."""
    for s, v in zip(model.subnets, values):
        for n in PARAM_NAMES:
            s.params[n] = np.zeros_like(s.params[n])
        s.params["dense2_b"] = np.array([math.atanh(v)], dtype=s.dtype)


# --- forward ----------------------------------------------------------------

def test_zero_model_gives_zero_response():
    arch = Architecture()
    r, _ = subnet_forward(SubNetwork.zeros(arch), np.random.default_rng(0).uniform(size=(16, 16)))
    assert r == 0.0
    pred = epu_forward(EpuModel.zeros(PfmConfig.COLOR, (16, 16)), decompose(Image.rgb(np.full((16, 16, 3), 0.3))))
    assert pred.probability == 0.5
    assert np.all(pred.profile.components == 0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("size", [(8, 8), (9, 11)])
def test_forward_matches_direct_evaluation(seed, size):
    rng = np.random.default_rng(seed)
    s = SubNetwork.init(Architecture(filters=(3, 4), hidden=5), rng, np.float64)
    for n in PARAM_NAMES:
        if n.endswith("_b"):
            s.params[n] = rng.uniform(-0.2, 0.2, s.params[n].shape)
    x = rng.uniform(0, 1, size)
    r, _ = subnet_forward(s, x)
    assert abs(r - direct_subnet(s.params, x)) < 1e-6
    r32, _ = subnet_forward(s.astype(np.float32), x)
    assert abs(r32 - direct_subnet(s.params, x)) < 1e-5


def test_forward_is_deterministic(rng):
    s = SubNetwork.init(Architecture(), rng)
    x = rng.uniform(size=(16, 16))
    assert subnet_forward(s, x)[0] == subnet_forward(s, x)[0]


def test_subnet_forward_shape_check(rng):
    s = SubNetwork.init(tiny_architecture(), rng)
    with pytest.raises(ShapeError):
        subnet_forward(s, np.zeros((8, 8)), input_size=(16, 16))
    with pytest.raises(ShapeError):
        subnet_forward(s, np.zeros((8, 8, 2)))


@pytest.mark.parametrize(
    "responses, expected",
    [((0, 0, 0, 0), 0.5), ((1, 1, 1, 1), 1 / (1 + math.exp(-4))), ((1, -1, 1, -1), 0.5)],
)
def test_logistic_of_summed_responses(responses, expected):
    model = EpuModel.zeros(PfmConfig.COLOR, (8, 8), tiny_architecture(), dtype=np.float64)
    clipped = [max(min(v, 1 - 1e-15), -1 + 1e-15) for v in responses]
    set_responses(model, clipped)
    pfm = decompose(Image.rgb(np.full((8, 8, 3), 0.5)))
    pred = epu_forward(model, pfm)
    assert pred.probability == pytest.approx(expected, abs=1e-9)
    assert abs(1 / (1 + math.exp(-4)) - 0.98201) < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.permutations(range(4)))
def test_probability_depends_on_sum_only(seed, perm):
    rng = np.random.default_rng(seed)
    values = rng.uniform(-0.99, 0.99, 4)
    pfm = decompose(Image.rgb(np.full((8, 8, 3), 0.5)))
    a = EpuModel.zeros(PfmConfig.COLOR, (8, 8), tiny_architecture(), dtype=np.float64)
    b = a.copy()
    a.bias = b.bias = np.array([rng.uniform(-1, 1)])
    set_responses(a, values)
    set_responses(b, values[list(perm)])
    pa, pb = epu_forward(a, pfm), epu_forward(b, pfm)
    assert pa.probability == pytest.approx(pb.probability, abs=1e-12)
    expected = 1 / (1 + math.exp(-(a.bias[0] + pa.profile.components.sum())))
    assert abs(pa.probability - expected) < 1e-12
    assert 0 < pa.probability < 1


def test_responses_bounded_on_large_inputs(rng):
    model = EpuModel.init(PfmConfig.COLOR, (8, 8), tiny_architecture(), seed=3)
    r, _ = model.responses(rng.uniform(-1e3, 1e3, (5, 4, 8, 8)))
    assert np.all(np.abs(r) <= 1)


def test_epu_forward_config_and_shape_checks():
    model = EpuModel.zeros(PfmConfig.COLOR, (8, 8), tiny_architecture())
    with pytest.raises(ConfigError):
        epu_forward(model, decompose(Image.gray(np.zeros((8, 8)))))
    with pytest.raises(ShapeError):
        epu_forward(model, decompose(Image.rgb(np.zeros((16, 16, 3)))))
    with pytest.raises(ConfigError):
        EpuModel(model.subnets[:3], 0.0, PfmConfig.COLOR, (8, 8))


# --- loss and gradients -----------------------------------------------------

def test_binary_cross_entropy_values():
    assert binary_cross_entropy(1, 1 - EPS) == pytest.approx(0, abs=1e-6)
    assert binary_cross_entropy(1, 0.5) == pytest.approx(0.69315, abs=1e-5)
    assert binary_cross_entropy(0, 0.5) == pytest.approx(math.log(2), abs=1e-12)
    # clamping keeps the loss finite at the extremes
    assert binary_cross_entropy(1, 0.0) == pytest.approx(-math.log(EPS))
    with pytest.raises(LabelError):
        binary_cross_entropy(2, 0.5)
    with pytest.raises(LabelError):
        binary_cross_entropy(np.array([0, 0.5]), np.array([0.5, 0.5]))


def test_bias_gradient_is_p_minus_y():
    model = EpuModel.zeros(PfmConfig.COLOR, (8, 8), tiny_architecture(), dtype=np.float64)
    pfm = decompose(Image.rgb(np.full((8, 8, 3), 0.2)))
    grads = backprop(model, pfm, 1)
    assert grads["bias"][0] == pytest.approx(-0.5, abs=1e-12)


def test_gradients_vanish_at_perfect_prediction():
    model = EpuModel.zeros(PfmConfig.COLOR, (8, 8), tiny_architecture(), dtype=np.float64)
    pfm = decompose(Image.rgb(np.full((8, 8, 3), 0.2)))
    model.bias = np.array([40.0])
    grads = backprop(model, pfm, 1)
    assert max(float(np.max(np.abs(g))) for g in grads.values()) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_random_tiny_model(seed):
    model = random_tiny_model(seed)
    x = np.random.default_rng(1000 + seed).uniform(0, 1, (2, 4, 8, 8))
    report = gradient_check(model, x, np.array([0, 1]))
    assert report.passed, report.flagged
    assert report.worst < 1e-4


def test_gradient_check_zero_model_passes():
    model = EpuModel.zeros(PfmConfig.COLOR, (8, 8), tiny_architecture(), dtype=np.float64)
    x = np.random.default_rng(0).uniform(0, 1, (1, 4, 8, 8))
    report = gradient_check(model, x, np.array([1]))
    assert report.passed
    # all sub-network gradients are exactly zero, so those groups are reported as error 0
    assert report.errors["subnet0.conv1_w"] == 0.0


def test_gradient_check_flags_injected_fault():
    model = random_tiny_model(7)
    x = np.random.default_rng(7).uniform(0, 1, (1, 4, 8, 8))
    y = np.array([1])
    _, grads, _ = loss_and_grads(model, x, y)
    assert np.max(np.abs(grads["subnet0.conv1_w"])) > 1e-3
    bad = dict(grads)
    bad["subnet0.conv1_w"] = grads["subnet0.conv1_w"] * 2
    report = gradient_check(model, x, y, analytic=bad)
    assert report.flagged == ["subnet0.conv1_w"]


def test_loss_does_not_increase_after_small_step():
    for trial in range(20):
        rng = np.random.default_rng(trial)
        model = random_tiny_model(trial, dtype=np.float64)
        x = pfm_batch(rng, 6)
        y = np.array([0, 1, 0, 1, 1, 0])
        loss0, grads, _ = loss_and_grads(model, x, y)
        params, _ = sgd_momentum_update(model.parameters(), grads, None, TrainConfig(learning_rate=1e-4))
        model.set_parameters(params)
        loss1, _, _ = loss_and_grads(model, x, y)
        assert loss1 <= loss0 + 1e-12, trial


# --- optimiser --------------------------------------------------------------

def test_sgd_zero_gradient_keeps_parameters():
    params = {"w": np.array([1.0, -2.0])}
    new, vel = sgd_momentum_update(params, {"w": np.zeros(2)}, None, TrainConfig())
    assert np.array_equal(new["w"], params["w"])
    assert np.all(vel["w"] == 0)


def test_sgd_plain_and_momentum_recurrence():
    g = np.array([0.5, -1.0])
    theta = {"w": np.array([1.0, 1.0])}
    cfg0 = TrainConfig(learning_rate=0.1, momentum=0.0)
    new, _ = sgd_momentum_update(theta, {"w": g}, None, cfg0)
    assert np.array_equal(new["w"], theta["w"] - 0.1 * g)

    cfg = TrainConfig(learning_rate=0.1, momentum=0.9)
    p1, v1 = sgd_momentum_update(theta, {"w": g}, None, cfg)
    p2, _ = sgd_momentum_update(p1, {"w": g}, v1, cfg)
    np.testing.assert_allclose(p1["w"] - theta["w"], -0.1 * g, atol=1e-15)
    np.testing.assert_allclose(p2["w"] - p1["w"], -1.9 * 0.1 * g, atol=1e-15)


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_momentum_update({"w": np.zeros(2)}, {"w": np.zeros(3)}, None, TrainConfig())


@pytest.mark.parametrize(
    "kwargs", [dict(learning_rate=0), dict(momentum=1.0), dict(momentum=-0.1), dict(batch_size=0)]
)
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


# --- training ---------------------------------------------------------------

def small_split(seed, n=16, size=(8, 8)):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.uniform(0, 1, (n, 4) + size)
    x[:, 0] += 0.3 * (y[:, None, None] - 0.5)
    return LabeledArrays(np.clip(x, 0, 1), y, PfmConfig.COLOR)


def test_max_epochs_zero_returns_initial_model():
    cfg = TrainConfig(max_epochs=0, rng_seed=5)
    model, history = train_epu(small_split(0), small_split(1), cfg, tiny_architecture())
    ref = EpuModel.init(PfmConfig.COLOR, (8, 8), tiny_architecture(), seed=5)
    assert history == []
    for k, v in ref.parameters().items():
        assert np.array_equal(model.parameters()[k], v)


def test_training_is_deterministic():
    cfg = TrainConfig(learning_rate=0.05, batch_size=4, max_epochs=4, rng_seed=9)
    runs = [train_epu(small_split(0), small_split(1), cfg, tiny_architecture()) for _ in range(2)]
    (m1, h1), (m2, h2) = runs
    assert h1 == h2
    for k in m1.parameters():
        assert np.array_equal(m1.parameters()[k], m2.parameters()[k])


def test_training_returns_best_validation_epoch():
    cfg = TrainConfig(learning_rate=0.05, batch_size=4, max_epochs=6, patience=10, rng_seed=2)
    val = small_split(1)
    model, history = train_epu(small_split(0), val, cfg, tiny_architecture())
    best = min(h.val_loss for h in history)
    assert evaluate(model, val)[0] == pytest.approx(best, abs=1e-12)


def test_early_stopping_with_zero_patience():
    # a huge learning rate makes validation loss bounce, so patience 0 ends the run early
    cfg = TrainConfig(learning_rate=5.0, momentum=0.0, batch_size=16, max_epochs=30, patience=0, rng_seed=0)
    _, history = train_epu(small_split(0), small_split(1), cfg, tiny_architecture())
    assert len(history) < 30
    losses = [h.val_loss for h in history]
    assert losses[-1] >= min(losses[:-1])


def test_single_class_training_split_is_rejected():
    tr = small_split(0)
    tr = LabeledArrays(tr.x, np.zeros_like(tr.y), tr.config)
    with pytest.raises(DegenerateDataError):
        train_epu(tr, small_split(1), TrainConfig(max_epochs=1), tiny_architecture())


def test_non_binary_labels_rejected():
    tr = small_split(0)
    tr = LabeledArrays(tr.x, tr.y * 2, tr.config)
    with pytest.raises(LabelError):
        train_epu(tr, small_split(1), TrainConfig(max_epochs=1), tiny_architecture())
