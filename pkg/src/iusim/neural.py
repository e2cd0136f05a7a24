"""Convolutional sub-networks, the additive EPU classifier and its training loop.

Everything is plain numpy with hand-written reverse-mode gradients. Tensors
use NHWC layout; kernels are stored as (out, in, 3, 3).

Sub-network topology (per PFM)::

    conv3x3(F1) -> ReLU -> maxpool2 -> conv3x3(F2) -> ReLU -> maxpool2
    -> global average pool -> dense(hidden) -> ReLU -> dense(1) -> tanh

The EPU model sums the four tanh responses with a scalar bias and applies
the logistic function.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DegenerateDataError,
    EmptySetError,
    LabelError,
    NumericError,
    ShapeError,
)
from .pfm import PfmConfig, PfmSet
from .profile import ContributionProfile

log = logging.getLogger(__name__)

EPS = 1e-7
PARAM_NAMES = (
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "dense1_w",
    "dense1_b",
    "dense2_w",
    "dense2_b",
)


@dataclass(frozen=True)
class Architecture:
    in_channels: int = 1
    filters: tuple = (32, 64)
    hidden: int = 32
    head: str = "tanh"

    def __post_init__(self):
        if self.head not in ("tanh", "linear"):
            raise ConfigError(f"unknown head activation {self.head!r}")
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        if len(self.filters) != 2:
            raise ConfigError("architecture needs exactly two conv blocks")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        try:
            return cls(
                in_channels=int(d["in_channels"]),
                filters=tuple(d["filters"]),
                hidden=int(d["hidden"]),
                head=str(d["head"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad architecture descriptor: {exc}") from exc

    def param_shapes(self) -> dict[str, tuple]:
        f1, f2 = self.filters
        return {
            "conv1_w": (f1, self.in_channels, 3, 3),
            "conv1_b": (f1,),
            "conv2_w": (f2, f1, 3, 3),
            "conv2_b": (f2,),
            "dense1_w": (f2, self.hidden),
            "dense1_b": (self.hidden,),
            "dense2_w": (self.hidden, 1),
            "dense2_b": (1,),
        }


# --- layer primitives -------------------------------------------------------


def _im2col(x):
    """(B,H,W,C) -> (B*H*W, 9*C) patches of the zero-padded input, tap-major."""
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((B, H, W, 9, C), dtype=x.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        cols[:, :, :, k, :] = xp[:, i : i + H, j : j + W, :]
    return cols.reshape(B * H * W, 9 * C)


def _kernel_matrix(w):
    # (F, C, 3, 3) -> (F, 9*C) matching the tap-major patch layout
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def conv3x3_forward(x, w, b):
    """Stride-1, zero-padded ('same') 3x3 convolution. x: (B,H,W,C)."""
    B, H, W, C = x.shape
    cols = _im2col(x)
    out = cols @ _kernel_matrix(w).T + b
    return out.reshape(B, H, W, -1), cols


def conv3x3_backward(dout, cols, x_shape, w, need_dx=True):
    B, H, W, C = x_shape
    F = w.shape[0]
    dflat = dout.reshape(-1, F)
    dw = (dflat.T @ cols).reshape(F, 3, 3, C).transpose(0, 3, 1, 2)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dflat @ _kernel_matrix(w)).reshape(B, H, W, 9, C)
    dxp = np.zeros((B, H + 2, W + 2, C), dtype=dout.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, i : i + H, j : j + W, :] += dcols[:, :, :, k, :]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def maxpool2_forward(x):
    """2x2 max pooling, stride 2; trailing odd row/column is dropped.

    Returns the pooled map and the (first) winning position 0..3 per window.
    """
    B, H, W, C = x.shape
    H2, W2 = H // 2, W // 2
    q = [x[:, di : 2 * H2 : 2, dj : 2 * W2 : 2, :] for di in (0, 1) for dj in (0, 1)]
    out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
    idx = np.where(q[0] == out, 0, np.where(q[1] == out, 1, np.where(q[2] == out, 2, 3))).astype(np.int8)
    return out, idx


def maxpool2_backward(dout, idx, x_shape):
    B, H, W, C = x_shape
    H2, W2 = H // 2, W // 2
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for k, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        dx[:, di : 2 * H2 : 2, dj : 2 * W2 : 2, :] = np.where(idx == k, dout, 0)
    return dx


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


# --- sub-network ------------------------------------------------------------


class SubNetwork:
    """One convolutional branch mapping an (H, W, C) input to a scalar."""

    def __init__(self, arch: Architecture, params: dict):
        shapes = arch.param_shapes()
        missing = set(shapes) - set(params)
        if missing:
            raise ShapeError(f"missing parameters: {sorted(missing)}")
        for name, shape in shapes.items():
            if tuple(np.shape(params[name])) != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {np.shape(params[name])}")
        self.arch = arch
        self.params = {name: np.asarray(params[name]) for name in PARAM_NAMES}

    @classmethod
    def init(cls, arch: Architecture, rng: np.random.Generator, dtype=np.float32) -> "SubNetwork":
        """He-uniform conv/ReLU layers, Xavier-uniform head, zero biases."""
        shapes = arch.param_shapes()
        params = {}
        for name, shape in shapes.items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape, dtype=dtype)
                continue
            if name.startswith("conv"):
                fan_in = shape[1] * 9
                limit = math.sqrt(6.0 / fan_in)
            elif name == "dense1_w":
                limit = math.sqrt(6.0 / shape[0])
            else:
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        return cls(arch, params)

    @classmethod
    def zeros(cls, arch: Architecture, dtype=np.float32) -> "SubNetwork":
        return cls(arch, {n: np.zeros(s, dtype=dtype) for n, s in arch.param_shapes().items()})

    @property
    def dtype(self):
        return self.params["conv1_w"].dtype

    def astype(self, dtype) -> "SubNetwork":
        return SubNetwork(self.arch, {n: p.astype(dtype) for n, p in self.params.items()})

    def copy(self) -> "SubNetwork":
        return SubNetwork(self.arch, {n: p.copy() for n, p in self.params.items()})

    def forward(self, x: np.ndarray):
        """x: (B, H, W, C). Returns (outputs (B,), cache)."""
        p = self.params
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[3] != self.arch.in_channels:
            raise ShapeError(f"expected (B,H,W,{self.arch.in_channels}) input, got {x.shape}")
        # relu(maxpool(c)) == maxpool(relu(c)); pooling first halves the work
        c1, cols1 = conv3x3_forward(x, p["conv1_w"], p["conv1_b"])
        p1, idx1 = maxpool2_forward(c1)
        m1 = np.maximum(p1, 0)
        c2, cols2 = conv3x3_forward(m1, p["conv2_w"], p["conv2_b"])
        p2, idx2 = maxpool2_forward(c2)
        m2 = np.maximum(p2, 0)
        g = m2.mean(axis=(1, 2))
        h_pre = g @ p["dense1_w"] + p["dense1_b"]
        h = np.maximum(h_pre, 0)
        z = (h @ p["dense2_w"] + p["dense2_b"])[:, 0]
        out = np.tanh(z) if self.arch.head == "tanh" else z
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite sub-network output")
        cache = dict(
            x_shape=x.shape, cols1=cols1, c1_shape=c1.shape, p1=p1, idx1=idx1,
            m1_shape=m1.shape, cols2=cols2, c2_shape=c2.shape, p2=p2, idx2=idx2,
            m2_shape=m2.shape, g=g, h_pre=h_pre, h=h, out=out,
        )
        return out, cache

    def backward(self, dout: np.ndarray, cache: dict) -> dict:
        """Gradients of a scalar objective w.r.t. every parameter, given d(obj)/d(out)."""
        p = self.params
        dout = np.asarray(dout, dtype=self.dtype)
        if self.arch.head == "tanh":
            dz = dout * (1 - cache["out"] ** 2)
        else:
            dz = dout
        dz = dz[:, None]
        grads = {}
        grads["dense2_w"] = cache["h"].T @ dz
        grads["dense2_b"] = dz.sum(axis=0)
        dh = (dz @ p["dense2_w"].T) * (cache["h_pre"] > 0)
        grads["dense1_w"] = cache["g"].T @ dh
        grads["dense1_b"] = dh.sum(axis=0)
        dg = dh @ p["dense1_w"].T
        B, H2, W2, F2 = cache["m2_shape"]
        dm2 = np.broadcast_to(dg[:, None, None, :] / (H2 * W2), cache["m2_shape"])
        dc2 = maxpool2_backward(dm2 * (cache["p2"] > 0), cache["idx2"], cache["c2_shape"])
        dm1, grads["conv2_w"], grads["conv2_b"] = conv3x3_backward(
            dc2, cache["cols2"], cache["m1_shape"], p["conv2_w"]
        )
        dc1 = maxpool2_backward(dm1 * (cache["p1"] > 0), cache["idx1"], cache["c1_shape"])
        _, grads["conv1_w"], grads["conv1_b"] = conv3x3_backward(
            dc1, cache["cols1"], cache["x_shape"], p["conv1_w"], need_dx=False
        )
        return {n: grads[n].astype(self.dtype, copy=False) for n in PARAM_NAMES}


def subnet_forward(params: SubNetwork, pfm: np.ndarray, input_size=None):
    """Evaluate one sub-network on a single H x W map.

    Returns ``(response, trace)`` where ``trace`` keeps the intermediates the
    backward pass needs.
    """
    pfm = np.asarray(pfm)
    if pfm.ndim != 2:
        raise ShapeError(f"expected an H x W map, got shape {pfm.shape}")
    if input_size is not None and tuple(pfm.shape) != tuple(input_size):
        raise ShapeError(f"map shape {pfm.shape} does not match input size {tuple(input_size)}")
    out, trace = params.forward(pfm[None, :, :, None])
    return float(out[0]), trace


# --- additive model ---------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    probability: float
    profile: ContributionProfile
    logit: float


class EpuModel:
    """Bias plus one sub-network per PFM; P(y=1) = logistic(b + sum_i f_i(I_i))."""

    n_maps = 4

    def __init__(self, subnets, bias, pfm_config: PfmConfig, input_size):
        subnets = list(subnets)
        if len(subnets) != self.n_maps:
            raise ConfigError(f"EPU model needs {self.n_maps} sub-networks, got {len(subnets)}")
        for s in subnets:
            if s.arch.in_channels != 1 or s.arch.head != "tanh":
                raise ConfigError("EPU sub-networks take one map and end in tanh")
        self.subnets = subnets
        dtype = subnets[0].dtype
        self.bias = np.asarray(bias, dtype=dtype).reshape(1)
        self.pfm_config = PfmConfig(pfm_config)
        self.input_size = (int(input_size[0]), int(input_size[1]))

    @classmethod
    def init(cls, pfm_config, input_size, arch=None, rng=None, seed=0, dtype=np.float32):
        arch = arch or Architecture()
        rng = rng if rng is not None else np.random.default_rng(seed)
        subnets = [SubNetwork.init(arch, rng, dtype) for _ in range(cls.n_maps)]
        return cls(subnets, 0.0, pfm_config, input_size)

    @classmethod
    def zeros(cls, pfm_config, input_size, arch=None, dtype=np.float32):
        arch = arch or Architecture()
        return cls([SubNetwork.zeros(arch, dtype) for _ in range(cls.n_maps)], 0.0, pfm_config, input_size)

    @property
    def arch(self) -> Architecture:
        return self.subnets[0].arch

    @property
    def dtype(self):
        return self.subnets[0].dtype

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, s in enumerate(self.subnets):
            for n in PARAM_NAMES:
                out[f"subnet{i}.{n}"] = s.params[n]
        out["bias"] = self.bias
        return out

    def set_parameters(self, params: dict) -> None:
        for i, s in enumerate(self.subnets):
            for n in PARAM_NAMES:
                s.params[n] = params[f"subnet{i}.{n}"]
        self.bias = params["bias"]

    def copy(self) -> "EpuModel":
        return EpuModel([s.copy() for s in self.subnets], self.bias.copy(), self.pfm_config, self.input_size)

    def astype(self, dtype) -> "EpuModel":
        return EpuModel([s.astype(dtype) for s in self.subnets], self.bias.astype(dtype), self.pfm_config, self.input_size)

    def _check_batch(self, x):
        if x.ndim != 4 or x.shape[1] != self.n_maps or tuple(x.shape[2:]) != self.input_size:
            raise ShapeError(
                f"expected PFM batch (B, 4, {self.input_size[0]}, {self.input_size[1]}), got {x.shape}"
            )

    def responses(self, x: np.ndarray):
        """x: (B, 4, H, W) PFM stacks. Returns (responses (B, 4), caches)."""
        x = np.asarray(x, dtype=self.dtype)
        self._check_batch(x)
        outs, caches = [], []
        for i, s in enumerate(self.subnets):
            o, c = s.forward(x[:, i, :, :, None])
            outs.append(o)
            caches.append(c)
        return np.stack(outs, axis=1), caches

    def forward_batch(self, x):
        r, caches = self.responses(x)
        logit = float(self.bias[0]) + r.astype(np.float64).sum(axis=1)
        return logit, (r, caches)

    def backward_batch(self, dlogit, cache) -> dict:
        _, caches = cache
        grads = {}
        for i, (s, c) in enumerate(zip(self.subnets, caches)):
            for n, g in s.backward(dlogit, c).items():
                grads[f"subnet{i}.{n}"] = g
        grads["bias"] = np.array([np.sum(dlogit)], dtype=self.dtype)
        return grads


class PlainClassifier:
    """Single sub-network on the raw image with a linear head; P = logistic(output)."""

    def __init__(self, subnet: SubNetwork, input_size):
        self.subnet = subnet
        self.input_size = (int(input_size[0]), int(input_size[1]))

    @classmethod
    def init(cls, in_channels, input_size, filters=(32, 64), hidden=32, rng=None, seed=0, dtype=np.float32):
        arch = Architecture(in_channels=in_channels, filters=filters, hidden=hidden, head="linear")
        rng = rng if rng is not None else np.random.default_rng(seed)
        return cls(SubNetwork.init(arch, rng, dtype), input_size)

    @property
    def dtype(self):
        return self.subnet.dtype

    def parameters(self):
        return dict(self.subnet.params)

    def set_parameters(self, params):
        self.subnet.params.update({n: params[n] for n in PARAM_NAMES})

    def copy(self):
        return PlainClassifier(self.subnet.copy(), self.input_size)

    def forward_batch(self, x):
        out, cache = self.subnet.forward(x)
        return out.astype(np.float64), cache

    def backward_batch(self, dlogit, cache):
        return self.subnet.backward(dlogit, cache)


def epu_forward(model: EpuModel, pfms: PfmSet) -> Prediction:
    if pfms.config is not model.pfm_config:
        raise ConfigError(
            f"PFM config {pfms.config.value} does not match model config {model.pfm_config.value}"
        )
    if tuple(pfms.shape) != model.input_size:
        raise ShapeError(f"PFM shape {pfms.shape} does not match model input size {model.input_size}")
    logit, (r, _) = model.forward_batch(pfms.stack(model.dtype)[None])
    profile = ContributionProfile(r[0].astype(np.float64), model.pfm_config)
    return Prediction(float(sigmoid(logit[0])), profile, float(logit[0]))


# --- objective --------------------------------------------------------------


def _check_labels(y):
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise LabelError(f"labels must be 0 or 1, got {np.unique(y)[:5].tolist()}")
    return y.astype(np.float64)


def binary_cross_entropy(y, p):
    """-y ln p - (1-y) ln(1-p) with p clamped to [EPS, 1-EPS]. Vectorised; 64-bit."""
    y = _check_labels(y)
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)
    loss = -y * np.log(p) - (1.0 - y) * np.log1p(-p)
    return float(loss) if loss.ndim == 0 else loss


def _as_batch(model, pfms, y):
    if isinstance(pfms, PfmSet):
        if pfms.config is not model.pfm_config:
            raise ConfigError(
                f"PFM config {pfms.config.value} does not match model config {model.pfm_config.value}"
            )
        x = pfms.stack(model.dtype)[None]
    else:
        x = np.asarray(pfms, dtype=model.dtype)
    y = np.atleast_1d(_check_labels(y))
    if len(y) != len(x):
        raise ShapeError(f"{len(x)} inputs but {len(y)} labels")
    return x, y


def loss_and_grads(model, x, y):
    """Mean BCE over the batch and its exact gradients."""
    logit, cache = model.forward_batch(x)
    p = sigmoid(logit)
    loss = float(np.mean(binary_cross_entropy(y, p)))
    dlogit = (p - y) / len(y)
    return loss, model.backward_batch(dlogit, cache), p


def backprop(model: EpuModel, pfms, y) -> dict:
    """Gradients of the mean binary cross-entropy w.r.t. every parameter.

    ``pfms`` is a PfmSet (with scalar ``y``) or a (B, 4, H, W) batch.
    """
    x, y = _as_batch(model, pfms, y)
    return loss_and_grads(model, x, y)[1]


# --- optimisation -----------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 10
    rng_seed: int = 42

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0 or self.patience < 0:
            raise ConfigError("max_epochs and patience must be >= 0")


def sgd_momentum_update(params: dict, grads: dict, velocity: dict | None, config: TrainConfig):
    """Heavy-ball step: v' = m v - lr g ; theta' = theta + v'. Returns new dicts."""
    if velocity is None:
        velocity = {k: np.zeros_like(v) for k, v in params.items()}
    new_params, new_velocity = {}, {}
    for k, theta in params.items():
        g, v = grads[k], velocity[k]
        if np.shape(g) != np.shape(theta) or np.shape(v) != np.shape(theta):
            raise ShapeError(f"{k}: parameter {np.shape(theta)}, gradient {np.shape(g)}, velocity {np.shape(v)}")
        dtype = np.asarray(theta).dtype
        v_new = (config.momentum * v - config.learning_rate * g).astype(dtype)
        new_velocity[k] = v_new
        new_params[k] = (theta + v_new).astype(dtype)
    return new_params, new_velocity


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class LabeledArrays:
    """Stacked model inputs with binary labels."""

    x: np.ndarray
    y: np.ndarray
    config: PfmConfig | None = None
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.y)


def predict_proba(model, x, batch_size=256) -> np.ndarray:
    out = []
    for start in range(0, len(x), batch_size):
        logit, _ = model.forward_batch(x[start : start + batch_size])
        out.append(sigmoid(logit))
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model, data: LabeledArrays, batch_size=256) -> tuple[float, float]:
    p = predict_proba(model, data.x, batch_size)
    y = data.y.astype(np.float64)
    loss = float(np.mean(binary_cross_entropy(y, p)))
    acc = float(np.mean((p >= 0.5) == (y == 1)))
    return loss, acc


def fit(model, train: LabeledArrays, val: LabeledArrays, config: TrainConfig, callback=None):
    """Mini-batch SGD with momentum and early stopping on validation loss.

    Returns a copy of the best-validation-loss model and the per-epoch history.
    """
    if len(train) == 0 or len(val) == 0:
        raise EmptySetError("training and validation splits must be non-empty")
    ytr = _check_labels(train.y)
    _check_labels(val.y)
    if len(np.unique(ytr)) < 2:
        raise DegenerateDataError("training split contains a single class")
    shuffle_rng = np.random.default_rng([config.rng_seed, 1])
    x = np.asarray(train.x, dtype=model.dtype)
    best = model.copy()
    best_loss = math.inf
    since_best = 0
    velocity = None
    history = []
    n = len(ytr)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads, p = loss_and_grads(model, x[idx], ytr[idx])
            total += loss * len(idx)
            correct += int(np.sum((p >= 0.5) == (ytr[idx] == 1)))
            params, velocity = sgd_momentum_update(model.parameters(), grads, velocity, config)
            model.set_parameters(params)
        val_loss, val_acc = evaluate(model, val)
        if not math.isfinite(val_loss):
            raise NumericError(f"validation loss became non-finite at epoch {epoch}")
        rec = EpochRecord(epoch, total / n, correct / n, val_loss, val_acc)
        history.append(rec)
        log.debug("epoch %d: %s", epoch, rec)
        if callback is not None:
            callback(rec)
        if val_loss < best_loss:
            best_loss, best, since_best = val_loss, model.copy(), 0
        else:
            since_best += 1
            if since_best > config.patience:
                break
    return best, history


def train_epu(train: LabeledArrays, val: LabeledArrays, config: TrainConfig, arch=None, callback=None):
    """Jointly train all sub-networks and the bias of a fresh EPU model.

    ``train.x`` / ``val.x`` are (n, 4, H, W) PFM stacks.
    """
    if train.config is not None and val.config is not None and train.config is not val.config:
        raise ConfigError("train and validation splits use different PFM configs")
    cfg = train.config or PfmConfig.COLOR
    input_size = tuple(np.shape(train.x)[2:]) if len(train) else (0, 0)
    model = EpuModel.init(cfg, input_size, arch, seed=config.rng_seed)
    if config.max_epochs == 0:
        return model, []
    return fit(model, train, val, config, callback)


# --- verification -----------------------------------------------------------


@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float
    flagged: list
    shrunk_steps: int = 0

    @property
    def passed(self) -> bool:
        return not self.flagged

    @property
    def worst(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def _relative_error(analytic, numeric, floor=1e-8) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    if scale < floor:
        return 0.0
    return float(np.max(np.abs(analytic - numeric))) / scale


def _activation_pattern(cache):
    return (cache["p1"] > 0, cache["idx1"], cache["p2"] > 0, cache["idx2"], cache["h_pre"] > 0)


def _same_pattern(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def gradient_check(model: EpuModel, pfms, y, step=1e-4, tolerance=1e-4, analytic=None,
                   min_step_ratio=1e-3) -> GradCheckReport:
    """Compare backprop against central finite differences, per parameter group.

    Runs on a 64-bit copy of ``model``. ``analytic`` overrides the gradients
    under test (fault injection). A group's error is its largest absolute
    discrepancy over the group's largest gradient magnitude; groups whose
    gradients are all below 1e-8 in both routes count as exact.

    ReLU and max-pool are piecewise linear. When the +/- stencil of an element
    changes the activation pattern the difference quotient straddles a kink, so
    the step for that element is shrunk (by 10x, down to ``step *
    min_step_ratio``) until both sides share the unperturbed pattern.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    m = model.astype(np.float64)
    x, yb = _as_batch(m, pfms, y)
    if analytic is None:
        analytic = loss_and_grads(m, x, yb)[1]
    base_r, _ = m.responses(x)

    def loss_from(r):
        p = sigmoid(float(m.bias[0]) + r.sum(axis=1))
        return float(np.mean(binary_cross_entropy(yb, p)))

    numeric = {}
    shrunk = 0
    for i, s in enumerate(m.subnets):
        xi = x[:, i, :, :, None]
        base_pattern = _activation_pattern(s.forward(xi)[1])
        for n in PARAM_NAMES:
            theta = s.params[n]
            g = np.zeros_like(theta)
            flat = theta.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                h = step
                while True:
                    vals, stable = [], True
                    for sign in (1.0, -1.0):
                        flat[k] = orig + sign * h
                        out, cache = s.forward(xi)
                        stable = stable and _same_pattern(_activation_pattern(cache), base_pattern)
                        r = base_r.copy()
                        r[:, i] = out
                        vals.append(loss_from(r))
                    flat[k] = orig
                    if stable or h <= step * min_step_ratio:
                        break
                    h /= 10.0
                shrunk += h < step
                g.reshape(-1)[k] = (vals[0] - vals[1]) / (2 * h)
            numeric[f"subnet{i}.{n}"] = g
    b0 = float(m.bias[0])
    vals = []
    for sign in (1.0, -1.0):
        p = sigmoid(b0 + sign * step + base_r.sum(axis=1))
        vals.append(float(np.mean(binary_cross_entropy(yb, p))))
    numeric["bias"] = np.array([(vals[0] - vals[1]) / (2 * step)])

    errors = {k: _relative_error(np.asarray(analytic[k], dtype=np.float64), numeric[k]) for k in numeric}
    flagged = sorted(k for k, e in errors.items() if e > tolerance)
    return GradCheckReport(errors, tolerance, flagged, shrunk)


def tiny_architecture() -> Architecture:
    """Small topology used by gradient checks and fast tests."""
    return Architecture(in_channels=1, filters=(2, 3), hidden=4, head="tanh")


def random_tiny_model(seed: int, input_size=(8, 8), pfm_config=PfmConfig.COLOR, dtype=np.float64) -> EpuModel:
    """Randomly initialised tiny model with non-zero biases."""
    rng = np.random.default_rng(seed)
    model = EpuModel.init(pfm_config, input_size, tiny_architecture(), rng=rng, dtype=dtype)
    for s in model.subnets:
        for n in PARAM_NAMES:
            if n.endswith("_b"):
                s.params[n] = rng.uniform(-0.1, 0.1, size=s.params[n].shape).astype(dtype)
    model.bias = np.array([rng.uniform(-0.5, 0.5)], dtype=dtype)
    return model
