"""Displacement regression network for wheel-mounted IMUs.

Architecture (per sensor window of 3 axes x 120 samples):

    acc  -> conv(3x5, 16) -> ReLU -> conv(1x5, 16) -> ReLU --+
                                                             +-> concat(gyro, acc)
    gyro -> conv(3x5, 16) -> ReLU -> conv(1x5, 16) -> ReLU --+
        -> conv(1x5, 32) -> ReLU -> flatten -> FC 512 -> ReLU -> FC 32 -> ReLU
        -> linear 10 -> reshape (5, 2)

Each output row is the planar displacement over one RTK interval (0.2 s at
5 Hz, 24 IMU samples). Channel counts and kernel sizes are configurable; the
defaults above are placeholders. The output layer is linear so negative
displacements are representable.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, NamedTuple, Sequence, Union

import numpy as np

from .core import IMU_RATE_HZ, RTK_RATE_HZ, Trajectory
from .errors import (
    ConfigError,
    ContiguityError,
    DivergenceError,
    EmptyInputError,
    ShapeError,
)
from .tensornet import AdamState, Tape, Tensor, adam_step, load_arrays, save_arrays

log = logging.getLogger(__name__)

SAMPLES_PER_INTERVAL = int(IMU_RATE_HZ / RTK_RATE_HZ)  # 24


@dataclass(frozen=True)
class ModelConfig:
    head_conv1: tuple = (16, (3, 5))
    head_conv2: tuple = (16, (1, 5))
    trunk_conv: tuple = (32, (1, 5))
    fc_sizes: tuple = (512, 32)
    intervals: int = 5
    window: int = 120
    axes: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.window != SAMPLES_PER_INTERVAL * self.intervals:
            raise ConfigError(
                f"window {self.window} must equal {SAMPLES_PER_INTERVAL} x intervals "
                f"({self.intervals}); each RTK interval spans {SAMPLES_PER_INTERVAL} IMU samples"
            )
        if any(s <= 0 for s in self.fc_sizes) or len(self.fc_sizes) != 2:
            raise ConfigError("fc_sizes must be two positive layer widths")
        h, w = self.axes, self.window
        for ch, (kh, kw) in (self.head_conv1, self.head_conv2, self.trunk_conv):
            h, w = h - kh + 1, w - kw + 1
            if ch <= 0 or kh < 1 or kw < 1 or h < 1 or w < 1:
                raise ConfigError("convolution stack does not fit the input window")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        for key in ("head_conv1", "head_conv2", "trunk_conv"):
            if key in d:
                ch, k = d[key]
                d[key] = (int(ch), tuple(int(v) for v in k))
        if "fc_sizes" in d:
            d["fc_sizes"] = tuple(int(v) for v in d["fc_sizes"])
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def layer_shapes(self):
        """Ordered parameter shapes, keyed by parameter name."""
        c1, (h1, w1) = self.head_conv1
        c2, (h2, w2) = self.head_conv2
        c3, (h3, w3) = self.trunk_conv
        shapes = {}
        for head in ("acc", "gyro"):
            shapes[f"{head}.conv1.w"] = (c1, 1, h1, w1)
            shapes[f"{head}.conv1.b"] = (c1,)
            shapes[f"{head}.conv2.w"] = (c2, c1, h2, w2)
            shapes[f"{head}.conv2.b"] = (c2,)
        shapes["trunk.w"] = (c3, 2 * c2, h3, w3)
        shapes["trunk.b"] = (c3,)
        oh = self.axes - h1 - h2 - h3 + 3
        ow = self.window - w1 - w2 - w3 + 3
        n_flat = c3 * oh * ow
        f1, f2 = self.fc_sizes
        shapes["fc1.w"] = (f1, n_flat)
        shapes["fc1.b"] = (f1,)
        shapes["fc2.w"] = (f2, f1)
        shapes["fc2.b"] = (f2,)
        shapes["out.w"] = (2 * self.intervals, f2)
        shapes["out.b"] = (2 * self.intervals,)
        return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    params: dict

    def parameter_count(self):
        return int(sum(p.size for p in self.params.values()))

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.params.items()})


class DisplacementPrediction(NamedTuple):
    deltas: np.ndarray  # (intervals, 2)


@dataclass(frozen=True)
class TrainHyperparams:
    learning_rate: float = 0.002
    batch_size: int = 128
    epochs: int = 400
    window_size: int = 120
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size <= 0 or self.epochs <= 0 or self.window_size <= 0:
            raise ConfigError("hyperparameters must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")


@dataclass(frozen=True)
class WcWeights:
    """Weights of the two per-wheel MSE terms and the wheelbase term.

    ``penalty`` selects how the wheelbase residual enters the loss: ``signed``
    uses it as is; ``abs`` and ``squared`` make the term bounded below.
    """

    alpha: float = 0.5
    beta: float = 0.4
    gamma: float = 0.1
    d: float = 0.192
    penalty: str = "signed"

    def __post_init__(self):
        if not self.d > 0:
            raise ConfigError("wheelbase d must be positive")
        if self.penalty not in ("signed", "abs", "squared"):
            raise ConfigError(f"unknown wheelbase penalty {self.penalty!r}")


def build_model(config: ModelConfig = None) -> ModelParams:
    """Fresh parameters: He-style uniform weights, zero biases, seeded."""
    config = config or ModelConfig()
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in config.layer_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams(config, params)


def _graph(tape: Tape, p, acc, gyro, config: ModelConfig):
    """Batched forward pass. ``acc``/``gyro`` are (N, 3, window)."""

    def head(x, name):
        h = tape.relu(tape.conv2d(x, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"]))
        return tape.relu(tape.conv2d(h, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"]))

    h_acc = head(acc[:, None], "acc")
    h_gyro = head(gyro[:, None], "gyro")
    h = tape.concat([h_gyro, h_acc], axis=1)
    h = tape.relu(tape.conv2d(h, p["trunk.w"], p["trunk.b"]))
    h = tape.flatten(h)
    h = tape.relu(tape.dense(h, p["fc1.w"], p["fc1.b"]))
    h = tape.relu(tape.dense(h, p["fc2.w"], p["fc2.b"]))
    out = tape.dense(h, p["out.w"], p["out.b"])
    return tape.reshape(out, (acc.shape[0], config.intervals, 2))


def _check_inputs(acc, gyro, config):
    acc = np.asarray(acc, dtype=np.float64)
    gyro = np.asarray(gyro, dtype=np.float64)
    want = (config.axes, config.window)
    if acc.shape[-2:] != want or gyro.shape[-2:] != want or acc.shape != gyro.shape:
        raise ShapeError(f"inputs must be {want} per window, got {acc.shape} and {gyro.shape}")
    return acc, gyro


def predict_batch(model: ModelParams, acc, gyro, chunk=256):
    """Predicted deltas for (N, 3, window) inputs, shape (N, intervals, 2)."""
    acc, gyro = _check_inputs(acc, gyro, model.config)
    tape = Tape(record=False)
    outs = [
        _graph(tape, model.params, acc[i : i + chunk], gyro[i : i + chunk], model.config).data
        for i in range(0, acc.shape[0], chunk)
    ]
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, model.config.intervals, 2))


def forward(model: ModelParams, acc, gyro) -> DisplacementPrediction:
    acc, gyro = _check_inputs(acc, gyro, model.config)
    if acc.ndim != 2:
        raise ShapeError("forward takes a single window; use predict_batch for batches")
    return DisplacementPrediction(predict_batch(model, acc[None], gyro[None])[0])


def _deltas(x):
    return x.deltas if isinstance(x, DisplacementPrediction) else x


def loss_single(pred, target) -> float:
    """MSE over the displacement rows of one window."""
    p = np.asarray(_deltas(pred), dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    return float(Tape(record=False).mse(p, t).data)


def wheelbase_residual(p1, p2, d) -> float:
    """Signed gap between the known wheelbase and the predicted wheel separation."""
    dx = p1[0] - p2[0]
    dy = p1[1] - p2[1]
    return float(d - np.sqrt(dx * dx + dy * dy))


def _wc_graph(tape: Tape, pred1, pred2, gt1, gt2, anchors1, anchors2, w: WcWeights):
    """J = alpha*MSE1 + beta*MSE2 + gamma*mean_k penalty(L_d,k) over (N, K, 2) inputs."""
    n = _rows(pred1)
    mse1 = tape.mse(tape.reshape(pred1, (n, 2)), np.reshape(gt1, (n, 2)))
    mse2 = tape.mse(tape.reshape(pred2, (n, 2)), np.reshape(gt2, (n, 2)))
    pos1 = tape.add(anchors1, pred1)
    pos2 = tape.add(anchors2, pred2)
    sep = tape.sqrt(tape.sum(tape.square(tape.sub(pos1, pos2)), axis=-1))
    resid = tape.shift(tape.scale(sep, -1.0), w.d)
    if w.penalty == "abs":
        resid = tape.abs(resid)
    elif w.penalty == "squared":
        resid = tape.square(resid)
    return tape.weighted_sum([mse1, mse2, tape.mean(resid)], [w.alpha, w.beta, w.gamma])


def _rows(x):
    d = x.data if isinstance(x, Tensor) else np.asarray(x)
    return int(np.prod(d.shape[:-1]))


def loss_wc(pred1, pred2, gt1, gt2, anchors1, anchors2, weights: WcWeights = None) -> float:
    weights = weights or WcWeights()
    arrs = [np.asarray(_deltas(a), dtype=np.float64) for a in (pred1, pred2, gt1, gt2, anchors1, anchors2)]
    if len({a.shape for a in arrs}) != 1 or arrs[0].shape[-1] != 2:
        raise ShapeError("wheelbase loss inputs must share one (..., 2) shape")
    return float(_wc_graph(Tape(record=False), *arrs, weights).data)


# -- training ------------------------------------------------------------


@dataclass
class WcModel:
    """Two wheel models trained jointly; ``shared`` ties both to one parameter set."""

    front: ModelParams
    rear: ModelParams
    shared: bool = False

    @classmethod
    def build(cls, config: ModelConfig = None, shared=False):
        config = config or ModelConfig()
        front = build_model(config)
        if shared:
            return cls(front, front, True)
        rear = build_model(ModelConfig.from_dict({**config.to_dict(), "seed": config.seed + 1}))
        return cls(front, rear, False)


class WcPair(NamedTuple):
    front: Any  # a TrainingWindow
    rear: Any


@dataclass
class TrainHistory:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    steps: int = 0

    def write(self, path):
        with open(path, "w") as fh:
            fh.write("# epoch train_loss val_loss\n")
            for i, tr in enumerate(self.train):
                va = self.val[i] if i < len(self.val) else float("nan")
                fh.write(f"{i + 1} {tr!r} {va!r}\n")


def _stack(windows):
    acc = np.stack([w.acc for w in windows])
    gyro = np.stack([w.gyro for w in windows])
    target = np.stack([w.target for w in windows])
    anchors = np.stack([np.asarray(getattr(w, "anchors", np.zeros_like(w.target))) for w in windows])
    return acc, gyro, target, anchors


class _Objective:
    """Batch loss and gradients over a flat parameter dict."""

    def __init__(self, model, kind, wc):
        self.kind = kind
        self.wc = wc or WcWeights()
        if kind == "single":
            self.config = model.config
            self.flat = dict(model.params)
        else:
            self.config = model.front.config
            if model.shared:
                self.flat = {f"shared/{k}": v for k, v in model.front.params.items()}
            else:
                self.flat = {f"front/{k}": v for k, v in model.front.params.items()}
                self.flat.update({f"rear/{k}": v for k, v in model.rear.params.items()})
        self.model = model

    def _views(self, flat):
        if self.kind == "single":
            return flat, None
        if self.model.shared:
            p = {k.split("/", 1)[1]: v for k, v in flat.items()}
            return p, p
        front = {k[6:]: v for k, v in flat.items() if k.startswith("front/")}
        rear = {k[5:]: v for k, v in flat.items() if k.startswith("rear/")}
        return front, rear

    def loss(self, flat, batch, tape):
        """Returns the loss tensor for ``batch`` (stacked arrays)."""
        p1, p2 = self._views(flat)
        if self.kind == "single":
            acc, gyro, target, _ = batch
            pred = _graph(tape, p1, acc, gyro, self.config)
            n = target.shape[0] * target.shape[1]
            return tape.mse(tape.reshape(pred, (n, 2)), target.reshape(n, 2))
        (a1, g1, t1, an1), (a2, g2, t2, an2) = batch
        pred1 = _graph(tape, p1, a1, g1, self.config)
        pred2 = _graph(tape, p2, a2, g2, self.config)
        return _wc_graph(tape, pred1, pred2, t1, t2, an1, an2, self.wc)

    def value_and_grad(self, flat, batch):
        tape = Tape()
        tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in flat.items()}
        loss = self.loss(tensors, batch, tape)
        return loss.item(), tape.gradients(loss, tensors)

    def value(self, flat, batch):
        return float(self.loss(flat, batch, Tape(record=False)).data)

    def unpack(self, flat):
        p1, p2 = self._views(flat)
        if self.kind == "single":
            return ModelParams(self.config, p1)
        front = ModelParams(self.config, p1)
        rear = front if self.model.shared else ModelParams(self.model.rear.config, p2)
        return WcModel(front, rear, self.model.shared)


def _take(stacked, idx):
    return tuple(a[idx] for a in stacked)


def train(model, dataset: Sequence, hp: TrainHyperparams = None, loss="single", wc: WcWeights = None):
    """Adam minibatch training.

    ``loss="single"`` trains a :class:`ModelParams` on training windows;
    ``loss="wc"`` trains a :class:`WcModel` on :class:`WcPair` items under the
    wheelbase-constrained loss. Returns ``(model, history)`` where
    ``history.train`` holds the per-epoch mean training loss.
    """
    hp = hp or TrainHyperparams()
    if loss in ("mse", "single"):
        kind = "single"
    elif loss == "wc":
        kind = "wc"
    else:
        raise ConfigError(f"unknown loss {loss!r}")
    if not dataset:
        raise EmptyInputError("training dataset is empty")
    if kind == "wc" and not isinstance(model, WcModel):
        raise ConfigError("wheelbase-constrained training needs a WcModel")
    if kind == "single" and not isinstance(model, ModelParams):
        raise ConfigError("single-wheel training needs ModelParams")

    obj = _Objective(model, kind, wc)
    if obj.config.window != hp.window_size:
        raise ConfigError(f"model window {obj.config.window} != hyperparameter window {hp.window_size}")
    if kind == "single":
        stacked = _stack(dataset)
        n = stacked[0].shape[0]
    else:
        stacked = (_stack([p.front for p in dataset]), _stack([p.rear for p in dataset]))
        n = stacked[0][0].shape[0]

    def take(idx):
        if kind == "single":
            return _take(stacked, idx)
        return (_take(stacked[0], idx), _take(stacked[1], idx))

    rng = np.random.default_rng(hp.seed)
    n_val = int(np.floor(hp.val_fraction * n))
    if n - n_val < 1:
        n_val = 0
    order0 = rng.permutation(n) if n_val else np.arange(n)
    val_idx = np.sort(order0[:n_val])
    train_idx = np.sort(order0[n_val:])
    val_batch = take(val_idx) if n_val else None

    flat = obj.flat
    state = AdamState.zeros_like(flat)
    history = TrainHistory()
    n_train = train_idx.size
    for epoch in range(1, hp.epochs + 1):
        perm = train_idx[rng.permutation(n_train)]
        total = 0.0
        for start in range(0, n_train, hp.batch_size):
            idx = perm[start : start + hp.batch_size]
            value, grads = obj.value_and_grad(flat, take(idx))
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}", epoch=epoch)
            total += value * idx.size
            flat, state = adam_step(flat, grads, state, hp.learning_rate)
        history.train.append(total / n_train)
        if val_batch is not None:
            v = obj.value(flat, val_batch)
            if not np.isfinite(v):
                raise DivergenceError(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
            history.val.append(v)
        if epoch == 1 or epoch % 50 == 0 or epoch == hp.epochs:
            log.info("epoch %d train %.6g%s", epoch, history.train[-1],
                     f" val {history.val[-1]:.6g}" if history.val else "")
    history.steps = state.step
    return obj.unpack(flat), history


# -- inference -----------------------------------------------------------

Predictor = Union[ModelParams, Callable[[object], np.ndarray]]


def infer_trajectory(model: Predictor, windows: Sequence, origin=(0.0, 0.0), rate_hz=IMU_RATE_HZ) -> Trajectory:
    """Cumulative sum of predicted interval displacements from ``origin``.

    ``model`` is either trained parameters or any callable mapping a window
    to an (intervals, 2) array. Output has ``intervals * len(windows) + 1``
    points at the RTK rate.
    """
    if not windows:
        raise EmptyInputError("no windows to infer from")
    first = windows[0]
    n_samples = first.acc.shape[-1]
    span = n_samples / rate_hz
    t0 = np.array([w.t_start for w in windows])
    if len(windows) > 1:
        gaps = np.diff(t0)
        bad = np.abs(gaps - span) > 1.0 / rate_hz
        if np.any(bad):
            k = int(np.argmax(bad))
            raise ContiguityError(
                f"windows {k} and {k + 1} are not contiguous (start gap {gaps[k]:.4f} s, expected {span:.4f} s)"
            )
    if isinstance(model, ModelParams):
        acc, gyro, _, _ = _stack(windows)
        deltas = predict_batch(model, acc, gyro)
    else:
        deltas = np.stack([np.asarray(model(w), dtype=np.float64) for w in windows])
    k = deltas.shape[1]
    steps = deltas.reshape(-1, 2)
    xy = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)]) + np.asarray(origin, dtype=np.float64)
    t = t0[0] + np.arange(steps.shape[0] + 1) * (span / k)
    return Trajectory(t, xy)


# -- checkpoints ---------------------------------------------------------


def save_checkpoint(path, model, extra=None):
    """Write a single model or a WcModel, with its config in the header."""
    if isinstance(model, WcModel):
        arrays = {f"front/{k}": v for k, v in model.front.params.items()}
        if not model.shared:
            arrays.update({f"rear/{k}": v for k, v in model.rear.params.items()})
        meta = {"kind": "wc", "shared": model.shared, "config": model.front.config.to_dict(),
                "rear_config": model.rear.config.to_dict()}
    else:
        arrays = dict(model.params)
        meta = {"kind": "single", "config": model.config.to_dict()}
    meta["extra"] = extra or {}
    save_arrays(path, arrays, meta)


def load_checkpoint(path):
    arrays, meta = load_arrays(path)
    config = ModelConfig.from_dict(meta["config"])
    if meta.get("kind") == "wc":
        front = ModelParams(config, {k[6:]: v for k, v in arrays.items() if k.startswith("front/")})
        if meta["shared"]:
            return WcModel(front, front, True)
        rear_cfg = ModelConfig.from_dict(meta["rear_config"])
        rear = ModelParams(rear_cfg, {k[5:]: v for k, v in arrays.items() if k.startswith("rear/")})
        return WcModel(front, rear, False)
    return ModelParams(config, arrays)
