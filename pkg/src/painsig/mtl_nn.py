"""Fully-connected single- and multi-task networks trained with manual backprop.

The encoder is a stack of affine+ReLU layers. Every task head is two affine
layers with no nonlinearity in between. In multi-task mode the per-task
label-smoothed cross-entropies are combined as::

    L_total = sum_j c_j * (exp(w_j) * L_j + w_j)

with learned scalars ``w_j`` and fixed coefficients ``c_j``, over the tasks
(pain, age, gender) that are active.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidEpsilon, MissingTaskLabels, NonFiniteLoss, ShapeMismatch

SCHEMA_VERSION = 1
TASK_ORDER = ("pain", "age", "gender")
DEFAULT_COEFFS = {"pain": 1.0, "age": 0.2, "gender": 0.2}


@dataclass
class MlpSpec:
    in_dim: int
    encoder_widths: tuple = (256, 512, 1024, 1024)
    heads: dict = field(default_factory=lambda: {"pain": (1024, 5)})

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.heads = {k: (int(h), int(n)) for k, (h, n) in self.heads.items()}
        if "pain" not in self.heads:
            raise ValueError("a pain head is required")
        unknown = set(self.heads) - set(TASK_ORDER)
        if unknown:
            raise ValueError(f"unknown heads {sorted(unknown)}")

    @property
    def multitask(self) -> bool:
        return len(self.heads) > 1

    def tasks(self) -> list[str]:
        return [t for t in TASK_ORDER if t in self.heads]


@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-3
    weight_decay: float = 0.1
    warmup_epochs: int = 50
    label_smoothing: float = 0.1
    ema: bool = True
    ema_decay: float = 0.999
    batch_size: int = 64
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    coefficients: dict = field(default_factory=lambda: dict(DEFAULT_COEFFS))

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be in [0, epochs)")
        if not 0 <= self.label_smoothing < 1:
            raise InvalidEpsilon(f"label smoothing must be in [0, 1), got {self.label_smoothing}")
        self.betas = tuple(self.betas)


def lr_at(epoch: float, config: TrainConfig) -> float:
    """Linear warmup from 0 to ``lr``, then cosine decay to 0 at ``epochs``."""
    w, total, peak = config.warmup_epochs, config.epochs, config.lr
    if epoch < w:
        return peak * epoch / w
    frac = min(1.0, (epoch - w) / (total - w))
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


def relu(z):
    return np.maximum(z, 0.0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def smoothed_targets(true_class, eps: float, n_out: int) -> np.ndarray:
    if n_out < 2:
        raise ValueError("n_out must be at least 2")
    if not 0 <= eps < 1:
        raise InvalidEpsilon(f"epsilon must be in [0, 1), got {eps}")
    true_class = np.asarray(true_class)
    p = np.full(true_class.shape + (n_out,), eps / (n_out - 1))
    np.put_along_axis(p, true_class[..., None], 1.0 - eps, axis=-1)
    return p


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def smoothed_cross_entropy(logits, true_class, eps: float, n_out: int | None = None) -> float:
    """Cross-entropy against label-smoothed targets.

    A single logit vector gives the per-sample loss; a batch gives the mean.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n_out = logits.shape[-1] if n_out is None else n_out
    if logits.shape[-1] != n_out:
        raise ShapeMismatch(f"logits have {logits.shape[-1]} outputs, expected {n_out}")
    p = smoothed_targets(true_class, eps, n_out)
    losses = -np.sum(p * log_softmax(logits), axis=-1)
    return float(np.mean(losses))


def mtl_loss(task_losses: dict, w: dict, c: dict) -> float:
    """Uncertainty-weighted total over whichever tasks are present."""
    return float(sum(c[t] * (math.exp(w[t]) * task_losses[t] + w[t]) for t in task_losses))


def mtl_loss_grad_w(task_losses: dict, w: dict, c: dict) -> dict:
    return {t: c[t] * (math.exp(w[t]) * task_losses[t] + 1.0) for t in task_losses}


@dataclass
class MtlModel:
    spec: MlpSpec
    params: dict
    ema: dict
    coefficients: dict
    age_classes: tuple = ()
    step: int = 0

    @property
    def loss_weights(self) -> dict:
        return {t: float(self.params[f"w.{t}"][0]) for t in self.spec.tasks() if f"w.{t}" in self.params}


def init_model(spec: MlpSpec, seed: int = 0, coefficients=None, age_classes=()) -> MtlModel:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, zero loss weights."""
    rng = np.random.default_rng(seed)
    params = {}

    def layer(name, fan_in, fan_out):
        bound = math.sqrt(6.0 / fan_in)
        params[f"{name}.W"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[f"{name}.b"] = np.zeros(fan_out)

    prev = spec.in_dim
    for i, width in enumerate(spec.encoder_widths):
        layer(f"enc{i}", prev, width)
        prev = width
    for task in spec.tasks():
        hidden, n_out = spec.heads[task]
        layer(f"{task}.h", prev, hidden)
        layer(f"{task}.o", hidden, n_out)
    if spec.multitask:
        for task in spec.tasks():
            params[f"w.{task}"] = np.zeros(1)
    coeffs = dict(DEFAULT_COEFFS)
    coeffs.update(coefficients or {})
    ema = {k: v.copy() for k, v in params.items()}
    return MtlModel(spec, params, ema, coeffs, tuple(age_classes))


def _forward(params: dict, spec: MlpSpec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.in_dim:
        raise ShapeMismatch(f"expected input of shape (n, {spec.in_dim}), got {X.shape}")
    acts = [X]
    pre = []
    h = X
    for i in range(len(spec.encoder_widths)):
        z = h @ params[f"enc{i}.W"].T + params[f"enc{i}.b"]
        pre.append(z)
        h = relu(z)
        acts.append(h)
    logits, hidden = {}, {}
    for task in spec.tasks():
        u = h @ params[f"{task}.h.W"].T + params[f"{task}.h.b"]
        hidden[task] = u
        logits[task] = u @ params[f"{task}.o.W"].T + params[f"{task}.o.b"]
    return logits, (acts, pre, hidden)


def forward(model: MtlModel, X, use_ema: bool = False) -> dict:
    """Per-task logits for a batch."""
    params = model.ema if use_ema else model.params
    return _forward(params, model.spec, X)[0]


def loss_and_grads(params: dict, spec: MlpSpec, X, targets: dict, eps: float, coefficients: dict):
    """Total loss, per-task losses and gradients for every parameter."""
    logits, (acts, pre, hidden) = _forward(params, spec, X)
    n = len(X)
    tasks = spec.tasks()
    task_losses, dlogits = {}, {}
    for t in tasks:
        n_out = spec.heads[t][1]
        p = smoothed_targets(targets[t], eps, n_out)
        ls = log_softmax(logits[t])
        task_losses[t] = float(-np.sum(p * ls) / n)
        dlogits[t] = (np.exp(ls) - p) / n

    grads = {}
    if spec.multitask:
        w = {t: float(params[f"w.{t}"][0]) for t in tasks}
        total = mtl_loss(task_losses, w, coefficients)
        gw = mtl_loss_grad_w(task_losses, w, coefficients)
        for t in tasks:
            grads[f"w.{t}"] = np.array([gw[t]])
            dlogits[t] = dlogits[t] * (coefficients[t] * math.exp(w[t]))
    else:
        total = task_losses["pain"]

    h_last = acts[-1]
    dh = np.zeros_like(h_last)
    for t in tasks:
        g = dlogits[t]
        grads[f"{t}.o.W"] = g.T @ hidden[t]
        grads[f"{t}.o.b"] = g.sum(axis=0)
        gu = g @ params[f"{t}.o.W"]
        grads[f"{t}.h.W"] = gu.T @ h_last
        grads[f"{t}.h.b"] = gu.sum(axis=0)
        dh += gu @ params[f"{t}.h.W"]
    for i in reversed(range(len(spec.encoder_widths))):
        dz = dh * (pre[i] > 0)
        grads[f"enc{i}.W"] = dz.T @ acts[i]
        grads[f"enc{i}.b"] = dz.sum(axis=0)
        dh = dz @ params[f"enc{i}.W"]
    return total, task_losses, grads


class AdamW:
    """Adam with weight decay applied directly to the weights, not the gradient."""

    def __init__(self, params: dict, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.1):
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            p = params[k]
            # weight matrices only; biases and loss weights are not decayed
            if k.endswith(".W"):
                p *= 1 - lr * self.weight_decay
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def ema_update(shadow: dict, params: dict, decay: float, step: int):
    # warm-started decay so short runs are not dominated by the initialization
    d = min(decay, (1.0 + step) / (10.0 + step))
    for k, v in params.items():
        shadow[k] *= d
        shadow[k] += (1 - d) * v


def encode_ages(ages, age_classes) -> np.ndarray:
    lookup = {a: i for i, a in enumerate(age_classes)}
    return np.array([lookup[int(a)] for a in ages], dtype=np.int64)


def train(spec: MlpSpec, config: TrainConfig, X, targets: dict, model: MtlModel | None = None):
    """Train on ``X`` with integer class targets per task.

    ``targets["age"]`` holds raw ages; they are mapped to the distinct ages
    seen here. Returns ``(model, trace)`` where ``trace`` holds the mean total
    loss per epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    tasks = spec.tasks()
    missing = [t for t in tasks if t not in targets or targets[t] is None or len(targets[t]) != len(X)]
    if missing:
        raise MissingTaskLabels(f"no labels for task(s) {missing}")
    tgt = {t: np.asarray(targets[t]) for t in tasks}
    if model is None:
        age_classes = tuple(sorted({int(a) for a in tgt["age"]})) if "age" in tasks else ()
        model = init_model(spec, config.seed, config.coefficients, age_classes)
    if "age" in tasks:
        tgt["age"] = encode_ages(tgt["age"], model.age_classes)
    for t in tasks:
        if tgt[t].min() < 0 or tgt[t].max() >= spec.heads[t][1]:
            raise ShapeMismatch(f"{t} targets out of range for {spec.heads[t][1]} outputs")

    rng = np.random.default_rng(config.seed + 1)
    opt = AdamW(model.params, config.betas, config.adam_eps, config.weight_decay)
    n = len(X)
    bs = max(1, min(config.batch_size, n))
    steps_per_epoch = math.ceil(n / bs)
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for s in range(steps_per_epoch):
            idx = order[s * bs:(s + 1) * bs]
            total, per_task, grads = loss_and_grads(
                model.params, spec, X[idx], {t: tgt[t][idx] for t in tasks},
                config.label_smoothing, model.coefficients)
            if not np.isfinite(total):
                raise NonFiniteLoss(f"epoch {epoch} step {s}: total={total} task losses={per_task} "
                                    f"loss weights={model.loss_weights}")
            opt.step(model.params, grads, lr_at(epoch + s / steps_per_epoch, config))
            if config.ema:
                ema_update(model.ema, model.params, config.ema_decay, model.step)
            else:
                model.ema = {k: v.copy() for k, v in model.params.items()}
            model.step += 1
            epoch_loss += total * len(idx)
        trace.append(epoch_loss / n)
    return model, np.array(trace)


def predict(model: MtlModel, X, use_ema: bool = True) -> dict:
    """Argmax class id per head; ties go to the lowest id."""
    return {t: np.argmax(v, axis=1) for t, v in forward(model, X, use_ema).items()}


def checkpoint_to_json(model: MtlModel, config: TrainConfig | None = None) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "spec": {"in_dim": model.spec.in_dim, "encoder_widths": list(model.spec.encoder_widths),
                 "heads": {k: list(v) for k, v in model.spec.heads.items()}},
        "coefficients": model.coefficients,
        "age_classes": list(model.age_classes),
        "step": model.step,
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in model.params.items()},
        "ema": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in model.ema.items()},
        "config": asdict(config) if config is not None else None,
    }
    return json.dumps(doc)


def checkpoint_from_json(text: str) -> MtlModel:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    spec = MlpSpec(doc["spec"]["in_dim"], tuple(doc["spec"]["encoder_widths"]),
                   {k: tuple(v) for k, v in doc["spec"]["heads"].items()})

    def unpack(d):
        return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d.items()}

    return MtlModel(spec, unpack(doc["params"]), unpack(doc["ema"]), doc["coefficients"],
                    tuple(doc["age_classes"]), doc["step"])


class NeuralClassifier:
    """Standardize, train an ST or MT network, predict the pain head.

    ``aux`` is ``None`` for single-task training, otherwise any of
    ``"G"``, ``"A"``, ``"GA"`` naming the auxiliary heads.
    """

    def __init__(self, aux=None, encoder_widths=(256, 512, 1024, 1024), head_width=1024,
                 config: TrainConfig | None = None):
        self.aux = (aux or "").upper()
        self.encoder_widths = tuple(encoder_widths)
        self.head_width = head_width
        self.config = config or TrainConfig()

    def fit(self, X, y, gender=None, age=None):
        from .classic_ml import StandardScaler

        X = np.asarray(X, dtype=np.float64)
        self.classes_ = np.unique(y)
        y_idx = np.searchsorted(self.classes_, y)
        heads = {"pain": (self.head_width, max(2, len(self.classes_)))}
        targets = {"pain": y_idx}
        if "G" in self.aux:
            heads["gender"] = (self.head_width, 2)
            targets["gender"] = gender
        if "A" in self.aux:
            n_ages = len(set(np.asarray(age).tolist())) if age is not None else 0
            heads["age"] = (self.head_width, max(2, n_ages))
            targets["age"] = age
        self.scaler_ = StandardScaler().fit(X)
        spec = MlpSpec(X.shape[1], self.encoder_widths, heads)
        self.model_, self.trace_ = train(spec, self.config, self.scaler_.transform(X), targets)
        return self

    def predict(self, X):
        out = predict(self.model_, self.scaler_.transform(X), use_ema=self.config.ema)["pain"]
        return self.classes_[np.minimum(out, len(self.classes_) - 1)]
