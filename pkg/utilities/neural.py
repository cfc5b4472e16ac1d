"""
Dense feed-forward engine shared by the autoencoders and DNN classifiers.

Weights are (fan_in, fan_out) matrices applied as a @ W + b. Activations are
ELU (alpha = 1), linear or sigmoid. Inverted dropout masks hidden
activations in train mode only. Optimisation is Adam over shuffled
minibatches; per-epoch train/validation losses are recorded with dropout
off.
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.special import expit

import config
from utilities import artifacts
from utilities.errors import NonFiniteLoss, ShapeMismatch

logger = logging.getLogger(__name__)

Activation = Literal["elu", "linear", "sigmoid"]
Loss = Literal["mse", "binary_cross_entropy"]


# ============================================================================
# Config Models
# ============================================================================

class AdamHyper(BaseModel):
    alpha: float = Field(default=config.ADAM_ALPHA, ge=0.0)
    beta1: float = Field(default=config.ADAM_BETA1, ge=0.0, lt=1.0)
    beta2: float = Field(default=config.ADAM_BETA2, ge=0.0, lt=1.0)
    epsilon: float = Field(default=config.ADAM_EPSILON, gt=0.0)


class TrainConfig(BaseModel):
    """Minibatch training regimen."""
    batch_size: int = Field(default=config.BATCH_SIZE, ge=1)
    epochs: int = Field(default=config.EPOCHS, ge=1)
    adam: AdamHyper = Field(default_factory=AdamHyper)
    # None -> last 10% of the shuffled rows
    validation_fraction: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    seed: int = config.MASTER_SEED


class NetworkSpec(BaseModel):
    layer_widths: List[int] = Field(min_length=2)
    activations: List[Activation]
    dropout_rate: float = Field(default=0.0, ge=0.0, lt=1.0)
    loss: Loss = "mse"

    @model_validator(mode="after")
    def _check_shapes(self):
        if len(self.activations) != len(self.layer_widths) - 1:
            raise ValueError("need exactly one activation per weight layer")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        return self


# ============================================================================
# Network
# ============================================================================

@dataclass
class Network:
    spec: NetworkSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def input_width(self) -> int:
        return self.spec.layer_widths[0]

    def params(self) -> List[np.ndarray]:
        """Parameters in the fixed order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "Network":
        return Network(self.spec, list(params[0::2]), list(params[1::2]))

    def layer_shapes(self) -> List[Tuple[int, int]]:
        return [w.shape for w in self.weights]

    def truncated(self, n_layers: int) -> "Network":
        """The first n_layers weight layers as a standalone network (e.g. an encoder)."""
        spec = NetworkSpec(
            layer_widths=self.spec.layer_widths[: n_layers + 1],
            activations=self.spec.activations[:n_layers],
            dropout_rate=0.0,
            loss=self.spec.loss,
        )
        return Network(spec, [w.copy() for w in self.weights[:n_layers]], [b.copy() for b in self.biases[:n_layers]])


def init_network(spec: NetworkSpec, rng: np.random.Generator) -> Network:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(spec, weights, biases)


def elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, config.ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "elu":
        return elu(z)
    if name == "sigmoid":
        return expit(z)
    return z


def activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(z > 0, 1.0, config.ELU_ALPHA * np.exp(np.minimum(z, 0.0)))
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class ForwardCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    activated: List[np.ndarray] = field(default_factory=list)
    masks: List[Optional[np.ndarray]] = field(default_factory=list)


def sample_masks(network: Network, n_rows: int, rng: np.random.Generator) -> List[Optional[np.ndarray]]:
    """Inverted-dropout masks for every hidden layer (values 0 or 1/(1-p))."""
    p = network.spec.dropout_rate
    masks: List[Optional[np.ndarray]] = []
    for width in network.spec.layer_widths[1:-1]:
        if p > 0:
            keep = rng.random((n_rows, width)) >= p
            masks.append(keep / (1.0 - p))
        else:
            masks.append(None)
    return masks


def forward(
    network: Network,
    batch: np.ndarray,
    mode: Literal["train", "infer"] = "infer",
    rng: Optional[np.random.Generator] = None,
    masks: Optional[List[Optional[np.ndarray]]] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    """
    Run a batch through the network.

    Args:
        network: Weights and spec
        batch: (rows, input_width) matrix
        mode: "infer" disables dropout; "train" applies inverted dropout
        rng: Mask source in train mode (ignored when masks are given)
        masks: Fixed per-hidden-layer masks, for gradient checking

    Returns:
        Tuple of (output matrix, cached intermediates)
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != network.input_width:
        raise ShapeMismatch(f"batch shape {batch.shape} vs input width {network.input_width}")
    if mode == "train" and masks is None and network.spec.dropout_rate > 0:
        masks = sample_masks(network, batch.shape[0], rng or np.random.default_rng())

    cache = ForwardCache()
    a = batch
    last = len(network.weights) - 1
    for layer, (w, b, act) in enumerate(zip(network.weights, network.biases, network.spec.activations)):
        cache.inputs.append(a)
        z = a @ w + b
        a = activate(act, z)
        cache.pre.append(z)
        cache.activated.append(a)
        mask = None
        if mode == "train" and layer < last and masks is not None:
            mask = masks[layer]
            if mask is not None:
                a = a * mask
        cache.masks.append(mask)
    return a, cache


# ============================================================================
# Losses and gradients
# ============================================================================

def loss_value(loss: str, output: np.ndarray, targets: np.ndarray) -> float:
    if loss == "mse":
        return float(np.mean((output - targets) ** 2))
    p = np.clip(output, config.BCE_CLAMP, 1.0 - config.BCE_CLAMP)
    return float(-np.mean(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)))


def loss_grad(loss: str, output: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """dL/d(output)."""
    if loss == "mse":
        return 2.0 * (output - targets) / output.size
    p = np.clip(output, config.BCE_CLAMP, 1.0 - config.BCE_CLAMP)
    inside = (output > config.BCE_CLAMP) & (output < 1.0 - config.BCE_CLAMP)
    return np.where(inside, (p - targets) / (p * (1.0 - p)), 0.0) / output.size


def backward(network: Network, cache: ForwardCache, output: np.ndarray, targets: np.ndarray) -> List[np.ndarray]:
    """Gradients in Network.params() order."""
    acts = network.spec.activations
    last = len(network.weights) - 1
    if network.spec.loss == "binary_cross_entropy" and acts[last] == "sigmoid":
        # fused sigmoid + BCE; keeps a gradient where the clamp saturates
        delta = (output - targets) / output.size
    else:
        delta = loss_grad(network.spec.loss, output, targets) * activation_grad(
            acts[last], cache.pre[last], cache.activated[last]
        )
    grads: List[np.ndarray] = [None] * (2 * len(network.weights))
    for layer in range(last, -1, -1):
        grads[2 * layer] = cache.inputs[layer].T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0:
            upstream = delta @ network.weights[layer].T
            if cache.masks[layer - 1] is not None:
                upstream = upstream * cache.masks[layer - 1]
            delta = upstream * activation_grad(acts[layer - 1], cache.pre[layer - 1], cache.activated[layer - 1])
    return grads


def dataset_loss(network: Network, inputs: np.ndarray, targets: np.ndarray) -> float:
    output, _ = forward(network, inputs, "infer")
    return loss_value(network.spec.loss, output, targets)


# ============================================================================
# Adam
# ============================================================================

@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    t: int,
    hyper: AdamHyper,
) -> Tuple[List[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update.

    Args:
        params: Current parameters
        grads: Gradients, same shapes
        state: First/second moment estimates
        t: 1-based step index
        hyper: alpha, beta1, beta2, epsilon

    Returns:
        Tuple of (new params, new state); inputs are not modified
    """
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeMismatch("params, grads and state differ in length")

    new_params, new_m, new_v = [], [], []
    bc1 = 1.0 - hyper.beta1 ** t
    bc2 = 1.0 - hyper.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params.append(p - hyper.alpha * m_hat / (np.sqrt(v_hat) + hyper.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v)


# ============================================================================
# Training
# ============================================================================

@dataclass
class TrainingTrace:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def rows(self) -> List[Tuple[int, float, float]]:
        return [(i + 1, tr, va) for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss))]


def write_trace(trace: TrainingTrace, path: str, header: Optional[str] = None) -> None:
    """Write epoch,train_loss,val_loss rows."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        if header:
            f.write(header + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in trace.rows():
            writer.writerow([epoch, repr(tr), repr(va)])


def split_validation(n_rows: int, fraction: Optional[float], rng: np.random.Generator):
    """Shuffle rows and hold out the last fraction as validation."""
    if fraction is None:
        fraction = config.VALIDATION_FRACTION
    order = rng.permutation(n_rows)
    n_val = min(int(n_rows * fraction), n_rows - 1)
    if n_val <= 0:
        return order, order[:0]
    return order[: n_rows - n_val], order[n_rows - n_val:]


def train(
    spec: NetworkSpec,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    validation: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    network: Optional[Network] = None,
    epochs: Optional[int] = None,
) -> Tuple[Network, TrainingTrace]:
    """
    Train a network with Adam over shuffled minibatches.

    Args:
        spec: Architecture, dropout and loss
        inputs: (rows, input_width) training inputs
        targets: (rows, output_width) targets (inputs themselves for autoencoders)
        cfg: Batch size, epochs, Adam hyperparameters, validation split, seed
        validation: Explicit (inputs, targets) validation data; disables the split
        network: Starting weights (default: seeded Glorot init)
        epochs: Override cfg.epochs (0 returns the initial network untouched)

    Returns:
        Tuple of (trained network, per-epoch train/validation losses)

    Raises:
        NonFiniteLoss: a recorded loss is NaN or infinite
        ShapeMismatch: inputs or targets do not fit the spec
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets.reshape(-1, 1)
    if inputs.shape[0] != targets.shape[0] or targets.shape[1] != spec.layer_widths[-1]:
        raise ShapeMismatch(f"targets {targets.shape} do not match inputs {inputs.shape} / spec output")

    rng = np.random.default_rng(cfg.seed)
    net = network if network is not None else init_network(spec, rng)
    n_epochs = cfg.epochs if epochs is None else epochs

    if validation is None:
        train_idx, val_idx = split_validation(inputs.shape[0], cfg.validation_fraction, rng)
        x_train, t_train = inputs[train_idx], targets[train_idx]
        if len(val_idx):
            x_val, t_val = inputs[val_idx], targets[val_idx]
        else:
            x_val, t_val = x_train, t_train
    else:
        x_train, t_train = inputs, targets
        x_val = np.asarray(validation[0], dtype=np.float64)
        t_val = np.asarray(validation[1], dtype=np.float64).reshape(x_val.shape[0], -1)

    trace = TrainingTrace()
    params = net.params()
    state = AdamState.zeros_like(params)
    step = 0
    n_train = x_train.shape[0]
    for epoch in range(1, n_epochs + 1):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            output, cache = forward(net, x_train[idx], "train", rng)
            grads = backward(net, cache, output, t_train[idx])
            step += 1
            params, state = adam_step(params, grads, state, step, cfg.adam)
            net = net.with_params(params)

        train_loss = dataset_loss(net, x_train, t_train)
        val_loss = dataset_loss(net, x_val, t_val)
        for value in (train_loss, val_loss):
            if not np.isfinite(value):
                raise NonFiniteLoss(epoch, value)
        trace.train_loss.append(train_loss)
        trace.val_loss.append(val_loss)
        logger.debug(f"[NEURAL] epoch {epoch}/{n_epochs} train={train_loss:.6f} val={val_loss:.6f}")

    if len(trace):
        logger.info(
            f"[NEURAL] {spec.layer_widths} trained {n_epochs} epochs: "
            f"train {trace.train_loss[0]:.5f} -> {trace.train_loss[-1]:.5f}, "
            f"val {trace.val_loss[0]:.5f} -> {trace.val_loss[-1]:.5f}"
        )
    return net, trace


# ============================================================================
# Gradient checking
# ============================================================================

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: int
    worst_index: Tuple[int, ...]
    n_checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def grad_check(
    network: Network,
    inputs: np.ndarray,
    targets: np.ndarray,
    masks: Optional[List[Optional[np.ndarray]]] = None,
    step: float = 1e-5,
) -> GradCheckReport:
    """
    Compare backprop gradients with central finite differences over every
    weight and bias.

    Args:
        network: Network to check (not modified)
        inputs: Small sample batch
        targets: Matching targets
        masks: Fixed dropout masks folded into the graph (None = dropout off)
        step: Finite-difference step

    Returns:
        GradCheckReport with max |g_a - g_fd| / max(|g_a| + |g_fd|, 1e-8)
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(inputs.shape[0], -1)
    mode = "train" if masks is not None else "infer"

    def loss_at(net: Network) -> float:
        out, _ = forward(net, inputs, mode, masks=masks)
        return loss_value(net.spec.loss, out, targets)

    output, cache = forward(network, inputs, mode, masks=masks)
    analytic = backward(network, cache, output, targets)

    params = [p.copy() for p in network.params()]
    worst = (0.0, 0, ())
    checked = 0
    for pi, p in enumerate(params):
        for index in np.ndindex(p.shape):
            original = p[index]
            p[index] = original + step
            plus = loss_at(network.with_params(params))
            p[index] = original - step
            minus = loss_at(network.with_params(params))
            p[index] = original
            numeric = (plus - minus) / (2.0 * step)
            a = analytic[pi][index]
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-8)
            if rel > worst[0]:
                worst = (rel, pi, index)
            checked += 1
    return GradCheckReport(float(worst[0]), worst[1], tuple(int(i) for i in worst[2]), checked)


# ============================================================================
# Input scaling
# ============================================================================

@dataclass
class InputScaler:
    """x -> log(1 + x) (count features only), then per-feature min-max to [0, 1]."""
    mins: np.ndarray
    spans: np.ndarray
    log_transform: bool = True

    @classmethod
    def fit(cls, matrix: np.ndarray, log_transform: bool = True) -> "InputScaler":
        base = np.log1p(matrix) if log_transform else np.asarray(matrix, dtype=np.float64)
        mins = base.min(axis=0)
        spans = base.max(axis=0) - mins
        # constant columns map to 0
        spans = np.where(spans > 0, spans, 1.0)
        return cls(mins, spans, log_transform)

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        base = np.log1p(matrix) if self.log_transform else np.asarray(matrix, dtype=np.float64)
        return (base - self.mins) / self.spans


# ============================================================================
# Persistence
# ============================================================================

def network_arrays(network: Network, prefix: str = "") -> dict:
    arrays = artifacts.pack_list(f"{prefix}W", network.weights)
    arrays.update(artifacts.pack_list(f"{prefix}b", network.biases))
    return arrays


def network_from_arrays(spec: NetworkSpec, arrays: dict, prefix: str = "") -> Network:
    return Network(spec, artifacts.unpack_list(f"{prefix}W", arrays), artifacts.unpack_list(f"{prefix}b", arrays))


def save_network(network: Network, path: str) -> None:
    artifacts.write(path, artifacts.NETWORK_MAGIC, {"spec": network.spec.model_dump()}, network_arrays(network))


def load_network(path: str) -> Network:
    header, arrays = artifacts.read(path, artifacts.NETWORK_MAGIC)
    return network_from_arrays(NetworkSpec(**header["spec"]), arrays)
