"""Minimal feed-forward network with exact analytic gradients.

Everything operates on a flat float64 parameter vector so that Fisher
diagonals, EWC penalties and SGD updates are simple elementwise array ops.
Layout: for each layer, weight matrix (fan_in x fan_out, row-major) followed
by bias vector, in layer order.
"""

from dataclasses import dataclass, field

import numpy as np


class ContractViolation(ValueError):
    """Caller broke a shape/length precondition."""


class NumericError(FloatingPointError):
    """Non-finite value appeared during forward/backward."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of one expert: layer sizes, hidden activation, init."""

    layer_sizes: tuple
    activation: str = "relu"
    init_scale: float | None = None  # None -> 1/sqrt(fan_in) per layer
    init_seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ContractViolation("need at least one hidden layer")
        if any(s <= 0 for s in sizes):
            raise ContractViolation("layer sizes must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ContractViolation(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def output_dim(self):
        return self.layer_sizes[-1]

    def layer_shapes(self):
        """[(W_shape, b_shape), ...] in parameter-vector order."""
        sizes = self.layer_sizes
        return [((sizes[l], sizes[l + 1]), (sizes[l + 1],))
                for l in range(self.n_layers)]

    @property
    def n_params(self):
        return sum(i * o + o for (i, o), _ in self.layer_shapes())


@dataclass(frozen=True)
class Batch:
    """One unit of streamed training data.

    task_id is provenance metadata for the harness only; bidding, auction
    and training code receives inputs/labels and never sees it.
    """

    inputs: np.ndarray  # B x input_dim, float64 in [0, 1]
    labels: np.ndarray  # B ints in [0, n_classes)
    task_id: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ContractViolation("inputs must be a non-empty 2-d array")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ContractViolation("labels must match inputs row count")

    @property
    def size(self):
        return self.inputs.shape[0]


def init_params(spec: ModelSpec) -> np.ndarray:
    """Uniform [-s, s] init with s = init_scale or 1/sqrt(fan_in)."""
    rng = np.random.default_rng(spec.init_seed)
    chunks = []
    for (fan_in, fan_out), _ in spec.layer_shapes():
        s = spec.init_scale if spec.init_scale is not None else 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-s, s, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def unpack(spec: ModelSpec, params: np.ndarray):
    """Views into the flat vector as [(W, b), ...]."""
    if params.shape != (spec.n_params,):
        raise ContractViolation(
            f"param vector has length {params.shape}, spec needs {spec.n_params}")
    layers = []
    off = 0
    for (fan_in, fan_out), _ in spec.layer_shapes():
        w = params[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = params[off:off + fan_out]
        off += fan_out
        layers.append((w, b))
    return layers


def _forward_trace(spec, params, inputs):
    """Forward pass keeping pre-activations for backprop."""
    layers = unpack(spec, params)
    a = np.asarray(inputs, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != spec.input_dim:
        raise ContractViolation(
            f"inputs must be B x {spec.input_dim}, got {a.shape}")
    acts = [a]   # post-activation per layer, acts[0] = input
    pres = []    # pre-activation per layer
    for l, (w, b) in enumerate(layers):
        z = a @ w + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite pre-activation in layer {l}", layer=l)
        pres.append(z)
        if l < len(layers) - 1:
            a = np.maximum(z, 0.0) if spec.activation == "relu" else np.tanh(z)
        else:
            a = z
        acts.append(a)
    return acts, pres


def forward(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Logits (B x n_classes) for a batch of inputs."""
    acts, _ = _forward_trace(spec, params, inputs)
    return acts[-1]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _backprop(spec, params, acts, pres, dlogits):
    """Gradient of a scalar loss w.r.t. params, given dL/dlogits."""
    layers = unpack(spec, params)
    grad = np.empty_like(params)
    off = grad.shape[0]
    delta = dlogits
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        dw = acts[l].T @ delta
        db = delta.sum(axis=0)
        off -= db.shape[0]
        grad[off:off + db.shape[0]] = db
        off -= dw.size
        grad[off:off + dw.size] = dw.ravel()
        if l > 0:
            da = delta @ w.T
            if spec.activation == "relu":
                delta = da * (pres[l - 1] > 0)
            else:
                delta = da * (1.0 - np.tanh(pres[l - 1]) ** 2)
    return grad


def loss_and_grad(spec: ModelSpec, params: np.ndarray, batch: Batch):
    """Mean softmax cross-entropy over the batch and its exact gradient."""
    acts, pres = _forward_trace(spec, params, batch.inputs)
    logits = acts[-1]
    logp = log_softmax(logits)
    n = batch.size
    loss = -logp[np.arange(n), batch.labels].mean()
    dlogits = softmax(logits)
    dlogits[np.arange(n), batch.labels] -= 1.0
    dlogits /= n
    grad = _backprop(spec, params, acts, pres, dlogits)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite loss or gradient", layer=spec.n_layers - 1)
    return float(loss), grad


def mean_loss(spec: ModelSpec, params: np.ndarray, batch: Batch) -> float:
    """Forward-only mean cross-entropy (no gradient)."""
    logp = log_softmax(forward(spec, params, batch.inputs))
    return float(-logp[np.arange(batch.size), batch.labels].mean())


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if params.shape != grad.shape:
        raise ContractViolation("param/grad length mismatch")
    return params - lr * grad


def per_example_logprob_grad(spec: ModelSpec, params: np.ndarray,
                             x: np.ndarray, label: int) -> np.ndarray:
    """Gradient of log p(label | x) w.r.t. params, single example."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    acts, pres = _forward_trace(spec, params, x)
    probs = softmax(acts[-1])
    dlogits = -probs
    # 1 - p_label computed as the sum of the other probabilities: avoids
    # cancellation to exactly 0 when the model saturates on this example
    others = probs.copy()
    others[0, label] = 0.0
    dlogits[0, label] = others.sum()
    return _backprop(spec, params, acts, pres, dlogits)
