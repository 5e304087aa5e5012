"""Minimal dense neural stack in float64 numpy: MLPs with an explicit
backward pass, SeLU, optional batch normalization, softmax cross-entropy,
Adam, and DP-Adam with per-sample gradient clipping.

Models implement a small shared surface used by the training loops:
parameters() / forward() / backward() / snapshot() / restore().
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

SELU_SCALE = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

_ACT_CODES = {"none": 0, "selu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def selu(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x > 0
    out[pos] = SELU_SCALE * x[pos]
    out[~pos] = SELU_SCALE * SELU_ALPHA * np.expm1(x[~pos])
    return out


def selu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x > 0
    out[pos] = SELU_SCALE
    out[~pos] = SELU_SCALE * SELU_ALPHA * np.exp(x[~pos])
    return out


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    grad = (softmax(logits) - one_hot(labels)) / batch_size.
    """
    labels = np.asarray(labels)
    batch, num_classes = logits.shape
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    idx = np.arange(batch)
    loss = float(np.mean(log_norm - z[idx, labels]))
    grad = softmax(logits)
    grad[idx, labels] -= 1.0
    grad /= batch
    return loss, grad


class BatchNorm:
    """Per-feature batch normalization with running statistics.

    Training mode normalizes by batch statistics (biased variance) and updates
    the running estimates; inference mode is the affine map given by the
    frozen running statistics.
    """

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, training):
        if training:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv
        return self.gamma * x_hat + self.beta, (x_hat, inv, training)

    def backward(self, cache, dy):
        x_hat, inv, training = cache
        dgamma = (dy * x_hat).sum(axis=0)
        dbeta = dy.sum(axis=0)
        dx_hat = dy * self.gamma
        if training:
            dx = inv * (
                dx_hat
                - dx_hat.mean(axis=0)
                - x_hat * (dx_hat * x_hat).mean(axis=0)
            )
        else:
            dx = dx_hat * inv
        return dx, dgamma, dbeta


class MlpModel:
    """Dense multi-layer perceptron with per-layer activation choice.

    ``dims`` gives the layer widths (input first); ``activations`` is one of
    'selu'/'none' per layer. Batch norm, when enabled, is applied after every
    layer that has an activation.
    """

    def __init__(self, dims, activations=None, use_batch_norm=False, seed=0):
        dims = list(dims)
        if len(dims) < 2:
            raise ValueError("need at least one layer")
        n_layers = len(dims) - 1
        if activations is None:
            activations = ["selu"] * (n_layers - 1) + ["none"]
        activations = list(activations)
        if len(activations) != n_layers:
            raise ValueError("one activation per layer required")
        for act in activations:
            if act not in _ACT_CODES:
                raise ValueError(f"unknown activation {act!r}")
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = math.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.activations = activations
        self.norms = [
            BatchNorm(dims[i + 1]) if use_batch_norm and activations[i] != "none" else None
            for i in range(n_layers)
        ]

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def has_batch_norm(self):
        return any(bn is not None for bn in self.norms)

    def parameters(self):
        params = []
        for w, b, bn in zip(self.weights, self.biases, self.norms):
            params.extend([w, b])
            if bn is not None:
                params.extend([bn.gamma, bn.beta])
        return params

    def snapshot(self):
        arrays = [p.copy() for p in self.parameters()]
        for bn in self.norms:
            if bn is not None:
                arrays.extend([bn.running_mean.copy(), bn.running_var.copy()])
        return arrays

    def restore(self, snap):
        params = self.parameters()
        for p, s in zip(params, snap):
            p[...] = s
        i = len(params)
        for bn in self.norms:
            if bn is not None:
                bn.running_mean[...] = snap[i]
                bn.running_var[...] = snap[i + 1]
                i += 2

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.weights[0].shape[0]:
            raise ValueError(
                f"input width {x.shape[1]} does not match first layer "
                f"{self.weights[0].shape[0]}"
            )
        layer_caches = []
        h = x
        for w, b, act, bn in zip(self.weights, self.biases, self.activations, self.norms):
            z = h @ w + b
            bn_cache = None
            if bn is not None:
                z, bn_cache = bn.forward(z, training)
            layer_caches.append((h, z, bn_cache))
            h = selu(z) if act == "selu" else z
        tape = {"layers": layer_caches, "out": h, "training": training}
        return h, tape

    def backward(self, tape, grad_out):
        """Gradients for all parameters (parameters() order) and the input."""
        grads = [None] * len(self.parameters())
        pos = len(grads)
        dh = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            x_in, pre_act, bn_cache = tape["layers"][i]
            dz = dh * selu_grad(pre_act) if self.activations[i] == "selu" else dh
            k = 4 if self.norms[i] is not None else 2
            pos -= k
            if self.norms[i] is not None:
                dz, dgamma, dbeta = self.norms[i].backward(bn_cache, dz)
                grads[pos + 2] = dgamma
                grads[pos + 3] = dbeta
            grads[pos] = x_in.T @ dz
            grads[pos + 1] = dz.sum(axis=0)
            dh = dz @ self.weights[i].T
        return grads, dh


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


@dataclass
class DpOptimizerConfig:
    learning_rate: float = 0.01
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0  # noise std over clip norm
    batch_size: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8


@dataclass
class DpStepMeta:
    """Accounting metadata of one DP-Adam step."""

    sampling_rate: float | None
    noise_multiplier: float


def init_adam_state(params):
    return {
        "t": 0,
        "m": [np.zeros_like(p) for p in params],
        "v": [np.zeros_like(p) for p in params],
    }


def adam_step(params, grads, state, config: DpOptimizerConfig):
    """One in-place Adam update with bias correction."""
    state["t"] += 1
    t = state["t"]
    beta1, beta2 = config.adam_betas
    corr1 = 1.0 - beta1**t
    corr2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= config.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + config.adam_eps)


def clip_gradients(grads, clip_norm):
    """Scale the gradient list so its global L2 norm is at most clip_norm."""
    sq = sum(float(np.sum(g * g)) for g in grads)
    norm = math.sqrt(sq)
    if norm == 0.0 or norm <= clip_norm:
        return grads, norm
    scale = clip_norm / norm
    return [g * scale for g in grads], norm


def dp_adam_step(
    model,
    per_sample_tapes,
    labels,
    config: DpOptimizerConfig,
    seed,
    state,
    dataset_size=None,
):
    """One DP-Adam step from per-sample forward tapes.

    Every sample's full-parameter gradient is clipped to L2 norm at most
    clip_norm, the clipped gradients are summed, Gaussian noise of std
    clip_norm * noise_multiplier is added per coordinate, the result is
    divided by the batch size and fed to Adam. Returns accounting metadata.
    """
    if getattr(model, "has_batch_norm", False):
        raise ValueError("per-sample gradients require batch norm to be disabled")
    if len(per_sample_tapes) == 0:
        raise ValueError("empty batch")
    params = model.parameters()
    total = [np.zeros_like(p) for p in params]
    for tape, label in zip(per_sample_tapes, np.asarray(labels)):
        _, grad_logits = softmax_cross_entropy(tape["out"], np.array([label]))
        grads, _ = model.backward(tape, grad_logits)
        clipped, _ = clip_gradients(grads, config.clip_norm)
        for acc, g in zip(total, clipped):
            acc += g
    if config.noise_multiplier > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        std = config.noise_multiplier * config.clip_norm
        for acc in total:
            acc += rng.standard_normal(acc.shape) * std
    batch = len(per_sample_tapes)
    adam_step(params, [acc / batch for acc in total], state, config)
    q = batch / dataset_size if dataset_size else None
    return DpStepMeta(sampling_rate=q, noise_multiplier=config.noise_multiplier)


# ---------------------------------------------------------------------------
# Checkpoint records (GAPM container building blocks)
# ---------------------------------------------------------------------------


def write_mlp(fh, model: MlpModel):
    fh.write(struct.pack("<I", len(model.weights)))
    for w, b, act, bn in zip(model.weights, model.biases, model.activations, model.norms):
        fh.write(
            struct.pack(
                "<IIBB", w.shape[0], w.shape[1], _ACT_CODES[act], 1 if bn is not None else 0
            )
        )
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        if bn is not None:
            for arr in (bn.gamma, bn.beta, bn.running_mean, bn.running_var):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh, count):
    buf = fh.read(8 * count)
    if len(buf) != 8 * count:
        raise ValueError("truncated payload while reading model parameters")
    return np.frombuffer(buf, dtype="<f8").copy()


def read_mlp(fh) -> MlpModel:
    (n_layers,) = struct.unpack("<I", fh.read(4))
    dims = None
    records = []
    for _ in range(n_layers):
        fan_in, fan_out, act, has_bn = struct.unpack("<IIBB", fh.read(10))
        w = _read_array(fh, fan_in * fan_out).reshape(fan_in, fan_out)
        b = _read_array(fh, fan_out)
        bn_arrays = [_read_array(fh, fan_out) for _ in range(4)] if has_bn else None
        records.append((fan_in, fan_out, _ACT_NAMES[act], w, b, bn_arrays))
        if dims is None:
            dims = [fan_in]
        dims.append(fan_out)
    model = MlpModel(dims, activations=[r[2] for r in records], use_batch_norm=False)
    for i, (_, fan_out, _, w, b, bn_arrays) in enumerate(records):
        model.weights[i] = w
        model.biases[i] = b
        if bn_arrays is not None:
            bn = BatchNorm(fan_out)
            bn.gamma, bn.beta, bn.running_mean, bn.running_var = bn_arrays
            model.norms[i] = bn
    return model
