"""Minimal dense feed-forward engine: forward, exact backprop, Adam.

No ML framework underneath; parameters are plain float64 arrays so training
is bit-reproducible for a fixed seed. Vector arguments may be a single input
``[dim]`` or a batch ``[n, dim]`` throughout.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    w: np.ndarray  # [out, in]
    b: np.ndarray  # [out]
    act: str

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.w.ndim != 2 or self.b.ndim != 1 or self.w.shape[0] != self.b.shape[0]:
            raise ValueError("layer weight/bias shapes are inconsistent")
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.w.shape[1] != prev.w.shape[0]:
                raise ValueError("adjacent layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return int(self.layers[0].w.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.layers[-1].w.shape[0])

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [int(layer.w.shape[0]) for layer in self.layers]

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.w.copy(), l.b.copy(), l.act) for l in self.layers])

    def parameters(self):
        """Yield (layer index, 'w'|'b', array) for every parameter table."""
        for idx, layer in enumerate(self.layers):
            yield idx, "w", layer.w
            yield idx, "b", layer.b


@dataclass
class ForwardTrace:
    """Per-layer caches from one forward pass, consumed by ``backward``."""

    inputs: list[np.ndarray]  # input seen by each layer
    pre: list[np.ndarray]     # pre-activation of each layer
    single: bool              # original input was a lone vector


@dataclass
class NetGrads:
    """Gradients shaped like the network, plus the input-vector gradient."""

    w: list[np.ndarray]
    b: list[np.ndarray]
    x: np.ndarray


def init_net(dims: list[int], seed: int) -> DenseNet:
    """Seeded He-scaled network: hidden layers ReLU, final layer identity."""
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError("dims must list at least two positive layer sizes")
    rng = np.random.default_rng(seed)
    layers = []
    for depth, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        w = rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in)
        b = np.zeros(fan_out)
        act = "identity" if depth == len(dims) - 2 else "relu"
        layers.append(Layer(w, b, act))
    return DenseNet(layers)


def forward(net: DenseNet, x) -> tuple[np.ndarray, ForwardTrace]:
    """Affine + activation composition; returns output and its trace."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    a = arr[None, :] if single else arr
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise ValueError(f"input width {arr.shape[-1] if arr.ndim else 0} does not match network input {net.input_dim}")
    inputs, pre = [], []
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.w.T + layer.b
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.act == "relu" else z
    out = a[0] if single else a
    return out, ForwardTrace(inputs=inputs, pre=pre, single=single)


def backward(net: DenseNet, trace: ForwardTrace, grad_out) -> NetGrads:
    """Exact reverse-mode gradients of ``output . grad_out``.

    Returns per-layer weight and bias gradients and the gradient with respect
    to the input vector; the latter lets callers chain through composed nets.
    The ReLU subgradient at exactly zero is taken as zero.
    """
    g = np.asarray(grad_out, dtype=float)
    if trace.single:
        g = g[None, :]
    if g.shape != (trace.inputs[0].shape[0], net.output_dim):
        raise ValueError("grad_out shape does not match the traced output")
    grads_w: list[np.ndarray] = []
    grads_b: list[np.ndarray] = []
    for layer, a_in, z in zip(reversed(net.layers), reversed(trace.inputs), reversed(trace.pre)):
        if layer.act == "relu":
            g = g * (z > 0.0)
        grads_w.append(g.T @ a_in)
        grads_b.append(g.sum(axis=0))
        g = g @ layer.w
    gx = g[0] if trace.single else g
    return NetGrads(w=grads_w[::-1], b=grads_b[::-1], x=gx)


def softmax(z) -> np.ndarray:
    """Max-shifted softmax along the last axis.

    The single-vector path sums with ``math.fsum`` so the result is exactly
    invariant under permutations of the entries.
    """
    arr = np.asarray(z, dtype=float)
    if arr.size == 0:
        raise ValueError("softmax of an empty vector")
    if arr.ndim == 1:
        e = np.exp(arr - arr.max())
        return e / math.fsum(e)
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_one_hot(y: np.ndarray) -> None:
    if not np.all((y == 0.0) | (y == 1.0)) or not np.all(y.sum(axis=-1) == 1.0):
        raise ValueError("target must be one-hot")


def cross_entropy_loss(p, y) -> tuple[float, np.ndarray]:
    """Cross-entropy of softmax output against a one-hot target.

    Returns the loss and its gradient with respect to the pre-softmax logits
    (``p - y``). Batched inputs give the mean loss and the matching gradient.
    """
    probs = np.asarray(p, dtype=float)
    target = np.asarray(y, dtype=float)
    if probs.shape != target.shape:
        raise ValueError("probability and target shapes differ")
    _check_one_hot(target)
    if probs.ndim == 1:
        loss = -math.log(probs[int(np.argmax(target))])
        return loss, probs - target
    picked = probs[np.arange(probs.shape[0]), np.argmax(target, axis=1)]
    loss = float(np.mean(-np.log(picked)))
    return loss, (probs - target) / probs.shape[0]


@dataclass
class AdamState:
    """First/second moment tables mirroring a network, plus hyperparameters."""

    m: list[tuple[np.ndarray, np.ndarray]]
    v: list[tuple[np.ndarray, np.ndarray]]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("momentum decays must lie in [0, 1)")
        if self.t < 0:
            raise ValueError("step counter must be nonnegative")

    @classmethod
    def for_net(cls, net: DenseNet, lr: float = 1e-3, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        zeros = lambda: [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in net.layers]
        return cls(m=zeros(), v=zeros(), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(net: DenseNet, grads: NetGrads, state: AdamState) -> None:
    """Bias-corrected Adam update, applied in place to ``net`` and ``state``."""
    if len(grads.w) != len(net.layers) or len(state.m) != len(net.layers):
        raise ValueError("gradient/state layer counts do not match the network")
    for layer, gw, gb, (mw, mb), (vw, vb) in zip(net.layers, grads.w, grads.b, state.m, state.v):
        if not (gw.shape == mw.shape == vw.shape == layer.w.shape
                and gb.shape == mb.shape == vb.shape == layer.b.shape):
            raise ValueError("gradient/state shapes do not match the network")
    state.t += 1
    corr1 = 1.0 - state.beta1 ** state.t
    corr2 = 1.0 - state.beta2 ** state.t
    for layer, gw, gb, mom, var in zip(net.layers, grads.w, grads.b, state.m, state.v):
        for param, grad, m, v in ((layer.w, gw, mom[0], var[0]), (layer.b, gb, mom[1], var[1])):
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            param -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_params: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def gradcheck(
    net: DenseNet,
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x,
    tol: float = 1e-4,
    h: float = 1e-4,
    corrupt: Optional[tuple[int, str]] = None,
) -> GradCheckReport:
    """Compare backprop against central differences for every parameter.

    ``loss_fn`` maps the network output to ``(loss, grad_wrt_output)``.
    ``corrupt`` doubles one analytic gradient table before comparison; it
    exists so tests can prove the check actually fails on wrong gradients.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    out, trace = forward(net, x)
    _, grad_out = loss_fn(out)
    grads = backward(net, trace, grad_out)
    analytic = {("w", i): grads.w[i] for i in range(len(net.layers))}
    analytic.update({("b", i): grads.b[i] for i in range(len(net.layers))})
    if corrupt is not None:
        idx, kind = corrupt
        analytic[(kind, idx)] = analytic[(kind, idx)] * 2.0
    max_rel = 0.0
    n_params = 0
    for layer_idx, kind, table in net.parameters():
        ana = analytic[(kind, layer_idx)]
        it = np.nditer(table, flags=["multi_index"])
        for _ in it:
            pos = it.multi_index
            orig = table[pos]
            table[pos] = orig + h
            out_hi, _ = forward(net, x)
            loss_hi, _ = loss_fn(out_hi)
            table[pos] = orig - h
            out_lo, _ = forward(net, x)
            loss_lo, _ = loss_fn(out_lo)
            table[pos] = orig
            numeric = (loss_hi - loss_lo) / (2.0 * h)
            denom = max(abs(numeric), abs(float(ana[pos])), 1e-8)
            max_rel = max(max_rel, abs(numeric - float(ana[pos])) / denom)
            n_params += 1
    return GradCheckReport(max_rel_error=max_rel, tol=tol, n_params=n_params)


def net_to_dict(net: DenseNet) -> dict:
    return {
        "dims": net.dims,
        "activations": [layer.act for layer in net.layers],
        "weights": [layer.w.tolist() for layer in net.layers],
        "biases": [layer.b.tolist() for layer in net.layers],
    }


def net_from_dict(doc: dict) -> DenseNet:
    layers = [
        Layer(np.asarray(w, dtype=float), np.asarray(b, dtype=float), act)
        for w, b, act in zip(doc["weights"], doc["biases"], doc["activations"])
    ]
    net = DenseNet(layers)
    if net.dims != list(doc["dims"]):
        raise ValueError("checkpoint dims do not match its weight shapes")
    return net


def adam_to_dict(state: AdamState) -> dict:
    return {
        "t": state.t,
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "m": [[mw.tolist(), mb.tolist()] for mw, mb in state.m],
        "v": [[vw.tolist(), vb.tolist()] for vw, vb in state.v],
    }


def adam_from_dict(doc: dict) -> AdamState:
    unpack = lambda pairs: [(np.asarray(a, dtype=float), np.asarray(b, dtype=float)) for a, b in pairs]
    return AdamState(
        m=unpack(doc["m"]),
        v=unpack(doc["v"]),
        t=int(doc["t"]),
        lr=float(doc["lr"]),
        beta1=float(doc["beta1"]),
        beta2=float(doc["beta2"]),
        eps=float(doc["eps"]),
    )


def dump_json_atomic(doc: dict, path) -> None:
    """Serialize deterministically and rename into place."""
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_checkpoint(path, net: DenseNet, state: Optional[AdamState] = None, seed: Optional[int] = None) -> None:
    """Self-describing JSON checkpoint; floats round-trip bit-exactly."""
    doc = {
        "format": "btrating-net",
        "version": 1,
        "net": net_to_dict(net),
        "adam": adam_to_dict(state) if state is not None else None,
        "seed": seed,
    }
    dump_json_atomic(doc, path)


def load_checkpoint(path) -> tuple[DenseNet, Optional[AdamState], Optional[int]]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "btrating-net":
        raise ValueError(f"{path}: not a network checkpoint")
    state = adam_from_dict(doc["adam"]) if doc.get("adam") is not None else None
    return net_from_dict(doc["net"]), state, doc.get("seed")
