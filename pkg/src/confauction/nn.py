"""A small dense ReLU network with hand-written reverse mode and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch of inputs
``x`` with shape ``(B, fan_in)`` maps to ``x @ W + b``. Every function accepts
either a single input vector or a batch.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng

MAGIC = b"CONFAUCTION-NET-v1"

OUTPUT_ACTIVATIONS = ("linear", "sigmoid", "column-softmax", "relu")


class StaleCacheError(ValueError):
    """A forward cache was handed to ``backward`` with a different network."""


@dataclass(eq=False)
class DenseNet:
    layer_sizes: list
    weights: list
    biases: list
    output_activation: str = "linear"
    # (rows, cols) layout of the output when output_activation is column-softmax
    softmax_shape: tuple = None
    hidden_activation: str = "relu"

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError("layer_sizes needs at least an input and an output width")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias vector per layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape}, expected {expect}")
        if self.hidden_activation != "relu":
            raise ValueError("only relu hidden layers are supported")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.output_activation == "column-softmax":
            if self.softmax_shape is None:
                raise ValueError("column-softmax needs softmax_shape")
            self.softmax_shape = tuple(int(s) for s in self.softmax_shape)
            if self.softmax_shape[0] * self.softmax_shape[1] != self.layer_sizes[-1]:
                raise ValueError("softmax_shape does not match the output width")

    @property
    def params(self):
        return list(self.weights) + list(self.biases)

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    def with_params(self, params):
        k = len(self.weights)
        return replace(self, weights=list(params[:k]), biases=list(params[k:]))

    def astype(self, dtype):
        return self.with_params([p.astype(dtype) for p in self.params])


@dataclass
class Gradients:
    weights: list
    biases: list
    input_grad: np.ndarray = None

    @property
    def params(self):
        return list(self.weights) + list(self.biases)


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_adam: float = 1e-8


@dataclass
class _Cache:
    net_key: tuple
    inputs: list  # input to each layer; for k > 0 also the relu output of layer k - 1
    pre_out: np.ndarray  # pre-activation of the output layer
    output: np.ndarray
    squeeze: bool = field(default=False)


def init_net(layer_sizes, output_activation="linear", seed=0, softmax_shape=None, stream_id=0):
    """He-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases."""
    gen = rng.stream(seed, rng.INIT, stream_id)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(gen.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNet(list(layer_sizes), weights, biases, output_activation, softmax_shape)


def zero_net(layer_sizes, output_activation="linear", softmax_shape=None):
    weights = [np.zeros((a, b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])]
    biases = [np.zeros(b) for b in layer_sizes[1:]]
    return DenseNet(list(layer_sizes), weights, biases, output_activation, softmax_shape)


def _net_key(net):
    return tuple(id(p) for p in net.params)


def column_softmax(z, shape):
    """Softmax over the row axis of each ``shape``-laid-out output, per column."""
    lead = z.shape[:-1]
    z = z.reshape(lead + tuple(shape))
    z = z - z.max(axis=-2, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=-2, keepdims=True)).reshape(lead + (-1,))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(net, z):
    act = net.output_activation
    if act == "linear":
        return z
    if act == "sigmoid":
        return sigmoid(z)
    if act == "relu":
        return np.maximum(z, 0.0)
    return column_softmax(z, net.softmax_shape)


def forward(net, x):
    x = np.asarray(x)
    squeeze = x.ndim == 1
    h = x[None] if squeeze else x
    if h.shape[-1] != net.n_inputs:
        raise ValueError(f"input width {h.shape[-1]} != network input width {net.n_inputs}")
    inputs = []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w
        z += b
        if k < last:
            # relu in place; the mask is recovered later as (output > 0)
            h = np.maximum(z, 0.0, out=z)
    out = _activate(net, z)
    cache = _Cache(_net_key(net), inputs, z, out, squeeze)
    return (out[0] if squeeze else out), cache


def _output_delta(net, cache, g):
    y = cache.output
    act = net.output_activation
    if act == "linear":
        return g
    if act == "sigmoid":
        return g * y * (1.0 - y)
    if act == "relu":
        return g * (cache.pre_out > 0)
    lead = y.shape[:-1]
    ys = y.reshape(lead + net.softmax_shape)
    gs = g.reshape(lead + net.softmax_shape)
    dz = ys * (gs - np.sum(ys * gs, axis=-2, keepdims=True))
    return dz.reshape(lead + (-1,))


def backward(net, cache, output_grad, param_grads=True):
    """Gradients of ``<output, output_grad>`` summed over the batch.

    Parameter gradients are summed over batch rows; ``input_grad`` keeps one
    row per input. With ``param_grads=False`` only the input gradient is
    computed.
    """
    if cache.net_key != _net_key(net):
        raise StaleCacheError("cache was produced by a different network")
    g = np.asarray(output_grad)
    if cache.squeeze:
        g = g[None]
    if g.shape != cache.output.shape:
        raise ValueError(f"output_grad shape {g.shape} != output shape {cache.output.shape}")
    delta = _output_delta(net, cache, g)
    n_layers = len(net.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        if param_grads:
            gw[k] = cache.inputs[k].T @ delta
            gb[k] = delta.sum(axis=0)
        delta = delta @ net.weights[k].T
        if k > 0:
            np.multiply(delta, cache.inputs[k] > 0, out=delta)
    return Gradients(gw, gb, delta[0] if cache.squeeze else delta)


def adam_init(net, beta1=0.9, beta2=0.999, epsilon_adam=1e-8):
    zeros = [np.zeros_like(p) for p in net.params]
    return AdamState(zeros, [z.copy() for z in zeros], 0, beta1, beta2, epsilon_adam)


def adam_step(net, grads, state, lr):
    """One bias-corrected Adam descent step; returns a new net and a new state."""
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, m_out, v_out = [], [], []
    for p, g, m, v in zip(net.params, grads.params, state.first_moment, state.second_moment):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon_adam))
        m_out.append(m)
        v_out.append(v)
    new_state = AdamState(m_out, v_out, t, b1, b2, state.epsilon_adam)
    return net.with_params(new_params), new_state


def _relu_masks(cache):
    return [h > 0 for h in cache.inputs[1:]]


def finite_diff_details(net, x, h=1e-4, output_grad=None, seed=0, floor=1e-6):
    """Compare ``backward`` with central differences on every parameter and input.

    Returns ``(max_relative_error, n_skipped)``. A coordinate is skipped when
    the +/- ``h`` probes land on different ReLU patterns than the base point,
    i.e. when the probe straddles a kink. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    x = np.asarray(x, dtype=np.float64)
    out, cache = forward(net, x)
    if output_grad is None:
        output_grad = rng.stream(seed, rng.INIT, 999).standard_normal(np.shape(out))
    analytic = backward(net, cache, output_grad)
    base_masks = _relu_masks(cache)
    relu_out = net.output_activation == "relu"
    if relu_out:
        base_masks.append(cache.pre_out > 0)

    def probe(n, xx):
        o, c = forward(n, xx)
        masks = _relu_masks(c) + ([c.pre_out > 0] if relu_out else [])
        same = all(np.array_equal(a, b) for a, b in zip(masks, base_masks))
        return float(np.sum(o * output_grad)), same

    worst, skipped = 0.0, 0

    def compare(a, plus, minus):
        nonlocal worst, skipped
        (fp, ok_p), (fm, ok_m) = plus, minus
        if not (ok_p and ok_m):
            skipped += 1
            return
        num = (fp - fm) / (2 * h)
        err = abs(a - num) / max(abs(a), abs(num), floor)
        worst = max(worst, err)

    params = net.params
    for k, p in enumerate(params):
        g = analytic.params[k]
        for idx in np.ndindex(p.shape):
            shifted = [q.copy() if j == k else q for j, q in enumerate(params)]
            shifted[k][idx] += h
            plus = probe(net.with_params(shifted), x)
            shifted[k][idx] -= 2 * h
            minus = probe(net.with_params(shifted), x)
            compare(g[idx], plus, minus)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        compare(analytic.input_grad[idx], probe(net, xp), probe(net, xm))
    return worst, skipped


def finite_diff_check(net, x, h=1e-4, **kwargs):
    return finite_diff_details(net, x, h, **kwargs)[0]


# -- checkpoints -------------------------------------------------------------

def _net_header(net):
    return {
        "layer_sizes": net.layer_sizes,
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "softmax_shape": list(net.softmax_shape) if net.softmax_shape else None,
    }


def save_checkpoint(path, nets, meta=None):
    """Write named nets into a ``CONFAUCTION-NET-v1`` container.

    Layout: magic line, one line of sorted-key JSON describing every net and
    ``meta``, then the parameters as little-endian float64 in header order.
    """
    names = list(nets)
    header = {"meta": meta or {}, "order": names,
              "nets": {k: _net_header(nets[k]) for k in names}}
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes()
                    for k in names for p in nets[k].params)
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def load_checkpoint(path):
    """Return ``(nets, meta)`` from a file written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != MAGIC:
            raise ValueError(f"{path}: not a {MAGIC.decode()} checkpoint")
        header = json.loads(fh.readline())
        blob = fh.read()
    flat = np.frombuffer(blob, dtype="<f8")
    pos = 0
    nets = {}
    for name in header["order"]:
        h = header["nets"][name]
        sizes = h["layer_sizes"]
        shapes = [(a, b) for a, b in zip(sizes[:-1], sizes[1:])] + [(b,) for b in sizes[1:]]
        params = []
        for shape in shapes:
            size = int(np.prod(shape))
            params.append(flat[pos:pos + size].reshape(shape).astype(np.float64))
            pos += size
        k = len(sizes) - 1
        nets[name] = DenseNet(sizes, params[:k], params[k:], h["output_activation"],
                              tuple(h["softmax_shape"]) if h["softmax_shape"] else None,
                              h["hidden_activation"])
    if pos != flat.size:
        raise ValueError(f"{path}: trailing or missing parameter data")
    return nets, header["meta"]
