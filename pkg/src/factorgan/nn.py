"""Dense networks with manual reverse-mode gradients, Adam and spectral norm.

Everything is float64 and single-threaded. A :class:`DenseNet` keeps the
intermediates of its most recent forward pass so :func:`net_backward` can run
without re-evaluating it.
"""
from dataclasses import dataclass, field

import numpy as np

from . import backend

LEAKY_SLOPE = 0.2

_ACT_CODES = {"identity": 0, "relu": 1, "leaky_relu": 2, "sigmoid": 3}


class ShapeError(ValueError):
    """Input or gradient array does not match the network's layer dims."""


class UsageError(RuntimeError):
    """Operation called out of order, e.g. backward before forward."""


class DegenerateInputError(ValueError):
    """Input for which the operation is undefined (e.g. an all-zero weight)."""


@dataclass
class SpectralNormState:
    """Persistent singular-vector estimates for one weight matrix."""

    u: np.ndarray
    v: np.ndarray
    power_iterations: int = 1


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            0, lr, beta1, beta2, eps,
        )


@dataclass
class _Cache:
    inputs: list
    pre: list
    post: list
    eff_weights: list
    sigmas: list


@dataclass
class DenseNet:
    layer_dims: tuple
    weights: list
    biases: list
    hidden_activation: str = "leaky_relu"
    output_activation: str = "identity"
    spectral_norm: list = None
    _cache: _Cache = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("need exactly one weight and bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != want or b.shape != (want[0],):
                raise ShapeError(f"layer {i}: weight {w.shape}/bias {b.shape}, expected {want}")
        for tag in (self.hidden_activation, self.output_activation):
            if tag not in _ACT_CODES:
                raise ValueError(f"unknown activation {tag!r}")

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def params(self):
        """Parameters in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def activations(self):
        n = len(self.weights)
        return [self.hidden_activation] * (n - 1) + [self.output_activation]

    def refresh_spectral_norm(self):
        """Advance every layer's power iteration by its configured count."""
        if self.spectral_norm is None:
            return
        for w, st in zip(self.weights, self.spectral_norm):
            _check_nonzero(w)
            backend.kernels.power_iteration(w, st.u, st.v, st.power_iterations)

    def effective_weights(self):
        """Weights as used in the forward pass, and the divisor applied to each."""
        if self.spectral_norm is None:
            return list(self.weights), [1.0] * len(self.weights)
        ws, sigmas = [], []
        for w, st in zip(self.weights, self.spectral_norm):
            sigma = float(st.u @ (w @ st.v))
            if not sigma > 0.0:
                raise DegenerateInputError("spectral norm estimate is not positive")
            ws.append(w / sigma)
            sigmas.append(sigma)
        return ws, sigmas


def _check_nonzero(w):
    if not np.any(w):
        raise DegenerateInputError("cannot spectrally normalize an all-zero matrix")


def _as_batch(x, dim):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"expected a batch of shape (n, {dim}), got {x.shape}")
    return x


def net_forward(net, batch):
    """Run the network; return ``(logits, outputs)`` and cache intermediates.

    ``logits`` is the final pre-activation, ``outputs`` the activated result.
    Spectrally normalized nets use the current ``u``/``v`` without advancing
    them; call :meth:`DenseNet.refresh_spectral_norm` for that.
    """
    k = backend.kernels
    h = _as_batch(batch, net.in_dim)
    ws, sigmas = net.effective_weights()
    inputs, pre, post = [], [], []
    for w, b, act in zip(ws, net.biases, net.activations()):
        inputs.append(h)
        z, h = k.dense_forward(h, w, b, _ACT_CODES[act], LEAKY_SLOPE)
        pre.append(z)
        post.append(h)
    net._cache = _Cache(inputs, pre, post, ws, sigmas)
    return pre[-1], post[-1]


def net_backward(net, upstream_grad):
    """Gradients of ``sum(upstream_grad * outputs)`` from the last forward pass.

    Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
    :meth:`DenseNet.params`. For spectrally normalized layers the singular
    vectors are held fixed, so the gradient includes the term through the
    norm estimate ``u.T W v``.
    """
    cache = net._cache
    if cache is None:
        raise UsageError("net_backward called before net_forward")
    k = backend.kernels
    g = np.ascontiguousarray(upstream_grad, dtype=np.float64)
    if g.shape != cache.post[-1].shape:
        raise ShapeError(f"upstream gradient {g.shape} != output {cache.post[-1].shape}")
    acts = net.activations()
    grads = [None] * (2 * len(net.weights))
    for i in reversed(range(len(net.weights))):
        dw, db, g = k.dense_backward(
            cache.inputs[i], cache.eff_weights[i], cache.pre[i], cache.post[i], g,
            _ACT_CODES[acts[i]], LEAKY_SLOPE,
        )
        if net.spectral_norm is not None:
            st, sigma, w_sn = net.spectral_norm[i], cache.sigmas[i], cache.eff_weights[i]
            dw = (dw - np.sum(dw * w_sn) * np.outer(st.u, st.v)) / sigma
        grads[2 * i] = dw
        grads[2 * i + 1] = db
    return grads, g


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("params, grads and Adam moments must align")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    state.step_count += 1
    k = backend.kernels
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        k.adam_update(
            p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
            m.reshape(-1), v.reshape(-1),
            state.lr, state.beta1, state.beta2, state.eps, state.step_count,
        )
    return params, state


def spectral_normalize(weight, state):
    """Advance ``state`` and return ``weight`` divided by its top singular value estimate."""
    w = np.ascontiguousarray(weight, dtype=np.float64)
    _check_nonzero(w)
    sigma = backend.kernels.power_iteration(w, state.u, state.v, state.power_iterations)
    return w / sigma


def init_spectral_state(weight, rng, power_iterations=1):
    u = rng.standard_normal(weight.shape[0])
    u /= np.linalg.norm(u)
    v = weight.T @ u
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        v = rng.standard_normal(weight.shape[1])
        nrm = np.linalg.norm(v)
    return SpectralNormState(u, v / nrm, power_iterations)


def init_params(layer_dims, seed, hidden_activation="leaky_relu",
                output_activation="identity", spectral_norm=False, power_iterations=1):
    """Glorot-uniform weights, zero biases.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"layer dims must be >= 2 positive integers, got {layer_dims}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    sn = None
    if spectral_norm:
        sn = [init_spectral_state(w, rng, power_iterations) for w in weights]
    return DenseNet(tuple(dims), weights, biases, hidden_activation, output_activation, sn)
