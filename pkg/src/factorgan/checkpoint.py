"""Flat binary checkpoints.

Layout (all integers little-endian int64, all floats little-endian float64,
arrays row-major)::

    b"FGAN1"
    n_networks
    per network:   n_layers, layer_dims[n_layers + 1],
                   W_0, b_0, W_1, b_1, ...
    has_adam (0/1)
    if has_adam, per network:   step_count, m(W_0), m(b_0), ..., v(W_0), v(b_0), ...
    has_spectral_norm (0/1)
    if set, per network:   flag (0/1), then u_0, v_0, u_1, v_1, ... when flag is 1

Activation tags and optimizer hyperparameters are not stored; they come from
the experiment config that produced the networks.
"""
import struct

import numpy as np

from .nn import AdamState, DenseNet, SpectralNormState

MAGIC = b"FGAN1"


class CheckpointError(ValueError):
    pass


def _write_int(fh, value):
    fh.write(struct.pack("<q", int(value)))


def _write_array(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path, nets, adam_states=None):
    nets = list(nets)
    if adam_states is not None and len(adam_states) != len(nets):
        raise CheckpointError("need one Adam state per network")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _write_int(fh, len(nets))
        for net in nets:
            _write_int(fh, len(net.weights))
            for d in net.layer_dims:
                _write_int(fh, d)
            for p in net.params():
                _write_array(fh, p)
        _write_int(fh, adam_states is not None)
        if adam_states is not None:
            for st in adam_states:
                _write_int(fh, st.step_count)
                for m in st.first_moment:
                    _write_array(fh, m)
                for v in st.second_moment:
                    _write_array(fh, v)
        has_sn = any(net.spectral_norm is not None for net in nets)
        _write_int(fh, has_sn)
        if has_sn:
            for net in nets:
                _write_int(fh, net.spectral_norm is not None)
                for st in net.spectral_norm or ():
                    _write_array(fh, st.u)
                    _write_array(fh, st.v)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def int(self):
        return struct.unpack("<q", self.take(8))[0]

    def array(self, shape):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path, hidden_activations=None, output_activations=None):
    """Read a checkpoint; return ``(nets, adam_states_or_None)``."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    n_nets = r.int()
    nets = []
    for i in range(n_nets):
        n_layers = r.int()
        dims = [r.int() for _ in range(n_layers + 1)]
        ws, bs = [], []
        for j in range(n_layers):
            ws.append(r.array((dims[j + 1], dims[j])))
            bs.append(r.array((dims[j + 1],)))
        kw = {}
        if hidden_activations is not None:
            kw["hidden_activation"] = hidden_activations[i]
        if output_activations is not None:
            kw["output_activation"] = output_activations[i]
        nets.append(DenseNet(tuple(dims), ws, bs, **kw))
    adam = None
    if r.int():
        adam = []
        for net in nets:
            step = r.int()
            ms = [r.array(p.shape) for p in net.params()]
            vs = [r.array(p.shape) for p in net.params()]
            adam.append(AdamState(ms, vs, step))
    if r.int():
        for net in nets:
            if r.int():
                net.spectral_norm = [
                    SpectralNormState(r.array((w.shape[0],)), r.array((w.shape[1],)))
                    for w in net.weights
                ]
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return nets, adam
