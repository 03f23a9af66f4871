"""Affine layers and GRU cells backed by a :class:`ParamStore`."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad


class AffineLayer:
    def __init__(self, store, prefix, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out
        self.weight = store.add(f"{prefix}.weight", (n_out, n_in))
        self.bias = store.add(f"{prefix}.bias", (n_out,))

    def __call__(self, x):
        return affine_forward(self, x)


def affine_forward(layer, x):
    """``W x + b`` over the last axis of ``x``."""
    x = ad.as_tensor(x)
    if x.shape[-1] != layer.n_in:
        raise ad.ShapeError(f"affine: expected input width {layer.n_in}, got shape {x.shape}")
    return ad.linear(x, layer.weight, layer.bias)


class GruCell:
    """z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
    h~ = tanh(Wh x + Uh (r*h) + bh), h' = (1 - z) h + z h~."""

    def __init__(self, store, prefix, n_in, hidden):
        self.n_in, self.hidden = n_in, hidden
        for gate in "zrh":
            setattr(self, f"W{gate}", store.add(f"{prefix}.W{gate}", (hidden, n_in)))
        for gate in "zrh":
            setattr(self, f"U{gate}", store.add(f"{prefix}.U{gate}", (hidden, hidden)))
        for gate in "zrh":
            setattr(self, f"b{gate}", store.add(f"{prefix}.b{gate}", (hidden,)))


def gru_cell_step(cell, x, h):
    x, h = ad.as_tensor(x), ad.as_tensor(h)
    if x.shape[-1] != cell.n_in or h.shape[-1] != cell.hidden:
        raise ad.ShapeError(
            f"gru: expected input width {cell.n_in} and hidden {cell.hidden}, got {x.shape} and {h.shape}"
        )
    z = ad.sigmoid(ad.linear(x, cell.Wz, cell.bz) + ad.linear(h, cell.Uz))
    r = ad.sigmoid(ad.linear(x, cell.Wr, cell.br) + ad.linear(h, cell.Ur))
    cand = ad.tanh(ad.linear(x, cell.Wh, cell.bh) + ad.linear(r * h, cell.Uh))
    return h + z * (cand - h)


def gru_sequence(cell, inputs, h0=None):
    """Unroll over axis -2 of ``inputs`` (..., T, in); returns T hidden states."""
    inputs = ad.as_tensor(inputs)
    n_steps = inputs.shape[-2]
    if n_steps < 1:
        raise ValueError("gru_sequence needs at least one time step")
    h = ad.Tensor(np.zeros(inputs.shape[:-2] + (cell.hidden,))) if h0 is None else ad.as_tensor(h0)
    states = []
    for t in range(n_steps):
        h = gru_cell_step(cell, inputs[..., t, :], h)
        states.append(h)
    return states


def init_params(seed, store):
    """Uniform(-a, a) with a = 1/sqrt(fan_in) for matrices, zeros for biases."""
    rng = np.random.default_rng(seed)
    for name, t in store:
        if t.ndim == 1:
            t.data = np.zeros(t.shape)
        else:
            a = 1.0 / np.sqrt(t.shape[1])
            t.data = rng.uniform(-a, a, size=t.shape)
    return store
