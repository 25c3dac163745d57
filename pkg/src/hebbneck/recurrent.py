"""LSTM policy used as the recurrent baseline.

The first dense layer of the static network is replaced by an LSTM cell with
the same number of units; the remaining layers stay dense tanh layers. All
parameters live in one flat vector so the same independent-Gaussian ES model
that trains static weights can train this policy.

Flat layout, in order: input weights ``(4H, n_in)``, recurrent weights
``(4H, H)``, gate biases ``(4H,)``, then the dense layers exactly as in
``plastic.split_weights`` for ``layer_sizes[1:]``. Gate rows are ordered
input, forget, cell, output.
"""
from __future__ import annotations

import numpy as np

from .plastic import Topology, dense, split_weights


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LstmPolicy:
    def __init__(self, topology: Topology, params):
        if len(topology.layer_sizes) < 3:
            raise ValueError("recurrent baseline needs at least one hidden layer")
        self.topology = topology
        n_in, hidden = topology.layer_sizes[:2]
        params = np.asarray(params, dtype=float)
        if params.shape[-1] != self.n_params(topology):
            raise ValueError(
                f"expected {self.n_params(topology)} parameters, got {params.shape[-1]}"
            )
        lead = params.shape[:-1]
        g = 4 * hidden
        sizes = [g * n_in, g * hidden, g]
        cuts = np.cumsum(sizes)
        self.w_in = params[..., : cuts[0]].reshape(lead + (g, n_in))
        self.w_rec = params[..., cuts[0]: cuts[1]].reshape(lead + (g, hidden))
        self.bias = params[..., cuts[1]: cuts[2]]
        self.head = split_weights(Topology(topology.layer_sizes[1:], topology.activation), params[..., cuts[2]:])
        self.hidden = hidden
        self.reset(lead)

    @staticmethod
    def n_params(topology: Topology) -> int:
        n_in, hidden = topology.layer_sizes[:2]
        head = Topology(topology.layer_sizes[1:], topology.activation)
        return 4 * hidden * (n_in + hidden + 1) + head.n_synapses

    def reset(self, batch_shape=()):
        """Zero hidden and cell state, as at the start of every episode."""
        self.h = np.zeros(tuple(batch_shape) + (self.hidden,))
        self.c = np.zeros_like(self.h)

    def forward(self, observation) -> np.ndarray:
        x = np.asarray(observation, dtype=float)
        z = dense(self.w_in, x) + dense(self.w_rec, self.h) + self.bias
        H = self.hidden
        i = _sigmoid(z[..., :H])
        f = _sigmoid(z[..., H: 2 * H])
        g = np.tanh(z[..., 2 * H: 3 * H])
        o = _sigmoid(z[..., 3 * H:])
        self.c = f * self.c + i * g
        self.h = o * np.tanh(self.c)
        out = self.h
        for w in self.head:
            out = np.tanh(dense(w, out))
        return out
