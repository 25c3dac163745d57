"""Plastic feedforward networks driven by ABCD Hebbian rules.

Weights are episode-local: they are drawn fresh at the start of every episode
and then changed after every environment step by

    dw_ij = eta * (A * o_i * o_j + B * o_i + C * o_j + D)

where ``o_i`` is the presynaptic and ``o_j`` the postsynaptic activation.

Synapses are indexed flat, layer by layer in feedforward order; inside a
layer the weight matrix has shape ``(out, in)`` and is read row-major, so
synapse ``offset + j * n_in + i`` connects input ``i`` to output ``j``.
Rule matrices, mixture assignment logits and static weight vectors all bind
to this index.

Every array-valued operation accepts optional leading batch dimensions, which
is how a whole population of episodes is simulated at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RULE_WIDTH = 5
DEFAULT_CLIP = 3.0
DEFAULT_INIT_RANGE = 0.1

ACTIVATIONS = {
    "tanh": np.tanh,
}


@dataclass(frozen=True)
class HebbRule:
    eta: float
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"non-finite Hebbian rule {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.eta, self.a, self.b, self.c, self.d], dtype=float)

    @classmethod
    def from_array(cls, row) -> "HebbRule":
        eta, a, b, c, d = (float(v) for v in row)
        return cls(eta, a, b, c, d)


def hebbian_delta(rule: HebbRule, pre: float, post: float) -> float:
    """Weight change of one synapse for one step."""
    return rule.eta * (rule.a * pre * post + rule.b * pre + rule.c * post + rule.d)


@dataclass(frozen=True)
class Topology:
    layer_sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("a topology needs at least an input and an output layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def shapes(self) -> list[tuple[int, int]]:
        """Weight matrix shape ``(out, in)`` per layer pair."""
        return [(o, i) for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:])]

    @property
    def n_synapses(self) -> int:
        return sum(o * i for o, i in self.shapes)

    @property
    def offsets(self) -> list[int]:
        out, acc = [], 0
        for o, i in self.shapes:
            out.append(acc)
            acc += o * i
        return out

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]


def _split(topology: Topology, flat: np.ndarray, trailing: int) -> list[np.ndarray]:
    axis = flat.ndim - 1 - trailing
    if flat.shape[axis] != topology.n_synapses:
        raise ValueError(
            f"expected {topology.n_synapses} synapses, got {flat.shape[axis]}"
        )
    lead = flat.shape[:axis]
    tail = flat.shape[axis + 1:]
    parts = []
    for (o, i), off in zip(topology.shapes, topology.offsets):
        block = flat[(Ellipsis, slice(off, off + o * i)) + (slice(None),) * trailing]
        parts.append(block.reshape(lead + (o, i) + tail))
    return parts


def split_weights(topology: Topology, flat: np.ndarray) -> list[np.ndarray]:
    """``(..., N)`` flat weights -> per-layer ``(..., out, in)`` matrices."""
    return _split(topology, np.asarray(flat, dtype=float), 0)


def flatten_weights(weights: list[np.ndarray]) -> np.ndarray:
    lead = weights[0].shape[:-2]
    return np.concatenate([w.reshape(lead + (-1,)) for w in weights], axis=-1)


@dataclass
class RuleAssignment:
    """One rule per synapse, stored as a ``(..., N, 5)`` matrix.

    The per-layer coefficient planes are cut once at construction so the
    inner episode loop does not re-slice.
    """

    topology: Topology
    rules: np.ndarray
    layers: list[tuple[np.ndarray, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        self.rules = np.asarray(self.rules, dtype=float)
        if self.rules.ndim < 2 or self.rules.shape[-1] != RULE_WIDTH:
            raise ValueError(f"rules must have shape (..., N, {RULE_WIDTH})")
        if self.rules.shape[-2] != self.topology.n_synapses:
            raise ValueError(
                f"assignment has {self.rules.shape[-2]} rules for "
                f"{self.topology.n_synapses} synapses"
            )
        self.layers = [
            tuple(np.ascontiguousarray(block[..., c]) for c in range(RULE_WIDTH))
            for block in _split(self.topology, self.rules, 1)
        ]

    def __len__(self) -> int:
        return self.rules.shape[-2]

    def rule(self, index: int) -> HebbRule:
        return HebbRule.from_array(self.rules[..., index, :])


@dataclass
class PlasticNetwork:
    topology: Topology
    weights: list[np.ndarray]
    clip: float = DEFAULT_CLIP
    last_activations: list[np.ndarray] | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.topology.shapes):
            raise ValueError("one weight matrix per layer pair required")
        for w, shape in zip(self.weights, self.topology.shapes):
            if w.shape[-2:] != shape:
                raise ValueError(f"weight shape {w.shape} does not match {shape}")

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.weights[0].shape[:-2]

    def flat_weights(self) -> np.ndarray:
        return flatten_weights(self.weights)

    def copy(self) -> "PlasticNetwork":
        acts = None if self.last_activations is None else [a.copy() for a in self.last_activations]
        return PlasticNetwork(self.topology, [w.copy() for w in self.weights], self.clip, acts)


def dense(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Explicit multiply-and-reduce rather than matmul: the per-row reduction
    # is then independent of batch size, which keeps batched and single
    # rollouts bitwise identical.
    return (weights * x[..., None, :]).sum(axis=-1)


def forward(net: PlasticNetwork, observation) -> np.ndarray:
    """Propagate an observation; remember every layer's activation."""
    x = np.asarray(observation, dtype=float)
    if x.shape[-1] != net.topology.n_inputs:
        raise ValueError(
            f"observation has {x.shape[-1]} entries, network expects {net.topology.n_inputs}"
        )
    act = ACTIVATIONS[net.topology.activation]
    activations = [x]
    for w in net.weights:
        x = act(dense(w, x))
        activations.append(x)
    net.last_activations = activations
    return x


def hebbian_step(net: PlasticNetwork, assignment: RuleAssignment) -> PlasticNetwork:
    """Apply each synapse's rule to its last pre/post activations, then clip.

    Updates ``net`` in place and returns it.
    """
    if net.last_activations is None:
        raise RuntimeError("hebbian_step called before forward")
    if len(assignment) != net.topology.n_synapses:
        raise ValueError(
            f"assignment has {len(assignment)} rules, network has {net.topology.n_synapses} synapses"
        )
    acts = net.last_activations
    for li, (eta, a, b, c, d) in enumerate(assignment.layers):
        pre = acts[li][..., None, :]
        post = acts[li + 1][..., :, None]
        # Same operation order as hebbian_delta, so results agree bitwise.
        delta = eta * (a * pre * post + b * pre + c * post + d)
        net.weights[li] = np.clip(net.weights[li] + delta, -net.clip, net.clip)
    return net


def init_weights(
    topology: Topology,
    seed,
    init_range: float = DEFAULT_INIT_RANGE,
    clip: float = DEFAULT_CLIP,
) -> PlasticNetwork:
    """Fresh network with weights i.i.d. uniform on ``[-init_range, init_range]``."""
    rng = np.random.default_rng(seed)
    weights = [rng.uniform(-init_range, init_range, size=shape) for shape in topology.shapes]
    return PlasticNetwork(topology, weights, clip)


def init_weights_batch(topology: Topology, seeds, init_range=DEFAULT_INIT_RANGE, clip=DEFAULT_CLIP):
    """Stack independently seeded networks along a leading batch axis."""
    nets = [init_weights(topology, s, init_range, clip) for s in seeds]
    weights = [np.stack([n.weights[li] for n in nets]) for li in range(len(topology.shapes))]
    return PlasticNetwork(topology, weights, clip)


def network_from_flat(topology: Topology, flat, clip: float = DEFAULT_CLIP) -> PlasticNetwork:
    """Static network whose weights are given directly as a ``(..., N)`` vector."""
    return PlasticNetwork(topology, [w.copy() for w in split_weights(topology, flat)], clip)
