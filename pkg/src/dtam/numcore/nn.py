"""Feed-forward and recurrent building blocks on top of the tensor engine.

Parameter containers are plain dataclasses holding ``Tensor`` leaves; every
container exposes ``named_tensors()`` yielding ``(name, tensor)`` pairs in a
deterministic order so optimizers and checkpoints can walk them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dtam.errors import ShapeError
from dtam.numcore.tensor import (
    Tensor,
    concat,
    dropout,
    relu,
    sigmoid,
    tanh,
)

ACTIVATIONS = {
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "identity": lambda t: t,
}


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple | None = None) -> Tensor:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)


# ---- multilayer perceptron --------------------------------------------------


@dataclass
class MlpParams:
    """Dense stack: activation between layers, none after the last."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    activation: str = "tanh"
    dropout_rate: float = 0.0

    @property
    def in_size(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_size(self) -> int:
        return self.weights[-1].shape[1]

    def named_tensors(self, prefix: str = "mlp"):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.w{i}", w
            yield f"{prefix}.b{i}", b


def mlp_init(sizes, rng: np.random.Generator, activation: str = "tanh",
             dropout_rate: float = 0.0) -> MlpParams:
    """Glorot-uniform weights, zero biases, for layer widths ``sizes``."""
    if len(sizes) < 2:
        raise ShapeError("an MLP needs at least input and output sizes")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    p = MlpParams(activation=activation, dropout_rate=dropout_rate)
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        p.weights.append(glorot_uniform(rng, fan_in, fan_out))
        p.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return p


def mlp_apply(params: MlpParams, x: Tensor, rng: np.random.Generator | None = None,
              training: bool = False) -> Tensor:
    """Apply the stack to a (B, in) matrix or (in,) vector."""
    act = ACTIVATIONS[params.activation]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i != last:
            h = act(h)
            if training and params.dropout_rate > 0.0:
                if rng is None:
                    raise ValueError("training-mode dropout needs an rng")
                h = dropout(h, params.dropout_rate, rng, training=True)
    return h


# ---- gated recurrent unit ----------------------------------------------------


@dataclass
class GruParams:
    """Stacked GRU; per layer, gate weights for reset, update, candidate."""

    w_reset: list = field(default_factory=list)
    u_reset: list = field(default_factory=list)
    b_reset: list = field(default_factory=list)
    w_update: list = field(default_factory=list)
    u_update: list = field(default_factory=list)
    b_update: list = field(default_factory=list)
    w_cand: list = field(default_factory=list)
    u_cand: list = field(default_factory=list)
    b_cand: list = field(default_factory=list)
    dropout_rate: float = 0.0

    @property
    def layers(self) -> int:
        return len(self.w_reset)

    @property
    def hidden_size(self) -> int:
        return self.u_reset[0].shape[0]

    @property
    def in_size(self) -> int:
        return self.w_reset[0].shape[0]

    def named_tensors(self, prefix: str = "gru"):
        names = ["w_reset", "u_reset", "b_reset", "w_update", "u_update",
                 "b_update", "w_cand", "u_cand", "b_cand"]
        for layer in range(self.layers):
            for n in names:
                yield f"{prefix}.l{layer}.{n}", getattr(self, n)[layer]


def gru_init(in_size: int, hidden_size: int, layers: int,
             rng: np.random.Generator, dropout_rate: float = 0.0) -> GruParams:
    p = GruParams(dropout_rate=dropout_rate)
    for layer in range(layers):
        d = in_size if layer == 0 else hidden_size
        for w_list, u_list, b_list in (
            (p.w_reset, p.u_reset, p.b_reset),
            (p.w_update, p.u_update, p.b_update),
            (p.w_cand, p.u_cand, p.b_cand),
        ):
            w_list.append(glorot_uniform(rng, d, hidden_size))
            u_list.append(glorot_uniform(rng, hidden_size, hidden_size))
            b_list.append(Tensor(np.zeros(hidden_size), requires_grad=True))
    return p


def _gru_cell(p: GruParams, layer: int, x: Tensor, h: Tensor) -> Tensor:
    r = sigmoid(x @ p.w_reset[layer] + h @ p.u_reset[layer] + p.b_reset[layer])
    z = sigmoid(x @ p.w_update[layer] + h @ p.u_update[layer] + p.b_update[layer])
    n = tanh(x @ p.w_cand[layer] + r * (h @ p.u_cand[layer]) + p.b_cand[layer])
    return (1.0 - z) * n + z * h


def gru_sequence(params: GruParams, inputs, h0=None,
                 rng: np.random.Generator | None = None,
                 training: bool = False) -> list:
    """Run the stack over a list of (B, in) step tensors.

    Returns the top-layer hidden state after each step, in step order.
    ``h0`` is an optional list of per-layer initial states. An empty input
    sequence yields an empty output.
    """
    if not inputs:
        return []
    batch = inputs[0].shape[0] if inputs[0].ndim == 2 else None
    hidden = params.hidden_size
    states = []
    for layer in range(params.layers):
        if h0 is not None:
            states.append(h0[layer])
        elif batch is None:
            states.append(Tensor(np.zeros(hidden)))
        else:
            states.append(Tensor(np.zeros((batch, hidden))))
    outputs = []
    for x in inputs:
        inp = x
        for layer in range(params.layers):
            states[layer] = _gru_cell(params, layer, inp, states[layer])
            inp = states[layer]
            if training and params.dropout_rate > 0.0 and layer != params.layers - 1:
                if rng is None:
                    raise ValueError("training-mode dropout needs an rng")
                inp = dropout(inp, params.dropout_rate, rng, training=True)
        outputs.append(states[-1])
    return outputs


# ---- long short-term memory ---------------------------------------------------


@dataclass
class LstmParams:
    """Stacked LSTM with input, forget, cell, output gates."""

    w_in: list = field(default_factory=list)
    u_in: list = field(default_factory=list)
    b_in: list = field(default_factory=list)
    w_forget: list = field(default_factory=list)
    u_forget: list = field(default_factory=list)
    b_forget: list = field(default_factory=list)
    w_cell: list = field(default_factory=list)
    u_cell: list = field(default_factory=list)
    b_cell: list = field(default_factory=list)
    w_out: list = field(default_factory=list)
    u_out: list = field(default_factory=list)
    b_out: list = field(default_factory=list)
    dropout_rate: float = 0.0

    @property
    def layers(self) -> int:
        return len(self.w_in)

    @property
    def hidden_size(self) -> int:
        return self.u_in[0].shape[0]

    @property
    def in_size(self) -> int:
        return self.w_in[0].shape[0]

    def named_tensors(self, prefix: str = "lstm"):
        names = ["w_in", "u_in", "b_in", "w_forget", "u_forget", "b_forget",
                 "w_cell", "u_cell", "b_cell", "w_out", "u_out", "b_out"]
        for layer in range(self.layers):
            for n in names:
                yield f"{prefix}.l{layer}.{n}", getattr(self, n)[layer]


def lstm_init(in_size: int, hidden_size: int, layers: int,
              rng: np.random.Generator, dropout_rate: float = 0.0) -> LstmParams:
    p = LstmParams(dropout_rate=dropout_rate)
    for layer in range(layers):
        d = in_size if layer == 0 else hidden_size
        for w_list, u_list, b_list in (
            (p.w_in, p.u_in, p.b_in),
            (p.w_forget, p.u_forget, p.b_forget),
            (p.w_cell, p.u_cell, p.b_cell),
            (p.w_out, p.u_out, p.b_out),
        ):
            w_list.append(glorot_uniform(rng, d, hidden_size))
            u_list.append(glorot_uniform(rng, hidden_size, hidden_size))
            b_list.append(Tensor(np.zeros(hidden_size), requires_grad=True))
    return p


def _lstm_cell(p: LstmParams, layer: int, x: Tensor, h: Tensor, c: Tensor):
    i = sigmoid(x @ p.w_in[layer] + h @ p.u_in[layer] + p.b_in[layer])
    f = sigmoid(x @ p.w_forget[layer] + h @ p.u_forget[layer] + p.b_forget[layer])
    g = tanh(x @ p.w_cell[layer] + h @ p.u_cell[layer] + p.b_cell[layer])
    o = sigmoid(x @ p.w_out[layer] + h @ p.u_out[layer] + p.b_out[layer])
    c_new = f * c + i * g
    return o * tanh(c_new), c_new


def lstm_sequence(params: LstmParams, inputs, h0=None,
                  rng: np.random.Generator | None = None,
                  training: bool = False) -> list:
    """Run the stack over step tensors; returns top-layer hiddens per step."""
    if not inputs:
        return []
    batch = inputs[0].shape[0] if inputs[0].ndim == 2 else None
    hidden = params.hidden_size

    def fresh():
        if batch is None:
            return Tensor(np.zeros(hidden))
        return Tensor(np.zeros((batch, hidden)))

    hs = [h0[layer] if h0 is not None else fresh() for layer in range(params.layers)]
    cs = [fresh() for _ in range(params.layers)]
    outputs = []
    for x in inputs:
        inp = x
        for layer in range(params.layers):
            hs[layer], cs[layer] = _lstm_cell(params, layer, inp, hs[layer], cs[layer])
            inp = hs[layer]
            if training and params.dropout_rate > 0.0 and layer != params.layers - 1:
                if rng is None:
                    raise ValueError("training-mode dropout needs an rng")
                inp = dropout(inp, params.dropout_rate, rng, training=True)
        outputs.append(hs[-1])
    return outputs


# ---- cell-kind dispatch ---------------------------------------------------


def recurrence_sequence(params, inputs, h0=None, rng=None, training=False) -> list:
    """Dispatch on the parameter container type (GRU or LSTM)."""
    if isinstance(params, GruParams):
        return gru_sequence(params, inputs, h0=h0, rng=rng, training=training)
    if isinstance(params, LstmParams):
        return lstm_sequence(params, inputs, h0=h0, rng=rng, training=training)
    raise TypeError(f"not a recurrence parameter container: {type(params)!r}")


def recurrence_hidden_size(params) -> int:
    if isinstance(params, (GruParams, LstmParams)):
        return params.hidden_size
    raise TypeError(f"not a recurrence parameter container: {type(params)!r}")
