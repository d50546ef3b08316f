"""Single-layer fully-connected recurrent policy network.

Genotype order: all input weights (neuron-major), then all recurrent weights
(neuron-major), then one bias per neuron. Growing the input size inserts new
zero weights at the end of each neuron's input row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compressor import ContractError

ACTIVATIONS = {
    "tanh": np.tanh,
    "identity": lambda x: x,
    "logistic": lambda x: 1.0 / (1.0 + np.exp(-x)),
}


@dataclass(frozen=True)
class ControllerShape:
    n_inputs: int
    n_neurons: int

    def __post_init__(self):
        if self.n_inputs < 0 or self.n_neurons < 1:
            raise ContractError(f"invalid controller shape {self}")

    @property
    def n_params(self) -> int:
        return self.n_neurons * (self.n_inputs + self.n_neurons + 1)


@dataclass(frozen=True)
class GenotypeLayout:
    input: slice
    recurrent: slice
    bias: slice

    @property
    def total(self) -> int:
        return self.bias.stop


def genotype_layout(shape: ControllerShape) -> GenotypeLayout:
    n_in = shape.n_neurons * shape.n_inputs
    n_rec = shape.n_neurons * shape.n_neurons
    return GenotypeLayout(
        input=slice(0, n_in),
        recurrent=slice(n_in, n_in + n_rec),
        bias=slice(n_in + n_rec, n_in + n_rec + shape.n_neurons),
    )


def input_insert_positions(shape: ControllerShape, n_new: int) -> list[int]:
    """Indices, in the enlarged genome, of the weights added by growing inputs by ``n_new``."""
    if n_new < 0:
        raise ContractError("cannot shrink the input layer")
    k = shape.n_inputs + n_new
    return [i * k + shape.n_inputs + j for i in range(shape.n_neurons) for j in range(n_new)]


def split_genome(genome, shape: ControllerShape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    genome = np.asarray(genome, dtype=np.float64)
    if genome.shape != (shape.n_params,):
        raise ContractError(f"genome length {genome.size} != {shape.n_params} for {shape}")
    lay = genotype_layout(shape)
    w_in = genome[lay.input].reshape(shape.n_neurons, shape.n_inputs)
    w_rec = genome[lay.recurrent].reshape(shape.n_neurons, shape.n_neurons)
    return w_in, w_rec, genome[lay.bias]


def join_genome(w_in, w_rec, bias) -> np.ndarray:
    return np.concatenate([np.ravel(w_in), np.ravel(w_rec), np.ravel(bias)]).astype(np.float64)


def expand_inputs(weights, shape: ControllerShape, new_n_inputs: int) -> tuple[np.ndarray, ControllerShape]:
    """Grow the input layer, zero-initializing every new connection."""
    if new_n_inputs < shape.n_inputs:
        raise ContractError(f"cannot shrink inputs {shape.n_inputs} -> {new_n_inputs}")
    w_in, w_rec, bias = split_genome(weights, shape)
    pad = np.zeros((shape.n_neurons, new_n_inputs - shape.n_inputs))
    new_shape = ControllerShape(new_n_inputs, shape.n_neurons)
    return join_genome(np.hstack([w_in, pad]), w_rec, bias), new_shape


class Controller:
    """Weights plus the neuron outputs from the previous activation."""

    def __init__(self, genome, shape: ControllerShape, activation: str = "tanh"):
        self.shape = shape
        self.w_in, self.w_rec, self.bias = split_genome(genome, shape)
        try:
            self._f = ACTIVATIONS[activation]
        except KeyError:
            raise ContractError(f"unknown activation {activation!r}") from None
        self.state = np.zeros(shape.n_neurons)

    def reset(self) -> None:
        self.state = np.zeros(self.shape.n_neurons)

    def activate(self, code) -> int:
        action, self.state = activate(self.w_in, self.w_rec, self.bias, self.state, code, self._f)
        return action


def activate(w_in, w_rec, bias, state, code, f=np.tanh) -> tuple[int, np.ndarray]:
    """One forward step; returns (argmax action, new neuron outputs).

    Only nonzero inputs contribute, so zero-padding the input (and the matching
    weight columns) leaves the result bit-identical.
    """
    code = np.asarray(code, dtype=np.float64).ravel()
    if code.size != w_in.shape[1]:
        raise ContractError(f"input length {code.size} != n_inputs {w_in.shape[1]}")
    nz = np.flatnonzero(code)
    pre = w_in[:, nz] @ code[nz] + w_rec @ state + bias
    out = f(pre)
    return int(np.argmax(out)), out
