"""
Dense layers and small perceptrons built on the autodiff Tensor.
"""
from typing import Callable, List, Sequence

import numpy as np

from app.core.tensor import Tensor, tanh
from app.errors import ContractError


class Linear:
    """Affine map x @ weight + bias with torch-style uniform initialisation."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, zero: bool = False):
        bound = 1.0 / np.sqrt(max(in_dim, 1))
        weight = np.zeros((in_dim, out_dim)) if zero else rng.uniform(-bound, bound, (in_dim, out_dim))
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(np.zeros((1, out_dim)), requires_grad=True)

    @property
    def in_dim(self) -> int:
        return self.weight.rows

    @property
    def out_dim(self) -> int:
        return self.weight.cols

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def clone(self) -> "Linear":
        other = Linear.__new__(Linear)
        other.weight = Tensor(self.weight.values, requires_grad=True)
        other.bias = Tensor(self.bias.values, requires_grad=True)
        return other


class MLP:
    """
    Stack of Linear layers with an activation between them.
    The output layer can start at zero so the network initially outputs 0.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator,
        zero_output: bool = True,
        activation: Callable[[Tensor], Tensor] = tanh,
    ):
        if len(sizes) < 2:
            raise ContractError("MLP needs at least input and output sizes")
        self.activation = activation
        self.layers = [
            Linear(sizes[i], sizes[i + 1], rng, zero=zero_output and i == len(sizes) - 2)
            for i in range(len(sizes) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = self.activation(layer(x))
        return self.layers[-1](x)

    def parameters(self) -> List[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def clone(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.activation = self.activation
        other.layers = [layer.clone() for layer in self.layers]
        return other


def parameters_to_vector(params: Sequence[Tensor]) -> np.ndarray:
    if not params:
        return np.zeros(0)
    return np.concatenate([p.values.ravel() for p in params])


def vector_to_parameters(vector: np.ndarray, params: Sequence[Tensor]) -> None:
    """Overwrite parameter values from a flat vector in declared order."""
    expected = sum(p.values.size for p in params)
    if vector.size != expected:
        raise ContractError(f"parameter vector has {vector.size} entries, model needs {expected}")
    offset = 0
    for p in params:
        n = p.values.size
        p.values = vector[offset:offset + n].reshape(p.shape).astype(np.float64, copy=True)
        p.grad = None
        offset += n


def randomize_parameters(params: Sequence[Tensor], rng: np.random.Generator, scale: float) -> None:
    """Replace every parameter with N(0, scale^2) draws (test and selftest models)."""
    for p in params:
        p.values = rng.normal(0.0, scale, p.shape)
        p.grad = None
