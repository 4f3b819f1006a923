"""Parameter containers and the tabular MLP decoder."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def glorot(rng: np.random.Generator, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    """Minimal parameter registry: attributes that are parameters or modules."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{key}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        self.weight = T.parameter(glorot(rng, in_dim, out_dim))
        self.bias = T.parameter(np.zeros((1, out_dim))) if bias else None
        self.in_dim, self.out_dim = in_dim, out_dim

    def __call__(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got {x.shape[-1]}")
        out = T.matmul(x, self.weight)
        return out if self.bias is None else T.add(out, self.bias)


class MlpDecoder(Module):
    """``num_layers`` rectified hidden layers of width ``hidden_dim``, then 2 logits."""

    def __init__(self, in_dim, num_layers, hidden_dim, rng, dropout=0.0):
        if num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        dims = [in_dim] + [hidden_dim] * num_layers + [2]
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.dropout = dropout

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    def __call__(self, x, training=False, rng=None):
        h = T.as_tensor(x)
        for layer in self.layers[:-1]:
            h = T.relu(layer(h))
            h = T.dropout(h, self.dropout, rng, training)
        return self.layers[-1](h)


def mlp_forward(decoder: MlpDecoder, features):
    return decoder(features, training=False)
