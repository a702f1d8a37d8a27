"""Small MLP building blocks on top of the autodiff tensors."""

import math
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Module:
    """Base: children registered as attributes contribute named params."""

    def params(self):
        out = OrderedDict()
        for attr, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[attr] = value
            elif isinstance(value, Module):
                for name, p in value.params().items():
                    out[f"{attr}.{name}"] = p
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for name, p in item.params().items():
                            out[f"{attr}.{i}.{name}"] = p
        return out

    def load_params(self, flat):
        mine = self.params()
        for name, arr in flat.items():
            if name in mine:
                mine[name].data[...] = arr

    def param_arrays(self):
        return OrderedDict((n, p.data.copy()) for n, p in self.params().items())


class Linear(Module):
    def __init__(self, fan_in, fan_out, rng, zero_init=False, row_stable=False):
        if zero_init:
            w = np.zeros((fan_in, fan_out))
        else:
            w = glorot_uniform(rng, fan_in, fan_out)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True)
        self.row_stable = row_stable

    def __call__(self, x):
        mm = ad.matmul_rowstable if self.row_stable else ad.matmul
        return mm(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return ad.layernorm(x, self.eps) * self.gain + self.shift


class Dropout:
    """Inverted dropout with caller-supplied rng; identity in eval mode."""

    def __init__(self, p):
        self.p = float(p)

    def __call__(self, x, rng=None, training=False):
        if not training or self.p == 0.0:
            return x
        keep = 1.0 - self.p
        mask = (rng.random(x.shape) < keep) / keep
        return x * Tensor(mask)


class MLP(Module):
    """Linear stack with ReLU between layers; optional zero-init last layer."""

    def __init__(self, dims, rng, final_zero=False):
        self.layers = [
            Linear(dims[i], dims[i + 1], rng,
                   zero_init=(final_zero and i == len(dims) - 2))
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x
