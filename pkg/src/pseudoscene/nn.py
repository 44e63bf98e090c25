"""Parameters, modules and the few layers the backbones are built from."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that always requires grad."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Registers parameters and submodules in assignment order.

    ``named_parameters`` yields dotted hierarchical names such as
    ``modules.0.sa.weight``; names are unique by construction.
    """

    def __setattr__(self, key, value):
        if isinstance(value, (Parameter, Module, ModuleList)):
            self.__dict__.setdefault("_children", {})[key] = value
        super().__setattr__(key, value)

    def named_parameters(self, prefix=""):
        for key, child in self.__dict__.get("_children", {}).items():
            name = f"{prefix}{key}"
            if isinstance(child, Parameter):
                yield name, child
            else:
                yield from child.named_parameters(name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class ModuleList(list):
    def named_parameters(self, prefix=""):
        for i, m in enumerate(self):
            yield from m.named_parameters(f"{prefix}{i}.")


class Linear(Module):
    def __init__(self, cin, cout, rng, bias=True):
        bound = np.sqrt(6.0 / (cin + cout))
        self.weight = Parameter(rng.uniform(-bound, bound, size=(cin, cout)))
        if bias:
            self.bias = Parameter(np.zeros(cout))
        else:
            self.bias = None
        self.cin, self.cout = cin, cout

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class ChannelNorm(Module):
    def __init__(self, c, eps=1e-5):
        self.gamma = Parameter(np.ones(c))
        self.beta = Parameter(np.zeros(c))
        self.eps = eps

    def __call__(self, x):
        return T.channel_norm(x, self.gamma, self.beta, self.eps)


class Block(Module):
    """Linear -> channel norm -> ReLU."""

    def __init__(self, cin, cout, rng):
        self.fc = Linear(cin, cout, rng)
        self.norm = ChannelNorm(cout)

    def __call__(self, x):
        return T.relu(self.norm(self.fc(x)))


class Head(Module):
    """Two-layer MLP head: Block(cin, hidden) then a plain linear to ``cout``."""

    def __init__(self, cin, hidden, cout, rng):
        self.hidden = Block(cin, hidden, rng)
        self.out = Linear(hidden, cout, rng)

    def __call__(self, x):
        return self.out(self.hidden(x))
