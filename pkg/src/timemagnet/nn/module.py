"""Parameter containers.

A :class:`Module` tracks its parameters, buffers and child modules in
assignment order, which makes parameter naming deterministic.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from ..autodiff.tensor import Tensor


class Parameter(Tensor):
    """A tensor owned by a module. ``frozen`` parameters never receive updates."""

    __slots__ = ("frozen",)

    def __init__(self, data, frozen: bool = False, name: Optional[str] = None):
        super().__init__(data, requires_grad=not frozen, name=name)
        self.frozen = frozen


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    bound = gain * math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "rng", None)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = name
        object.__setattr__(self, name, np.asarray(value, dtype=np.float64))

    def add_module(self, name: str, module: "Module") -> None:
        setattr(self, name, module)

    def children(self):
        return self._modules.items()

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for n, p in self._params.items():
            yield prefix + n, p
        for mn, m in self._modules.items():
            yield from m.named_parameters(prefix + mn + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if not p.frozen]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for n in self._buffers:
            yield prefix + n, getattr(self, n)
        for mn, m in self._modules.items():
            yield from m.named_buffers(prefix + mn + ".")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for n, p in self.named_parameters():
            out[n] = p.data.copy()
        for n, b in self.named_buffers():
            out[n] = b.copy()
        return out

    def load_state_dict(self, state, strict: bool = True) -> list:
        """Copy arrays into place; returns the names that were loaded."""
        targets = {}
        for n, p in self.named_parameters():
            targets[n] = ("param", p)
        for mod_name, mod in self._named_modules():
            for b in mod._buffers:
                targets[mod_name + b] = ("buffer", (mod, b))
        loaded = []
        for n, arr in state.items():
            if n not in targets:
                if strict:
                    raise KeyError(f"unexpected key {n!r} in state")
                continue
            kind, ref = targets[n]
            arr = np.asarray(arr, dtype=np.float64)
            if kind == "param":
                if arr.shape != ref.shape:
                    if strict:
                        raise ValueError(f"shape mismatch for {n!r}: {arr.shape} vs {ref.shape}")
                    continue
                ref.data[...] = arr
            else:
                mod, b = ref
                if arr.shape != getattr(mod, b).shape:
                    if strict:
                        raise ValueError(f"shape mismatch for {n!r}")
                    continue
                object.__setattr__(mod, b, arr.copy())
            loaded.append(n)
        if strict:
            missing = set(targets) - set(loaded)
            if missing:
                raise KeyError(f"missing keys in state: {sorted(missing)}")
        return loaded

    def _named_modules(self, prefix: str = ""):
        yield prefix, self
        for mn, m in self._modules.items():
            yield from m._named_modules(prefix + mn + ".")

    def train(self, rng: Optional[np.random.Generator] = None) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", True)
            object.__setattr__(m, "rng", rng)
        return self

    def eval(self) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", False)
            object.__setattr__(m, "rng", None)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class ModuleDict(Module):
    def __init__(self, modules=None):
        super().__init__()
        self._keys = []
        for k, m in (modules or {}).items():
            self[k] = m

    def __setitem__(self, key: str, m: Module) -> None:
        setattr(self, key, m)
        if key not in self._keys:
            self._keys.append(key)

    def __getitem__(self, key: str) -> Module:
        return getattr(self, key)

    def __contains__(self, key) -> bool:
        return key in self._keys

    def keys(self):
        return list(self._keys)

    def items(self):
        return [(k, getattr(self, k)) for k in self._keys]
