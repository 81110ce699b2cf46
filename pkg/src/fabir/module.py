"""Parameter containers and weight initializers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from fabir.tensor import Parameter, get_default_dtype, layer_norm


class Module:
    """Minimal container: parameters and submodules are discovered from attributes.

    Enumeration follows attribute assignment order, so names and order are
    deterministic for a given construction sequence.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            path = f"{prefix}{name}"
            yield from _walk(value, path, seen)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(value, path, seen):
    if isinstance(value, Parameter):
        if id(value) not in seen:
            seen.add(id(value))
            yield path, value
    elif isinstance(value, Module):
        for name, p in value.named_parameters(prefix=path + "."):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}.{i}", seen)


def assign_names(module: Module) -> None:
    for name, p in module.named_parameters():
        p.name = name


def xavier(rng: np.random.Generator, shape, fan_in: int | None = None, fan_out: int | None = None) -> Parameter:
    if fan_in is None:
        fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-limit, limit, size=shape), dtype=get_default_dtype())


def zeros(shape) -> Parameter:
    return Parameter(np.zeros(shape), dtype=get_default_dtype())


def ones(shape) -> Parameter:
    return Parameter(np.ones(shape), dtype=get_default_dtype())


class LayerNorm(Module):
    """Per-token normalization with learned gain and bias."""

    def __init__(self, d: int, eps: float = 1e-6):
        self.gain = ones((d,))
        self.bias = zeros((d,))
        self._eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias, self._eps)
