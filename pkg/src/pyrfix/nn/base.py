"""Minimal layer base: explicit parameters, gradients, and cache stacks.

Every layer follows the same discipline: ``forward`` pushes whatever the
backward pass needs onto a cache stack, ``backward`` pops it.  Unrolled
sequence models therefore backprop by calling ``backward`` in exact
reverse call order.  Parameter gradients accumulate until ``zero_grad``.
"""

from __future__ import annotations

import math
from collections.abc import Iterator

import numpy as np


class ShapeMismatchError(ValueError):
    pass


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    """Uniform in +-sqrt(1/fan_in); the scheme used for all affine maps."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache: list = []

    def add_param(self, name: str, value: np.ndarray) -> np.ndarray:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    # -- cache stack -------------------------------------------------------

    def push_cache(self, item) -> None:
        self._cache.append(item)

    def pop_cache(self):
        return self._cache.pop()

    def clear_caches(self) -> None:
        self._cache.clear()
        for _, child in self.submodules():
            child.clear_caches()

    # -- module tree -------------------------------------------------------

    def submodules(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + name: p for name, p in self.params.items()}
        for child_name, child in self.submodules():
            out.update(child.named_parameters(prefix + child_name + "."))
        return out

    def named_grads(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + name: g for name, g in self.grads.items()}
        for child_name, child in self.submodules():
            out.update(child.named_grads(prefix + child_name + "."))
        return out

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0
        for _, child in self.submodules():
            child.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def set_parameters(self, flat: dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy values in by dotted name; shapes must match exactly."""
        own = self.named_parameters()
        if strict:
            missing = set(own) - set(flat)
            extra = set(flat) - set(own)
            if missing or extra:
                raise ShapeMismatchError(
                    f"parameter name mismatch: missing={sorted(missing)}, "
                    f"unexpected={sorted(extra)}")
        for name, value in flat.items():
            if name not in own:
                continue
            target = own[name]
            if target.shape != np.shape(value):
                raise ShapeMismatchError(
                    f"{name}: checkpoint shape {np.shape(value)} != model {target.shape}")
            target[...] = value
