"""Parameter containers and the small layer set the network is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A named leaf tensor that always tracks gradients."""

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Minimal module tree: attributes that are Parameters or Modules are registered."""

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for name, p in self._named_parameters(prefix):
            if id(p) in seen:
                continue
            seen.add(id(p))
            yield name, p

    def _named_parameters(self, prefix: str):
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
        for key, child in self.children():
            yield from child._named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in vars(self).items():
            if isinstance(val, np.ndarray) and key.startswith("running_"):
                yield prefix + key, val
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise T.ShapeError(f"{name}: stored shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]
        for name, b in bufs.items():
            b[...] = state[name]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def kaiming(rng: np.random.Generator, shape, fan_in: int, gain: float = 2.0) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, bias: bool = True, zero: bool = False):
        shape = (cout, cin, kernel, kernel)
        data = np.zeros(shape) if zero else kaiming(rng, shape, cin * kernel * kernel)
        self.weight = Parameter(data)
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    """Affine map over the last axis; a 1x1 convolution applied to token features."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, std: float | None = None,
                 zero: bool = False):
        if zero:
            w = np.zeros((cin, cout))
        elif std is not None:
            w = rng.normal(0.0, std, size=(cin, cout))
        else:
            w = kaiming(rng, (cin, cout), cin, gain=1.0)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(cout))

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           self.training, self.momentum, self.eps)


class ConvReluBN(Module):
    """conv3x3 -> ReLU -> batch norm, the repeated building block."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.conv = Conv2d(cin, cout, 3, rng)
        self.bn = BatchNorm(cout)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(T.relu(self.conv(x)))


class Psi(Module):
    """A stack of ConvReluBN stages."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, depth: int = 2,
                 hidden: int | None = None):
        hidden = hidden or cout
        widths = [cin] + [hidden] * (depth - 1) + [cout]
        self.stages = [ConvReluBN(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for stage in self.stages:
            x = stage(x)
        return x
