"""Parameter-holding layers built on the functional ops.

Each layer owns its weight Tensors (and, for batch norm, plain-array
running statistics that are not trained). Initialization draws from a
caller-supplied numpy Generator so whole-model setup is reproducible
from a single seed.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


class Conv1d:
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 dilation: int = 1, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng or np.random.default_rng()
        bound = 1.0 / np.sqrt(in_channels * kernel_size)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.weight = Tensor(
            rng.uniform(-bound, bound, (out_channels, in_channels, kernel_size)), dtype=dtype)
        self.bias = Tensor(rng.uniform(-bound, bound, out_channels), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, self.dilation)

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def named_buffers(self):
        return []


class BatchNorm1d:
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), dtype=dtype)
        self.beta = Tensor(np.zeros(channels), dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor, train: bool) -> Tensor:
        return ops.batchnorm1d(x, self.gamma, self.beta,
                               self.running_mean, self.running_var,
                               momentum=self.momentum, eps=self.eps, train=train)

    def named_parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def named_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class Linear:
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng()
        bound = 1.0 / np.sqrt(in_features)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(rng.uniform(-bound, bound, (out_features, in_features)), dtype=dtype)
        self.bias = Tensor(rng.uniform(-bound, bound, out_features), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def named_buffers(self):
        return []
