"""Finite-difference verification of the backward pass.

All checks run in float64 with central differences (h = 1e-5) and
report the worst relative error

    max |g_an - g_fd| / max(|g_an|, |g_fd|, 1e-8)

over every coordinate of every checked tensor. Inputs are resampled
away from non-differentiable points: ReLU pre-activations and pooling
ties need a margin well above h.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .models import ModelConfig, Model, build_model
from .tensor import Tensor, backward

STEP = 1e-5
TOLERANCE = 1e-4


def projection_loss(out: Tensor, coeffs: np.ndarray) -> Tensor:
    """Scalar probe sum(out * coeffs); exercises all output directions."""
    from .tensor import from_op

    data = np.asarray((out.data * coeffs).sum(), dtype=out.data.dtype)

    def backward_fn(grad):
        out.accumulate_grad(grad * coeffs)

    return from_op(data, (out,), backward_fn)


def numeric_gradient(fn, tensors: list[Tensor], h: float = STEP) -> list[np.ndarray]:
    """Central-difference gradient of scalar fn() w.r.t. each tensor."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fplus = float(fn().data)
            flat[i] = orig - h
            fminus = float(fn().data)
            flat[i] = orig
            gflat[i] = (fplus - fminus) / (2.0 * h)
        grads.append(g)
    return grads


def grad_check(fn, tensors: list[Tensor], h: float = STEP) -> float:
    """Max relative error between analytic and numeric gradients.

    fn must rebuild the forward pass from the given (float64) tensors
    and return the scalar loss.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check runs in float64 mode")
        t.zero_grad()
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in tensors]
    numeric = numeric_gradient(fn, tensors, h)
    worst = 0.0
    for ga, gf in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gf)), 1e-8)
        worst = max(worst, float((np.abs(ga - gf) / denom).max()))
    return worst


def _away_from_zero(rng, shape, margin=1e-2):
    """Uniform in [-1,1] with |x| > margin (keeps ReLU off its kink)."""
    x = rng.uniform(-1.0, 1.0, shape)
    while (np.abs(x) <= margin).any():
        bad = np.abs(x) <= margin
        x[bad] = rng.uniform(-1.0, 1.0, bad.sum())
    return x


def _distinct_windows(rng, shape, window, margin=1e-2):
    """Random values whose pooling windows have a clear unique maximum."""
    while True:
        x = rng.uniform(-1.0, 1.0, shape)
        b, c, length = shape
        lout = length // window
        win = x[:, :, : lout * window].reshape(b, c, lout, window)
        top2 = np.sort(win, axis=3)[:, :, :, -2:]
        if window == 1 or (top2[..., 1] - top2[..., 0] > margin).all():
            return x


@dataclass
class CheckResult:
    name: str
    max_rel_err: float

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_rel_err < tol


def check_linear(rng) -> CheckResult:
    x = Tensor(rng.standard_normal((4, 3)), dtype=np.float64)
    w = Tensor(rng.standard_normal((2, 3)), dtype=np.float64)
    b = Tensor(rng.standard_normal(2), dtype=np.float64)
    coeffs = rng.standard_normal((4, 2))
    err = grad_check(lambda: projection_loss(ops.linear(x, w, b), coeffs), [x, w, b])
    return CheckResult("linear", err)


def check_conv1d(rng, dilation: int = 1, kernel: int = 3) -> CheckResult:
    x = Tensor(rng.standard_normal((2, 3, 20)), dtype=np.float64)
    w = Tensor(rng.standard_normal((4, 3, kernel)), dtype=np.float64)
    b = Tensor(rng.standard_normal(4), dtype=np.float64)
    coeffs = rng.standard_normal((2, 4, 20))
    err = grad_check(lambda: projection_loss(ops.conv1d(x, w, b, dilation), coeffs), [x, w, b])
    return CheckResult(f"conv1d(k={kernel},d={dilation})", err)


def check_maxpool(rng, p: int = 3) -> CheckResult:
    x = Tensor(_distinct_windows(rng, (2, 3, 17), p), dtype=np.float64)
    coeffs = rng.standard_normal((2, 3, 17 // p))
    err = grad_check(lambda: projection_loss(ops.maxpool1d(x, p), coeffs), [x])
    return CheckResult(f"maxpool1d(p={p})", err)


def check_global_maxpool(rng) -> CheckResult:
    x = Tensor(_distinct_windows(rng, (2, 3, 11), 11), dtype=np.float64)
    coeffs = rng.standard_normal((2, 3))
    err = grad_check(lambda: projection_loss(ops.global_maxpool(x), coeffs), [x])
    return CheckResult("global_maxpool", err)


def check_batchnorm(rng, train: bool = True) -> CheckResult:
    x = Tensor(rng.standard_normal((2, 3, 8)), dtype=np.float64)
    gamma = Tensor(rng.uniform(0.5, 1.5, 3), dtype=np.float64)
    beta = Tensor(rng.standard_normal(3), dtype=np.float64)
    mean = rng.standard_normal(3) if not train else None
    var = rng.uniform(0.5, 2.0, 3) if not train else None
    coeffs = rng.standard_normal((2, 3, 8))

    def fn():
        out = ops.batchnorm1d(x, gamma, beta, mean, var, train=train)
        return projection_loss(out, coeffs)

    err = grad_check(fn, [x, gamma, beta])
    return CheckResult(f"batchnorm1d({'train' if train else 'eval'})", err)


def check_relu(rng) -> CheckResult:
    x = Tensor(_away_from_zero(rng, (3, 5)), dtype=np.float64)
    coeffs = rng.standard_normal((3, 5))
    err = grad_check(lambda: projection_loss(ops.relu(x), coeffs), [x])
    return CheckResult("relu", err)


def check_add_concat(rng) -> CheckResult:
    a = Tensor(rng.standard_normal((2, 3, 6)), dtype=np.float64)
    b = Tensor(rng.standard_normal((2, 3, 6)), dtype=np.float64)
    c = Tensor(rng.standard_normal((2, 2, 6)), dtype=np.float64)
    coeffs = rng.standard_normal((2, 5, 6))
    err = grad_check(
        lambda: projection_loss(ops.concat_channels([ops.add(a, b), c]), coeffs), [a, b, c])
    return CheckResult("add+concat_channels", err)


def check_log_softmax(rng) -> CheckResult:
    x = Tensor(rng.standard_normal((4, 2)), dtype=np.float64)
    coeffs = rng.standard_normal((4, 2))
    err = grad_check(lambda: projection_loss(ops.log_softmax(x), coeffs), [x])
    return CheckResult("log_softmax", err)


def _tiny_config(family: str) -> ModelConfig:
    if family == "res":
        return ModelConfig(family="res", num_blocks=2, channels=(3, 4), use_skip=True,
                           fc=(6, 5), stem_channels=3, stem_kernel=7, input_length=32)
    return ModelConfig(family="inc", num_blocks=2, channels=(2, 3), branches=2,
                       fc=(6, 5), stem_channels=3, stem_kernel=7, input_length=32)


def check_composite(rng, family: str) -> CheckResult:
    """Two stacked blocks of one family, stem to logits, in train mode."""
    model = build_model(_tiny_config(family), np.random.default_rng(rng.integers(2 ** 31)))
    model64 = model.astype(np.float64)
    x = Tensor(rng.standard_normal((2, 1, 32)), dtype=np.float64)
    coeffs = rng.standard_normal((2, 2))
    tensors = [x] + [t for _, t in model64.named_parameters()]
    err = grad_check(lambda: projection_loss(model64.forward(x, train=True), coeffs), tensors)
    return CheckResult(f"composite({family})", err)


def run_all_checks(seed: int = 7) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        check_linear(rng),
        check_conv1d(rng, dilation=1, kernel=3),
        check_conv1d(rng, dilation=4, kernel=3),
        check_conv1d(rng, dilation=2, kernel=7),
        check_conv1d(rng, dilation=1, kernel=1),
        check_maxpool(rng),
        check_global_maxpool(rng),
        check_batchnorm(rng, train=True),
        check_batchnorm(rng, train=False),
        check_relu(rng),
        check_add_concat(rng),
        check_log_softmax(rng),
        check_composite(rng, "res"),
        check_composite(rng, "inc"),
    ]
