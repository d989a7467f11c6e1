"""Losses, mixup, Adam, and the training loop.

The default objective is weighted cross-entropy with per-class weights
w_c = N_total / (2 * N_c), so balanced data reduces exactly to plain
cross-entropy. Mixup training instead draws one lambda ~ Beta(a, a) per
batch, mixes examples with an in-batch permutation, and optimizes

    lambda * CE(logits, y) + (1 - lambda) * CE(logits, y_perm)

with unweighted CE. Model selection keeps the epoch with the lowest
development-set EER (earliest epoch on ties); the learning rate decays
by a fixed factor at every epoch boundary.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .data import LABEL_TO_INDEX, Utterance, batches_from_utterances
from .ops import log_softmax
from .tensor import Tensor, backward, from_op, no_grad


class TrainingError(Exception):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    base_lr: float = 1e-3
    lr_decay: float = 0.95
    mixup_alpha: float | None = None  # None -> weighted cross-entropy
    seed: int = 0
    log_path: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.mixup_alpha is not None and self.mixup_alpha <= 0.0:
            raise ValueError("mixup_alpha must be positive")


def class_weights(label_counts: tuple[int, int]) -> tuple[float, float]:
    """w_c = (N_0 + N_1) / (2 N_c); balanced counts give (1, 1)."""
    n0, n1 = label_counts
    if n0 <= 0 or n1 <= 0:
        raise TrainingError(f"both classes must appear in training data, got counts {label_counts}")
    total = n0 + n1
    return total / (2.0 * n0), total / (2.0 * n1)


def _check_labels(labels: np.ndarray):
    if labels.ndim != 1 or not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be a vector over {0, 1}")


def wce_loss(logprobs: Tensor, labels: np.ndarray, weights: tuple[float, float] = (1.0, 1.0)) -> Tensor:
    """Batch mean of -w_y * logprob[y]; unit weights give plain CE."""
    labels = np.asarray(labels)
    _check_labels(labels)
    b = logprobs.data.shape[0]
    if labels.shape[0] != b:
        raise ValueError(f"{labels.shape[0]} labels for batch of {b}")
    w = np.asarray(weights, dtype=logprobs.data.dtype)[labels]
    picked = logprobs.data[np.arange(b), labels]
    loss = np.asarray(-(w * picked).mean(), dtype=logprobs.data.dtype)

    def backward_fn(grad):
        g = np.zeros_like(logprobs.data)
        g[np.arange(b), labels] = -w / b
        logprobs.accumulate_grad(g * grad)

    return from_op(loss, (logprobs,), backward_fn)


def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    """Beta(alpha, alpha) via the two-Gamma construction, clamped to (0, 1)."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    g1 = rng.gamma(alpha, 1.0)
    g2 = rng.gamma(alpha, 1.0)
    return float(min(max(g1 / (g1 + g2), 1e-7), 1.0 - 1e-7))


def mixup_batch(x: np.ndarray, y: np.ndarray, lam: float, permutation: np.ndarray):
    """Convex-combine the batch with its permuted self.

    Returns (x_mixed, y, y[permutation], lam); both label vectors feed
    mixup_loss.
    """
    if len(permutation) != len(y):
        raise ValueError("permutation length must match batch size")
    lam_t = x.dtype.type(lam)
    x_mixed = lam_t * x + (x.dtype.type(1.0) - lam_t) * x[permutation]
    return x_mixed, y, y[permutation], lam


def mixup_loss(logprobs: Tensor, labels_i: np.ndarray, labels_j: np.ndarray, lam: float) -> Tensor:
    """lam * CE(logprobs, y_i) + (1 - lam) * CE(logprobs, y_j)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    ce_i = wce_loss(logprobs, labels_i)
    ce_j = wce_loss(logprobs, labels_j)
    wa = logprobs.data.dtype.type(lam)
    wb = logprobs.data.dtype.type(1.0 - lam)
    out = np.asarray(wa * ce_i.data + wb * ce_j.data)

    def backward_fn(grad):
        ce_i.accumulate_grad(wa * grad)
        ce_j.accumulate_grad(wb * grad)

    return from_op(out, (ce_i, ce_j), backward_fn)


class Adam:
    """Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, named_params: list[tuple[str, Tensor]], base_lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(named_params)
        self.base_lr = base_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float | None = None):
        """One update from the gradients currently on the parameters.

        Aborts (raising, with no state mutated) if any gradient is
        missing or non-finite.
        """
        if lr is None:
            lr = self.base_lr
        for name, p in self.params:
            if p.grad is None:
                raise TrainingError(f"parameter {name!r} has no gradient; run backward first")
            if p.grad.shape != p.data.shape:
                raise TrainingError(f"parameter {name!r} gradient shape mismatch")
            if not np.isfinite(p.grad).all():
                raise TrainingError(f"non-finite gradient for {name!r}; step aborted")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(p.grad)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {"adam.t": np.array([self.t], dtype=np.int64)}
        for name in self.m:
            state[f"adam.m.{name}"] = self.m[name]
            state[f"adam.v.{name}"] = self.v[name]
        return state


def decay_lr(base_lr: float, epoch: int, decay: float = 0.95) -> float:
    """Learning rate for the given epoch: base * decay**epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * decay ** epoch


def score_utterances(model, utts: list[Utterance], batch_size: int = 32) -> metrics.ScoreSet:
    """Eval-mode scores for every utterance, batched for speed."""
    scores = metrics.ScoreSet()
    with no_grad():
        for start in range(0, len(utts), batch_size):
            chunk = utts[start : start + batch_size]
            x = np.stack([u.samples for u in chunk])[:, None, :].astype(np.float32)
            logits = model.forward(Tensor(x), train=False)
            for u, row in zip(chunk, logits.data):
                scores.append(u.id, metrics.score_from_logits(row), u.label)
    return scores


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    dev_eer: float

    def format(self) -> str:
        return (f"epoch={self.epoch} lr={self.lr!r} "
                f"loss={self.train_loss!r} dev_eer={self.dev_eer!r}")


@dataclass
class FitResult:
    best_epoch: int
    best_dev_eer: float
    best_state: dict[str, np.ndarray]
    history: list[EpochStats] = field(default_factory=list)
    optimizer_state: dict[str, np.ndarray] | None = None


def fit(model, train_utts: list[Utterance], dev_utts: list[Utterance],
        config: TrainConfig, rng: np.random.Generator | None = None,
        log_stream=None) -> FitResult:
    """Train with Adam and per-epoch LR decay; keep the best-dev-EER epoch.

    Utterances must already be aligned to the model's input length. One
    log line per epoch goes to log_stream (default stdout) and, when
    configured, to config.log_path.
    """
    if not train_utts:
        raise TrainingError("empty training set")
    if not dev_utts:
        raise TrainingError("empty development set")
    dev_labels = {u.label for u in dev_utts}
    if not {"bonafide", "spoof"} <= dev_labels:
        raise TrainingError("development set needs both classes for EER")

    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if log_stream is None:
        log_stream = sys.stdout
    counts = (sum(u.label == "spoof" for u in train_utts),
              sum(u.label == "bonafide" for u in train_utts))
    weights = class_weights(counts)

    optimizer = Adam(model.named_parameters(), base_lr=config.base_lr)
    log_file = open(config.log_path, "w", encoding="utf-8") if config.log_path else None
    result = FitResult(best_epoch=-1, best_dev_eer=math.inf, best_state={})
    try:
        for epoch in range(config.max_epochs):
            lr = decay_lr(config.base_lr, epoch, config.lr_decay)
            loss_sum = 0.0
            seen = 0
            for x, y in batches_from_utterances(train_utts, config.batch_size, rng):
                if config.mixup_alpha is not None:
                    lam = sample_beta(config.mixup_alpha, rng)
                    perm = rng.permutation(len(y))
                    x, y_i, y_j, lam = mixup_batch(x, y, lam, perm)
                logits = model.forward(Tensor(x), train=True)
                logprobs = log_softmax(logits)
                if config.mixup_alpha is not None:
                    loss = mixup_loss(logprobs, y_i, y_j, lam)
                else:
                    loss = wce_loss(logprobs, y, weights)
                if not np.isfinite(loss.data):
                    raise TrainingError(f"non-finite loss at epoch {epoch}")
                model.zero_grad()
                backward(loss)
                optimizer.step(lr)
                loss_sum += float(loss.data) * len(y)
                seen += len(y)

            dev_scores = score_utterances(model, dev_utts, config.batch_size)
            dev_eer, _ = metrics.compute_eer(dev_scores)
            stats = EpochStats(epoch, lr, loss_sum / seen, dev_eer)
            result.history.append(stats)
            line = stats.format()
            print(line, file=log_stream)
            if log_file:
                log_file.write(line + "\n")
            if dev_eer < result.best_dev_eer:
                result.best_dev_eer = dev_eer
                result.best_epoch = epoch
                result.best_state = model.state_dict()
    finally:
        if log_file:
            log_file.close()

    result.optimizer_state = optimizer.state_arrays()
    return result
