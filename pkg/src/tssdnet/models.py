"""Time-domain synthetic speech detection networks.

Two families operating directly on raw waveforms (B, 1, L):

* ``res``: stacked residual blocks of three k=3 convolutions (each
  followed by batch norm), an optional 1x1-conv + BN skip path, and a
  ReLU after the elementwise add.
* ``inc``: stacked inception-style blocks of parallel k=3 branches with
  dilations 1, 2, 4, ... per branch, each conv -> BN -> ReLU, outputs
  concatenated along channels.

Both share the same stem (conv k=7 -> BN -> ReLU -> maxpool 4), put a
maxpool(4) between consecutive blocks, global-max-pool after the last
block, and finish with three fully connected layers ending in 2 logits.
The time axis therefore shrinks only at pooling layers; with the
default 96000-sample input and 4 blocks the global pool sees exactly
375 steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .layers import BatchNorm1d, Conv1d, Linear
from .tensor import Tensor

POOL_FACTOR = 4
NUM_CLASSES = 2


def default_dilations(branches: int) -> tuple[int, ...]:
    return tuple(2 ** b for b in range(branches))


@dataclass
class ModelConfig:
    family: str
    num_blocks: int
    channels: tuple[int, ...]
    branches: int = 4
    dilations: tuple[int, ...] | None = None
    use_skip: bool = True
    fc: tuple[int, int] = (64, 32)
    stem_channels: int = 16
    stem_kernel: int = 7
    input_length: int = 96000

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.fc = tuple(int(c) for c in self.fc)
        if self.family not in ("res", "inc"):
            raise ValueError(f"unknown model family {self.family!r}")
        if self.num_blocks < 1:
            raise ValueError("need at least one block")
        if len(self.channels) != self.num_blocks:
            raise ValueError(
                f"channel list has {len(self.channels)} entries for {self.num_blocks} blocks")
        if len(self.fc) != 2:
            raise ValueError("fc must list exactly two hidden widths")
        if self.family == "inc":
            if self.branches < 1:
                raise ValueError("need at least one branch")
            if self.dilations is None:
                self.dilations = default_dilations(self.branches)
            self.dilations = tuple(int(d) for d in self.dilations)
            if len(self.dilations) != self.branches:
                raise ValueError(
                    f"{len(self.dilations)} dilations listed for {self.branches} branches")
            if list(self.dilations) != sorted(set(self.dilations)):
                raise ValueError("dilations must be strictly increasing")
            for d in self.dilations:
                if d < 1 or d & (d - 1):
                    raise ValueError(f"dilations must be powers of two, got {d}")


class ResBlock:
    """conv3-BN-ReLU x2, conv3-BN, plus skip path, add, ReLU.

    Without the 1x1 skip path the shortcut is the identity when the
    channel count is unchanged, and absent otherwise (plain main path).
    """

    def __init__(self, in_channels: int, channels: int, use_skip: bool,
                 rng: np.random.Generator, dtype=np.float32):
        self.conv1 = Conv1d(in_channels, channels, 3, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm1d(channels, dtype=dtype)
        self.conv2 = Conv1d(channels, channels, 3, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm1d(channels, dtype=dtype)
        self.conv3 = Conv1d(channels, channels, 3, rng=rng, dtype=dtype)
        self.bn3 = BatchNorm1d(channels, dtype=dtype)
        if use_skip:
            self.skip_conv = Conv1d(in_channels, channels, 1, rng=rng, dtype=dtype)
            self.skip_bn = BatchNorm1d(channels, dtype=dtype)
        else:
            self.skip_conv = None
            self.skip_bn = None
        self.identity_skip = not use_skip and in_channels == channels
        self.out_channels = channels

    def forward(self, x: Tensor, train: bool) -> Tensor:
        h = ops.relu(self.bn1.forward(self.conv1.forward(x), train))
        h = ops.relu(self.bn2.forward(self.conv2.forward(h), train))
        h = self.bn3.forward(self.conv3.forward(h), train)
        if self.skip_conv is not None:
            h = ops.add(h, self.skip_bn.forward(self.skip_conv.forward(x), train))
        elif self.identity_skip:
            h = ops.add(h, x)
        return ops.relu(h)

    def named_children(self):
        pairs = [("conv1", self.conv1), ("bn1", self.bn1),
                 ("conv2", self.conv2), ("bn2", self.bn2),
                 ("conv3", self.conv3), ("bn3", self.bn3)]
        if self.skip_conv is not None:
            pairs += [("skip_conv", self.skip_conv), ("skip_bn", self.skip_bn)]
        return pairs


class IncBlock:
    """Parallel dilated conv3-BN-ReLU branches, channel-concatenated."""

    def __init__(self, in_channels: int, channels: int, dilations: tuple[int, ...],
                 rng: np.random.Generator, dtype=np.float32):
        self.branches = []
        for d in dilations:
            self.branches.append((Conv1d(in_channels, channels, 3, dilation=d,
                                         rng=rng, dtype=dtype),
                                  BatchNorm1d(channels, dtype=dtype)))
        self.out_channels = channels * len(dilations)

    def forward(self, x: Tensor, train: bool) -> Tensor:
        outs = [ops.relu(bn.forward(conv.forward(x), train))
                for conv, bn in self.branches]
        return ops.concat_channels(outs)

    def named_children(self):
        pairs = []
        for b, (conv, bn) in enumerate(self.branches):
            pairs += [(f"branch{b + 1}_conv", conv), (f"branch{b + 1}_bn", bn)]
        return pairs


class Model:
    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.training = True
        self.stem_conv = Conv1d(1, config.stem_channels, config.stem_kernel,
                                rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm1d(config.stem_channels, dtype=dtype)
        self.blocks: list[ResBlock | IncBlock] = []
        cin = config.stem_channels
        for m in range(config.num_blocks):
            if config.family == "res":
                block = ResBlock(cin, config.channels[m], config.use_skip, rng, dtype=dtype)
            else:
                block = IncBlock(cin, config.channels[m], config.dilations, rng, dtype=dtype)
            self.blocks.append(block)
            cin = block.out_channels
        self.fc1 = Linear(cin, config.fc[0], rng=rng, dtype=dtype)
        self.fc2 = Linear(config.fc[0], config.fc[1], rng=rng, dtype=dtype)
        self.fc3 = Linear(config.fc[1], NUM_CLASSES, rng=rng, dtype=dtype)
        self.last_length_trace: list[int] = []

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def forward(self, x: Tensor, train: bool | None = None) -> Tensor:
        """Run a (B, 1, input_length) batch to (B, 2) logits.

        Records the time-axis length after every pooling stage in
        ``last_length_trace``; the final entry is the length seen by the
        global max pool.
        """
        if train is None:
            train = self.training
        if x.data.ndim != 3 or x.data.shape[1] != 1:
            raise ValueError(f"expected (B, 1, L) input, got shape {x.shape}")
        if x.data.shape[2] != self.config.input_length:
            raise ValueError(
                f"input length {x.data.shape[2]} != configured {self.config.input_length}")

        trace = [x.data.shape[2]]
        h = ops.relu(self.stem_bn.forward(self.stem_conv.forward(x), train))
        h = ops.maxpool1d(h, POOL_FACTOR)
        trace.append(h.data.shape[2])
        for m, block in enumerate(self.blocks):
            h = block.forward(h, train)
            if m < len(self.blocks) - 1:
                h = ops.maxpool1d(h, POOL_FACTOR)
                trace.append(h.data.shape[2])
        self.last_length_trace = trace
        h = ops.global_maxpool(h)
        h = ops.relu(self.fc1.forward(h))
        h = ops.relu(self.fc2.forward(h))
        logits = self.fc3.forward(h)
        if not np.isfinite(logits.data).all():
            raise FloatingPointError("non-finite logits")
        return logits

    def named_children(self):
        pairs = [("stem_conv", self.stem_conv), ("stem_bn", self.stem_bn)]
        for m, block in enumerate(self.blocks):
            for name, layer in block.named_children():
                pairs.append((f"block{m + 1}.{name}", layer))
        pairs += [("fc1", self.fc1), ("fc2", self.fc2), ("fc3", self.fc3)]
        return pairs

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for prefix, layer in self.named_children():
            for name, t in layer.named_parameters():
                out.append((f"{prefix}.{name}", t))
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for prefix, layer in self.named_children():
            for name, arr in layer.named_buffers():
                out.append((f"{prefix}.{name}", arr))
        return out

    def zero_grad(self):
        for _, t in self.named_parameters():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copies of all parameters and running statistics, by name."""
        state = {name: t.data.copy() for name, t in self.named_parameters()}
        state.update({name: arr.copy() for name, arr in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        expected = set(own) | set(bufs)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, t in own.items():
            if state[name].shape != t.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {t.data.shape}")
            t.data[...] = state[name]
        for name, arr in bufs.items():
            if state[name].shape != arr.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {arr.shape}")
            arr[...] = state[name]

    def astype(self, dtype) -> "Model":
        """Fresh model with parameters and statistics cast to dtype."""
        other = Model(self.config, np.random.default_rng(0), dtype=dtype)
        for (_, src), (_, dst) in zip(self.named_parameters(), other.named_parameters()):
            dst.data = src.data.astype(dtype)
        for (_, src), (_, dst) in zip(self.named_buffers(), other.named_buffers()):
            dst[...] = src.astype(dtype)
        return other


def build_res_tssdnet(config: ModelConfig, rng: np.random.Generator | None = None,
                      dtype=np.float32) -> Model:
    if config.family != "res":
        raise ValueError(f"config family is {config.family!r}, expected 'res'")
    return Model(config, rng or np.random.default_rng(), dtype=dtype)


def build_inc_tssdnet(config: ModelConfig, rng: np.random.Generator | None = None,
                      dtype=np.float32) -> Model:
    if config.family != "inc":
        raise ValueError(f"config family is {config.family!r}, expected 'inc'")
    return Model(config, rng or np.random.default_rng(), dtype=dtype)


def build_model(config: ModelConfig, rng: np.random.Generator | None = None,
                dtype=np.float32) -> Model:
    if config.family == "res":
        return build_res_tssdnet(config, rng, dtype)
    return build_inc_tssdnet(config, rng, dtype)


def count_parameters(model: Model) -> int:
    """Trainable entries only: weights, biases, BN gamma/beta."""
    return sum(t.data.size for _, t in model.named_parameters())


# Text form of a config: one "key = value" pair per line. Used as the
# checkpoint header and accepted by the CLI --config option.

_CONFIG_KEYS = ("family", "num_blocks", "channels", "branches", "dilations",
                "use_skip", "fc", "stem_channels", "stem_kernel", "input_length")


def config_to_text(config: ModelConfig) -> str:
    lines = [
        f"family = {config.family}",
        f"num_blocks = {config.num_blocks}",
        "channels = " + ",".join(str(c) for c in config.channels),
    ]
    if config.family == "inc":
        lines.append(f"branches = {config.branches}")
        lines.append("dilations = " + ",".join(str(d) for d in config.dilations))
    else:
        lines.append(f"use_skip = {'true' if config.use_skip else 'false'}")
    lines += [
        "fc = " + ",".join(str(c) for c in config.fc),
        f"stem_channels = {config.stem_channels}",
        f"stem_kernel = {config.stem_kernel}",
        f"input_length = {config.input_length}",
    ]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ModelConfig:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = val.strip()

    def ints(s):
        return tuple(int(tok) for tok in s.split(",") if tok.strip())

    if "family" not in values or "num_blocks" not in values or "channels" not in values:
        raise ValueError("config must define family, num_blocks, and channels")
    kwargs: dict = {
        "family": values["family"],
        "num_blocks": int(values["num_blocks"]),
        "channels": ints(values["channels"]),
    }
    if "branches" in values:
        kwargs["branches"] = int(values["branches"])
    if "dilations" in values:
        kwargs["dilations"] = ints(values["dilations"])
    if "use_skip" in values:
        token = values["use_skip"].lower()
        if token not in ("true", "false"):
            raise ValueError(f"use_skip must be true or false, got {token!r}")
        kwargs["use_skip"] = token == "true"
    if "fc" in values:
        kwargs["fc"] = ints(values["fc"])
    for key in ("stem_channels", "stem_kernel", "input_length"):
        if key in values:
            kwargs[key] = int(values[key])
    return ModelConfig(**kwargs)
