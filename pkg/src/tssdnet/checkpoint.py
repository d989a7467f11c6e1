"""Versioned binary checkpoint container (.tssd files).

Layout, all integers little-endian:

    magic   4 bytes  b"TSSD"
    version u32      currently 1
    config  u32 length + UTF-8 "key = value" lines (see models.config_to_text)
    arrays  u32 count, then per array:
              u32 name length + UTF-8 name
              u8  dtype code (0=float32, 1=float64, 2=int64)
              u32 ndim + u32 per dimension
              raw little-endian payload
    opt     u8 flag; if 1, another u32-counted array section holding
            optimizer state ("adam.m.<param>", "adam.v.<param>", "adam.t")

Arrays cover every trainable parameter plus batch-norm running
statistics; loading rebuilds the model from the config header and fills
each array by name, bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .models import Model, build_model, config_from_text, config_to_text

MAGIC = b"TSSD"
VERSION = 1

_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}


class CheckpointError(Exception):
    pass


def _write_array(fh, name: str, arr: np.ndarray):
    data = np.ascontiguousarray(arr)
    if data.dtype not in _DTYPE_CODES:
        raise CheckpointError(f"{name}: unsupported dtype {data.dtype}")
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", _DTYPE_CODES[data.dtype]))
    fh.write(struct.pack("<I", data.ndim))
    for dim in data.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint file")
    return buf


def _read_array(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, name_len).decode("utf-8")
    (code,) = struct.unpack("<B", _read_exact(fh, 1))
    if code not in _CODE_DTYPES:
        raise CheckpointError(f"{name}: unknown dtype code {code}")
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape)) if shape else 1
    payload = _read_exact(fh, count * dtype.itemsize)
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return name, arr.astype(dtype.newbyteorder("="))


def save_checkpoint(model: Model, path, optimizer_state: dict[str, np.ndarray] | None = None):
    arrays = list(model.named_parameters())
    entries = [(name, t.data) for name, t in arrays] + list(model.named_buffers())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        header = config_to_text(model.config).encode("utf-8")
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            _write_array(fh, name, arr)
        if optimizer_state is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<I", len(optimizer_state)))
            for name in sorted(optimizer_state):
                _write_array(fh, name, np.asarray(optimizer_state[name]))


def load_checkpoint(path) -> tuple[Model, dict[str, np.ndarray] | None]:
    """Rebuild the model (and optimizer state, if stored) from a .tssd file."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic bytes {magic!r}; not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            config = config_from_text(_read_exact(fh, header_len).decode("utf-8"))
        except ValueError as exc:
            raise CheckpointError(f"bad config header: {exc}") from exc

        (n_arrays,) = struct.unpack("<I", _read_exact(fh, 4))
        state = {}
        for _ in range(n_arrays):
            name, arr = _read_array(fh)
            if name in state:
                raise CheckpointError(f"duplicate array {name!r}")
            state[name] = arr

        (has_opt,) = struct.unpack("<B", _read_exact(fh, 1))
        optimizer_state = None
        if has_opt:
            (n_opt,) = struct.unpack("<I", _read_exact(fh, 4))
            optimizer_state = {}
            for _ in range(n_opt):
                name, arr = _read_array(fh)
                optimizer_state[name] = arr

    model = build_model(config, np.random.default_rng(0))
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    model.eval()
    return model, optimizer_state
