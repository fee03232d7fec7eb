"""Bit-exact "S2LT" checkpoint files.

Layout: magic b"S2LT", format version (u32 LE), length-prefixed UTF-8 text
block echoing the resolved config (JSON, includes the vocabulary), then one
record per tensor sorted by name: length-prefixed name, rank (u32), extents
(u32 each), float32 LE values in row-major order. Optimizer state follows
under the same record scheme with an "opt/" name prefix ("opt/m/...",
"opt/t", "opt/v/...").
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import UsageError
from .numerics import AdamState

MAGIC = b"S2LT"
VERSION = 1


def _write_tensor(fh, name, arr):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        fh.write(struct.pack("<I", extent))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise UsageError("truncated checkpoint file")
    return buf


def _read_tensor(fh):
    head = fh.read(4)
    if not head:
        return None
    if len(head) < 4:
        raise UsageError("truncated checkpoint file")
    (name_len,) = struct.unpack("<I", head)
    name = _read_exact(fh, name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    values = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
    return name, values.astype(np.float64)


def save_checkpoint(path, config_echo: dict, params, opt_state: AdamState = None):
    """Write params (and optionally Adam state) under the S2LT layout."""
    text = json.dumps(config_echo, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        encoded = text.encode("utf-8")
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        for name in sorted(params):
            _write_tensor(fh, name, np.asarray(params[name]))
        if opt_state is not None:
            opt = {f"opt/m/{k}": v for k, v in opt_state.m.items()}
            opt.update({f"opt/v/{k}": v for k, v in opt_state.v.items()})
            opt["opt/t"] = np.array([float(opt_state.t)])
            for name in sorted(opt):
                _write_tensor(fh, name, np.asarray(opt[name]))


def load_checkpoint(path):
    """Returns (config_echo dict, params dict, AdamState or None)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise UsageError(f"{path}: not an S2LT checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise UsageError(f"{path}: unsupported checkpoint version {version}")
        (text_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config_echo = json.loads(_read_exact(fh, text_len).decode("utf-8"))
        params, opt_m, opt_v, opt_t = {}, {}, {}, None
        while True:
            rec = _read_tensor(fh)
            if rec is None:
                break
            name, values = rec
            if name.startswith("opt/m/"):
                opt_m[name[len("opt/m/") :]] = values
            elif name.startswith("opt/v/"):
                opt_v[name[len("opt/v/") :]] = values
            elif name == "opt/t":
                opt_t = int(values.reshape(-1)[0])
            else:
                params[name] = values
    state = None
    if opt_t is not None or opt_m:
        if set(opt_m) != set(params) or set(opt_v) != set(params) or opt_t is None:
            raise UsageError(f"{path}: incomplete optimizer state")
        state = AdamState(m=opt_m, v=opt_v, t=opt_t)
    return config_echo, params, state
