"""Parameter files: a text manifest followed by little-endian float32 data in manifest order.

::

    pancrisk-params 1
    config {"input_dims": [32, 32, 32], ...}
    seed 0
    param texture.encoder.block0.conv.weight 8 1 3 3 3
    buffer texture.encoder.block0.bn1.running_mean 8
    ...
    ---
    <raw f32 data>
"""
from __future__ import annotations

import json

import numpy as np

from .config import ModelConfig
from .network import PrognosticNet

MAGIC = "pancrisk-params 1"
SEPARATOR = b"---\n"


class ParamFileError(ValueError):
    pass


def manifest_entries(net):
    entries = [("param", k, p.data) for k, p in net.store.params.items()]
    entries += [("buffer", k, b) for k, b in net.store.buffers.items()]
    return entries


def encode_params(net):
    lines = [MAGIC, "config " + json.dumps(net.config.to_dict(), sort_keys=True), f"seed {net.seed}"]
    chunks = []
    for kind, path, arr in manifest_entries(net):
        lines.append(" ".join([kind, path] + [str(s) for s in arr.shape]))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return ("\n".join(lines) + "\n").encode() + SEPARATOR + b"".join(chunks)


def decode_params(buf, dtype=np.float64):
    head, sep, data = buf.partition(b"\n" + SEPARATOR)
    if not sep:
        raise ParamFileError("missing manifest separator")
    lines = head.decode().split("\n")
    if lines[0] != MAGIC:
        raise ParamFileError(f"bad header line {lines[0]!r}")
    config = ModelConfig.from_dict(json.loads(lines[1].removeprefix("config ")))
    seed = int(lines[2].removeprefix("seed "))
    net = PrognosticNet(config, seed=seed, dtype=dtype)
    state, offset = {}, 0
    for line in lines[3:]:
        kind, path, *dims = line.split()
        shape = tuple(int(d) for d in dims)
        n = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + n > len(data):
            raise ParamFileError(f"truncated data for {path} at byte {offset}")
        state[path] = np.frombuffer(data, dtype="<f4", count=n // 4, offset=offset).reshape(shape)
        offset += n
    if offset != len(data):
        raise ParamFileError(f"{len(data) - offset} trailing bytes after parameter data")
    expected = {p for _, p, _ in manifest_entries(net)}
    if set(state) != expected:
        raise ParamFileError(f"manifest paths do not match the configured network: "
                             f"{sorted(expected ^ set(state))[:5]}")
    net.store.load_state(state)
    return net


def save_params(net, path):
    with open(path, "wb") as fh:
        fh.write(encode_params(net))


def load_params(path, dtype=np.float64):
    with open(path, "rb") as fh:
        return decode_params(fh.read(), dtype)
