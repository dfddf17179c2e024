"""Binary checkpoints.

Layout (all integers little-endian ``uint32`` unless noted)::

    b"SFNN" | version | fingerprint (len + utf-8 hex) | epoch
    topology (len + utf-8 JSON)
    n_params, then per tensor: name (len + utf-8) | width (uint8, bytes per
        scalar) | rank (uint8) | dims | row-major little-endian data
    learning_rate (float64) | momentum (float64)
    n_velocity, tensors as above
    rng state (len + utf-8 JSON)

Tensors are written in sorted name order so identical states give identical
bytes.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SFNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    fingerprint: str
    epoch: int
    topology: dict
    params: dict
    learning_rate: float = 0.0
    momentum: float = 0.0
    velocity: dict = None
    rng_state: dict = None


def _pack_str(s):
    b = s.encode()
    return struct.pack("<I", len(b)) + b


def _pack_tensor(name, arr):
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in (np.float64, np.float32):
        raise CheckpointError(f"tensor {name} has unsupported dtype {arr.dtype}")
    return (_pack_str(name) + struct.pack("<BB", arr.dtype.itemsize, arr.ndim)
            + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.astype(arr.dtype.newbyteorder("<")).tobytes())


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<I")
        return self.take(n).decode()

    def tensor(self):
        name = self.string()
        width, rank = self.unpack("<BB")
        dims = self.unpack(f"<{rank}I")
        dtype = {8: "<f8", 4: "<f4"}.get(width)
        if dtype is None:
            raise CheckpointError(f"tensor {name}: unsupported scalar width {width}")
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(self.take(count * width), dtype=dtype).reshape(dims)
        return name, data.astype(data.dtype.newbyteorder("=")).copy()


def _rng_json(rngs):
    return {k: g.bit_generator.state for k, g in sorted((rngs or {}).items())}


def encode(net, state=None, epoch=0, topology=None):
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(net.fingerprint()), struct.pack("<I", epoch),
             _pack_str(json.dumps(topology or {}, sort_keys=True))]
    params = net.named_params()
    parts.append(struct.pack("<I", len(params)))
    parts += [_pack_tensor(k, params[k]) for k in sorted(params)]
    velocity = state.velocity if state else {}
    parts.append(struct.pack("<dd", state.learning_rate if state else 0.0, state.momentum if state else 0.0))
    parts.append(struct.pack("<I", len(velocity)))
    parts += [_pack_tensor(k, velocity[k]) for k in sorted(velocity)]
    parts.append(_pack_str(json.dumps(_rng_json(state.rngs if state else None), sort_keys=True)))
    return b"".join(parts)


def save(path, net, state=None, epoch=0, topology=None):
    data = encode(net, state, epoch, topology)
    with open(path, "wb") as f:
        f.write(data)
    return data


def decode(raw):
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    fingerprint = r.string()
    (epoch,) = r.unpack("<I")
    topology = json.loads(r.string())
    (n,) = r.unpack("<I")
    params = dict(r.tensor() for _ in range(n))
    lr, momentum = r.unpack("<dd")
    (n,) = r.unpack("<I")
    velocity = dict(r.tensor() for _ in range(n))
    rng_state = json.loads(r.string())
    return Checkpoint(fingerprint, epoch, topology, params, lr, momentum, velocity, rng_state)


def load(path):
    with open(path, "rb") as f:
        return decode(f.read())


def restore(ckpt, net):
    """Copy checkpoint tensors into ``net``; the topology fingerprint must match."""
    if ckpt.fingerprint != net.fingerprint():
        raise CheckpointError(f"topology fingerprint mismatch: checkpoint {ckpt.fingerprint[:12]}, "
                              f"network {net.fingerprint()[:12]}")
    params = net.named_params()
    if params.keys() != ckpt.params.keys():
        raise CheckpointError("checkpoint and network have different parameter names")
    for k, p in params.items():
        p[...] = ckpt.params[k]
    return net


def restore_rngs(ckpt):
    out = {}
    for k, s in (ckpt.rng_state or {}).items():
        g = np.random.default_rng()
        g.bit_generator.state = s
        out[k] = g
    return out
