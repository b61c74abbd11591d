"""Named parameter storage and the binary checkpoint format.

Checkpoint layout (all integers little-endian u32)::

    b"TNPF" | version | header_len | header (utf-8) | n_tensors
    n_tensors x [ name_len | name (utf-8) | rank | extents... | f64 LE payload ]
    crc32 of everything above
"""
import struct
import zlib
from collections import OrderedDict

import numpy as np

from .tensor import Tensor

MAGIC = b"TNPF"
VERSION = 1


class CheckpointError(ValueError):
    pass


class Parameters:
    """Ordered trainable tensors plus non-trainable state arrays (batch-norm stats)."""

    def __init__(self):
        self.trainable = OrderedDict()
        self.state = OrderedDict()

    def add(self, name, array):
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True, name=name)
        self.trainable[name] = t
        return t

    def add_state(self, name, array):
        self.state[name] = np.array(array, dtype=np.float64)
        return self.state[name]

    def __getitem__(self, name):
        if name in self.trainable:
            return self.trainable[name]
        return self.state[name]

    def __iter__(self):
        return iter(self.trainable.values())

    def count(self):
        return sum(t.data.size for t in self.trainable.values())

    def zero_grad(self):
        for t in self.trainable.values():
            t.grad = None

    def arrays(self):
        """Flat name -> ndarray mapping of trainable and state entries."""
        out = OrderedDict((k, t.data) for k, t in self.trainable.items())
        out.update(self.state)
        return out

    def load_arrays(self, arrays):
        for name, arr in arrays.items():
            target = self.trainable[name].data if name in self.trainable else self.state.get(name)
            if target is None:
                raise CheckpointError(f"unexpected tensor {name!r} in checkpoint")
            if target.shape != arr.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != expected {target.shape}")
            target[...] = arr
        missing = set(self.arrays()) - set(arrays)
        if missing:
            raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")


def encode_checkpoint(arrays, header=""):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    hb = header.encode("utf-8")
    parts += [struct.pack("<I", len(hb)), hb, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim)]
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(blob):
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a parameter checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    (hlen,) = struct.unpack_from("<I", body, pos)
    pos += 4
    header = body[pos : pos + hlen].decode("utf-8")
    pos += hlen
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    arrays = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", body, pos)
        pos += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return header, arrays


def save_checkpoint(path, arrays, header=""):
    with open(path, "wb") as f:
        f.write(encode_checkpoint(arrays, header))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
