"""Binary checkpoint format.

Layout (all integers u32 little-endian)::

    b"FOTSKIT1" | count | count x (name_len | utf-8 name | rank | extents... | f32 LE payload)
"""
import struct
from collections import OrderedDict

import numpy as np

from .errors import ParseError

MAGIC = b"FOTSKIT1"


def dumps(state):
    chunks = [MAGIC, struct.pack("<I", len(state))]
    for name, value in state.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def loads(blob):
    if blob[:8] != MAGIC:
        raise ParseError("not a fotskit checkpoint (bad magic)")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise ParseError("truncated checkpoint")
        out = blob[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4))
    state = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).copy()
        if name in state:
            raise ParseError(f"duplicate parameter name {name!r}")
        state[name] = arr
    if pos != len(blob):
        raise ParseError("trailing bytes after last record")
    return state


def save(path, state):
    with open(path, "wb") as fh:
        fh.write(dumps(state))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
