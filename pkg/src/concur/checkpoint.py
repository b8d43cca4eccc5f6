"""Binary checkpoint format for named parameter arrays.

Layout: magic ``CONCUR1\\n``, one JSON line mapping each name to
``{shape, dtype, offset}`` (offset relative to the start of the data
section), then the concatenated raw little-endian arrays in C order.
"""

from __future__ import annotations

import json

import numpy as np

CHECKPOINT_MAGIC = b"CONCUR1\n"


def save_checkpoint(path, arrays: dict):
    header = {}
    offset = 0
    names = sorted(arrays)
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        le = arr.dtype.newbyteorder("<")
        blob = arr.astype(le, copy=False).tobytes()
        header[name] = {"shape": list(arr.shape), "dtype": le.str, "offset": offset}
        offset += len(blob)
        blobs.append(blob)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
        header = json.loads(f.readline().decode("ascii"))
        data = f.read()
    out = {}
    for name, meta in header.items():
        dtype = np.dtype(meta["dtype"])
        count = int(np.prod(meta["shape"])) if meta["shape"] else 1
        start = meta["offset"]
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=start)
        out[name] = arr.reshape(meta["shape"]).copy()
    return out
