"""Binary container shared by the model/dataset/cache file formats.

Layout (all integers ASCII-encoded in the preamble):

    QTM1\n
    HDR <nbytes>\n
    <nbytes of canonical JSON, UTF-8>
    <raw little-endian buffers, concatenated in header order>

The JSON header is canonical (sorted keys, no whitespace) so that a given
logical payload always serializes to the same bytes.  Buffer metadata lives
under the reserved key ``"buffers"``: a list of ``{"dtype", "shape"}``
entries describing each raw segment in order.
"""

from __future__ import annotations

import json
from typing import Any

import numpy as np

MAGIC = b"QTM1\n"


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path: str, header: dict, buffers: list[np.ndarray]) -> None:
    """Write ``header`` plus raw ``buffers`` to ``path``.

    ``header`` must not already contain the reserved ``"buffers"`` key; the
    buffer table is derived from the arrays themselves.
    """
    if "buffers" in header:
        raise ValueError("header may not define the reserved 'buffers' key")
    arrs = [np.ascontiguousarray(b) for b in buffers]
    table = []
    for a in arrs:
        # force little-endian on-disk representation
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        table.append({"dtype": a.dtype.name, "shape": list(a.shape)})
    full = dict(header)
    full["buffers"] = table
    blob = canonical_json(full)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(b"HDR %d\n" % len(blob))
        f.write(blob)
        for a in arrs:
            f.write(a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes())


def read_container(path: str) -> tuple[dict, list[np.ndarray]]:
    """Read a container, returning ``(header, buffers)``.

    The returned header still includes the ``"buffers"`` table; arrays come
    back in native byte order with the recorded dtype and shape.
    """
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        line = b""
        while not line.endswith(b"\n"):
            c = f.read(1)
            if not c:
                raise ValueError(f"{path}: truncated header line")
            line += c
        if not line.startswith(b"HDR "):
            raise ValueError(f"{path}: malformed header line {line!r}")
        nbytes = int(line[4:-1])
        header = json.loads(f.read(nbytes).decode("utf-8"))
        buffers = []
        for entry in header.get("buffers", []):
            dt = np.dtype(entry["dtype"]).newbyteorder("<")
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * dt.itemsize)
            if len(raw) != count * dt.itemsize:
                raise ValueError(f"{path}: truncated buffer payload")
            arr = np.frombuffer(raw, dtype=dt).reshape(shape)
            buffers.append(arr.astype(arr.dtype.newbyteorder("="), copy=True))
        return header, buffers
