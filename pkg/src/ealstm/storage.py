"""Self-describing array container and atomic file writes.

Layout::

    b"EALSTMCK" | uint64 LE header length | JSON header | zero padding to 8 |
    array payloads (row-major float64 little-endian, in header order)

The header lists every array's name, shape, offset and byte count, so the
file can be read without this package.
"""
import contextlib
import json
import os
import struct
import tempfile

import numpy as np

from .exceptions import DataError

MAGIC = b"EALSTMCK"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


@contextlib.contextmanager
def atomic_open(path, mode="w"):
    """Write to a sibling temp file and rename over ``path`` on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_container(path, arrays, meta=None):
    entries = []
    payloads = []
    offset = 0
    for name, arr in arrays.items():
        data = np.array(arr, dtype=_DTYPE, order="C")  # keeps 0-d shape
        raw = data.tobytes(order="C")
        entries.append({"name": name, "shape": list(data.shape), "dtype": "<f8",
                        "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    header = {"format": "ealstm-container", "version": FORMAT_VERSION,
              "meta": meta or {}, "arrays": entries}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    blob += b" " * (-(len(MAGIC) + 8 + len(blob)) % 8)
    with atomic_open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


def read_container(path):
    """Return ``(arrays, meta)``; arrays keep header order."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise DataError(f"{path}: not an ealstm container (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported container version {header.get('version')}")
    base = 16 + hlen
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        buf = data[start:start + entry["nbytes"]]
        if len(buf) != entry["nbytes"]:
            raise DataError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(buf, dtype=_DTYPE).reshape(entry["shape"]).copy()
    return arrays, header["meta"]
