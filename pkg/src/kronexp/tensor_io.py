"""Binary and CSV serialization of tensors.

Binary layout (all little-endian)::

    offset  size  field
    0       4     magic b"KXTN"
    4       2     format version (1)
    6       1     scalar kind: 0 = float64, 1 = complex128
    7       1     reserved (0)
    8       4     d, uint32
    12      4     reserved (0)
    16      8*d   extents n_1..n_d, uint64
    ...           N scalars in vec order (first index fastest)

CSV: one line per fastest-index fiber, i.e. ``N / n_1`` lines of ``n_1``
values, fibers ordered with the remaining indices in column-major order.
A leading ``# dims: n_1 n_2 ...`` comment line carries the shape.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .tensor import unvec, vec

MAGIC = b"KXTN"
VERSION = 1
_HEADER = struct.Struct("<4sHBBII")
_KINDS = {0: np.dtype("<f8"), 1: np.dtype("<c16")}


def to_bytes(T: np.ndarray) -> bytes:
    T = np.asarray(T)
    if T.ndim < 1:
        raise ValueError("tensor must have d >= 1")
    kind = 1 if np.iscomplexobj(T) else 0
    header = _HEADER.pack(MAGIC, VERSION, kind, 0, T.ndim, 0)
    dims = np.asarray(T.shape, dtype="<u8").tobytes()
    data = vec(T).astype(_KINDS[kind], copy=False).tobytes()
    return header + dims + data


def from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise ValueError("blob shorter than header")
    magic, version, kind, _, d, _ = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    if kind not in _KINDS or d < 1:
        raise ValueError(f"corrupt header (kind={kind}, d={d})")
    off = _HEADER.size
    dims = np.frombuffer(blob, dtype="<u8", count=d, offset=off)
    off += 8 * d
    N = int(np.prod(dims))
    dtype = _KINDS[kind]
    if len(blob) != off + N * dtype.itemsize:
        raise ValueError("payload size does not match header dims")
    data = np.frombuffer(blob, dtype=dtype, count=N, offset=off)
    return unvec(data.astype(dtype.newbyteorder("="), copy=True), dims.tolist())


def _fmt(x) -> str:
    if isinstance(x, complex | np.complexfloating):
        return repr(complex(x))
    return repr(float(x))


def to_csv(T: np.ndarray) -> str:
    T = np.asarray(T)
    n1 = T.shape[0]
    fibers = vec(T).reshape(-1, n1)
    out = io.StringIO()
    out.write("# dims: " + " ".join(str(n) for n in T.shape) + "\n")
    for fiber in fibers:
        out.write(",".join(_fmt(x) for x in fiber) + "\n")
    return out.getvalue()


def from_csv(text: str) -> np.ndarray:
    dims = None
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].strip().startswith("dims:"):
                dims = [int(s) for s in line.split(":", 1)[1].split()]
            continue
        rows.append([complex(s) if "j" in s else float(s) for s in line.split(",")])
    if dims is None:
        raise ValueError("missing '# dims:' line")
    data = np.array(rows).reshape(-1)
    return unvec(data, dims)


def atomic_write(path, payload: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(payload, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, T: np.ndarray) -> None:
    """Binary format, or CSV when ``path`` ends in ``.csv``."""
    path = Path(path)
    atomic_write(path, to_csv(T) if path.suffix == ".csv" else to_bytes(T))


def load(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        return from_csv(path.read_text())
    return from_bytes(path.read_bytes())
