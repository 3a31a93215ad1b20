"""Parameter archive: text manifest plus one little-endian float32 blob.

Layout of an archive file::

    #params-archive v1
    #meta {...json...}            (optional, single line)
    <name> <d0,d1,...> <dtype> <byte-offset>
    ...
    #blob <total-bytes>
    <raw little-endian data>

Round trips are bit-exact: the blob stores each array's bytes verbatim in
manifest order.
"""

import json

import numpy as np

from .errors import CheckpointError

_MAGIC = "#params-archive v1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def write_archive(path, tensors, meta=None):
    """Write an ordered {name: ndarray} mapping (and optional meta dict)."""
    lines = [_MAGIC]
    if meta is not None:
        lines.append("#meta " + json.dumps(meta, sort_keys=True))
    blob = bytearray()
    for name, arr in tensors.items():
        if " " in name or "\n" in name:
            raise ValueError(f"tensor name may not contain whitespace: {name!r}")
        dtype = "float64" if arr.dtype == np.float64 else "float32"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dtype])
        dims = ",".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
        lines.append(f"{name} {dims} {dtype} {len(blob)}")
        blob.extend(data.tobytes())
    lines.append(f"#blob {len(blob)}")
    payload = ("\n".join(lines) + "\n").encode("utf-8") + bytes(blob)
    with open(path, "wb") as fh:
        fh.write(payload)


def read_archive(path):
    """Read an archive; returns (ordered {name: ndarray}, meta dict or None)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        header_end = raw.index(b"#blob ")
    except ValueError:
        raise CheckpointError(f"{path}: missing blob marker") from None
    header = raw[:header_end].decode("utf-8").splitlines()
    if not header or header[0] != _MAGIC:
        raise CheckpointError(f"{path}: not a parameter archive")
    newline = raw.index(b"\n", header_end)
    blob_size = int(raw[header_end + len(b"#blob ") : newline])
    blob = raw[newline + 1 :]
    if len(blob) != blob_size:
        raise CheckpointError(
            f"{path}: blob is {len(blob)} bytes but manifest declares {blob_size}"
        )

    meta = None
    tensors = {}
    for line in header[1:]:
        if not line.strip():
            continue
        if line.startswith("#meta "):
            meta = json.loads(line[len("#meta ") :])
            continue
        parts = line.split()
        if len(parts) != 4:
            raise CheckpointError(f"{path}: malformed manifest line: {line!r}")
        name, dims, dtype, offset = parts
        if dtype not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype {dtype!r} for {name}")
        shape = () if dims == "scalar" else tuple(int(d) for d in dims.split(","))
        count = int(np.prod(shape)) if shape else 1
        start = int(offset)
        end = start + count * np.dtype(_DTYPES[dtype]).itemsize
        if end > len(blob):
            raise CheckpointError(f"{path}: tensor {name} overruns the blob")
        arr = np.frombuffer(blob[start:end], dtype=_DTYPES[dtype]).reshape(shape)
        tensors[name] = arr.copy()
    return tensors, meta


def load_into(named_tensors, archived, context=""):
    """Copy archived arrays into live tensors, checking names and shapes."""
    for name, tensor in named_tensors.items():
        if name not in archived:
            raise CheckpointError(f"{context}missing tensor {name!r} in archive")
        src = archived[name]
        if tuple(src.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"{context}shape mismatch for {name!r}: archive has "
                f"{tuple(src.shape)}, model expects {tuple(tensor.shape)}"
            )
        tensor.data = src.astype(tensor.dtype, copy=True)
    extra = [n for n in archived if n not in named_tensors]
    if extra:
        raise CheckpointError(f"{context}archive has unexpected tensor {extra[0]!r}")
