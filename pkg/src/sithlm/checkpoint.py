"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"SILM"
    version u32      container format version (currently 1)
    hlen    u64      byte length of the JSON header
    header  hlen bytes, UTF-8 JSON
    blobs   one per name listed in header["blobs"], in that order:
            u32 name length, name bytes,
            u32 dtype-string length, dtype bytes (numpy dtype.str),
            u32 ndim, ndim x u64 dims,
            u64 payload length, raw C-order array bytes

The header carries the full model config, the seed, the training step,
and any extra state (optimizer step, RNG-free resume cursor).  Model
parameter blobs appear first, in declaration order; optimizer moment
blobs (when saved) follow with "opt.m." / "opt.v." prefixes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ExportError

MAGIC = b"SILM"
FORMAT_VERSION = 1


def _write_blob(fh, name: str, arr: np.ndarray):
    arr = np.ascontiguousarray(arr)
    nb = name.encode("utf-8")
    dt = arr.dtype.str.encode("ascii")
    fh.write(struct.pack("<I", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<I", len(dt)))
    fh.write(dt)
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<Q", dim))
    payload = arr.tobytes()
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def _read_blob(fh):
    (nlen,) = struct.unpack("<I", fh.read(4))
    name = fh.read(nlen).decode("utf-8")
    (dlen,) = struct.unpack("<I", fh.read(4))
    dtype = np.dtype(fh.read(dlen).decode("ascii"))
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
    (plen,) = struct.unpack("<Q", fh.read(8))
    arr = np.frombuffer(fh.read(plen), dtype=dtype).reshape(shape).copy()
    return name, arr


def save(path, *, model_config: dict, seed: int, step: int,
         params: dict[str, np.ndarray], extra: dict | None = None,
         opt_state: dict[str, np.ndarray] | None = None) -> None:
    blobs = dict(params)
    if opt_state:
        blobs.update(opt_state)
    header = {
        "format_version": FORMAT_VERSION,
        "model": model_config,
        "seed": seed,
        "step": step,
        "extra": extra or {},
        "blobs": list(blobs),
        "param_names": list(params),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<Q", len(hbytes)))
            fh.write(hbytes)
            for name, arr in blobs.items():
                _write_blob(fh, name, arr)
    except OSError as exc:
        raise ExportError(f"failed to write checkpoint {path}: {exc}") from exc


def load(path):
    """Returns (header dict, blobs dict of ndarrays)."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAGIC:
                raise ExportError(f"{path} is not a checkpoint (bad magic {magic!r})")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != FORMAT_VERSION:
                raise ExportError(f"unsupported checkpoint version {version}")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            blobs = {}
            for _ in header["blobs"]:
                name, arr = _read_blob(fh)
                blobs[name] = arr
    except OSError as exc:
        raise ExportError(f"failed to read checkpoint {path}: {exc}") from exc
    return header, blobs
