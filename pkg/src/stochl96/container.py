"""Binary container for datasets, POD bases and models.

Layout (all little-endian)::

    magic      8 bytes  b"SL96BIN\\0"
    version    uint16
    kind       uint8    tag from :class:`Kind`
    reserved   uint8
    hdr_len    uint32   length of the kind-specific header
    header     hdr_len bytes, a fixed ``struct`` record per kind
    payload    float64 values, row-major

A sidecar ``<path>.json`` carries the same metadata in readable form.
"""
from __future__ import annotations

import json
import os
import struct
from enum import IntEnum

import numpy as np

MAGIC = b"SL96BIN\x00"
VERSION = 1
_PREAMBLE = struct.Struct("<8sHBBI")


class Kind(IntEnum):
    DATASET = 0
    POD_BASIS = 1
    POLY_GAUSS = 2
    POLY_OU = 3
    SVD_GAUSS = 4
    SVD_OU = 5
    CRPS_OU = 6
    CRPS_MULT = 7


class ContainerError(ValueError):
    pass


def write(path, kind: Kind, header: struct.Struct, values: tuple, arrays, meta: dict | None = None):
    hdr = header.pack(*values)
    payload = np.concatenate([np.ascontiguousarray(a, dtype="<f8").ravel() for a in arrays]) \
        if arrays else np.empty(0, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, VERSION, int(kind), 0, len(hdr)))
        fh.write(hdr)
        fh.write(payload.astype("<f8").tobytes())
    if meta is not None:
        with open(os.fspath(path) + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def read(path):
    """Return ``(kind, header_bytes, payload)`` of a container file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREAMBLE.size:
        raise ContainerError(f"{path}: truncated file")
    magic, version, kind, _, hdr_len = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise ContainerError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    start = _PREAMBLE.size + hdr_len
    header = raw[_PREAMBLE.size:start]
    if (len(raw) - start) % 8:
        raise ContainerError(f"{path}: payload is not a whole number of float64 values")
    payload = np.frombuffer(raw, dtype="<f8", offset=start).astype(np.float64)
    try:
        kind = Kind(kind)
    except ValueError:
        raise ContainerError(f"{path}: unknown kind tag {kind}") from None
    return kind, header, payload


def peek_kind(path) -> Kind:
    with open(path, "rb") as fh:
        raw = fh.read(_PREAMBLE.size)
    if len(raw) < _PREAMBLE.size or raw[:8] != MAGIC:
        raise ContainerError(f"{path}: not a container file")
    return Kind(_PREAMBLE.unpack(raw)[2])


class PayloadReader:
    """Sequentially slice typed arrays out of a flat payload."""

    def __init__(self, payload: np.ndarray):
        self.payload = payload
        self.pos = 0

    def take(self, *shape):
        n = int(np.prod(shape)) if shape else 1
        if self.pos + n > self.payload.size:
            raise ContainerError("payload shorter than the header declares")
        out = self.payload[self.pos:self.pos + n].reshape(shape)
        self.pos += n
        return out.copy()

    def done(self):
        if self.pos != self.payload.size:
            raise ContainerError("payload longer than the header declares")
