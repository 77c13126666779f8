"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"PFOPTCK1"
    u32 header length, UTF-8 JSON header (sorted keys)
    per tensor: u16 name length, name, u8 ndim, ndim x u64 dims, float64 LE values
    32-byte SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from prefopt import autodiff as ad
from prefopt.errors import CheckpointError, DimensionError
from prefopt.ifmodel.network import ModelDims, ModelParameters

MAGIC = b"PFOPTCK1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    header: dict
    tensors: dict  # name -> np.ndarray

    def group(self, prefix):
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def encode_checkpoint(header, tensors) -> bytes:
    header = dict(header, format_version=FORMAT_VERSION, tensor_names=list(tensors))
    head = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", len(head)), head]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")  # tobytes() below is always C order
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 4 + 32 or not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic or too short)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (corrupt or truncated file)")
    try:
        pos = len(MAGIC)
        (hlen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        header = json.loads(body[pos:pos + hlen].decode())
        pos += hlen
        tensors = {}
        while pos < len(body):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(body):
                raise CheckpointError(f"tensor {name!r} runs past end of file")
            tensors[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format_version')}")
    if list(tensors) != header.get("tensor_names"):
        raise CheckpointError("checkpoint tensor table does not match its header")
    return Checkpoint(header, tensors)


def save_checkpoint(path, header, tensors):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(header, tensors))
    os.replace(tmp, path)


def load_checkpoint(path, expected_fingerprint=None) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    ckpt = decode_checkpoint(blob)
    found = ckpt.header.get("config_fingerprint")
    if expected_fingerprint is not None and found != expected_fingerprint:
        warnings.warn(f"checkpoint config fingerprint {found} differs from {expected_fingerprint}", stacklevel=2)
    return ckpt


def params_from_checkpoint(ckpt: Checkpoint, dims: ModelDims = None) -> ModelParameters:
    """Build parameters from the ``param/`` tensors; shapes must match ``dims``."""
    dims = dims or ModelDims(**ckpt.header["dims"])
    stored = ckpt.group("param/")
    groups = []
    for shapes in dims.shapes():
        group = {}
        for name, shape in shapes.items():
            if name not in stored:
                raise CheckpointError(f"checkpoint lacks tensor {name}")
            if stored[name].shape != shape:
                raise DimensionError(f"tensor {name}: checkpoint shape {stored[name].shape}, model expects {shape}")
            group[name] = ad.Tensor(stored[name], requires_grad=True)
        groups.append(group)
    return ModelParameters(dims, *groups)


def load_into(params: ModelParameters, ckpt: Checkpoint):
    """Copy checkpoint values into existing parameters, checking every shape."""
    stored = ckpt.group("param/")
    for name, t in params.named().items():
        if name not in stored:
            raise CheckpointError(f"checkpoint lacks tensor {name}")
        if stored[name].shape != t.shape:
            raise DimensionError(f"tensor {name}: checkpoint shape {stored[name].shape}, model expects {t.shape}")
        t.data = stored[name].copy()
    return params


def save_params(path, params: ModelParameters, **meta):
    header = dict(meta, dims=params.dims_dict())
    save_checkpoint(path, header, {f"param/{k}": t.data for k, t in params.named().items()})
