"""Binary model files with coordinate-format sparse layers.

Layout::

    b"OCKD" | u32 version | u32 header length | UTF-8 JSON header | payload

All integers are little-endian.  The header's ``entries`` table lists every
tensor in payload order.  A ``dense`` entry contributes ``numel`` float32
values; a ``coo`` entry contributes ``nnz`` records of (u32 flat row-major
index, f32 value) sorted by index.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ContractError, ModelCorruptionError, ModelFormatError
from .net import ParamSet, arch_from_dict, arch_to_dict
from .sparse import SparsityMask

MAGIC = b"OCKD"
VERSION = 1
KINDS = ("teacher-extractor", "teacher-fcb", "student")
INDEX_BITS = 32
COO_RECORD = np.dtype([("index", "<u4"), ("value", "<f4")])
DENSE_ITEM = np.dtype("<f4")


def entry_bytes(entry: dict) -> int:
    if entry["encoding"] == "coo":
        return entry["nnz"] * COO_RECORD.itemsize
    return int(np.prod(entry["shape"], dtype=np.int64)) * DENSE_ITEM.itemsize


def predicted_payload_bytes(header: dict) -> int:
    return sum(entry_bytes(e) for e in header["entries"])


def _entries(params: ParamSet, mask: SparsityMask | None):
    for role, table in (("param", params.tensors), ("buffer", params.buffers)):
        for name, t in table.items():
            flags = mask.active.get(name) if (mask is not None and role == "param") else None
            if flags is not None and not bool(flags.all()):
                idx = np.flatnonzero(flags.numpy()).astype("<u4")
                rec = np.empty(idx.size, dtype=COO_RECORD)
                rec["index"] = idx
                rec["value"] = t.detach().reshape(-1).numpy().astype(DENSE_ITEM)[idx]
                meta = {"name": name, "role": role, "shape": list(t.shape), "encoding": "coo", "nnz": int(idx.size)}
                yield meta, rec.tobytes()
            else:
                data = t.detach().reshape(-1).numpy().astype(DENSE_ITEM)
                meta = {"name": name, "role": role, "shape": list(t.shape), "encoding": "dense", "nnz": int(data.size)}
                yield meta, data.tobytes()


def encode_model(params: ParamSet, kind: str, mask: SparsityMask | None = None) -> bytes:
    if kind not in KINDS:
        raise ContractError(f"unknown network kind {kind!r}")
    if kind == "student" and mask is None:
        raise ContractError("student models must be saved with their sparsity mask")
    if kind != "student" and mask is not None:
        raise ContractError("teacher models are stored dense")
    entries, chunks = [], []
    for meta, blob in _entries(params, mask):
        entries.append(meta)
        chunks.append(blob)
    header = {
        "kind": kind,
        "arch": arch_to_dict(params.arch),
        "in_channels": params.in_channels,
        "density": None if mask is None else float(mask.density),
        "index_bits": INDEX_BITS,
        "float": "f32le",
        "entries": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def save_model(params: ParamSet, path, kind: str, mask: SparsityMask | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_model(params, kind, mask))
    return path


def read_header(blob: bytes) -> tuple[dict, int]:
    """Parse the header; returns it with the payload offset."""
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelCorruptionError(f"unreadable header: {exc}") from exc
    if header.get("index_bits") != INDEX_BITS or header.get("kind") not in KINDS:
        raise ModelFormatError("unsupported header fields")
    return header, 12 + hlen


def decode_model(blob: bytes) -> tuple[ParamSet, SparsityMask | None, dict]:
    header, off = read_header(blob)
    payload = memoryview(blob)[off:]
    if len(payload) != predicted_payload_bytes(header):
        raise ModelCorruptionError(
            f"payload has {len(payload)} bytes, layer table predicts {predicted_payload_bytes(header)}"
        )
    tensors, buffers, active = {}, {}, {}
    pos = 0
    for e in header["entries"]:
        n = entry_bytes(e)
        chunk = payload[pos : pos + n]
        pos += n
        shape = tuple(e["shape"])
        numel = int(np.prod(shape, dtype=np.int64))
        if e["encoding"] == "coo":
            rec = np.frombuffer(chunk, dtype=COO_RECORD)
            idx = rec["index"].astype(np.int64)
            if idx.size and (np.any(np.diff(idx) <= 0) or idx[-1] >= numel):
                raise ModelCorruptionError(f"bad coordinate indices in {e['name']}")
            flat = np.zeros(numel, dtype=np.float32)
            flat[idx] = rec["value"]
            flags = torch.zeros(numel, dtype=torch.bool)
            flags[torch.from_numpy(idx)] = True
            active[e["name"]] = flags
        else:
            flat = np.frombuffer(chunk, dtype=DENSE_ITEM).astype(np.float32)
            if e["nnz"] != numel:
                raise ModelCorruptionError(f"dense entry {e['name']} declares nnz {e['nnz']} != {numel}")
        t = torch.from_numpy(flat.copy()).reshape(shape)
        (tensors if e["role"] == "param" else buffers)[e["name"]] = t
    params = ParamSet(arch_from_dict(header["arch"]), int(header["in_channels"]), tensors, buffers)
    mask = None
    if header["kind"] == "student":
        for name in params.conv_weight_names():
            active.setdefault(name, torch.ones(tensors[name].numel(), dtype=torch.bool))
        mask = SparsityMask(float(header["density"]), {n: active[n] for n in params.conv_weight_names()})
    return params, mask, header


def load_model(path) -> tuple[ParamSet, SparsityMask | None]:
    params, mask, _ = decode_model(Path(path).read_bytes())
    return params, mask


def load_model_with_header(path) -> tuple[ParamSet, SparsityMask | None, dict]:
    return decode_model(Path(path).read_bytes())
