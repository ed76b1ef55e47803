"""Binary checkpoint files.

Layout (little-endian)::

    b"SWTF" | u32 version | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 ndim | u32 dims... | f32 payload

The model and training configs travel in a JSON sidecar next to the file
(``model.swtf`` -> ``model.json``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .encoder import ModelConfig
from .exceptions import IncompatibleError
from .model import init_params
from .tensor import Tensor

MAGIC = b"SWTF"
VERSION = 1


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def dump_tensors(params):
    """Serialize an ordered name -> Tensor mapping to bytes."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, tensor in params.items():
        raw = name.encode("utf-8")
        data = np.asarray(getattr(tensor, "data", tensor), dtype="<f4")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data).tobytes())
    return b"".join(chunks)


def parse_tensors(buf):
    """Inverse of :func:`dump_tensors`; returns a dict of float32 arrays."""
    if buf[:4] != MAGIC:
        raise IncompatibleError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise IncompatibleError(f"unsupported checkpoint version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            out[name] = arr.astype(np.float32)
    except struct.error as exc:
        raise IncompatibleError(f"truncated checkpoint: {exc}") from exc
    return out


def save_checkpoint(path, params, model_cfg, train_cfg=None):
    """Write the tensor file and its JSON sidecar."""
    path = Path(path)
    path.write_bytes(dump_tensors(params))
    meta = {"format_version": VERSION, "model": model_cfg.to_dict()}
    if train_cfg is not None:
        meta["train"] = train_cfg.to_dict()
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Return ``(params, model_cfg, meta)``; tensors are checked against the config."""
    path = Path(path)
    arrays = parse_tensors(path.read_bytes())
    side = sidecar_path(path)
    if not side.exists():
        raise IncompatibleError(f"missing config sidecar {side}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    model_cfg = ModelConfig.from_dict(meta["model"])
    refine = any(k.startswith("hff.") for k in arrays)
    expected = init_params(model_cfg, refine=refine)
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))[:3]
        extra = sorted(set(arrays) - set(expected))[:3]
        raise IncompatibleError(f"checkpoint tensors do not match config (missing {missing}, extra {extra})")
    params = {}
    for name, ref in expected.items():
        if arrays[name].shape != ref.shape:
            raise IncompatibleError(f"{name}: shape {arrays[name].shape} != expected {ref.shape}")
        params[name] = Tensor(arrays[name], requires_grad=True)
    return params, model_cfg, meta
