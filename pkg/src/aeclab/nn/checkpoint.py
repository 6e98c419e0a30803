"""Binary checkpoint format.

Layout (little-endian)::

    b"AECL" | u16 version | u32 meta_len | meta (UTF-8 JSON)
    u32 n_blobs
    per blob: u16 name_len | name | u8 ndim | u32 dims[ndim] | u32 crc32 | f32 data

The metadata records the model config, frame config and feature packing
order. Parameters are stored as float32.
"""

import json
import struct
import zlib
from dataclasses import asdict

import numpy as np

from ..dsp import DEFAULT_FRAME, FrameConfig
from .model import PACKING_ORDER, AecModel, ModelConfig

MAGIC = b"AECL"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: AecModel, frame_cfg: FrameConfig = DEFAULT_FRAME, extra=None):
    meta = {
        "model": model.cfg.to_dict(),
        "frame": asdict(frame_cfg),
        "packing": PACKING_ORDER,
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    blobs = list(model.named_params())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(blobs)))
        for name, arr in blobs:
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(struct.pack("<I", zlib.crc32(data)))
            fh.write(data)


def _read(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def load_checkpoint(path):
    """Returns ``(model, frame_cfg, extra_metadata)``."""
    with open(path, "rb") as fh:
        if _read(fh, 4) != MAGIC:
            raise CheckpointError(f"{path}: not an AECL checkpoint")
        version, meta_len = struct.unpack("<HI", _read(fh, 6))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(_read(fh, meta_len).decode("utf-8"))
        if meta.get("packing") != PACKING_ORDER:
            raise CheckpointError(f"{path}: unknown feature packing {meta.get('packing')!r}")
        model = AecModel(ModelConfig(**meta["model"]), dtype=np.float32)
        expected = dict(model.named_params())
        (n_blobs,) = struct.unpack("<I", _read(fh, 4))
        seen = set()
        for _ in range(n_blobs):
            (name_len,) = struct.unpack("<H", _read(fh, 2))
            name = _read(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read(fh, 1))
            shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim))
            (crc,) = struct.unpack("<I", _read(fh, 4))
            data = _read(fh, 4 * int(np.prod(shape, dtype=np.int64)))
            if zlib.crc32(data) != crc:
                raise CheckpointError(f"{path}: checksum mismatch in {name}")
            if name not in expected:
                raise CheckpointError(f"{path}: unexpected parameter {name}")
            model.set_param(name, np.frombuffer(data, dtype="<f4").reshape(shape))
            seen.add(name)
        missing = set(expected) - seen
        if missing:
            raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    return model, FrameConfig(**meta["frame"]), meta.get("extra", {})
