"""Checkpoint file format and atomic file writes.

Checkpoint layout (all integers little-endian)::

    magic      8 bytes   b"HEBBCKPT"
    version    uint32
    meta_len   uint32
    meta       meta_len bytes of UTF-8 JSON (config, config hash, generation,
               model kind, sigma, base seed, block names)
    n_blocks   uint32
    per block: name_len uint16, name bytes, ndim uint32, dims uint64[ndim],
               row-major float64 data
    crc32      uint32 over every preceding byte

Blocks are ``theta/<name>``, ``adam_m/<name>``, ``adam_v/<name>`` and, for
the fixed-random model, ``assign/k`` (indices stored as exact float64).
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .es import EsConfig, EsState
from .genotype import FixedRandomGmm, JointGmm, PerSynapseGaussian, SharedGmm

MAGIC = b"HEBBCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ExperimentConfig
    state: EsState

    @property
    def generation(self) -> int:
        return self.state.generation

    @property
    def model(self):
        return self.state.model


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


def _blocks(state: EsState) -> dict[str, np.ndarray]:
    out = {f"theta/{k}": v for k, v in state.theta.items()}
    if state.m is not None:
        out.update({f"adam_m/{k}": v for k, v in state.m.items()})
        out.update({f"adam_v/{k}": v for k, v in state.v.items()})
    if isinstance(state.model, FixedRandomGmm):
        out["assign/k"] = state.model.k.astype(np.float64)
    return out


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    state = ckpt.state
    blocks = _blocks(state)
    meta = {
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config.identity_hash(),
        "generation": state.generation,
        "model_kind": state.model.kind,
        "model_class": type(state.model).__name__,
        "sigma": state.model.sigma,
        "base_seed": state.config.seed,
        "blocks": list(blocks),
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<II", VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(blocks)))
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    view = memoryview(body)
    pos = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", view, pos)
    pos += 8
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(bytes(view[pos: pos + meta_len]))
    pos += meta_len
    (n_blocks,) = struct.unpack_from("<I", view, pos)
    pos += 4
    blocks = {}
    for _ in range(n_blocks):
        (nlen,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos: pos + nlen]).decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<I", view, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        count = int(np.prod(shape, dtype=np.int64))
        blocks[name] = np.frombuffer(view, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    config = ExperimentConfig.from_dict(meta["config"])
    if config.identity_hash() != meta["config_hash"]:
        raise CheckpointError("config hash does not match stored config")
    theta = {k.split("/", 1)[1]: v for k, v in blocks.items() if k.startswith("theta/")}
    sigma = meta["sigma"]
    cls = meta["model_class"]
    if cls == "PerSynapseGaussian":
        model = PerSynapseGaussian(theta["mu"], sigma)
    elif cls == "SharedGmm":
        model = SharedGmm(theta["mu"], theta["lam"], sigma)
    elif cls == "JointGmm":
        model = JointGmm(theta["mu"], theta["lam"], sigma)
    elif cls == "FixedRandomGmm":
        model = FixedRandomGmm(theta["mu"], blocks["assign/k"].astype(np.int64), sigma)
    else:
        raise CheckpointError(f"unknown model class {cls}")
    es_cfg: EsConfig = config.es
    m = v = None
    if es_cfg.updater == "adam":
        m = {k.split("/", 1)[1]: a for k, a in blocks.items() if k.startswith("adam_m/")}
        v = {k.split("/", 1)[1]: a for k, a in blocks.items() if k.startswith("adam_v/")}
    state = EsState(es_cfg, model, int(meta["generation"]), m, v)
    return Checkpoint(config, state)


def save_checkpoint(path, ckpt: Checkpoint):
    atomic_write_bytes(path, encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
