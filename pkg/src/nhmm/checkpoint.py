"""Binary checkpoint files.

Layout (little-endian)::

    b"NHMC" | u32 version | u32 n | n bytes UTF-8 JSON header
    u32 count | count tensor records        normalization stats
    u32 count | count tensor records        model parameters
    u32 has_adam | [u32 count | records]    Adam moments "adam.m.*", "adam.v.*"

A tensor record is ``u32 name_len | name | u32 rank | u32 dims... | float32 data``.
The JSON header carries the model config, run config, vocabulary, update
counter and scalar optimizer settings.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import NormStats, Vocabulary
from .errors import FormatError
from .model import ModelConfig, NeuralHMM
from .numerics.optim import AdamState
from .numerics.tensor import Tensor

MAGIC = b"NHMC"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    model: NeuralHMM
    norm: NormStats | None = None
    vocab: Vocabulary | None = None
    update: int = 0
    adam: AdamState | None = None
    run_config: dict = field(default_factory=dict)


def _tensor_record(name, array):
    arr = np.ascontiguousarray(array, dtype="<f4")
    raw = name.encode("utf-8")
    parts = [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
    parts += [_U32.pack(d) for d in arr.shape]
    parts.append(arr.tobytes())
    return b"".join(parts)


def _tensor_block(named):
    return _U32.pack(len(named)) + b"".join(_tensor_record(k, v) for k, v in named.items())


def to_bytes(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    header = {
        "model_config": model.cfg.to_dict(),
        "initial_tau": model.initial_tau,
        "update": ckpt.update,
        "vocab": ckpt.vocab.symbols if ckpt.vocab is not None else None,
        "norm_counts": [ckpt.norm.n_frames, ckpt.norm.n_symbols] if ckpt.norm is not None else None,
        "run_config": ckpt.run_config,
    }
    if ckpt.adam is not None:
        a = ckpt.adam
        header["adam"] = {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(raw)), raw]
    norm = {} if ckpt.norm is None else {"norm.mean": ckpt.norm.mean, "norm.std": ckpt.norm.std}
    parts.append(_tensor_block(norm))
    parts.append(_tensor_block({k: p.data for k, p in model.params.items()}))
    if ckpt.adam is None:
        parts.append(_U32.pack(0))
    else:
        moments = {f"adam.m.{k}": v for k, v in ckpt.adam.m.items()}
        moments.update({f"adam.v.{k}": v for k, v in ckpt.adam.v.items()})
        parts.append(_U32.pack(1))
        parts.append(_tensor_block(moments))
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint) -> str:
    """Write the checkpoint and return its content hash."""
    blob = to_bytes(ckpt)
    with open(path, "wb") as f:
        f.write(blob)
    return content_hash(blob)


def content_hash(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()[:16]


def file_hash(path) -> str:
    with open(path, "rb") as f:
        return content_hash(f.read())


class _Reader:
    def __init__(self, blob, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated while reading {what}", offset=self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]

    def tensors(self, what):
        out = {}
        for _ in range(self.u32(f"{what} count")):
            name = self.take(self.u32("name length"), "tensor name").decode("utf-8")
            shape = tuple(self.u32(f"dims of {name}") for _ in range(self.u32(f"rank of {name}")))
            n = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(self.take(4 * n, f"data of {name}"), dtype="<f4")
            out[name] = data.reshape(shape).astype(np.float64)
        return out


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
    header = json.loads(r.take(r.u32("header length"), "header").decode("utf-8"))
    norm_t = r.tensors("normalization")
    params = r.tensors("parameters")
    has_adam = r.u32("optimizer flag")
    moments = r.tensors("optimizer") if has_adam else {}
    if r.pos != len(blob):
        raise FormatError(f"{path}: trailing bytes", offset=r.pos)

    cfg = ModelConfig.from_dict(header["model_config"])
    model = NeuralHMM(cfg, {k: Tensor(v) for k, v in params.items()}, header["initial_tau"])
    norm = None
    if norm_t:
        n_frames, n_symbols = header.get("norm_counts") or (0, 0)
        norm = NormStats(norm_t["norm.mean"], norm_t["norm.std"], n_frames, n_symbols)
    adam = None
    if has_adam:
        a = header["adam"]
        adam = AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"], a["step"])
        for key, val in moments.items():
            kind, name = key[len("adam."):].split(".", 1)
            (adam.m if kind == "m" else adam.v)[name] = val
    vocab = Vocabulary(header["vocab"]) if header.get("vocab") else None
    return Checkpoint(model, norm, vocab, header.get("update", 0), adam, header.get("run_config") or {})
