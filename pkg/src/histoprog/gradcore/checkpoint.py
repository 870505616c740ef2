"""Self-describing binary checkpoint container.

Layout::

    b"HISTOPROG-CKPT-1\\n"
    uint64 little-endian  header length in bytes
    JSON header           tensor table (name, shape, offset), optimizer/EMA scalars, seed, meta
    payload               concatenated float64 little-endian tensor data
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .optim import EmaState, OptimState
from .tensor import Tensor

MAGIC = b"HISTOPROG-CKPT-1\n"


class CheckpointError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    """Raised by trainers when the loss blows up; carries the last stable checkpoint."""

    def __init__(self, message: str, checkpoint: "ModelCheckpoint | None" = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class ModelCheckpoint:
    params: dict
    seed: int
    optim: OptimState | None = None
    ema: EmaState | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, params: Mapping[str, Tensor | np.ndarray], seed: int, optim: OptimState | None = None,
                ema: EmaState | None = None, meta: dict | None = None) -> "ModelCheckpoint":
        arrays = {k: np.array(v.data if isinstance(v, Tensor) else v, dtype=np.float64, copy=True)
                  for k, v in params.items()}
        if optim is not None:
            optim = OptimState(optim.lr, optim.momentum, {k: v.copy() for k, v in optim.velocity.items()})
        if ema is not None:
            ema = EmaState(ema.decay, {k: v.copy() for k, v in ema.params.items()})
        return cls(arrays, int(seed), optim, ema, dict(meta or {}))

    def to_bytes(self) -> bytes:
        named = [(f"params/{k}", v) for k, v in sorted(self.params.items())]
        header = {"seed": self.seed, "meta": self.meta, "optim": None, "ema": None}
        if self.optim is not None:
            header["optim"] = {"lr": self.optim.lr, "momentum": self.optim.momentum}
            named += [(f"optim/velocity/{k}", v) for k, v in sorted(self.optim.velocity.items())]
        if self.ema is not None:
            header["ema"] = {"decay": self.ema.decay}
            named += [(f"ema/{k}", v) for k, v in sorted(self.ema.params.items())]
        table, chunks, offset = [], [], 0
        for name, arr in named:
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            table.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
        header["tensors"] = table
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return MAGIC + struct.pack("<Q", len(blob)) + blob + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        if not data.startswith(MAGIC):
            raise CheckpointError("not a HISTOPROG-CKPT-1 checkpoint (bad magic header)")
        pos = len(MAGIC)
        (n,) = struct.unpack("<Q", data[pos:pos + 8])
        pos += 8
        header = json.loads(data[pos:pos + n])
        payload = memoryview(data)[pos + n:]
        params, velocity, ema_params = {}, {}, {}
        for entry in header["tensors"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            start = entry["offset"]
            arr = np.frombuffer(payload[start:start + 8 * count], dtype="<f8").astype(np.float64)
            arr = arr.reshape(entry["shape"])
            kind, _, name = entry["name"].partition("/")
            if kind == "params":
                params[name] = arr
            elif kind == "optim":
                velocity[name.removeprefix("velocity/")] = arr
            elif kind == "ema":
                ema_params[name] = arr
            else:
                raise CheckpointError(f"unknown tensor namespace in {entry['name']!r}")
        optim = None
        if header["optim"] is not None:
            optim = OptimState(header["optim"]["lr"], header["optim"]["momentum"], velocity)
        ema = EmaState(header["ema"]["decay"], ema_params) if header["ema"] is not None else None
        return cls(params, header["seed"], optim, ema, header["meta"])

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def tensors(self, requires_grad: bool = False) -> dict:
        return {k: Tensor(v.copy(), requires_grad=requires_grad, name=k) for k, v in self.params.items()}
