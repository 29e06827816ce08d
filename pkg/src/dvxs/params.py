"""Named parameter collections, Adam updates, and the array container format."""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager

import numpy as np

from .autodiff import Tensor

MAGIC = b"DVXS"
FORMAT_VERSION = 1
META_MAGIC = b"META"


class Parameter(Tensor):
    """Leaf tensor with persistent gradient and optimizer moment buffers."""

    __slots__ = ("name", "m", "v")

    def __init__(self, name: str, value: np.ndarray):
        super().__init__(np.asarray(value, dtype=np.float32), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)


class ParamSet:
    """Uniquely named parameters updated together by one optimizer."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grads(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def grad_norm(self) -> float:
        total = 0.0
        for p in self._params.values():
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return float(np.sqrt(total))

    @contextmanager
    def substituted(self, tensors: dict):
        """Temporarily replace named parameters with arbitrary tensors."""
        saved = self._params
        merged = dict(saved)
        merged.update(tensors)
        self._params = merged
        try:
            yield
        finally:
            self._params = saved

    def state_arrays(self, prefix: str = "", include_moments: bool = True) -> dict:
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p.data
            if include_moments:
                out[prefix + name + ".m"] = p.m
                out[prefix + name + ".v"] = p.v
        return out

    def load_state_arrays(self, arrays: dict, prefix: str = "", include_moments: bool = True):
        for name, p in self._params.items():
            src = arrays[prefix + name]
            if src.shape != p.data.shape:
                raise ValueError(f"parameter {name}: stored shape {src.shape} != {p.data.shape}")
            p.data[...] = src
            if include_moments:
                p.m[...] = arrays[prefix + name + ".m"]
                p.v[...] = arrays[prefix + name + ".v"]


def adam_update(params: ParamSet, lr: float, clip_norm: float = 100.0,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Clip the global gradient norm, apply one Adam step, zero the gradients."""
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise ValueError(f"non-finite gradient in parameter '{name}'")
    norm = params.grad_norm()
    scale = clip_norm / norm if norm > clip_norm else 1.0
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in params.values():
        g = p.grad * scale if scale != 1.0 else p.grad
        p.m[...] = beta1 * p.m + (1.0 - beta1) * g
        p.v[...] = beta2 * p.v + (1.0 - beta2) * (g * g)
        p.data[...] -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
        p.grad[...] = 0.0


def he_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


# ---------------------------------------------------------------------------
# container file: magic, version, count, then per entry
# (u32 name length, UTF-8 name, u32 rank, u32 dims, little-endian f32 payload);
# optional trailing META block with JSON metadata
# ---------------------------------------------------------------------------

def write_arrays(path, arrays: dict, meta: dict | None = None):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float32)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.astype("<f4").tobytes())
        if meta is not None:
            mb = json.dumps(meta, sort_keys=True).encode("utf-8")
            f.write(META_MAGIC)
            f.write(struct.pack("<I", len(mb)))
            f.write(mb)


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError("container file truncated")
    return buf


def read_arrays(path) -> tuple[dict, dict | None]:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise ValueError(f"{path}: bad magic, not a container file")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            payload = _read_exact(f, 4 * n)
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        meta = None
        tail = f.read(4)
        if tail:
            if tail != META_MAGIC:
                raise ValueError(f"{path}: unexpected trailing bytes")
            (mlen,) = struct.unpack("<I", _read_exact(f, 4))
            meta = json.loads(_read_exact(f, mlen).decode("utf-8"))
        return arrays, meta
