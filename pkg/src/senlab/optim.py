"""Adam optimizer and parameter checkpointing."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Value


@dataclass
class AdamState:
    """First/second moment buffers and the step counter, one set per parameter."""

    lr: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, Value], lr: float = 0.0003) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict[str, Value], grads: dict[str, np.ndarray] | None,
              state: AdamState) -> AdamState:
    """One Adam update with bias correction: p -= lr * m_hat / (sqrt(v_hat) + eps).

    ``grads`` defaults to the accumulated ``.grad`` buffers; parameters
    without a gradient are left untouched (their moments still decay).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


def zero_grads(params: dict[str, Value]) -> None:
    for p in params.values():
        p.zero_grad()


# ---------------------------------------------------------------------------
# checkpoint format: length-prefixed binary records, one per parameter:
#   u32 name length | name utf-8 | u32 ndim | u64 per dim | f64 row-major data
# with a human-readable manifest written alongside.

_MAGIC = b"SENCKPT1"


def save_checkpoint(params: dict[str, Value | np.ndarray], path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            data = p.data if isinstance(p, Value) else np.asarray(p, dtype=float)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
    with open(path + ".manifest", "w", encoding="utf-8") as fh:
        for name, p in params.items():
            data = p.data if isinstance(p, Value) else np.asarray(p)
            shape = "x".join(str(s) for s in data.shape) or "scalar"
            fh.write(f"{name} {shape}\n")


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            out[name] = data.copy()
    return out


def load_into(params: dict[str, Value], path: str) -> None:
    loaded = load_checkpoint(path)
    missing = set(params) - set(loaded)
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    for name, p in params.items():
        if loaded[name].shape != p.data.shape:
            raise ValueError(
                f"shape mismatch for {name}: {loaded[name].shape} vs {p.data.shape}"
            )
        p.data = loaded[name].astype(np.float64)
