"""Dense matrix and 1-D convolution primitives.

Matrices are 2-D numpy arrays in row-major (C) order, float32 for
storage. gemm_ref is the functional oracle for the systolic engine
model: its k loop runs in index order with a 64-bit accumulator, so
every output element equals the sequential sum a scalar triple loop
would produce, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuantizedMatrix",
    "gemm_ref",
    "im2col",
    "conv1d_direct",
    "quantize_int8",
    "dequantize",
]


@dataclass(frozen=True)
class QuantizedMatrix:
    """Per-tensor symmetric int8 quantization: value = data * scale."""

    data: np.ndarray
    scale: float

    def __post_init__(self):
        if self.data.dtype != np.int8:
            raise ValueError("quantized data must be int8")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def _check_matrix(m, name: str) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    return m


def gemm_ref(a, b) -> np.ndarray:
    """Reference GEMM C = A @ B with 64-bit accumulation.

    Integer operands use exact int64 arithmetic; everything else
    accumulates in float64. The k loop is sequential so results are
    stable across platforms and identical to a per-element dot product.
    """
    a = _check_matrix(a, "a")
    b = _check_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    if np.issubdtype(a.dtype, np.integer) and np.issubdtype(b.dtype, np.integer):
        wide = np.int64
    else:
        wide = np.float64
    a_w = a.astype(wide)
    b_w = b.astype(wide)
    acc = np.zeros((a.shape[0], b.shape[1]), dtype=wide)
    for k in range(a.shape[1]):
        acc += a_w[:, k : k + 1] * b_w[k : k + 1, :]
    return acc


def im2col(signal, kernel: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Lower a channels x T signal into a (channels*kernel) x T_out matrix.

    Column j holds the receptive window starting at j*stride - pad,
    zero-filled outside bounds. Row ci*kernel + tap matches the layout
    of a conv weight reshaped to (c_out, c_in*kernel).
    """
    x = _check_matrix(np.asarray(signal, dtype=np.float32), "signal")
    if kernel < 1 or stride < 1 or pad < 0:
        raise ValueError("need kernel >= 1, stride >= 1, pad >= 0")
    c, t = x.shape
    t_out = (t + 2 * pad - kernel) // stride + 1
    if t_out < 1:
        raise ValueError(
            f"no output columns for T={t}, kernel={kernel}, stride={stride}, pad={pad}"
        )
    xp = np.pad(x, ((0, 0), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=1)[:, ::stride, :]
    return np.ascontiguousarray(win.transpose(0, 2, 1).reshape(c * kernel, t_out))


def conv1d_direct(signal, weight, bias=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Direct (non-lowered) 1-D cross-correlation.

    Accumulates per kernel tap in float64, independent of the
    im2col+GEMM route it is checked against. weight has shape
    (c_out, c_in, kernel); output is (c_out, T_out) float32.
    """
    x = _check_matrix(np.asarray(signal, dtype=np.float32), "signal")
    w = np.asarray(weight, dtype=np.float32)
    if w.ndim != 3:
        raise ValueError(f"weight must be (c_out, c_in, kernel), got shape {w.shape}")
    c_out, c_in, kernel = w.shape
    if c_in != x.shape[0]:
        raise ValueError(f"channel mismatch: signal has {x.shape[0]}, weight expects {c_in}")
    t = x.shape[1]
    t_out = (t + 2 * pad - kernel) // stride + 1
    if t_out < 1:
        raise ValueError("input too short for this layer geometry")
    xp = np.pad(x, ((0, 0), (pad, pad))) if pad else x
    acc = np.zeros((c_out, t_out), dtype=np.float64)
    for tap in range(kernel):
        seg = xp[:, tap : tap + (t_out - 1) * stride + 1 : stride].astype(np.float64)
        acc += w[:, :, tap].astype(np.float64) @ seg
    if bias is not None:
        acc += np.asarray(bias, dtype=np.float64)[:, None]
    return acc.astype(np.float32)


def quantize_int8(m) -> QuantizedMatrix:
    """Symmetric per-tensor int8 quantization with scale = max_abs/127."""
    m = _check_matrix(np.asarray(m, dtype=np.float32), "m")
    if not np.isfinite(m).all():
        raise ValueError("non-finite input")
    amax = float(np.max(np.abs(m)))
    scale = amax / 127.0 if amax > 0 else 1.0
    q = np.clip(np.round(m.astype(np.float64) / scale), -127, 127).astype(np.int8)
    return QuantizedMatrix(q, scale)


def dequantize(q: QuantizedMatrix) -> np.ndarray:
    return q.data.astype(np.float32) * np.float32(q.scale)
