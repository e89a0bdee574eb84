"""Functional and cycle model of the 4x4 output-stationary systolic GEMM unit.

The cycle formula is a closed-form model: each PxP output tile streams K
operand pairs and pays a 2P-2 fill/drain term, partial edge tiles are
padded to P and pay full tile cost, and a per-call setup term covers
scratchpad staging. The functional path mirrors the accumulator width of
the modeled hardware (int32-style exact integer accumulation, or
sequential float32).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NUMERIC_MODES = ("int8", "float32")

_INT32_MAX = 2**31 - 1


@dataclass(frozen=True)
class SystolicConfig:
    array_dim: int = 4
    setup_cycles: int = 16
    numeric_mode: str = "int8"

    def __post_init__(self):
        if self.array_dim < 1:
            raise ValueError("array_dim must be >= 1")
        if self.setup_cycles < 0:
            raise ValueError("setup_cycles must be >= 0")
        if self.numeric_mode not in NUMERIC_MODES:
            raise ValueError(f"numeric_mode must be one of {NUMERIC_MODES}")


@dataclass(frozen=True)
class CoreConfig:
    """In-order scalar core baseline: one fused multiply-add per cycle."""

    macs_per_cycle: float = 1.0

    def __post_init__(self):
        if not self.macs_per_cycle > 0:
            raise ValueError("macs_per_cycle must be positive")


@dataclass
class EngineResult:
    output: np.ndarray
    cycles: int
    macs: int


def systolic_cycles(m: int, k: int, n: int, cfg: SystolicConfig = SystolicConfig()) -> int:
    """ceil(M/P) * ceil(N/P) * (K + 2P - 2) + setup."""
    if m < 1 or k < 1 or n < 1:
        raise ValueError("dimensions must be >= 1")
    p = cfg.array_dim
    tiles = -(m // -p) * -(n // -p)
    return tiles * (k + 2 * p - 2) + cfg.setup_cycles


def systolic_gemm(a, b, cfg: SystolicConfig = SystolicConfig()) -> EngineResult:
    """Run a GEMM through the systolic model.

    int8 mode expects integer operands and reproduces the hardware's
    exact integer accumulation (checked against the int32 range).
    float32 mode accumulates sequentially in float32, one k step at a
    time, like a PE register would.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    if cfg.numeric_mode == "int8":
        if not (np.issubdtype(a.dtype, np.integer) and np.issubdtype(b.dtype, np.integer)):
            raise ValueError("int8 mode requires integer operands")
        out = a.astype(np.int64) @ b.astype(np.int64)
        if np.abs(out).max(initial=0) > _INT32_MAX:
            raise OverflowError("accumulator exceeds int32 range")
        out = out.astype(np.int32)
    else:
        a32 = a.astype(np.float32)
        b32 = b.astype(np.float32)
        out = np.zeros((m, n), dtype=np.float32)
        for kk in range(k):
            out += a32[:, kk : kk + 1] * b32[kk : kk + 1, :]
    return EngineResult(output=out, cycles=systolic_cycles(m, k, n, cfg), macs=m * k * n)


def conv_to_gemm_dims(layer, t: int) -> tuple[int, int, int]:
    """(M, K, N) of the GEMM a conv layer lowers to for input length t.

    layer is anything with c_in/c_out/kernel/stride/pad attributes.
    """
    t_out = (t + 2 * layer.pad - layer.kernel) // layer.stride + 1
    if t_out < 1:
        raise ValueError(f"input length {t} too short for kernel={layer.kernel}")
    return layer.c_out, layer.c_in * layer.kernel, t_out


def core_gemm_cycles(m: int, k: int, n: int, core: CoreConfig = CoreConfig()) -> int:
    """Cycles for the same GEMM on the scalar core baseline."""
    if m < 1 or k < 1 or n < 1:
        raise ValueError("dimensions must be >= 1")
    return math.ceil(m * k * n / core.macs_per_cycle)
