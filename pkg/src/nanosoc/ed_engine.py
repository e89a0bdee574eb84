"""Edit-distance and alignment DP kernels plus the ED accelerator cycle model.

All DP fills are vectorized per row; the serial in-row dependency of the
insert/delete term is folded in with a running min/max over the row
(min over k <= j of cand[k] + (j-k)*unit), which is cell-for-cell equal
to the textbook left-to-right fill.

Transcript alphabet: M match, X mismatch, D delete (target symbol with
no query partner), I insert (query symbol with no target partner).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

OP_MATCH = "M"
OP_MISMATCH = "X"
OP_DELETE = "D"
OP_INSERT = "I"


def _codes(s: str) -> np.ndarray:
    return np.fromiter(map(ord, s), dtype=np.int64, count=len(s))


def edit_distance(a: str, b: str) -> int:
    """Unit-cost Levenshtein distance (full DP, symmetric)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    ca = _codes(a)
    cb = _codes(b)
    m = len(cb)
    jr = np.arange(m + 1, dtype=np.int64)
    prev = jr.copy()
    for i in range(1, len(ca) + 1):
        sub = prev[:-1] + (cb != ca[i - 1])
        vert = prev[1:] + 1
        cand = np.concatenate(([i], np.minimum(sub, vert)))
        prev = np.minimum.accumulate(cand - jr) + jr
    return int(prev[-1])


def dp_matrix(a: str, b: str) -> np.ndarray:
    """Full unit-cost DP matrix in row-major fill order."""
    n, m = len(a), len(b)
    ca = _codes(a) if a else np.empty(0, dtype=np.int64)
    cb = _codes(b) if b else np.empty(0, dtype=np.int64)
    jr = np.arange(m + 1, dtype=np.int64)
    mat = np.empty((n + 1, m + 1), dtype=np.int64)
    mat[0] = jr
    for i in range(1, n + 1):
        sub = mat[i - 1, :-1] + (cb != ca[i - 1])
        vert = mat[i - 1, 1:] + 1
        cand = np.concatenate(([i], np.minimum(sub, vert)))
        mat[i] = np.minimum.accumulate(cand - jr) + jr
    return mat


def banded_edit_distance(a: str, b: str, band: int) -> int | None:
    """Levenshtein restricted to |i-j| <= band; None when out of band.

    Exact whenever the true distance is <= band and band >= ||a|-|b||.
    """
    if band < 0:
        raise ValueError("band must be >= 0")
    n, m = len(a), len(b)
    if abs(n - m) > band:
        return None
    if a == b:
        return 0
    inf = n + m + 1
    cb = _codes(b) if b else np.empty(0, dtype=np.int64)
    ca = _codes(a) if a else np.empty(0, dtype=np.int64)
    jr = np.arange(m + 1, dtype=np.int64)
    prev = np.where(jr <= band, jr, inf)
    for i in range(1, n + 1):
        sub = prev[:-1] + (cb != ca[i - 1])
        vert = prev[1:] + 1
        first = i if i <= band else inf
        cand = np.concatenate(([first], np.minimum(sub, vert)))
        cur = np.minimum.accumulate(cand - jr) + jr
        prev = np.where(np.abs(jr - i) <= band, cur, inf)
    d = int(prev[-1])
    return d if d <= band else None


@dataclass(frozen=True)
class Scoring:
    match: float = 1.0
    mismatch: float = -1.0
    gap: float = -1.0

    def __post_init__(self):
        if not self.match > 0:
            raise ValueError("match score must be positive")
        if self.mismatch > 0 or self.gap > 0:
            raise ValueError("mismatch and gap penalties must be <= 0")


@dataclass
class AlignmentResult:
    score: float
    transcript: str  # over M X D I
    query_end: int
    target_end: int


def extend_align(query: str, target: str, scoring: Scoring = Scoring()) -> AlignmentResult:
    """Semi-global extension: query end-to-end, target start anchored, end free.

    Maximizes score; the reported target_end is the smallest among
    optima, and traceback prefers match > mismatch > delete > insert.
    """
    if len(query) == 0:
        raise ValueError("empty query")
    lq, lt = len(query), len(target)
    cq = _codes(query)
    ct = _codes(target) if target else np.empty(0, dtype=np.int64)
    g = scoring.gap
    jr = np.arange(lt + 1, dtype=np.float64)
    h = np.empty((lq + 1, lt + 1), dtype=np.float64)
    h[0] = jr * g
    for i in range(1, lq + 1):
        subst = np.where(ct == cq[i - 1], scoring.match, scoring.mismatch)
        diag = h[i - 1, :-1] + subst
        vert = h[i - 1, 1:] + g
        cand = np.concatenate(([h[i - 1, 0] + g], np.maximum(diag, vert)))
        h[i] = np.maximum.accumulate(cand - jr * g) + jr * g
    end = int(np.argmax(h[lq]))
    score = float(h[lq, end])

    ops: list[str] = []
    i, j = lq, end
    while i > 0 or j > 0:
        best_val = -math.inf
        best = None
        if i > 0 and j > 0:
            sub = scoring.match if query[i - 1] == target[j - 1] else scoring.mismatch
            best_val = h[i - 1, j - 1] + sub
            best = OP_MATCH if sub == scoring.match else OP_MISMATCH
        if j > 0 and h[i, j - 1] + g > best_val:
            best_val = h[i, j - 1] + g
            best = OP_DELETE
        if i > 0 and h[i - 1, j] + g > best_val:
            best = OP_INSERT
        if best in (OP_MATCH, OP_MISMATCH):
            i -= 1
            j -= 1
        elif best == OP_DELETE:
            j -= 1
        else:
            i -= 1
        ops.append(best)
    return AlignmentResult(score=score, transcript="".join(reversed(ops)), query_end=lq, target_end=end)


def replay_transcript(query: str, target: str, transcript: str) -> tuple[str, int, int]:
    """Walk a transcript over (query, target); returns (target span, qi, tj).

    Raises if an op is inconsistent with the strings, so tests can use it
    as an independent check that a transcript really aligns the inputs.
    """
    qi = tj = 0
    span = []
    for op in transcript:
        if op == OP_MATCH:
            if query[qi] != target[tj]:
                raise ValueError(f"transcript claims match at q{qi}/t{tj}")
            span.append(target[tj])
            qi += 1
            tj += 1
        elif op == OP_MISMATCH:
            if query[qi] == target[tj]:
                raise ValueError(f"transcript claims mismatch at q{qi}/t{tj}")
            span.append(target[tj])
            qi += 1
            tj += 1
        elif op == OP_DELETE:
            span.append(target[tj])
            tj += 1
        elif op == OP_INSERT:
            qi += 1
        else:
            raise ValueError(f"unknown op {op!r}")
    return "".join(span), qi, tj


def infix_edit_distance(pattern: str, text: str, max_ed: int | None = None) -> tuple[int, int]:
    """Best edit distance of pattern against any substring of text.

    Semi-global DP with both text ends free. Returns (distance, end)
    where end is the leftmost end index of an optimal occurrence. With
    max_ed set, running values saturate at max_ed + 1 (Ukkonen-style
    cost band); a result of max_ed + 1 means no occurrence within
    max_ed.
    """
    if not pattern:
        raise ValueError("empty pattern")
    if not text:
        return len(pattern) if max_ed is None else min(len(pattern), max_ed + 1), 0
    cp = _codes(pattern)
    ct = _codes(text)
    m = len(ct)
    jr = np.arange(m + 1, dtype=np.int64)
    prev = np.zeros(m + 1, dtype=np.int64)  # free start in text
    cap = None if max_ed is None else max_ed + 1
    for i in range(1, len(cp) + 1):
        sub = prev[:-1] + (ct != cp[i - 1])
        vert = prev[1:] + 1
        cand = np.concatenate(([i], np.minimum(sub, vert)))
        prev = np.minimum.accumulate(cand - jr) + jr
        if cap is not None:
            np.minimum(prev, cap, out=prev)
    end = int(np.argmin(prev))
    return int(prev[end]), end


@dataclass(frozen=True)
class EdCycleConfig:
    """Cycle model: core does n*m cells at a scalar cost; the engine pays a
    wavefront fill, streams cells at a sustained rate, and a fixed
    transfer overhead per comparison. Defaults are calibrated in
    configs/soc_default.json (see the notes there)."""

    core_cycles_per_cell: float = 111.0
    cells_per_cycle: float = 0.375
    overhead_cycles: int = 912

    def __post_init__(self):
        if not (self.core_cycles_per_cell > 0 and self.cells_per_cycle > 0):
            raise ValueError("cycle parameters must be positive")
        if self.overhead_cycles < 0:
            raise ValueError("overhead_cycles must be >= 0")


def ed_cycles(n: int, m: int, cfg: EdCycleConfig = EdCycleConfig()) -> tuple[int, int]:
    """(core_cycles, accel_cycles) for one n x m comparison."""
    if n < 1 or m < 1:
        raise ValueError("sequence lengths must be >= 1")
    core = math.ceil(n * m * cfg.core_cycles_per_cell)
    accel = (n + m - 1) + math.ceil(n * m / cfg.cells_per_cycle) + cfg.overhead_cycles
    return core, accel
