"""BWT/FM-index over a reference genome and seed-and-extend read mapping.

The suffix array is built by prefix doubling (O(n log n) lexsorts),
good for the viral-scale references this targets. The index keeps a
2-bit-friendly code array for the BWT, cumulative symbol counts,
occurrence checkpoints every occ_stride rows, and suffix-array values
sampled at text positions divisible by sa_stride, so locate walks at
most sa_stride - 1 LF steps.

Symbol codes: 0 is the $ sentinel, A=1, C=2, G=3, T=4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dna import revcomp
from .ed_engine import AlignmentResult, Scoring, extend_align

_CODE_LUT = np.full(256, 255, dtype=np.uint8)
for _i, _b in enumerate("ACGT"):
    _CODE_LUT[ord(_b)] = _i + 1


def _encode1(seq: str) -> np.ndarray:
    """ACGT -> 1..4 codes (sentinel 0 is reserved)."""
    raw = np.frombuffer(seq.encode("ascii"), dtype=np.uint8)
    codes = _CODE_LUT[raw]
    bad = np.flatnonzero(codes == 255)
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"invalid symbol {seq[i]!r} at position {i}")
    return codes


def suffix_array(codes: np.ndarray) -> np.ndarray:
    """Suffix array by prefix doubling over an integer sequence.

    The caller guarantees a unique smallest sentinel at the end.
    """
    n = len(codes)
    rank = codes.astype(np.int64)
    k = 1
    while True:
        key2 = np.full(n, -1, dtype=np.int64)
        key2[: n - k] = rank[k:]
        order = np.lexsort((key2, rank))
        r1 = rank[order]
        r2 = key2[order]
        bumped = np.empty(n, dtype=np.int64)
        bumped[0] = 0
        bumped[1:] = (r1[1:] != r1[:-1]) | (r2[1:] != r2[:-1])
        new_rank = np.cumsum(bumped)
        rank = np.empty(n, dtype=np.int64)
        rank[order] = new_rank
        if new_rank[-1] == n - 1:
            return order
        k *= 2


@dataclass
class FmIndex:
    bwt: np.ndarray  # uint8 codes 0..4, length text_len + 1
    sentinel_row: int  # row where bwt == 0
    counts: np.ndarray  # counts[c] = number of symbols < c, len 5
    occ: np.ndarray  # (n_checkpoints, 4) prefix counts of codes 1..4
    occ_stride: int
    sa_rows: np.ndarray  # rows with SA[row] % sa_stride == 0, sorted
    sa_vals: np.ndarray  # SA values for those rows
    sa_stride: int
    text_len: int

    def occ_count(self, code: int, i: int) -> int:
        """Occurrences of code in bwt[:i]."""
        if code == 0:
            return 1 if self.sentinel_row < i else 0
        cp = i // self.occ_stride
        base = int(self.occ[cp, code - 1])
        return base + int(np.count_nonzero(self.bwt[cp * self.occ_stride : i] == code))

    def lf(self, row: int) -> int:
        c = int(self.bwt[row])
        return int(self.counts[c]) + self.occ_count(c, row)


def build_index(reference: str, occ_stride: int = 64, sa_stride: int = 32) -> FmIndex:
    """Build the FM-index of reference + $."""
    if not reference:
        raise ValueError("reference must be non-empty")
    if occ_stride < 1 or sa_stride < 1:
        raise ValueError("strides must be >= 1")
    codes = _encode1(reference)
    text = np.concatenate((codes, np.zeros(1, dtype=np.uint8)))
    sa = suffix_array(text)
    n = len(text)
    prev = sa - 1
    prev[prev < 0] = n - 1
    bwt = text[prev]
    sentinel_row = int(np.flatnonzero(bwt == 0)[0])

    hist = np.bincount(bwt, minlength=5).astype(np.int64)
    counts = np.zeros(5, dtype=np.int64)
    counts[1:] = np.cumsum(hist)[:-1]

    boundaries = np.arange(0, n + 1, occ_stride)
    occ = np.empty((len(boundaries), 4), dtype=np.int64)
    for c in range(1, 5):
        positions = np.flatnonzero(bwt == c)
        occ[:, c - 1] = np.searchsorted(positions, boundaries)

    sampled = np.flatnonzero(sa % sa_stride == 0)
    return FmIndex(
        bwt=bwt,
        sentinel_row=sentinel_row,
        counts=counts,
        occ=occ,
        occ_stride=occ_stride,
        sa_rows=sampled.astype(np.int64),
        sa_vals=sa[sampled].astype(np.int64),
        sa_stride=sa_stride,
        text_len=n - 1,
    )


def inverse_bwt(index: FmIndex) -> str:
    """Reconstruct the original text by LF-walking from the $ suffix row."""
    out = np.empty(index.text_len, dtype=np.uint8)
    row = 0
    for i in range(index.text_len):
        c = int(index.bwt[row])
        out[i] = c
        row = index.lf(row)
    return "".join("$ACGT"[c] for c in out[::-1])


def backward_search(index: FmIndex, pattern: str) -> tuple[int, int]:
    """(lo, hi) row range of rotations prefixed by pattern; hi - lo = count.

    The empty pattern returns the full range (text_len + 1 rows).
    """
    lo, hi = 0, index.text_len + 1
    for ch in reversed(pattern):
        code = int(_CODE_LUT[ord(ch)])
        if code == 255:
            raise ValueError(f"invalid symbol {ch!r} in pattern")
        base = int(index.counts[code])
        lo = base + index.occ_count(code, lo)
        hi = base + index.occ_count(code, hi)
        if lo >= hi:
            return lo, lo
    return lo, hi


def locate(index: FmIndex, sa_range: tuple[int, int]) -> list[int]:
    """Sorted text positions for every row in the range."""
    lo, hi = sa_range
    out = []
    for row in range(lo, hi):
        steps = 0
        r = row
        while True:
            hit = np.searchsorted(index.sa_rows, r)
            if hit < len(index.sa_rows) and index.sa_rows[hit] == r:
                out.append(int(index.sa_vals[hit]) + steps)
                break
            r = index.lf(r)
            steps += 1
    return sorted(out)


@dataclass(frozen=True)
class MapParams:
    seed_len: int = 10
    seed_stride: int | None = None  # default: non-overlapping (= seed_len)
    max_seed_hits: int = 64
    max_candidates: int = 8
    scoring: Scoring = field(default_factory=Scoring)
    min_identity: float = 0.5


@dataclass
class MappingResult:
    read_id: str
    position: int
    strand: str  # "+" or "-"
    score: float
    identity: float
    transcript: str


def _extension_slack(part_len: int) -> int:
    return 16 + part_len // 8


def _extend_anchor(
    seq: str,
    reference: str,
    off: int,
    pos: int,
    seed_len: int,
    scoring: Scoring,
    trace=None,
    stage: str = "map",
):
    """Extend left and right from an exact seed anchor.

    Returns (score, position, transcript) in forward reference coords.
    Registers the actual DP dimensions of both extensions with trace.
    """
    right_q = seq[off + seed_len :]
    left_q = seq[:off]
    score = scoring.match * seed_len
    right_t = ""
    left_t = ""
    left_end = 0
    if right_q:
        slack = _extension_slack(len(right_q))
        window = reference[pos + seed_len : pos + seed_len + len(right_q) + slack]
        r = extend_align(right_q, window, scoring)
        if trace is not None and window:
            trace.add_ed(stage, len(right_q), len(window))
        score += r.score
        right_t = r.transcript
    if left_q:
        slack = _extension_slack(len(left_q))
        window = reference[max(0, pos - off - slack) : pos][::-1]
        l = extend_align(left_q[::-1], window, scoring)
        if trace is not None and window:
            trace.add_ed(stage, len(left_q), len(window))
        score += l.score
        left_t = l.transcript[::-1]
        left_end = l.target_end
    transcript = left_t + "M" * seed_len + right_t
    position = pos - left_end
    return score, position, transcript


def seed_and_extend(
    index: FmIndex,
    reference: str,
    read: str,
    params: MapParams = MapParams(),
    read_id: str = "",
    trace=None,
    stage: str = "map",
) -> MappingResult | None:
    """Map a read against the indexed reference; None when nothing clears
    min_identity.

    Non-overlapping seeds are looked up on both strands (the reverse
    complement of the read is searched against the single forward
    index). Seed hits vote for candidate origins; the best-supported
    anchors are extended with the scored DP and the winner is chosen by
    (score desc, position asc, forward strand first).
    """
    if len(read) < params.seed_len:
        raise ValueError(f"read shorter than seed_len={params.seed_len}")
    stride = params.seed_stride or params.seed_len
    votes: dict[tuple[str, int], list] = {}
    for strand, seq in (("+", read), ("-", revcomp(read))):
        for off in range(0, len(seq) - params.seed_len + 1, stride):
            seed = seq[off : off + params.seed_len]
            lo, hi = backward_search(index, seed)
            nhits = hi - lo
            if nhits == 0 or nhits > params.max_seed_hits:
                continue
            for pos in locate(index, (lo, hi)):
                if pos + params.seed_len > index.text_len:
                    continue
                key = (strand, pos - off)
                entry = votes.get(key)
                if entry is None:
                    votes[key] = [1, off, pos]
                else:
                    entry[0] += 1
    if not votes:
        return None
    ranked = sorted(
        votes.items(), key=lambda kv: (-kv[1][0], kv[0][0] != "+", kv[0][1])
    )[: params.max_candidates]

    best = None
    for (strand, _origin), (_, off, pos) in ranked:
        seq = read if strand == "+" else revcomp(read)
        score, position, transcript = _extend_anchor(
            seq, reference, off, pos, params.seed_len, params.scoring, trace, stage
        )
        identity = transcript.count("M") / len(transcript) if transcript else 0.0
        key = (-score, position, strand != "+")
        if best is None or key < best[0]:
            best = (key, MappingResult(read_id, position, strand, score, identity, transcript))
    result = best[1]
    if result.identity < params.min_identity:
        return None
    return result
