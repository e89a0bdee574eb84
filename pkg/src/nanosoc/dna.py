"""Nucleotide alphabet helpers shared across the toolkit."""

from __future__ import annotations

import numpy as np

BASES = "ACGT"

_COMPLEMENT = str.maketrans("ACGT", "TGCA")

# base -> 0..3 code; 255 marks anything outside the alphabet
_CODE_LUT = np.full(256, 255, dtype=np.uint8)
for _i, _b in enumerate(BASES):
    _CODE_LUT[ord(_b)] = _i


def revcomp(seq: str) -> str:
    """Reverse complement of an ACGT string."""
    return seq.translate(_COMPLEMENT)[::-1]


def encode(seq: str) -> np.ndarray:
    """Map an ACGT string to a uint8 array of 0..3 codes.

    Raises ValueError naming the first offending position.
    """
    raw = np.frombuffer(seq.encode("ascii"), dtype=np.uint8)
    codes = _CODE_LUT[raw]
    bad = np.flatnonzero(codes == 255)
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"invalid base {seq[i]!r} at position {i}")
    return codes


def decode(codes: np.ndarray) -> str:
    """Inverse of encode."""
    return "".join(BASES[c] for c in codes)


def random_genome(length: int, seed: int) -> str:
    """Uniform random ACGT sequence, deterministic in the seed."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    return decode(rng.integers(0, 4, size=length, dtype=np.uint8))
