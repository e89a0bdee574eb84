"""Synthetic nanopore-style signal generation with exact ground truth.

A pore model maps each k-base context (the window ending at the current
base) to an expected current level in normalized units. Synthesis draws
a per-base dwell from a geometric distribution (floor 1), emits the
context level for that many samples, and adds Gaussian noise scaled by
the per-context level spread. Everything is deterministic given the
seed, including parallel per-read generation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dna import BASES, encode, random_genome, revcomp

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 4000  # Hz-equivalent; ~10 samples/base at typical speed
DEFAULT_PORE_SEED = 20250640  # shared default so separate datasets agree on the pore


@dataclass
class PoreModel:
    context_k: int
    level_mean: np.ndarray  # 4^k normalized current levels
    level_std: np.ndarray  # per-context spread, > 0
    mean_dwell: float = 10.0
    dwell_dispersion: float = 1.0

    def __post_init__(self):
        n = 4**self.context_k
        if self.level_mean.shape != (n,) or self.level_std.shape != (n,):
            raise ValueError(f"level tables must have 4^{self.context_k} = {n} entries")
        if not np.all(self.level_std > 0):
            raise ValueError("all level_std entries must be positive")
        if self.mean_dwell < 1:
            raise ValueError("mean_dwell must be >= 1")
        if not self.dwell_dispersion > 0:
            raise ValueError("dwell_dispersion must be positive")


@dataclass
class RawSignal:
    samples: np.ndarray  # float32, non-empty, finite
    sample_rate: int
    source_id: str
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("samples must be non-empty")


@dataclass
class TruthRecord:
    sequence: str
    dwell_starts: np.ndarray  # int64, len(sequence)+1; [starts[i], starts[i+1]) per base

    def boundaries(self):
        s = self.dwell_starts
        return [(int(s[i]), int(s[i + 1])) for i in range(len(self.sequence))]


def gen_pore_model(seed: int, k: int = 6) -> PoreModel:
    """Random pore model: uniform levels standardized to zero mean, unit scale."""
    if not 1 <= k <= 8:
        raise ValueError("k must be in 1..8")
    rng = np.random.default_rng(seed)
    means = rng.uniform(-1.0, 1.0, size=4**k)
    means = (means - means.mean()) / means.std()
    stds = rng.uniform(0.05, 0.15, size=4**k)
    return PoreModel(context_k=k, level_mean=means, level_std=stds)


def _context_indices(codes: np.ndarray, k: int) -> np.ndarray:
    # left-context window of k bases ending at each position; the first
    # k-1 positions pad on the left with the first base
    padded = np.concatenate((np.full(k - 1, codes[0], dtype=codes.dtype), codes))
    win = np.lib.stride_tricks.sliding_window_view(padded, k)
    powers = 4 ** np.arange(k - 1, -1, -1, dtype=np.int64)
    return win.astype(np.int64) @ powers


def _draw_dwells(rng: np.random.Generator, n: int, pore: PoreModel) -> np.ndarray:
    m = pore.mean_dwell
    d = pore.dwell_dispersion
    if d == 1.0:
        return rng.geometric(1.0 / m, size=n).astype(np.int64)
    # negative binomial on top of the floor of 1; d scales the geometric's
    # variance, d=1 reduces to the geometric case
    mu = m - 1.0
    if mu <= 0:
        return np.ones(n, dtype=np.int64)
    r = mu / (d * (mu + 1.0) - 1.0)
    if r <= 0:
        raise ValueError("dwell_dispersion too small for this mean_dwell")
    p = r / (r + mu)
    return 1 + rng.negative_binomial(r, p, size=n).astype(np.int64)


def synthesize(
    sequence: str,
    pore: PoreModel,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    noise_scale: float = 1.0,
    seed=0,
    source_id: str = "synthetic",
) -> tuple[RawSignal, TruthRecord]:
    """Emit a signal for sequence plus the truth record that generated it.

    seed is anything numpy's default_rng accepts (int or int sequence).
    """
    if len(sequence) < pore.context_k:
        raise ValueError(
            f"sequence length {len(sequence)} shorter than context k={pore.context_k}"
        )
    codes = encode(sequence)
    ctx = _context_indices(codes, pore.context_k)
    rng = np.random.default_rng(seed)
    dwells = _draw_dwells(rng, len(sequence), pore)
    starts = np.zeros(len(sequence) + 1, dtype=np.int64)
    np.cumsum(dwells, out=starts[1:])
    levels = np.repeat(pore.level_mean[ctx], dwells)
    if noise_scale > 0:
        sigma = np.repeat(pore.level_std[ctx] * noise_scale, dwells)
        samples = levels + rng.normal(0.0, 1.0, size=levels.size) * sigma
    else:
        samples = levels
    sig = RawSignal(samples.astype(np.float32), sample_rate, source_id)
    return sig, TruthRecord(sequence=sequence, dwell_starts=starts)


@dataclass
class DatasetEntry:
    read_id: str
    start: int
    strand: str  # "+" or "-"
    truth: TruthRecord
    signal_path: Path


def gen_dataset(
    genome_or_len,
    n_reads: int,
    read_len: tuple[int, int],
    out_dir,
    seed: int = 0,
    *,
    noise_scale: float = 1.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    pore: PoreModel | None = None,
) -> list[DatasetEntry]:
    """Simulate a read set and write it as NSIG files plus a truth TSV.

    genome_or_len is either an ACGT string or an int length for a random
    genome (written alongside as genome.fasta). read_len is (mean, sd);
    sd=0 gives fixed-length reads. Reads are substrings of either strand
    with their origin recorded. Windows containing N are skipped with a
    log message when the genome comes from a FASTA with Ns.
    """
    from . import formats  # deferred: formats depends on this module's types

    if n_reads < 1:
        raise ValueError("n_reads must be >= 1")
    if pore is None:
        pore = gen_pore_model(DEFAULT_PORE_SEED, 6)
    if isinstance(genome_or_len, int):
        genome = random_genome(genome_or_len, seed=(seed ^ 0x67656E))
    else:
        genome = str(genome_or_len).upper()
    if len(genome) < pore.context_k:
        raise ValueError("genome shorter than pore context")

    out_dir = Path(out_dir)
    reads_dir = out_dir / "reads"
    reads_dir.mkdir(parents=True, exist_ok=True)
    formats.write_fasta(out_dir / "genome.fasta", [formats.FastxRecord("genome", genome)])

    mean_len, sd_len = read_len
    master = np.random.default_rng((seed, 0))
    entries: list[DatasetEntry] = []
    n_skipped = 0
    i = 0
    attempts = 0
    max_attempts = n_reads * 50
    while i < n_reads:
        if attempts > max_attempts:
            raise ValueError("could not place reads; genome too short or too many Ns")
        attempts += 1
        if sd_len > 0:
            length = int(round(master.normal(mean_len, sd_len)))
        else:
            length = int(mean_len)
        length = max(pore.context_k, min(length, len(genome)))
        start = int(master.integers(0, len(genome) - length + 1))
        strand = "+" if master.integers(0, 2) == 0 else "-"
        window = genome[start : start + length]
        if "N" in window:
            n_skipped += 1
            continue
        seq = window if strand == "+" else revcomp(window)
        read_id = f"read_{i:06d}"
        sig, truth = synthesize(
            seq,
            pore,
            sample_rate=sample_rate,
            noise_scale=noise_scale,
            seed=(seed, 1, i),
            source_id=read_id,
        )
        sig_path = reads_dir / f"{read_id}.nsig"
        formats.write_nsig(sig_path, sig)
        entries.append(DatasetEntry(read_id, start, strand, truth, sig_path))
        i += 1
    if n_skipped:
        log.info("skipped %d windows containing N", n_skipped)
    formats.write_truth_tsv(out_dir / "truth.tsv", entries)
    return entries
