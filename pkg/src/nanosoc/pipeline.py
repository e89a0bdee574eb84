"""Support stages and the end-to-end pathogen-detection flow.

The per-read stages (demultiplex, trim, chunk, filter, normalize) are
the small jobs the SoC's scalar cores handle; detect_pathogen composes
them with the basecaller and the seed-and-extend mapper. Per-read work
may run in a thread pool, but outputs are reassembled in input order so
results are byte-identical for any thread count.
"""

from __future__ import annotations

import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import basecaller as bc
from .ed_engine import infix_edit_distance
from .formats import FastxRecord
from .perf import WorkloadTrace
from .seed_index import FmIndex, MapParams, inverse_bwt, seed_and_extend
from .signal_sim import RawSignal


class ConfigurationError(ValueError):
    """A pipeline run is missing a required component (weights, index...)."""


@dataclass(frozen=True)
class Barcode:
    id: str
    sequence: str

    def __post_init__(self):
        if not 4 <= len(self.sequence) <= 24:
            raise ValueError(f"barcode {self.id!r} length must be 4..24")
        if set(self.sequence) - set("ACGT"):
            raise ValueError(f"barcode {self.id!r} must be ACGT only")


@dataclass(frozen=True)
class Primer:
    id: str
    sequence: str

    def __post_init__(self):
        if not self.sequence or set(self.sequence) - set("ACGT"):
            raise ValueError(f"primer {self.id!r} must be non-empty ACGT")


def demultiplex(reads, barcodes, max_hamming: int = 2) -> dict[str, str | None]:
    """Assign each read to the barcode with the unique minimum Hamming
    distance over the read's leading window; ties or distances above
    max_hamming leave the read unassigned (None)."""
    barcodes = list(barcodes)
    if not barcodes:
        raise ValueError("barcodes must be non-empty")
    ids = [b.id for b in barcodes]
    if len(set(ids)) != len(ids):
        raise ValueError("barcode ids must be unique")
    out: dict[str, str | None] = {}
    for read in reads:
        best_id = None
        best_d = None
        tied = False
        for b in barcodes:
            window = read.sequence[: len(b.sequence)]
            if len(window) < len(b.sequence):
                continue  # read shorter than barcode: cannot match it
            d = sum(1 for x, y in zip(window, b.sequence) if x != y)
            if best_d is None or d < best_d:
                best_d, best_id, tied = d, b.id, False
            elif d == best_d:
                tied = True
        if best_d is None or tied or best_d > max_hamming:
            out[read.id] = None
        else:
            out[read.id] = best_id
    return out


@dataclass
class TrimEvent:
    primer_id: str
    distance: int
    cut: int  # bases removed


@dataclass
class TrimReport:
    leading: TrimEvent | None = None
    trailing: TrimEvent | None = None


def trim_primer(sequence: str, primers, search_window: int = 100, max_ed: int = 2):
    """Trim the best primer occurrence from each end of a read.

    Leading: the primer is searched in the first search_window bases via
    semi-global edit distance (cost-banded at max_ed) and the read is
    cut through the end of the best occurrence when its distance is
    <= max_ed. Trailing: same on the reversed strings, cutting from the
    occurrence start. Returns (trimmed sequence, TrimReport).
    """
    primers = list(primers)
    if not primers:
        raise ValueError("primers must be non-empty")
    max_len = max(len(p.sequence) for p in primers)
    if search_window < max_len:
        raise ValueError("search_window must cover the longest primer")

    report = TrimReport()
    window = sequence[:search_window]
    best = None
    if window:
        for p in primers:
            d, end = infix_edit_distance(p.sequence, window, max_ed=max_ed)
            if d <= max_ed and (best is None or d < best[0]):
                best = (d, end, p.id)
    if best is not None:
        d, end, pid = best
        report.leading = TrimEvent(pid, d, end)
        sequence = sequence[end:]

    window = sequence[-search_window:] if sequence else ""
    best = None
    if window:
        for p in primers:
            d, end_r = infix_edit_distance(p.sequence[::-1], window[::-1], max_ed=max_ed)
            if d <= max_ed and (best is None or d < best[0]):
                best = (d, end_r, p.id)
    if best is not None:
        d, end_r, pid = best
        report.trailing = TrimEvent(pid, d, end_r)
        sequence = sequence[: len(sequence) - end_r]
    return sequence, report


@dataclass
class Chunk:
    start: int
    samples: np.ndarray


def chunk_signal(raw, chunk_len: int, overlap: int = 0, min_len: int = 1) -> list[Chunk]:
    """Cut a signal into chunks starting at multiples of chunk_len - overlap.

    A final short chunk is kept only if it reaches min_len samples.
    Concatenating chunk 0 with every later chunk's samples[overlap:]
    reproduces the signal (short tails that add no new samples may be
    dropped by the minimum rule without loss).
    """
    if chunk_len < 1:
        raise ValueError("chunk_len must be >= 1")
    if not 0 <= overlap < chunk_len:
        raise ValueError("need 0 <= overlap < chunk_len")
    samples = np.asarray(getattr(raw, "samples", raw))
    step = chunk_len - overlap
    chunks = []
    for start in range(0, len(samples), step):
        seg = samples[start : start + chunk_len]
        if len(seg) < min_len and start > 0:
            break
        chunks.append(Chunk(start, seg))
    return chunks


def filter_reads(reads, min_len: int = 0, min_identity: float | None = None, truths=None):
    """Keep reads passing the length (and optional truth-identity) gates.

    Returns (kept, log) with kept in stable input order and one
    (read_id, reason) log entry per rejection.
    """
    kept = []
    log = []
    truths = truths or {}
    for read in reads:
        if len(read.sequence) < min_len:
            log.append((read.id, f"too_short:{len(read.sequence)}<{min_len}"))
            continue
        if min_identity is not None and read.id in truths:
            ident = bc.read_identity(read.sequence, truths[read.id])
            if ident < min_identity:
                log.append((read.id, f"low_identity:{ident:.4f}<{min_identity}"))
                continue
        kept.append(read)
    return kept, log


def normalize_signal(raw: RawSignal) -> RawSignal:
    """(x - median) / MAD; a zero MAD divides by 1 and flags the signal."""
    samples = np.asarray(raw.samples, dtype=np.float64)
    if samples.size < 2:
        raise ValueError("need at least 2 samples to normalize")
    med = float(np.median(samples))
    mad = float(np.median(np.abs(samples - med)))
    flags = raw.flags
    if mad == 0.0:
        mad = 1.0
        flags = tuple(flags) + ("constant-signal",)
    out = ((samples - med) / mad).astype(np.float32)
    return RawSignal(out, raw.sample_rate, raw.source_id, flags)


@dataclass(frozen=True)
class DetectParams:
    theta_frac: float = 0.1
    theta_id: float = 0.8
    min_read_len: int = 50
    mode: str = "seed"  # or "ed": direct edit-distance comparison
    chunk_len: int = 4000
    chunk_overlap: int = 0
    map_params: MapParams = field(default_factory=MapParams)

    def __post_init__(self):
        if self.mode not in ("seed", "ed"):
            raise ValueError("mode must be 'seed' or 'ed'")


@dataclass
class ReadMapping:
    read_id: str
    mapped: bool
    position: int = -1
    strand: str = "."
    identity: float = 0.0
    score: float = 0.0


@dataclass
class DetectionReport:
    pathogen_id: str
    n_reads_total: int
    n_reads_mapped: int
    mapped_fraction: float
    median_identity: float
    detected: bool
    theta_frac: float
    theta_id: float
    reads: list[ReadMapping]

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "pathogen_id": self.pathogen_id,
            "n_reads_total": self.n_reads_total,
            "n_reads_mapped": self.n_reads_mapped,
            "mapped_fraction": self.mapped_fraction,
            "median_identity": self.median_identity,
            "detected": self.detected,
            "theta_frac": self.theta_frac,
            "theta_id": self.theta_id,
            "reads": [
                {
                    "read_id": r.read_id,
                    "mapped": r.mapped,
                    "position": r.position,
                    "strand": r.strand,
                    "identity": r.identity,
                    "score": r.score,
                }
                for r in self.reads
            ],
        }

    def summary(self) -> str:
        verdict = "DETECTED" if self.detected else "not detected"
        return (
            f"pathogen {self.pathogen_id}: {verdict} "
            f"({self.n_reads_mapped}/{self.n_reads_total} reads mapped, "
            f"fraction {self.mapped_fraction:.3f} vs {self.theta_frac}, "
            f"median identity {self.median_identity:.3f} vs {self.theta_id})"
        )


def basecall_signal(spec, weights, raw, *, chunk_len: int = 0, overlap: int = 0, trace=None):
    """Normalize, chunk, and basecall one signal; returns (sequence, quals).

    chunk_len 0 processes the whole signal in one pass.
    """
    norm = normalize_signal(raw)
    rf = spec.receptive_field()
    if chunk_len and chunk_len < rf:
        raise ValueError("chunk_len shorter than the receptive field")
    if chunk_len and len(norm.samples) > chunk_len:
        chunks = chunk_signal(norm, chunk_len, overlap, min_len=rf)
    else:
        chunks = [Chunk(0, norm.samples)]
    seq_parts = []
    quals: list[int] = []
    for ch in chunks:
        if len(ch.samples) < rf:
            continue
        logits = bc.forward(spec, weights, ch.samples, trace=trace)
        part, q = bc.greedy_decode_with_quality(logits)
        seq_parts.append(part)
        quals.extend(q)
    return "".join(seq_parts), quals


def _map_one(read, index, reference, params: DetectParams, trace):
    if params.mode == "ed":
        if trace is not None:
            trace.add_ed("ed_compare", len(read.sequence), len(reference))
        dist, _end = infix_edit_distance(read.sequence, reference)
        ident = max(0.0, 1.0 - dist / len(read.sequence))
        if ident >= params.map_params.min_identity:
            return ReadMapping(read.id, True, -1, ".", ident, -float(dist))
        return ReadMapping(read.id, False)
    if len(read.sequence) < params.map_params.seed_len:
        return ReadMapping(read.id, False)
    hit = seed_and_extend(
        index, reference, read.sequence, params.map_params, read_id=read.id, trace=trace
    )
    if hit is None:
        return ReadMapping(read.id, False)
    return ReadMapping(read.id, True, hit.position, hit.strand, hit.identity, hit.score)


def _run_ordered(fn, items, threads: int):
    """Apply fn over items, optionally in a thread pool, keeping order."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def detect_pathogen(
    inputs,
    index: FmIndex,
    reference: str | None = None,
    spec=None,
    weights=None,
    params: DetectParams = DetectParams(),
    trace=None,
    threads: int = 1,
    pathogen_id: str = "reference",
) -> DetectionReport:
    """Run the detection flow over raw signals or already-called reads.

    inputs may be RawSignal objects (requires spec + weights) or
    FastxRecord-like reads. The reference defaults to the text
    reconstructed from the index. Per-read work may run in a thread
    pool; per-read traces are merged in input order so the result and
    the trace are identical for any thread count.
    """
    if index is None:
        raise ConfigurationError("detection requires a built index")
    if reference is None:
        reference = inverse_bwt(index)
    inputs = list(inputs)
    signal_input = bool(inputs) and isinstance(inputs[0], RawSignal)
    if signal_input:
        if spec is None or weights is None:
            raise ConfigurationError("signal input requires basecaller spec and weights")
        per_traces = [WorkloadTrace() if trace is not None else None for _ in inputs]

        def _call(item):
            sig, tr = item
            seq, _ = basecall_signal(
                spec, weights, sig,
                chunk_len=params.chunk_len, overlap=params.chunk_overlap, trace=tr,
            )
            return seq

        seqs = _run_ordered(_call, list(zip(inputs, per_traces)), threads)
        if trace is not None:
            for t in per_traces:
                trace.merge(t)
        reads = [FastxRecord(sig.source_id, seq) for sig, seq in zip(inputs, seqs)]
    else:
        reads = list(inputs)

    reads, _log = filter_reads(reads, min_len=params.min_read_len)
    per_traces = [WorkloadTrace() if trace is not None else None for _ in reads]
    mappings = _run_ordered(
        lambda item: _map_one(item[0], index, reference, params, item[1]),
        list(zip(reads, per_traces)),
        threads,
    )
    if trace is not None:
        for t in per_traces:
            trace.merge(t)

    mapped = [m for m in mappings if m.mapped]
    n_total = len(mappings)
    frac = len(mapped) / n_total if n_total else 0.0
    median_id = statistics.median([m.identity for m in mapped]) if mapped else 0.0
    return DetectionReport(
        pathogen_id=pathogen_id,
        n_reads_total=n_total,
        n_reads_mapped=len(mapped),
        mapped_fraction=frac,
        median_identity=median_id,
        detected=(frac >= params.theta_frac and median_id >= params.theta_id),
        theta_frac=params.theta_frac,
        theta_id=params.theta_id,
        reads=mappings,
    )
