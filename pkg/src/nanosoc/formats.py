"""On-disk formats: NSIG signals, CNNW weights, FMIX indexes, FASTA/FASTQ,
and the dataset truth TSV.

Binary formats are little-endian fixed-width with a magic + version
header and round-trip bit-exactly. Readers raise FormatError naming the
file and byte offset of the first problem.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basecaller import CnnSpec, ConvLayerSpec, Weights
from .seed_index import FmIndex
from .signal_sim import RawSignal, TruthRecord

NSIG_MAGIC = b"NSIG"
CNNW_MAGIC = b"CNNW"
FMIX_MAGIC = b"FMIX"
FORMAT_VERSION = 1

FASTX_ALPHABET = set("ACGTN")


class FormatError(ValueError):
    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte {offset}: {message}")


class _Reader:
    def __init__(self, path):
        self.path = path
        self.data = Path(path).read_bytes()
        self.pos = 0

    def fail(self, message: str):
        raise FormatError(self.path, self.pos, message)

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            self.fail(f"truncated: wanted {n} bytes, have {len(self.data) - self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def array(self, dtype, count: int) -> np.ndarray:
        nbytes = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(nbytes), dtype=dtype).copy()

    def expect_magic(self, magic: bytes):
        got = self.take(len(magic))
        if got != magic:
            self.pos -= len(magic)
            self.fail(f"bad magic {got!r}, expected {magic!r}")

    def expect_version(self, version: int):
        got = self.u16()
        if got != version:
            self.pos -= 2
            self.fail(f"unsupported version {got}")

    def done(self):
        if self.pos != len(self.data):
            self.fail(f"{len(self.data) - self.pos} trailing bytes")


# --- NSIG ------------------------------------------------------------------


def write_nsig(path, signal: RawSignal) -> None:
    samples = np.ascontiguousarray(signal.samples, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(NSIG_MAGIC)
        fh.write(struct.pack("<HIQ", FORMAT_VERSION, int(signal.sample_rate), samples.size))
        fh.write(samples.tobytes())


def read_nsig(path, source_id: str | None = None) -> RawSignal:
    r = _Reader(path)
    r.expect_magic(NSIG_MAGIC)
    r.expect_version(FORMAT_VERSION)
    sample_rate = r.u32()
    count = r.u64()
    if count < 1:
        r.fail("empty signal")
    samples = r.array("<f4", count)
    r.done()
    if not np.isfinite(samples).all():
        raise FormatError(path, 18, "non-finite samples")
    if source_id is None:
        source_id = Path(path).stem
    return RawSignal(samples.astype(np.float32), sample_rate, source_id)


# --- CNNW ------------------------------------------------------------------


def write_weights(path, spec: CnnSpec, weights: Weights) -> None:
    weights.check_shapes(spec)
    with open(path, "wb") as fh:
        fh.write(CNNW_MAGIC)
        fh.write(struct.pack("<HH", FORMAT_VERSION, len(spec.layers)))
        for layer, (w, b) in zip(spec.layers, weights.layers):
            fh.write(
                struct.pack(
                    "<IIIII", layer.c_in, layer.c_out, layer.kernel, layer.stride, layer.pad
                )
            )
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def read_weights(path) -> tuple[CnnSpec, Weights]:
    r = _Reader(path)
    r.expect_magic(CNNW_MAGIC)
    r.expect_version(FORMAT_VERSION)
    n_layers = r.u16()
    if n_layers < 1:
        r.fail("no layers")
    layers = []
    arrays = []
    for _ in range(n_layers):
        c_in, c_out, kernel, stride, pad = (r.u32() for _ in range(5))
        try:
            layers.append(ConvLayerSpec(c_in, c_out, kernel, stride, pad))
        except ValueError as e:
            r.fail(str(e))
        w = r.array("<f4", c_out * c_in * kernel).reshape(c_out, c_in, kernel)
        b = r.array("<f4", c_out)
        arrays.append((w, b))
    r.done()
    try:
        spec = CnnSpec(tuple(layers))
        weights = Weights(arrays)
    except ValueError as e:
        raise FormatError(path, 8, str(e))
    return spec, weights


# --- FMIX ------------------------------------------------------------------


def _pack_2bit(codes: np.ndarray) -> bytes:
    # codes are 0..3 per symbol, 4 symbols per byte, little end first
    padded = np.zeros((len(codes) + 3) // 4 * 4, dtype=np.uint8)
    padded[: len(codes)] = codes
    grouped = padded.reshape(-1, 4)
    packed = grouped[:, 0] | (grouped[:, 1] << 2) | (grouped[:, 2] << 4) | (grouped[:, 3] << 6)
    return packed.astype(np.uint8).tobytes()


def _unpack_2bit(data: bytes, count: int) -> np.ndarray:
    raw = np.frombuffer(data, dtype=np.uint8)
    out = np.empty(len(raw) * 4, dtype=np.uint8)
    out[0::4] = raw & 3
    out[1::4] = (raw >> 2) & 3
    out[2::4] = (raw >> 4) & 3
    out[3::4] = (raw >> 6) & 3
    return out[:count]


def write_index(path, index: FmIndex) -> None:
    no_sentinel = np.delete(index.bwt, index.sentinel_row)
    with open(path, "wb") as fh:
        fh.write(FMIX_MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(
            struct.pack(
                "<QIIQ", index.text_len, index.occ_stride, index.sa_stride, index.sentinel_row
            )
        )
        fh.write(_pack_2bit(no_sentinel - 1))  # codes 1..4 -> 0..3
        fh.write(np.ascontiguousarray(index.counts, dtype="<u8").tobytes())
        fh.write(struct.pack("<Q", index.occ.shape[0]))
        fh.write(np.ascontiguousarray(index.occ, dtype="<u8").tobytes())
        fh.write(struct.pack("<Q", len(index.sa_rows)))
        fh.write(np.ascontiguousarray(index.sa_rows, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(index.sa_vals, dtype="<u8").tobytes())


def read_index(path) -> FmIndex:
    r = _Reader(path)
    r.expect_magic(FMIX_MAGIC)
    r.expect_version(FORMAT_VERSION)
    text_len = r.u64()
    occ_stride = r.u32()
    sa_stride = r.u32()
    sentinel_row = r.u64()
    if text_len < 1 or occ_stride < 1 or sa_stride < 1 or sentinel_row > text_len:
        r.fail("inconsistent header")
    packed = r.take((text_len + 3) // 4)
    symbols = _unpack_2bit(packed, text_len) + 1
    bwt = np.insert(symbols, sentinel_row, 0).astype(np.uint8)
    counts = r.array("<u8", 5).astype(np.int64)
    n_cp = r.u64()
    occ = r.array("<u8", n_cp * 4).astype(np.int64).reshape(n_cp, 4)
    n_sa = r.u64()
    sa_rows = r.array("<u8", n_sa).astype(np.int64)
    sa_vals = r.array("<u8", n_sa).astype(np.int64)
    r.done()
    return FmIndex(
        bwt=bwt,
        sentinel_row=int(sentinel_row),
        counts=counts,
        occ=occ,
        occ_stride=occ_stride,
        sa_rows=sa_rows,
        sa_vals=sa_vals,
        sa_stride=sa_stride,
        text_len=text_len,
    )


# --- FASTA / FASTQ ---------------------------------------------------------


@dataclass
class FastxRecord:
    id: str
    sequence: str
    quality: str | None = None

    def __post_init__(self):
        if self.quality is not None and len(self.quality) != len(self.sequence):
            raise ValueError(f"quality length mismatch for {self.id!r}")


def _check_sequence(seq: str, path, offset: int) -> str:
    bad = set(seq) - FASTX_ALPHABET
    if bad:
        raise FormatError(path, offset, f"invalid sequence characters {sorted(bad)}")
    return seq


def read_fastx(path) -> list[FastxRecord]:
    """FASTA or FASTQ by sniffing the first byte; accepts multi-line
    sequences and CRLF line endings."""
    data = Path(path).read_bytes()
    if not data:
        raise FormatError(path, 0, "empty file")
    text = data.decode("ascii", errors="strict")
    if text[0] == ">":
        return _read_fasta(text, path)
    if text[0] == "@":
        return _read_fastq(text, path)
    raise FormatError(path, 0, f"unrecognized leading character {text[0]!r}")


def _read_fasta(text: str, path) -> list[FastxRecord]:
    records = []
    name = None
    parts: list[str] = []
    offset = 0
    start = 0
    for line in text.splitlines(keepends=True):
        stripped = line.rstrip("\r\n")
        if stripped.startswith(">"):
            if name is not None:
                records.append(
                    FastxRecord(name, _check_sequence("".join(parts).upper(), path, start))
                )
            rest = stripped[1:].split()
            name = rest[0] if rest else ""
            if not name:
                raise FormatError(path, offset, "empty FASTA header")
            parts = []
            start = offset + len(line)
        elif stripped:
            if name is None:
                raise FormatError(path, offset, "sequence before first header")
            parts.append(stripped)
        offset += len(line)
    if name is not None:
        records.append(FastxRecord(name, _check_sequence("".join(parts).upper(), path, start)))
    if not records:
        raise FormatError(path, 0, "no FASTA records")
    return records


def _read_fastq(text: str, path) -> list[FastxRecord]:
    lines = text.splitlines()
    records = []
    offset = 0
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        if i + 3 >= len(lines):
            raise FormatError(path, offset, "truncated FASTQ record")
        header, seq, plus, qual = (l.rstrip("\r") for l in lines[i : i + 4])
        if not header.startswith("@"):
            raise FormatError(path, offset, f"expected '@' header, got {header[:10]!r}")
        if not plus.startswith("+"):
            raise FormatError(path, offset, "missing '+' separator")
        name = header[1:].split()[0]
        seq = _check_sequence(seq.upper(), path, offset)
        if len(qual) != len(seq):
            raise FormatError(path, offset, "quality length mismatch")
        records.append(FastxRecord(name, seq, qual))
        i += 4
        offset += sum(len(lines[j]) + 1 for j in range(i - 4, min(i, len(lines))))
    if not records:
        raise FormatError(path, 0, "no FASTQ records")
    return records


def write_fasta(path, records) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for rec in records:
            fh.write(f">{rec.id}\n{rec.sequence}\n")


def write_fastq(path, records) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for rec in records:
            qual = rec.quality if rec.quality is not None else "I" * len(rec.sequence)
            fh.write(f"@{rec.id}\n{rec.sequence}\n+\n{qual}\n")


# --- truth TSV --------------------------------------------------------------


def write_truth_tsv(path, entries) -> None:
    """entries: iterable with read_id/start/strand/truth attributes."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("read_id\tstart\tstrand\tsequence\tdwells\n")
        for e in entries:
            dwells = np.diff(e.truth.dwell_starts)
            fh.write(
                f"{e.read_id}\t{e.start}\t{e.strand}\t{e.truth.sequence}\t"
                + ",".join(str(int(d)) for d in dwells)
                + "\n"
            )


@dataclass
class TruthEntry:
    read_id: str
    start: int
    strand: str
    truth: TruthRecord


def read_truth_tsv(path) -> list[TruthEntry]:
    entries = []
    offset = 0
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        if not header.startswith("read_id\t"):
            raise FormatError(path, 0, "missing truth TSV header")
        offset += len(header)
        for line in fh:
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 5:
                raise FormatError(path, offset, f"expected 5 fields, got {len(fields)}")
            read_id, start, strand, sequence, dwells = fields
            if strand not in "+-" or len(strand) != 1:
                raise FormatError(path, offset, f"bad strand {strand!r}")
            try:
                dwell_arr = np.array([int(d) for d in dwells.split(",")], dtype=np.int64)
            except ValueError:
                raise FormatError(path, offset, "malformed dwell list")
            if len(dwell_arr) != len(sequence):
                raise FormatError(path, offset, "dwell count != sequence length")
            starts = np.zeros(len(sequence) + 1, dtype=np.int64)
            np.cumsum(dwell_arr, out=starts[1:])
            entries.append(
                TruthEntry(read_id, int(start), strand, TruthRecord(sequence, starts))
            )
            offset += len(line)
    return entries
