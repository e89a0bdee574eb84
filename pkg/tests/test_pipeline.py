import random

import numpy as np
import pytest

import nanosoc.basecaller as bc
from nanosoc.dna import random_genome, revcomp
from nanosoc.formats import FastxRecord
from nanosoc.perf import WorkloadTrace
from nanosoc.pipeline import (
    Barcode,
    ConfigurationError,
    DetectParams,
    Primer,
    chunk_signal,
    demultiplex,
    detect_pathogen,
    filter_reads,
    normalize_signal,
    trim_primer,
)
from nanosoc.seed_index import MapParams, build_index
from nanosoc.signal_sim import RawSignal


def reads_of(*seqs):
    return [FastxRecord(f"r{i}", s) for i, s in enumerate(seqs)]


class TestDemultiplex:
    def test_single_mismatch_assigned(self):
        reads = reads_of("ACGAGGGGGGGG")
        out = demultiplex(reads, [Barcode("b1", "ACGT")], max_hamming=1)
        assert out["r0"] == "b1"

    def test_tie_is_unassigned(self):
        reads = reads_of("AAAAGGGG")
        barcodes = [Barcode("x", "AAAT"), Barcode("y", "AAAC")]
        out = demultiplex(reads, barcodes, max_hamming=2)
        assert out["r0"] is None

    def test_all_above_threshold_unassigned(self):
        reads = reads_of("TTTTTTTT")
        out = demultiplex(reads, [Barcode("b", "AAAA")], max_hamming=2)
        assert out["r0"] is None

    def test_read_shorter_than_barcode(self):
        reads = reads_of("ACG")
        out = demultiplex(reads, [Barcode("b", "ACGT")], max_hamming=3)
        assert out["r0"] is None

    def test_planted_barcodes_fully_recovered(self):
        rng = random.Random(0)
        barcodes = []
        # random barcode set with pairwise Hamming >= 3
        while len(barcodes) < 6:
            cand = "".join(rng.choice("ACGT") for _ in range(8))
            if all(sum(a != b for a, b in zip(cand, x.sequence)) >= 3 for x in barcodes):
                barcodes.append(Barcode(f"b{len(barcodes)}", cand))
        reads = []
        want = {}
        for i in range(200):
            b = rng.choice(barcodes)
            seq = list(b.sequence + "".join(rng.choice("ACGT") for _ in range(40)))
            if rng.random() < 0.5:  # up to one error in the barcode window
                pos = rng.randrange(len(b.sequence))
                seq[pos] = rng.choice([c for c in "ACGT" if c != seq[pos]])
            reads.append(FastxRecord(f"r{i}", "".join(seq)))
            want[f"r{i}"] = b.id
        out = demultiplex(reads, barcodes, max_hamming=1)
        assert out == want

    def test_permutation_invariance(self):
        rng = random.Random(1)
        barcodes = [Barcode(f"b{i}", random_genome(8, i + 50)) for i in range(5)]
        reads = [FastxRecord(f"r{i}", random_genome(60, i + 100)) for i in range(50)]
        out1 = demultiplex(reads, barcodes, max_hamming=2)
        out2 = demultiplex(reads, list(reversed(barcodes)), max_hamming=2)
        assert out1 == out2

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            demultiplex(reads_of("ACGT"), [Barcode("b", "ACGT"), Barcode("b", "TTTT")], 1)

    def test_barcode_validation(self):
        with pytest.raises(ValueError):
            Barcode("b", "ACG")  # too short
        with pytest.raises(ValueError):
            Barcode("b", "ACGN")


class TestTrimPrimer:
    PRIMER = Primer("p1", "ACGTACGTGG")

    def test_exact_prefix_removed(self):
        body = "TTTTGGGGCCCCAAAA"
        trimmed, report = trim_primer(self.PRIMER.sequence + body, [self.PRIMER], 20, 0)
        assert trimmed == body
        assert report.leading.primer_id == "p1"
        assert report.leading.distance == 0

    def test_no_primer_unchanged(self):
        seq = "TTGGCCAATTGGCCAATTGG"
        trimmed, report = trim_primer(seq, [self.PRIMER], 20, 1)
        assert trimmed == seq
        assert report.leading is None and report.trailing is None

    def test_one_substitution_trims_same(self):
        body = "TTTTGGGGCCCCAAAA"
        mutated = "ACGTAAGTGG"  # one substitution in the primer
        trimmed, report = trim_primer(mutated + body, [self.PRIMER], 20, 1)
        assert trimmed == body
        assert report.leading.distance == 1

    def test_trailing_trim(self):
        body = "TTTTGGGGCCCCAAAA"
        trimmed, report = trim_primer(body + self.PRIMER.sequence, [self.PRIMER], 20, 0)
        assert trimmed == body
        assert report.trailing.primer_id == "p1"

    def test_idempotent(self):
        rng = random.Random(2)
        for _ in range(20):
            body = random_genome(80, rng.randrange(10_000))
            seq = self.PRIMER.sequence + body + self.PRIMER.sequence
            once, _ = trim_primer(seq, [self.PRIMER], 30, 1)
            twice, rep = trim_primer(once, [self.PRIMER], 30, 1)
            assert twice == once

    def test_window_must_cover_primer(self):
        with pytest.raises(ValueError):
            trim_primer("ACGT", [self.PRIMER], 4, 1)


class TestChunkSignal:
    def test_no_overlap(self):
        chunks = chunk_signal(np.arange(100.0), 50, 0)
        assert [c.start for c in chunks] == [0, 50]
        assert all(len(c.samples) == 50 for c in chunks)

    def test_overlap_starts(self):
        chunks = chunk_signal(np.arange(100.0), 60, 20, min_len=1)
        assert [c.start for c in chunks] == [0, 40, 80]
        assert len(chunks[-1].samples) == 20

    def test_reconstruction(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 400))
            chunk_len = int(rng.integers(2, 80))
            overlap = int(rng.integers(0, chunk_len))
            samples = rng.standard_normal(n).astype(np.float32)
            chunks = chunk_signal(samples, chunk_len, overlap, min_len=1)
            parts = [chunks[0].samples] + [c.samples[overlap:] for c in chunks[1:]]
            rebuilt = np.concatenate([p for p in parts if len(p)]) if parts else samples[:0]
            assert np.array_equal(rebuilt, samples)

    def test_min_len_drops_tail(self):
        chunks = chunk_signal(np.arange(100.0), 60, 20, min_len=40)
        assert [c.start for c in chunks] == [0, 40]

    def test_validation(self):
        with pytest.raises(ValueError):
            chunk_signal(np.arange(10.0), 0)
        with pytest.raises(ValueError):
            chunk_signal(np.arange(10.0), 5, 5)


class TestFilterReads:
    def test_min_len_zero_keeps_all(self):
        reads = reads_of("A" * 10, "A" * 3)
        kept, log = filter_reads(reads, min_len=0)
        assert len(kept) == 2 and not log

    def test_all_too_short(self):
        reads = reads_of("AC", "GT", "AA")
        kept, log = filter_reads(reads, min_len=5)
        assert kept == []
        assert len(log) == 3
        assert all(reason.startswith("too_short") for _id, reason in log)

    def test_matches_predicate_scan(self):
        rng = random.Random(4)
        reads = [FastxRecord(f"r{i}", random_genome(rng.randrange(1, 40), i)) for i in range(100)]
        kept, log = filter_reads(reads, min_len=20)
        expect = [r for r in reads if len(r.sequence) >= 20]
        assert [r.id for r in kept] == [r.id for r in expect]
        assert len(log) == 100 - len(expect)

    def test_identity_filter_with_truth(self):
        reads = reads_of("ACGTACGT", "TTTTTTTT")
        truths = {"r0": "ACGTACGT", "r1": "ACGTACGT"}
        kept, log = filter_reads(reads, min_identity=0.9, truths=truths)
        assert [r.id for r in kept] == ["r0"]
        assert log[0][0] == "r1"


class TestNormalize:
    def test_worked_example(self):
        sig = RawSignal(np.array([1, 2, 3, 4, 100], dtype=np.float32), 4000, "s")
        out = normalize_signal(sig)
        assert np.allclose(out.samples, [-2, -1, 0, 1, 97])

    def test_constant_flagged(self):
        sig = RawSignal(np.full(10, 5.0, dtype=np.float32), 4000, "s")
        out = normalize_signal(sig)
        assert np.allclose(out.samples, 0.0)
        assert "constant-signal" in out.flags

    def test_output_statistics(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            sig = RawSignal(
                (rng.standard_normal(101) * 7 + 3).astype(np.float32), 4000, "s"
            )
            out = normalize_signal(sig)
            med = float(np.median(out.samples))
            mad = float(np.median(np.abs(out.samples - med)))
            assert abs(med) < 1e-5
            assert abs(mad - 1.0) < 1e-5


def _erred_read(rng, genome, length=300, sub=0.05, indel=0.02):
    origin = rng.randrange(0, len(genome) - length)
    out = []
    for ch in genome[origin : origin + length]:
        r = rng.random()
        if r < sub:
            out.append(rng.choice([c for c in "ACGT" if c != ch]))
        elif r < sub + indel / 2:
            continue  # deletion
        elif r < sub + indel:
            out.append(ch)
            out.append(rng.choice("ACGT"))
        else:
            out.append(ch)
    return "".join(out)


class TestDetect:
    def setup_method(self):
        self.genome = random_genome(30000, 77)
        self.index = build_index(self.genome)

    def test_zero_reads(self):
        report = detect_pathogen([], self.index, self.genome)
        assert report.n_reads_total == 0
        assert report.mapped_fraction == 0.0
        assert not report.detected

    def test_pathogen_reads_detected(self):
        rng = random.Random(6)
        reads = [FastxRecord(f"r{i}", _erred_read(rng, self.genome)) for i in range(40)]
        report = detect_pathogen(reads, self.index, self.genome)
        assert report.detected
        assert report.n_reads_mapped >= 36
        assert report.median_identity >= 0.85

    def test_background_reads_not_detected(self):
        rng = random.Random(7)
        background = random_genome(30000, 999)
        reads = [FastxRecord(f"r{i}", _erred_read(rng, background)) for i in range(40)]
        report = detect_pathogen(reads, self.index, self.genome)
        assert not report.detected

    def test_reference_reconstructed_from_index(self):
        rng = random.Random(8)
        reads = [FastxRecord(f"r{i}", _erred_read(rng, self.genome)) for i in range(10)]
        report = detect_pathogen(reads, self.index)  # no explicit reference
        assert report.detected

    def test_ed_mode(self):
        rng = random.Random(9)
        small = self.genome[:2000]
        idx = build_index(small)
        reads = [FastxRecord(f"r{i}", _erred_read(rng, small, length=120)) for i in range(10)]
        params = DetectParams(mode="ed")
        report = detect_pathogen(reads, idx, small, params=params)
        assert report.detected
        trace = WorkloadTrace()
        detect_pathogen(reads, idx, small, params=params, trace=trace)
        cells = trace.stage("ed_compare").dp_cells
        assert cells == sum(len(r.sequence) * len(small) for r in reads)

    def test_thread_count_does_not_change_result(self):
        rng = random.Random(10)
        reads = [FastxRecord(f"r{i}", _erred_read(rng, self.genome)) for i in range(20)]
        t1 = WorkloadTrace()
        t8 = WorkloadTrace()
        r1 = detect_pathogen(reads, self.index, self.genome, trace=t1, threads=1)
        r8 = detect_pathogen(reads, self.index, self.genome, trace=t8, threads=8)
        assert r1.to_dict() == r8.to_dict()
        assert t1.to_dict() == t8.to_dict()

    def test_signal_input_requires_weights(self):
        sig = RawSignal(np.zeros(500, dtype=np.float32) + 1.0, 4000, "s0")
        with pytest.raises(ConfigurationError):
            detect_pathogen([sig], self.index, self.genome)

    def test_mapping_trace_counts_match_report(self):
        rng = random.Random(11)
        reads = [FastxRecord(f"r{i}", _erred_read(rng, self.genome)) for i in range(10)]
        trace = WorkloadTrace()
        detect_pathogen(reads, self.index, self.genome, trace=trace)
        st = trace.stage("map")
        assert st.dp_cells == sum(n * m * c for (n, m), c in st.ed_pairs.items())
        assert st.dp_cells > 0
