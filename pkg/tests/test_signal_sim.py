import numpy as np
import pytest

from nanosoc.dna import revcomp
from nanosoc.signal_sim import (
    DEFAULT_PORE_SEED,
    PoreModel,
    gen_dataset,
    gen_pore_model,
    synthesize,
)


class TestPoreModel:
    def test_deterministic(self):
        a = gen_pore_model(5, 4)
        b = gen_pore_model(5, 4)
        assert np.array_equal(a.level_mean, b.level_mean)
        assert np.array_equal(a.level_std, b.level_std)

    def test_table_sizes(self):
        assert gen_pore_model(0, 1).level_mean.shape == (4,)
        assert gen_pore_model(0, 6).level_mean.shape == (4096,)

    def test_normalized_units(self):
        pore = gen_pore_model(1, 6)
        assert abs(pore.level_mean.mean()) < 1e-9
        assert abs(pore.level_mean.std() - 1.0) < 1e-9

    def test_distinct_levels(self):
        pore = gen_pore_model(2, 6)
        assert len(np.unique(pore.level_mean)) == 4096

    def test_k_range(self):
        with pytest.raises(ValueError):
            gen_pore_model(0, 0)
        with pytest.raises(ValueError):
            gen_pore_model(0, 9)


class TestSynthesize:
    def test_zero_noise_constant_homopolymer(self):
        pore = gen_pore_model(3, 1)
        sig, truth = synthesize("AAAA", pore, noise_scale=0.0, seed=1)
        level = pore.level_mean[0]  # k=1 context of A is always A
        assert np.allclose(sig.samples, level, atol=1e-6)
        assert truth.sequence == "AAAA"

    def test_deterministic(self):
        pore = gen_pore_model(4, 3)
        s1, t1 = synthesize("ACGTACGTACGT", pore, seed=9)
        s2, t2 = synthesize("ACGTACGTACGT", pore, seed=9)
        assert np.array_equal(s1.samples, s2.samples)
        assert np.array_equal(t1.dwell_starts, t2.dwell_starts)

    def test_sample_count_3sigma(self):
        # geometric dwells: var per base = (1-p)/p^2 with p = 1/10
        rng = np.random.default_rng(11)
        seq = "".join("ACGT"[i] for i in rng.integers(0, 4, size=10000))
        pore = gen_pore_model(6, 6)
        sig, _ = synthesize(seq, pore, seed=13)
        sigma = np.sqrt(10000 * 90.0)
        assert abs(len(sig.samples) - 100_000) <= 3 * sigma

    def test_dwell_boundaries_partition_signal(self):
        pore = gen_pore_model(7, 2)
        sig, truth = synthesize("ACGTGTCA", pore, seed=3)
        starts = truth.dwell_starts
        assert starts[0] == 0
        assert starts[-1] == len(sig.samples)
        assert (np.diff(starts) >= 1).all()

    def test_strand_symmetric_lengths(self):
        pore = gen_pore_model(8, 4)
        seq = "ACGTTGCAACGGTTAA"
        s1, _ = synthesize(seq, pore, seed=21)
        s2, _ = synthesize(revcomp(seq), pore, seed=21)
        assert len(s1.samples) == len(s2.samples)  # dwells depend on seed only

    def test_zero_noise_invertible_k1(self):
        pore = gen_pore_model(5, 1)
        seq = "ACGTGGTTCAAC"
        sig, truth = synthesize(seq, pore, noise_scale=0.0, seed=2)
        recovered = []
        for start, _end in truth.boundaries():
            level = sig.samples[start]
            recovered.append("ACGT"[int(np.argmin(np.abs(pore.level_mean - level)))])
        assert "".join(recovered) == seq

    def test_rejects_bad_symbols(self):
        pore = gen_pore_model(5, 2)
        with pytest.raises(ValueError):
            synthesize("ACGX", pore)

    def test_too_short_rejected(self):
        pore = gen_pore_model(5, 6)
        with pytest.raises(ValueError):
            synthesize("ACG", pore)


class TestGenDataset:
    def test_single_read(self, tmp_path):
        entries = gen_dataset(2000, 1, (200, 0), tmp_path / "d", seed=1)
        assert len(entries) == 1
        assert (tmp_path / "d" / "reads" / "read_000000.nsig").exists()
        assert (tmp_path / "d" / "truth.tsv").exists()
        assert (tmp_path / "d" / "genome.fasta").exists()

    def test_byte_identical_across_runs(self, tmp_path):
        gen_dataset(1500, 3, (150, 10), tmp_path / "a", seed=7)
        gen_dataset(1500, 3, (150, 10), tmp_path / "b", seed=7)
        for name in ["truth.tsv", "genome.fasta", "reads/read_000001.nsig"]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_reverse_strand_matches_revcomp(self, tmp_path):
        from nanosoc import formats

        entries = gen_dataset(3000, 20, (120, 0), tmp_path / "d", seed=3)
        genome = formats.read_fastx(tmp_path / "d" / "genome.fasta")[0].sequence
        minus = [e for e in entries if e.strand == "-"]
        assert minus, "expected at least one reverse-strand read at this seed"
        for e in minus:
            window = genome[e.start : e.start + len(e.truth.sequence)]
            assert e.truth.sequence == revcomp(window)
        for e in entries:
            if e.strand == "+":
                assert e.truth.sequence == genome[e.start : e.start + len(e.truth.sequence)]

    def test_n_bases_skipped(self, tmp_path):
        genome = "ACGT" * 30 + "N" * 5 + "ACGT" * 30
        entries = gen_dataset(genome, 10, (50, 0), tmp_path / "d", seed=5)
        from nanosoc import formats

        for e in entries:
            assert "N" not in e.truth.sequence

    def test_dispersion_validation(self):
        pore = gen_pore_model(DEFAULT_PORE_SEED, 2)
        with pytest.raises(ValueError):
            PoreModel(2, pore.level_mean, pore.level_std, mean_dwell=10, dwell_dispersion=0)
