import numpy as np
import pytest

import nanosoc.basecaller as bc
from nanosoc.tensor import conv1d_direct


def tiny_spec():
    return bc.CnnSpec(
        (
            bc.ConvLayerSpec(1, 4, 5, 1, 2),
            bc.ConvLayerSpec(4, 6, 3, 2, 1),
            bc.ConvLayerSpec(6, 5, 1, 1, 0),
        )
    )


class TestSpec:
    def test_param_count_single_layer(self):
        spec = bc.CnnSpec((bc.ConvLayerSpec(1, 4, 3),))
        assert bc.param_count(spec) == 16

    def test_default_spec_constraints(self):
        spec = bc.default_spec()
        assert len(spec.layers) == 6
        total = bc.param_count(spec)
        assert 405_000 <= total <= 495_000
        per_layer = sorted(
            (l.c_out * l.c_in * l.kernel + l.c_out for l in spec.layers), reverse=True
        )
        assert per_layer[0] + per_layer[1] >= 0.75 * total
        assert spec.receptive_field() >= 8 * 10  # 8 bases at mean dwell 10
        assert spec.n_classes == 5

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            bc.CnnSpec((bc.ConvLayerSpec(1, 4, 3), bc.ConvLayerSpec(5, 4, 3)))

    def test_out_len_composition(self):
        spec = bc.default_spec()
        assert spec.out_len(4000) == 1000  # total stride 4, padded kernels


class TestForward:
    def test_zero_weights_give_constant_frames(self):
        spec = tiny_spec()
        w = bc.Weights(
            [(np.zeros((l.c_out, l.c_in, l.kernel)), np.zeros(l.c_out)) for l in spec.layers]
        )
        x = np.random.default_rng(0).standard_normal(64).astype(np.float32)
        logits = bc.forward(spec, w, x)
        assert np.allclose(logits, logits[0])

    def test_relu_homogeneity_doubles_output(self):
        # doubling a ReLU-preceded layer's weights and biases doubles the
        # network output when the head is linear with zero bias
        rng = np.random.default_rng(1)
        spec = bc.CnnSpec((bc.ConvLayerSpec(1, 4, 5, 1, 2), bc.ConvLayerSpec(4, 5, 1, 1, 0)))
        w1 = rng.standard_normal((4, 1, 5)).astype(np.float32)
        b1 = rng.standard_normal(4).astype(np.float32)
        w2 = rng.standard_normal((5, 4, 1)).astype(np.float32)
        weights = bc.Weights([(w1, b1), (w2, np.zeros(5, dtype=np.float32))])
        doubled = bc.Weights([(2 * w1, 2 * b1), (w2, np.zeros(5, dtype=np.float32))])
        x = rng.standard_normal(40).astype(np.float32)
        out1 = bc.forward(spec, weights, x)
        out2 = bc.forward(spec, doubled, x)
        assert np.array_equal(out2, 2 * out1)

    def test_matches_conv1d_direct_chain(self):
        rng = np.random.default_rng(2)
        spec = tiny_spec()
        weights = bc.Weights.init(spec, seed=3)
        x = rng.standard_normal(80).astype(np.float32)
        act = x.reshape(1, -1)
        for li, (layer, (w, b)) in enumerate(zip(spec.layers, weights.layers)):
            act = conv1d_direct(act, w, b, stride=layer.stride, pad=layer.pad)
            if li < len(spec.layers) - 1:
                act = np.maximum(act, 0.0)
        ref = act.T
        out = bc.forward(spec, weights, x)
        assert np.allclose(out, ref, rtol=1e-4, atol=1e-4)

    def test_output_length_depends_only_on_input_length(self):
        spec = tiny_spec()
        rng = np.random.default_rng(4)
        for t in (32, 57, 128):
            shapes = set()
            for seed in range(3):
                w = bc.Weights.init(spec, seed=seed)
                x = rng.standard_normal(t).astype(np.float32)
                shapes.add(bc.forward(spec, w, x).shape)
            assert len(shapes) == 1
            assert shapes.pop() == (spec.out_len(t), 5)

    def test_too_short_signal_rejected(self):
        spec = bc.default_spec()
        w = bc.Weights.init(spec, 0)
        with pytest.raises(ValueError):
            bc.forward(spec, w, np.zeros(50, dtype=np.float32))


class TestDecode:
    def _logits_for(self, classes):
        out = np.full((len(classes), 5), -5.0)
        for t, c in enumerate(classes):
            out[t, c] = 5.0
        return out

    def test_collapse_rule(self):
        # A A blank C C -> AC
        logits = self._logits_for([0, 0, 4, 1, 1])
        assert bc.greedy_decode(logits) == "AC"

    def test_all_blank_empty(self):
        assert bc.greedy_decode(self._logits_for([4, 4, 4])) == ""

    def test_blank_separates_repeats(self):
        assert bc.greedy_decode(self._logits_for([0, 4, 0])) == "AA"

    def test_tie_breaks_to_lowest_class(self):
        logits = np.zeros((1, 5))
        assert bc.greedy_decode(logits) == "A"

    def test_idempotent_reconstruction(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            logits = rng.standard_normal((20, 5))
            seq = bc.greedy_decode(logits)
            assert "N" not in seq and set(seq) <= set("ACGT")
            if not seq:
                continue
            frames = []
            prev = None
            for ch in seq:
                c = "ACGT".index(ch)
                if prev == c:
                    frames.append(4)  # blank separates equal neighbors
                frames.append(c)
                prev = c
            assert bc.greedy_decode(self._logits_for(frames)) == seq

    def test_quality_strings(self):
        logits = self._logits_for([0, 4, 2])
        seq, quals = bc.greedy_decode_with_quality(logits)
        assert seq == "AG"
        assert len(quals) == 2
        assert all(2 <= q <= 40 for q in quals)
        assert len(bc.phred_string(quals)) == 2


class TestReadIdentity:
    def test_identical(self):
        assert bc.read_identity("ACGT", "ACGT") == 1.0

    def test_empty_call(self):
        assert bc.read_identity("", "ACGT") == 0.0

    def test_gattaca(self):
        assert bc.read_identity("GATTACA", "GCATGCU") == pytest.approx(1 - 4 / 7)

    def test_empty_truth_rejected(self):
        with pytest.raises(ValueError):
            bc.read_identity("ACGT", "")


class TestQuantizedPath:
    def test_quantized_forward_close_to_float(self):
        spec = tiny_spec()
        w = bc.Weights.init(spec, seed=7)
        qw = bc.QuantizedWeights.quantize(w)
        x = np.random.default_rng(8).standard_normal(60).astype(np.float32)
        out_f = bc.forward(spec, w, x)
        out_q = bc.forward(spec, qw, x)
        # int8 per-tensor weight quantization keeps activations close
        scale = np.abs(out_f).max()
        assert np.abs(out_f - out_q).max() < 0.1 * scale

    def test_nbytes_counts_int8(self):
        spec = tiny_spec()
        qw = bc.QuantizedWeights.quantize(bc.Weights.init(spec, 0))
        weights_elems = sum(l.c_out * l.c_in * l.kernel for l in spec.layers)
        bias_bytes = sum(l.c_out * 4 for l in spec.layers)
        assert qw.nbytes() == weights_elems + bias_bytes


class TestTraining:
    def _dataset(self, n=3, bases=120):
        from nanosoc import pipeline, signal_sim

        pore = signal_sim.gen_pore_model(123, 2)
        rng = np.random.default_rng(6)
        out = []
        for i in range(n):
            seq = "".join("ACGT"[c] for c in rng.integers(0, 4, size=bases))
            sig, truth = signal_sim.synthesize(seq, pore, seed=(5, i))
            out.append(
                bc.TrainSample(
                    pipeline.normalize_signal(sig).samples, truth.sequence, truth.dwell_starts
                )
            )
        return out

    def test_one_step_decreases_loss(self):
        spec = tiny_spec()
        data = self._dataset(n=1)
        cfg = bc.TrainConfig(epochs=1, batch_size=1, warmup_steps=1)
        chunks = bc._make_chunks(data, spec, cfg.chunk_samples, 0)
        seg, lab = chunks[0]
        fresh = bc.Weights.init(spec, seed=0)

        def loss_of(w):
            logits = bc.forward(spec, w, seg)
            loss, _ = bc.ctc_loss(logits, lab)
            return loss

        before = loss_of(fresh)
        trained = bc.train(
            [bc.TrainSample(seg, lab, None)], spec, cfg, seed=0
        )
        assert loss_of(trained) < before

    def test_same_seed_identical_weights(self):
        spec = tiny_spec()
        data = self._dataset(n=2)
        cfg = bc.TrainConfig(epochs=1, batch_size=2)
        w1 = bc.train(data, spec, cfg, seed=11)
        w2 = bc.train(data, spec, cfg, seed=11)
        assert w1.equals(w2)

    def test_training_log_lines(self):
        spec = tiny_spec()
        data = self._dataset(n=2)
        lines = []
        bc.train(data, spec, bc.TrainConfig(epochs=2, batch_size=4), seed=0, log=lines.append)
        assert any(line.startswith("epoch=1 batch=0 loss=") for line in lines)
        assert any("epoch=2 done" in line for line in lines)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            bc.train([], tiny_spec(), bc.TrainConfig(epochs=1), seed=0)
