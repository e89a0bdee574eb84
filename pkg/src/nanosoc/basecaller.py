"""Six-layer convolutional basecaller.

Architecture, float32 forward inference, CTC training with hand-derived
gradients (im2col + GEMM with explicit backprop, Adam updates), greedy
decoding, and the post-training int8 weight quantization path.

The shipped default architecture lives in configs/cnn_default.json:
six conv layers with ReLU between them, total stride 4, a 5-class head
(A, C, G, T, blank), ~419K parameters with ~84% of them in the two
largest layers, and a 105-sample receptive field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import ctc
from .dna import BASES
from .tensor import QuantizedMatrix, dequantize, im2col, quantize_int8

BLANK = 4
N_CLASSES = 5
_PHRED_OFFSET = 33


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; message carries epoch/batch."""


@dataclass(frozen=True)
class ConvLayerSpec:
    c_in: int
    c_out: int
    kernel: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if min(self.c_in, self.c_out, self.kernel, self.stride) < 1 or self.pad < 0:
            raise ValueError(f"bad layer geometry: {self}")

    def out_len(self, t: int) -> int:
        return (t + 2 * self.pad - self.kernel) // self.stride + 1


@dataclass(frozen=True)
class CnnSpec:
    layers: tuple[ConvLayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("spec needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.c_out != cur.c_in:
                raise ValueError(f"channel mismatch between {prev} and {cur}")

    @property
    def n_classes(self) -> int:
        return self.layers[-1].c_out

    def out_len(self, t: int) -> int:
        for layer in self.layers:
            t = layer.out_len(t)
            if t < 1:
                raise ValueError("input too short for this architecture")
        return t

    def total_stride(self) -> int:
        s = 1
        for layer in self.layers:
            s *= layer.stride
        return s

    def receptive_field(self) -> int:
        rf = 1
        jump = 1
        for layer in self.layers:
            rf += (layer.kernel - 1) * jump
            jump *= layer.stride
        return rf


def param_count(spec: CnnSpec) -> int:
    return sum(l.c_out * l.c_in * l.kernel + l.c_out for l in spec.layers)


def default_spec() -> CnnSpec:
    text = resources.files("nanosoc.configs").joinpath("cnn_default.json").read_text()
    doc = json.loads(text)
    return CnnSpec(tuple(ConvLayerSpec(**layer) for layer in doc["layers"]))


class Weights:
    """Per-layer (weight, bias) float32 arrays matching a CnnSpec."""

    def __init__(self, layers):
        self.layers = [
            (np.asarray(w, dtype=np.float32), np.asarray(b, dtype=np.float32))
            for w, b in layers
        ]
        for w, b in self.layers:
            if w.ndim != 3 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ValueError("weight/bias shape mismatch")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("weights must be finite")

    @classmethod
    def init(cls, spec: CnnSpec, seed: int = 0) -> "Weights":
        rng = np.random.default_rng(seed)
        layers = []
        for l in spec.layers:
            fan_in = l.c_in * l.kernel
            w = rng.standard_normal((l.c_out, l.c_in, l.kernel)) * math.sqrt(2.0 / fan_in)
            layers.append((w.astype(np.float32), np.zeros(l.c_out, dtype=np.float32)))
        return cls(layers)

    def check_shapes(self, spec: CnnSpec) -> None:
        if len(self.layers) != len(spec.layers):
            raise ValueError("layer count mismatch")
        for (w, _), l in zip(self.layers, spec.layers):
            if w.shape != (l.c_out, l.c_in, l.kernel):
                raise ValueError(f"weight shape {w.shape} does not match {l}")

    def copy(self) -> "Weights":
        return Weights([(w.copy(), b.copy()) for w, b in self.layers])

    def equals(self, other: "Weights") -> bool:
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(w1, w2) and np.array_equal(b1, b2)
            for (w1, b1), (w2, b2) in zip(self.layers, other.layers)
        )


class QuantizedWeights:
    """int8 per-tensor weight quantization; biases stay float32."""

    def __init__(self, qmats, biases, shapes):
        self.qmats: list[QuantizedMatrix] = qmats
        self.biases: list[np.ndarray] = biases
        self.shapes = shapes  # per-layer (c_out, c_in, kernel)

    @classmethod
    def quantize(cls, weights: Weights) -> "QuantizedWeights":
        qmats, biases, shapes = [], [], []
        for w, b in weights.layers:
            c_out = w.shape[0]
            qmats.append(quantize_int8(w.reshape(c_out, -1)))
            biases.append(b.copy())
            shapes.append(w.shape)
        return cls(qmats, biases, shapes)

    def nbytes(self) -> int:
        return sum(q.data.size for q in self.qmats) + sum(b.nbytes for b in self.biases)


def _weight_matrices(weights) -> list[tuple[np.ndarray, np.ndarray]]:
    """(c_out, c_in*kernel) float32 matrices for either weight container."""
    if isinstance(weights, QuantizedWeights):
        return [(dequantize(q), b) for q, b in zip(weights.qmats, weights.biases)]
    return [(w.reshape(w.shape[0], -1), b) for w, b in weights.layers]


def _signal_array(signal) -> np.ndarray:
    samples = getattr(signal, "samples", signal)
    return np.asarray(samples, dtype=np.float32)


def forward(spec: CnnSpec, weights, signal, trace=None, stage: str = "basecall") -> np.ndarray:
    """Run the network over a single-channel signal; returns (T', C) logits.

    weights may be a Weights or QuantizedWeights. trace, when given, is
    any object with add_gemm(stage, m, k, n); it receives the lowered
    GEMM shape of every layer.
    """
    x = _signal_array(signal)
    if x.ndim != 1:
        raise ValueError("signal must be one-dimensional")
    if x.size < spec.receptive_field():
        raise ValueError(
            f"signal too short: {x.size} samples < receptive field {spec.receptive_field()}"
        )
    mats = _weight_matrices(weights)
    if len(mats) != len(spec.layers):
        raise ValueError("layer count mismatch")
    act = x.reshape(1, -1)
    for li, (layer, (w_mat, b)) in enumerate(zip(spec.layers, mats)):
        cols = im2col(act, layer.kernel, layer.stride, layer.pad)
        if trace is not None:
            trace.add_gemm(stage, layer.c_out, w_mat.shape[1], cols.shape[1])
        z = w_mat @ cols + b[:, None]
        act = np.maximum(z, 0.0) if li < len(spec.layers) - 1 else z
    return act.T  # (T', n_classes)


def ctc_loss(logits, labels) -> tuple[float, np.ndarray]:
    """CTC negative log likelihood and exact gradient for a base-string label."""
    if isinstance(labels, str):
        labels = [BASES.index(c) for c in labels]
    return ctc.ctc_loss(logits, labels, blank=BLANK)


def greedy_decode(logits) -> str:
    """Per-frame argmax (ties to the lowest class), collapse repeats, drop blanks."""
    seq, _ = greedy_decode_with_quality(logits)
    return seq


def greedy_decode_with_quality(logits) -> tuple[str, list[int]]:
    """Greedy decode plus a per-base phred score from the run's best frame."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        return "", []
    ids = np.argmax(logits, axis=1)
    probs = np.exp(ctc.log_softmax(logits))
    seq = []
    quals: list[int] = []
    prev = -1
    for t, c in enumerate(ids):
        c = int(c)
        if c != prev and c != BLANK:
            seq.append(BASES[c])
            quals.append(t)
        prev = c
    # run start frames -> max emission probability over each run
    out_q = []
    for idx, start in enumerate(quals):
        stop = quals[idx + 1] if idx + 1 < len(quals) else len(ids)
        c = BASES.index(seq[idx])
        p = float(probs[start:stop, c][ids[start:stop] == c].max())
        q = int(min(40, max(2, round(-10.0 * math.log10(max(1e-9, 1.0 - p))))))
        out_q.append(q)
    return "".join(seq), out_q


def phred_string(quals: list[int]) -> str:
    return "".join(chr(_PHRED_OFFSET + q) for q in quals)


def read_identity(called: str, truth: str) -> float:
    """1 - edit_distance / max length; 0 for an empty call."""
    from .ed_engine import edit_distance

    if not truth:
        raise ValueError("truth sequence must be non-empty")
    if not called:
        return 0.0
    return 1.0 - edit_distance(called, truth) / max(len(called), len(truth))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 16
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    chunk_samples: int = 1248  # snapped down to dwell boundaries
    chunk_overlap_bases: int = 8  # consecutive chunks share this many bases
    warmup_steps: int = 100
    # wall-clock escape hatch; breaks run-to-run determinism when set
    time_budget_s: float | None = None


@dataclass
class TrainSample:
    samples: np.ndarray  # normalized signal, float32
    sequence: str
    dwell_starts: np.ndarray | None = None


def _make_chunks(dataset, spec: CnnSpec, target: int, overlap_bases: int = 0):
    """Cut reads into dwell-aligned chunks of at most target samples.

    Consecutive chunks share overlap_bases so every base is interior to
    some chunk. Chunks shorter than the receptive field or infeasible
    for CTC are dropped.
    """
    min_samples = spec.receptive_field()

    def usable(seg, labels):
        return (
            min_samples <= seg.size <= target
            and labels
            and spec.out_len(seg.size) >= ctc.min_frames(labels)
        )

    chunks = []
    for sample in dataset:
        sig = np.asarray(sample.samples, dtype=np.float32)
        if sample.dwell_starts is None:
            if sig.size >= min_samples and sample.sequence:
                chunks.append((sig[:target], sample.sequence))
            continue
        b = np.asarray(sample.dwell_starts, dtype=np.int64)
        n_bases = len(sample.sequence)
        i = 0
        while i < n_bases:
            j = int(np.searchsorted(b, b[i] + target, side="right")) - 1
            j = min(max(j, i + 1), n_bases)
            seg = sig[b[i] : b[j]]
            labels = sample.sequence[i:j]
            if usable(seg, labels):
                chunks.append((seg, labels))
            if j >= n_bases:
                break
            i = max(j - overlap_bases, i + 1)
    return chunks


def _im2col_cbt(x: np.ndarray, kernel: int, stride: int, pad: int):
    """x (C, B, T) -> cols (C*kernel, B*T_out); zero pad on both time ends."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=2)[:, :, ::stride, :]
    c, b, t_out = win.shape[:3]
    cols = win.transpose(0, 3, 1, 2).reshape(c * kernel, b * t_out)
    return np.ascontiguousarray(cols), t_out


class _BatchNet:
    """Batched forward/backward over fixed-length chunks.

    Activations live in (C, B, T) layout so the (C, B*T) GEMM views are
    plain reshapes, and the input gradient is a per-tap strided
    accumulation rather than a scatter.
    """

    def __init__(self, spec: CnnSpec):
        self.spec = spec

    def forward(self, weights: Weights, x: np.ndarray):
        """x (B, W) -> logits (C, B, T') plus per-layer caches."""
        b = x.shape[0]
        act = np.ascontiguousarray(x[None, :, :])  # (1, B, W)
        caches = []
        for li, (layer, (w, bias)) in enumerate(zip(self.spec.layers, weights.layers)):
            t_in = act.shape[2]
            cols, t_out = _im2col_cbt(act, layer.kernel, layer.stride, layer.pad)
            w_mat = w.reshape(layer.c_out, -1)
            z = w_mat @ cols + bias[:, None]  # (c_out, B*T_out)
            caches.append((cols, z, t_in, t_out))
            nxt = np.maximum(z, 0.0) if li < len(self.spec.layers) - 1 else z
            act = nxt.reshape(layer.c_out, b, t_out)
        return act, caches

    def backward(self, weights: Weights, caches, d_logits: np.ndarray):
        """d_logits (C, B, T') -> per-layer (dW, db) gradients."""
        b = d_logits.shape[1]
        n_layers = len(self.spec.layers)
        grads = [None] * n_layers
        dz = d_logits.reshape(d_logits.shape[0], -1).astype(np.float32)
        for li in range(n_layers - 1, -1, -1):
            layer = self.spec.layers[li]
            cols, z, t_in, t_out = caches[li]
            if li < n_layers - 1:
                dz = dz * (z > 0)
            w_mat = weights.layers[li][0].reshape(layer.c_out, -1)
            dw = (dz @ cols.T).reshape(layer.c_out, layer.c_in, layer.kernel)
            db = dz.sum(axis=1)
            grads[li] = (dw, db)
            if li == 0:
                break
            dcols = w_mat.T @ dz  # (c_in*kernel, B*T_out)
            dcr = dcols.reshape(layer.c_in, layer.kernel, b, t_out)
            t_pad = t_in + 2 * layer.pad
            dxp = np.zeros((layer.c_in, b, t_pad), dtype=np.float32)
            span = (t_out - 1) * layer.stride + 1
            for tap in range(layer.kernel):
                dxp[:, :, tap : tap + span : layer.stride] += dcr[:, tap]
            dx = dxp[:, :, layer.pad : layer.pad + t_in] if layer.pad else dxp
            dz = dx.reshape(layer.c_in, -1)
        return grads


class _Adam:
    def __init__(self, weights: Weights, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in weights.layers]
        self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in weights.layers]
        self.step = 0

    def update(self, weights: Weights, grads) -> None:
        cfg = self.cfg
        self.step += 1
        lr = cfg.lr * min(1.0, self.step / max(1, cfg.warmup_steps))
        if cfg.clip_norm:
            total = math.sqrt(
                sum(float((g**2).sum()) + float((gb**2).sum()) for g, gb in grads)
            )
            if total > cfg.clip_norm:
                scale = cfg.clip_norm / total
                grads = [(g * scale, gb * scale) for g, gb in grads]
        c1 = 1.0 - cfg.beta1**self.step
        c2 = 1.0 - cfg.beta2**self.step
        for li, ((gw, gb), (w, b)) in enumerate(zip(grads, weights.layers)):
            mw, mb = self.m[li]
            vw, vb = self.v[li]
            mw *= cfg.beta1
            mw += (1 - cfg.beta1) * gw
            mb *= cfg.beta1
            mb += (1 - cfg.beta1) * gb
            vw *= cfg.beta2
            vw += (1 - cfg.beta2) * gw**2
            vb *= cfg.beta2
            vb += (1 - cfg.beta2) * gb**2
            w -= lr * (mw / c1) / (np.sqrt(vw / c2) + cfg.eps)
            b -= lr * (mb / c1) / (np.sqrt(vb / c2) + cfg.eps)


def train(dataset, spec: CnnSpec, hyper: TrainConfig = TrainConfig(), seed: int = 0, log=None) -> Weights:
    """Train weights on TrainSamples with Adam over dwell-aligned chunks.

    Deterministic given the seed and a fixed dataset order. log, when
    given, receives one line per batch and per epoch. Raises
    TrainingDiverged on a non-finite loss.
    """
    import time

    if not dataset:
        raise ValueError("dataset must be non-empty")
    emit = log if log is not None else (lambda line: None)
    chunks = _make_chunks(dataset, spec, hyper.chunk_samples, hyper.chunk_overlap_bases)
    if not chunks:
        raise ValueError("no usable training chunks (reads too short?)")
    width = hyper.chunk_samples
    x_all = np.zeros((len(chunks), width), dtype=np.float32)
    lens = np.zeros(len(chunks), dtype=np.int64)
    labels = []
    for i, (seg, lab) in enumerate(chunks):
        x_all[i, : seg.size] = seg
        lens[i] = seg.size
        labels.append(lab)

    from .dna import encode

    label_codes = [encode(lab) for _seg, lab in chunks]
    frame_lens = np.array([spec.out_len(int(n)) for n in lens], dtype=np.int64)

    weights = Weights.init(spec, seed=seed)
    net = _BatchNet(spec)
    opt = _Adam(weights, hyper)
    rng = np.random.default_rng((seed, 0xADA))
    t0 = time.monotonic()
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(chunks))
        epoch_loss = 0.0
        epoch_labels = 0
        for bi in range(0, len(order), hyper.batch_size):
            idx = order[bi : bi + hyper.batch_size]
            logits, caches = net.forward(weights, x_all[idx])  # (C, B, T')
            losses, grads_btc = ctc.ctc_loss_batch(
                logits.transpose(1, 2, 0),
                frame_lens[idx],
                [label_codes[ci] for ci in idx],
            )
            if not np.isfinite(losses).all():
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {bi // hyper.batch_size}"
                )
            d_logits = grads_btc.transpose(2, 0, 1) / len(idx)  # (C, B, T')
            grads = net.backward(weights, caches, d_logits)
            opt.update(weights, grads)
            batch_loss = float(losses.sum())
            n_lab = int(sum(len(label_codes[ci]) for ci in idx))
            epoch_loss += batch_loss
            epoch_labels += n_lab
            emit(
                f"epoch={epoch} batch={bi // hyper.batch_size} "
                f"loss={batch_loss / len(idx):.4f}"
            )
        emit(
            f"epoch={epoch} done mean_loss_per_base={epoch_loss / max(1, epoch_labels):.4f}"
        )
        if hyper.time_budget_s is not None and time.monotonic() - t0 > hyper.time_budget_s:
            emit(f"epoch={epoch} stopping: time budget reached")
            break
    return weights
