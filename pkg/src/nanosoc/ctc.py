"""Connectionist temporal classification loss with exact gradients.

The loss marginalizes over every blank-augmented alignment between a
frame-wise class distribution and a shorter label string, using the
standard forward-backward dynamic program. Everything runs in log space
with float64 internals so finite-difference checks are meaningful.

Conventions: logits are (T, C); the blank class defaults to C-1; labels
are class indices that must not equal blank.
"""

from __future__ import annotations

import numpy as np

NEG = -np.inf


class CtcInfeasibleError(ValueError):
    """Label sequence cannot be emitted within the given frame count."""


def log_softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def min_frames(labels) -> int:
    """Frames CTC needs: one per label plus one per adjacent repeat."""
    labels = list(labels)
    repeats = sum(1 for i in range(1, len(labels)) if labels[i] == labels[i - 1])
    return len(labels) + repeats


def ctc_loss(logits, labels, blank: int | None = None) -> tuple[float, np.ndarray]:
    """Negative log likelihood of labels under CTC and its exact gradient.

    Returns (loss, grad) with grad shaped like logits (float64), where
    grad[t, c] = softmax(logits)[t, c] - p(state emitting c at t | labels).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ValueError(f"logits must be (T, C) with T >= 1, got shape {logits.shape}")
    t_len, n_cls = logits.shape
    if blank is None:
        blank = n_cls - 1
    labels = np.asarray(list(labels), dtype=np.int64)
    if labels.size < 1:
        raise ValueError("labels must be non-empty")
    if np.any(labels < 0) or np.any(labels >= n_cls) or np.any(labels == blank):
        raise ValueError("labels must be class indices different from blank")
    need = min_frames(labels)
    if t_len < need:
        raise CtcInfeasibleError(
            f"{labels.size} labels need {need} frames (repeats included), have {t_len}"
        )

    logp = log_softmax(logits)
    n_lab = labels.size
    n_st = 2 * n_lab + 1
    ext = np.full(n_st, blank, dtype=np.int64)
    ext[1::2] = labels
    # skip edge s-2 -> s is legal only onto a fresh non-blank label
    skip = np.zeros(n_st, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = logp[:, ext]  # (T, S)

    alpha = np.full((t_len, n_st), NEG)
    alpha[0, 0] = emit[0, 0]
    alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        acc = np.logaddexp(prev, np.concatenate(([NEG], prev[:-1])))
        jump = np.concatenate(([NEG, NEG], prev[:-2]))
        acc = np.logaddexp(acc, np.where(skip, jump, NEG))
        alpha[t] = acc + emit[t]
    log_p = np.logaddexp(alpha[-1, -1], alpha[-1, -2])

    # beta excludes the emission at its own frame
    beta = np.full((t_len, n_st), NEG)
    beta[-1, -1] = 0.0
    beta[-1, -2] = 0.0
    skip_fwd = np.concatenate((skip[2:], [False, False]))
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = np.logaddexp(nxt, np.concatenate((nxt[1:], [NEG])))
        jump = np.concatenate((nxt[2:], [NEG, NEG]))
        acc = np.logaddexp(acc, np.where(skip_fwd, jump, NEG))
        beta[t] = acc

    occupancy = np.exp(alpha + beta - log_p)  # (T, S), rows sum to 1
    onehot = np.zeros((n_st, n_cls))
    onehot[np.arange(n_st), ext] = 1.0
    grad = np.exp(logp) - occupancy @ onehot
    return float(-log_p), grad


def ctc_loss_batch(logits, lengths, label_lists, blank: int | None = None):
    """ctc_loss over a padded batch in one set of vectorized recursions.

    logits: (B, T_max, C); lengths[b] frames of row b are valid;
    label_lists[b] is that row's label index sequence. Returns
    (losses (B,), grads (B, T_max, C)) with grad rows zero beyond their
    length. Matches ctc_loss row for row.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n_b, t_max, n_cls = logits.shape
    if blank is None:
        blank = n_cls - 1
    lengths = np.asarray(lengths, dtype=np.int64)
    s_sizes = []
    for b, labels in enumerate(label_lists):
        labels = list(labels)
        if not labels:
            raise ValueError("labels must be non-empty")
        if lengths[b] < min_frames(labels):
            raise CtcInfeasibleError(f"batch row {b}: labels need more frames")
        s_sizes.append(2 * len(labels) + 1)
    s_max = max(s_sizes)

    ext = np.full((n_b, s_max), blank, dtype=np.int64)
    valid_state = np.zeros((n_b, s_max), dtype=bool)
    for b, labels in enumerate(label_lists):
        labels = np.asarray(list(labels), dtype=np.int64)
        ext[b, 1 : 2 * len(labels) : 2] = labels
        valid_state[b, : 2 * len(labels) + 1] = True
    skip = np.zeros((n_b, s_max), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2]) & valid_state[:, 2:]

    logp = log_softmax(logits)  # (B, T, C)
    emit = np.take_along_axis(
        logp, ext[:, None, :].repeat(t_max, axis=1), axis=2
    )  # (B, T, S)

    # padded work row gives the s-1 / s-2 shifts as plain views
    alpha = np.full((n_b, t_max, s_max), NEG)
    alpha[:, 0, 0] = emit[:, 0, 0]
    alpha[:, 0, 1] = emit[:, 0, 1]
    pad_row = np.full((n_b, s_max + 2), NEG)
    pad_row[:, 2:] = alpha[:, 0, :]
    acc = np.empty((n_b, s_max))
    jump = np.empty((n_b, s_max))
    for t in range(1, t_max):
        np.logaddexp(pad_row[:, 2:], pad_row[:, 1:-1], out=acc)
        jump.fill(NEG)
        np.copyto(jump, pad_row[:, :-2], where=skip)
        np.logaddexp(acc, jump, out=acc)
        acc += emit[:, t, :]
        alpha[:, t, :] = acc
        pad_row[:, 2:] = acc

    last = lengths - 1
    s_last = np.asarray(s_sizes, dtype=np.int64) - 1
    rows = np.arange(n_b)
    log_p = np.logaddexp(
        alpha[rows, last, s_last], alpha[rows, last, s_last - 1]
    )

    beta = np.full((n_b, t_max, s_max), NEG)
    skip_fwd = np.zeros_like(skip)
    skip_fwd[:, :-2] = skip[:, 2:]
    # rows finish at different frames; inject the terminal condition when
    # the backward sweep reaches each row's last frame
    nxt_pad = np.full((n_b, s_max + 2), NEG)
    for t in range(t_max - 1, -1, -1):
        if t < t_max - 1:
            np.add(beta[:, t + 1, :], emit[:, t + 1, :], out=nxt_pad[:, :-2])
            np.logaddexp(nxt_pad[:, :-2], nxt_pad[:, 1:-1], out=acc)
            jump.fill(NEG)
            np.copyto(jump, nxt_pad[:, 2:], where=skip_fwd)
            np.logaddexp(acc, jump, out=acc)
            beta[:, t, :] = acc
        at_end = last == t
        if at_end.any():
            idx = rows[at_end]
            beta[idx, t, :] = NEG
            beta[idx, t, s_last[idx]] = 0.0
            beta[idx, t, s_last[idx] - 1] = 0.0
    frame_valid = np.arange(t_max)[None, :] < lengths[:, None]  # (B, T)
    occupancy = np.exp(alpha + beta - log_p[:, None, None])
    occupancy *= frame_valid[:, :, None]
    grad = np.exp(logp)
    grad *= frame_valid[:, :, None]
    onehot = np.zeros((n_b, s_max, n_cls))
    np.put_along_axis(onehot, ext[:, :, None], 1.0, axis=2)
    onehot *= valid_state[:, :, None]
    grad -= np.einsum("bts,bsc->btc", occupancy, onehot)
    return -log_p, grad
