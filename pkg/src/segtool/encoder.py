"""Context encoder: bidirectional GRU over per-token features, with an
optional scaled dot-product attention layer on top.

The "unweighted" attention variant uses the GRU hidden states directly as
query, key, and value; the "weighted" variant learns the three
projections.
"""

import numpy as np

from . import nn


class EncoderError(Exception):
    pass


class DimMismatch(EncoderError):
    pass


class BiGruEncoder:
    def __init__(self, rng, input_dim, hidden, dropout_rate=0.0,
                 recurrent_dropout_rate=0.0, dtype=np.float64):
        if not (0 <= dropout_rate < 1 and 0 <= recurrent_dropout_rate < 1):
            raise EncoderError("dropout rates must lie in [0, 1)")
        self.input_dim = input_dim
        self.hidden = hidden
        self.dropout_rate = dropout_rate
        self.recurrent_dropout_rate = recurrent_dropout_rate
        self.rnn = nn.BiGru(rng, input_dim, hidden, dtype)

    @property
    def out_dim(self):
        return 2 * self.hidden

    @property
    def params(self):
        return self.rnn.params

    @property
    def grads(self):
        return self.rnn.grads

    def zero_grads(self):
        self.rnn.zero_grads()

    def encode(self, x, train=False, rng=None):
        """x: (s, input_dim) -> (s, 2H).  Dropout is applied only when
        train=True; the recurrent mask is shared across time steps."""
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimMismatch(f"expected (s, {self.input_dim}), got {x.shape}")
        in_mask = None
        rec_mask = None
        if train and rng is not None:
            if self.dropout_rate > 0:
                keep = 1.0 - self.dropout_rate
                in_mask = (rng.random(x.shape) < keep) / keep
                x = x * in_mask
            if self.recurrent_dropout_rate > 0:
                keep = 1.0 - self.recurrent_dropout_rate
                rec_mask = (rng.random(self.hidden) < keep) / keep
        out, cache = self.rnn.forward(x, rec_mask=rec_mask)
        return out, (cache, in_mask)

    def backward(self, cache, d_out):
        rnn_cache, in_mask = cache
        d_x = self.rnn.backward(rnn_cache, d_out)
        if in_mask is not None:
            d_x = d_x * in_mask
        return d_x


def scaled_dot_attention(q, k, v):
    """softmax(QK^T/sqrt(d)) V with row-wise softmax.  Returns the output
    and a cache for the backward pass."""
    d = q.shape[1]
    scores = q @ k.T / np.sqrt(d)
    attn = nn.softmax(scores, axis=1)
    out = attn @ v
    return out, attn, (q, k, v, attn)


def scaled_dot_attention_backward(cache, d_out):
    q, k, v, attn = cache
    d = q.shape[1]
    d_v = attn.T @ d_out
    d_attn = d_out @ v.T
    d_scores = nn.softmax_backward(attn, d_attn, axis=1)
    d_q = d_scores @ k / np.sqrt(d)
    d_k = d_scores.T @ q / np.sqrt(d)
    return d_q, d_k, d_v


class AttentionLayer:
    """mode: "unweighted" (Q=K=V=H) or "weighted" (learned projections of
    width d_a)."""

    def __init__(self, rng, mode, d_model, d_a=None, dtype=np.float64):
        if mode not in ("weighted", "unweighted"):
            raise EncoderError(f"unknown attention mode {mode!r}")
        self.mode = mode
        self.d_model = d_model
        self.d_a = d_a or d_model
        self.params = {}
        self.grads = {}
        if mode == "weighted":
            for name in ("Wq", "Wk", "Wv"):
                self.params[name] = nn.glorot(rng, (d_model, self.d_a), dtype)
                self.grads[name] = np.zeros_like(self.params[name])

    @property
    def out_dim(self):
        return self.d_model if self.mode == "unweighted" else self.d_a

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def forward(self, h):
        if h.ndim != 2 or h.shape[1] != self.d_model:
            raise DimMismatch(f"expected (s, {self.d_model}), got {h.shape}")
        if self.mode == "unweighted":
            out, attn, cache = scaled_dot_attention(h, h, h)
            return out, (cache, None)
        q = h @ self.params["Wq"]
        k = h @ self.params["Wk"]
        v = h @ self.params["Wv"]
        out, attn, cache = scaled_dot_attention(q, k, v)
        return out, (cache, h)

    def backward(self, cache, d_out):
        sdp_cache, h = cache
        d_q, d_k, d_v = scaled_dot_attention_backward(sdp_cache, d_out)
        if self.mode == "unweighted":
            return d_q + d_k + d_v
        self.grads["Wq"] += h.T @ d_q
        self.grads["Wk"] += h.T @ d_k
        self.grads["Wv"] += h.T @ d_v
        return (
            d_q @ self.params["Wq"].T
            + d_k @ self.params["Wk"].T
            + d_v @ self.params["Wv"].T
        )


def attend(layer, h):
    return layer.forward(h)[0]
