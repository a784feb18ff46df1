"""Forward-only temporal attention blocks over two-hand feature sequences.

A block runs multi-head self-attention over the time-concatenated right/left
sequences, then one cross-attention per hand against a global feature sequence,
then a shared feed-forward that reduces the channel count. Sub-blocks are
pre-normalized (parameter-free layer norm) with residual connections around the
two attention stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

LN_EPS = 1e-5


@dataclass
class AttentionWeights:
    """Projections for one multi-head attention; queries come from a C-channel input,
    keys/values from a C_kv-channel input, output is C channels."""

    wq: np.ndarray  # (C, C)
    wk: np.ndarray  # (C_kv, C)
    wv: np.ndarray  # (C_kv, C)
    wo: np.ndarray  # (C, C)
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray
    heads: int

    @property
    def channels(self) -> int:
        return self.wq.shape[1]

    def check(self, c_query: int, c_kv: int):
        C = self.channels
        if C % self.heads:
            raise ContractError(f"channel count {C} is not divisible by {self.heads} heads")
        if self.wq.shape != (c_query, C) or self.wo.shape != (C, C):
            raise ContractError(f"query input has {c_query} channels, weights expect {self.wq.shape[0]}")
        if self.wk.shape != (c_kv, C) or self.wv.shape != (c_kv, C):
            raise ContractError(f"key/value input has {c_kv} channels, weights expect {self.wk.shape[0]}")


@dataclass
class TemporalBlockWeights:
    mhsa: AttentionWeights
    mhca_right: AttentionWeights
    mhca_left: AttentionWeights
    ff_w1: np.ndarray  # (C, hidden)
    ff_b1: np.ndarray
    ff_w2: np.ndarray  # (hidden, C_out)
    ff_b2: np.ndarray

    @property
    def c_in(self) -> int:
        return self.mhsa.channels

    @property
    def c_out(self) -> int:
        return self.ff_w2.shape[1]


@dataclass
class EncoderWeights:
    blocks: list[TemporalBlockWeights]


def _softmax(scores: np.ndarray) -> np.ndarray:
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def attention(queries: np.ndarray, keys_values: np.ndarray, w: AttentionWeights):
    """Scaled dot-product multi-head attention. Returns (output (Tq, C), maps (H, Tq, Tk))."""
    q_in = np.asarray(queries, dtype=np.float64)
    kv_in = np.asarray(keys_values, dtype=np.float64)
    if q_in.ndim != 2 or kv_in.ndim != 2:
        raise ContractError("attention inputs must be 2-D (time, channels)")
    w.check(q_in.shape[1], kv_in.shape[1])
    H = w.heads
    d = w.channels // H
    q = (q_in @ w.wq + w.bq).reshape(len(q_in), H, d).transpose(1, 0, 2)
    k = (kv_in @ w.wk + w.bk).reshape(len(kv_in), H, d).transpose(1, 0, 2)
    v = (kv_in @ w.wv + w.bv).reshape(len(kv_in), H, d).transpose(1, 0, 2)
    maps = _softmax(q @ k.transpose(0, 2, 1) / np.sqrt(d))
    heads = (maps @ v).transpose(1, 0, 2).reshape(len(q_in), w.channels)
    return heads @ w.wo + w.bo, maps


def mhsa_forward(right, left, w: AttentionWeights):
    """Self-attention over [right; left] stacked in time; returns (right_out, left_out, maps)."""
    right = np.asarray(right, dtype=np.float64)
    left = np.asarray(left, dtype=np.float64)
    if right.shape != left.shape or right.ndim != 2:
        raise ContractError(f"hand sequences must share one (T, C) shape, got {right.shape} and {left.shape}")
    T = right.shape[0]
    x = np.concatenate([right, left], axis=0)
    out, maps = attention(x, x, w)
    return out[:T], out[T:], maps


def mhca_forward(hand_seq, global_seq, w: AttentionWeights):
    """Cross-attention: queries from the hand sequence, keys/values from the global sequence."""
    hand_seq = np.asarray(hand_seq, dtype=np.float64)
    global_seq = np.asarray(global_seq, dtype=np.float64)
    if hand_seq.ndim != 2 or global_seq.ndim != 2 or hand_seq.shape[0] != global_seq.shape[0]:
        raise ContractError(
            f"hand and global sequences need the same length, got {hand_seq.shape} and {global_seq.shape}"
        )
    return attention(hand_seq, global_seq, w)


def layer_norm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


def sinusoidal_encoding(T: int, C: int) -> np.ndarray:
    pos = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(C)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / C)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def temporal_block_forward(right, left, global_k, w: TemporalBlockWeights, positional: bool = True):
    """One temporal block. Returns (right_out, left_out, maps) with maps keyed
    'mhsa', 'mhca_right', 'mhca_left'."""
    right = np.asarray(right, dtype=np.float64)
    left = np.asarray(left, dtype=np.float64)
    if right.shape != left.shape or right.ndim != 2:
        raise ContractError(f"hand sequences must share one (T, C) shape, got {right.shape} and {left.shape}")
    if right.shape[1] != w.c_in:
        raise ContractError(f"block expects {w.c_in} input channels, got {right.shape[1]}")
    if positional:
        pe = sinusoidal_encoding(*right.shape)
        right = right + pe
        left = left + pe

    a_r, a_l, m_sa = mhsa_forward(layer_norm(right), layer_norm(left), w.mhsa)
    right = right + a_r
    left = left + a_l

    g = layer_norm(np.asarray(global_k, dtype=np.float64))
    c_r, m_cr = mhca_forward(layer_norm(right), g, w.mhca_right)
    c_l, m_cl = mhca_forward(layer_norm(left), g, w.mhca_left)
    right = right + c_r
    left = left + c_l

    def ff(x):
        return np.maximum(layer_norm(x) @ w.ff_w1 + w.ff_b1, 0.0) @ w.ff_w2 + w.ff_b2

    return ff(right), ff(left), {"mhsa": m_sa, "mhca_right": m_cr, "mhca_left": m_cl}


def encoder_forward(right, left, global_1, global_2, weights: EncoderWeights, positional: bool = True):
    """Two stacked temporal blocks; block k attends to global_k.

    Returns (right_out, left_out, maps) where ``maps[k]`` holds block k's attention maps.
    """
    if len(weights.blocks) != 2:
        raise ContractError(f"encoder expects two temporal blocks, got {len(weights.blocks)}")
    T = np.shape(right)[0]
    for name, seq in (("left", left), ("global_1", global_1), ("global_2", global_2)):
        if np.shape(seq)[0] != T:
            raise ContractError(f"{name} has {np.shape(seq)[0]} frames, expected {T}")
    maps = []
    for block, g in zip(weights.blocks, (global_1, global_2)):
        right, left, m = temporal_block_forward(right, left, g, block, positional)
        maps.append(m)
    return right, left, maps


def _init_attention(rng, c_query, c_kv, channels, heads) -> AttentionWeights:
    def mat(n_in, n_out):
        return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))

    return AttentionWeights(
        wq=mat(c_query, channels), wk=mat(c_kv, channels), wv=mat(c_kv, channels), wo=mat(channels, channels),
        bq=np.zeros(channels), bk=np.zeros(channels), bv=np.zeros(channels), bo=np.zeros(channels),
        heads=heads,
    )


def init_encoder_weights(seed: int = 0, dims=(32, 16, 8), global_dims=(32, 16), heads: int = 4,
                         hidden_mult: int = 2, tie_cross_attention: bool = False) -> EncoderWeights:
    """Seeded random weights for the two-block encoder; channel counts must strictly decrease."""
    if len(dims) != 3 or not dims[0] > dims[1] > dims[2]:
        raise ContractError(f"channel dims must strictly decrease over three stages, got {dims}")
    rng = np.random.default_rng(seed)
    blocks = []
    for c_in, c_out, c_g in zip(dims[:-1], dims[1:], global_dims):
        if c_in % heads:
            raise ContractError(f"{c_in} channels not divisible by {heads} heads")
        mhsa = _init_attention(rng, c_in, c_in, c_in, heads)
        mhca_r = _init_attention(rng, c_in, c_g, c_in, heads)
        mhca_l = mhca_r if tie_cross_attention else _init_attention(rng, c_in, c_g, c_in, heads)
        hidden = hidden_mult * c_in
        blocks.append(TemporalBlockWeights(
            mhsa=mhsa, mhca_right=mhca_r, mhca_left=mhca_l,
            ff_w1=rng.normal(0.0, 1.0 / np.sqrt(c_in), size=(c_in, hidden)), ff_b1=np.zeros(hidden),
            ff_w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, c_out)), ff_b2=np.zeros(c_out),
        ))
    return EncoderWeights(blocks)


_ATTN_FIELDS = ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")


def weights_to_dict(weights: EncoderWeights) -> dict:
    out = {"num_blocks": len(weights.blocks), "blocks": []}
    for b in weights.blocks:
        entry = {}
        for name in ("mhsa", "mhca_right", "mhca_left"):
            a = getattr(b, name)
            entry[name] = {"heads": a.heads, **{f: getattr(a, f).tolist() for f in _ATTN_FIELDS}}
        for f in ("ff_w1", "ff_b1", "ff_w2", "ff_b2"):
            entry[f] = getattr(b, f).tolist()
        out["blocks"].append(entry)
    return out


def weights_from_dict(data: dict) -> EncoderWeights:
    blocks = []
    for entry in data["blocks"]:
        attn = {}
        for name in ("mhsa", "mhca_right", "mhca_left"):
            a = entry[name]
            attn[name] = AttentionWeights(heads=int(a["heads"]),
                                          **{f: np.asarray(a[f], dtype=np.float64) for f in _ATTN_FIELDS})
        blocks.append(TemporalBlockWeights(
            **attn, **{f: np.asarray(entry[f], dtype=np.float64) for f in ("ff_w1", "ff_b1", "ff_w2", "ff_b2")}
        ))
    return EncoderWeights(blocks)
