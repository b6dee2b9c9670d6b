"""Per-view transformer backbone: pre-norm blocks of multi-head
self-attention and a GELU feed-forward, residual around each.

All views of a modality are processed by one shared block stack; running a
view never reads another view's activations, so per-view outputs match the
views processed in isolation bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor
from .embedding import TokenGrid
from .params import fan_in_param


class ScoreCounter:
    """Counts scalar multiplies spent on attention score products (q @ k^T)."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0

    def add(self, scores_shape, inner):
        self.count += int(np.prod(scores_shape)) * int(inner)


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class BlockParams:
    ln1_g: Tensor
    ln1_b: Tensor
    attn: AttentionParams
    ln2_g: Tensor
    ln2_b: Tensor
    ffn: FeedForwardParams


def init_attention(store, prefix, dim, heads, rng):
    if dim % heads:
        raise ShapeError(f"dim {dim} not divisible by heads {heads}")
    mk = lambda nm: store.add(f"{prefix}.{nm}", fan_in_param(rng, (dim, dim), dim))
    return AttentionParams(wq=mk("wq"), wk=mk("wk"), wv=mk("wv"), wo=mk("wo"),
                           heads=heads)


def init_feed_forward(store, prefix, dim, rng, ratio=4):
    hid = dim * ratio
    return FeedForwardParams(
        w1=store.add(f"{prefix}.w1", fan_in_param(rng, (dim, hid), dim)),
        b1=store.add(f"{prefix}.b1", np.zeros(hid)),
        w2=store.add(f"{prefix}.w2", fan_in_param(rng, (hid, dim), hid)),
        b2=store.add(f"{prefix}.b2", np.zeros(dim)),
    )


def init_block(store, prefix, dim, heads, rng, ffn_ratio=4):
    return BlockParams(
        ln1_g=store.add(f"{prefix}.ln1.g", np.ones(dim)),
        ln1_b=store.add(f"{prefix}.ln1.b", np.zeros(dim)),
        attn=init_attention(store, f"{prefix}.attn", dim, heads, rng),
        ln2_g=store.add(f"{prefix}.ln2.g", np.ones(dim)),
        ln2_b=store.add(f"{prefix}.ln2.b", np.zeros(dim)),
        ffn=init_feed_forward(store, f"{prefix}.ffn", dim, rng, ffn_ratio),
    )


def split_heads(x, heads):
    """[..., N, D] -> [..., heads, N, D/heads]."""
    lead = x.shape[:-2]
    nl = len(lead)
    n, d = x.shape[-2:]
    x = T.reshape(x, lead + (n, heads, d // heads))
    return T.transpose(x, tuple(range(nl)) + (nl + 1, nl, nl + 2))


def merge_heads(x):
    """[..., heads, N, dh] -> [..., N, heads*dh]."""
    lead = x.shape[:-3]
    nl = len(lead)
    h, n, dh = x.shape[-3:]
    x = T.transpose(x, tuple(range(nl)) + (nl + 1, nl, nl + 2))
    return T.reshape(x, lead + (n, h * dh))


def attention(x, p, mask=None, counter=None):
    """Multi-head self-attention, per-head scale 1/sqrt(D/heads).

    mask: optional additive ndarray broadcastable onto the score tensor
    [..., heads, N, N]; masked pairs carry a large negative value.
    """
    d = x.shape[-1]
    dh = d // p.heads
    q = split_heads(T.matmul(x, p.wq), p.heads)
    k = split_heads(T.matmul(x, p.wk), p.heads)
    v = split_heads(T.matmul(x, p.wv), p.heads)
    kt = T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = T.mul(T.matmul(q, kt), 1.0 / np.sqrt(dh))
    if counter is not None:
        counter.add(scores.shape, dh)
    if mask is not None:
        scores = T.add(scores, Tensor(mask))
    out = T.matmul(T.softmax(scores, axis=-1), v)
    return T.matmul(merge_heads(out), p.wo)


def feed_forward(x, p):
    return T.affine(T.gelu(T.affine(x, p.w1, p.b1)), p.w2, p.b2)


def block(x, p, counter=None):
    """Pre-norm residual pair: attention then feed-forward."""
    h = T.layer_norm(x, p.ln1_g, p.ln1_b)
    x = T.add(x, attention(h, p.attn, counter=counter))
    h = T.layer_norm(x, p.ln2_g, p.ln2_b)
    return T.add(x, feed_forward(h, p.ffn))


def run_stack(grid, blocks, counter=None):
    """Run a block stack over one view's tokens."""
    x = grid.tokens
    for p in blocks:
        x = block(x, p, counter=counter)
    return TokenGrid(tokens=x, side=grid.side, modality=grid.modality)


def run_views(grids, blocks, counter=None):
    """Shared-weight backbone over several views of one modality."""
    mods = {g.modality for g in grids}
    if len(mods) != 1:
        raise ShapeError(f"views mix modalities: {sorted(m.value for m in mods)}")
    return [run_stack(g, blocks, counter=counter) for g in grids]
