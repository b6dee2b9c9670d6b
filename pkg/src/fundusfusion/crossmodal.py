"""Cross-modal fusion between the two token streams.

Each fusion stage runs cross attention in both directions from the stage
*inputs* (queries from one modality, keys/values from the other), each
followed by a pre-norm feed-forward, all residual. Keys and values are not
taken from the raw partner tokens: the partner grid is first downsampled by
two conv branches with different receptive fields, and the attention heads
are split between them: the first half of the heads reads the large-field
branch, the second half the small-field branch. Values additionally get a
local conv correction (1x3 then 3x1, residual).

Stages run at decreasing receptive-field rates; the default schedule is
8, 4, 2. The final features are the two streams concatenated per token.
"""

from dataclasses import dataclass
from math import prod

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor
from .backbone import (FeedForwardParams, feed_forward, init_feed_forward,
                       merge_heads, split_heads)
from .embedding import TokenGrid
from .params import fan_in_param

# rate -> (number of 2x2/stride-2 convs in large branch, in small branch);
# a zero count means the branch is a single 1x1 stride-1 conv
_RATE_STACKS = {8: (3, 2), 4: (2, 1), 2: (1, 0)}


def branch_spec(rate, large):
    """Conv stack for one branch: list of (kernel, stride) pairs."""
    if rate not in _RATE_STACKS:
        raise ShapeError(f"unsupported downsample rate {rate}, want one of 8/4/2")
    n = _RATE_STACKS[rate][0 if large else 1]
    if n == 0:
        return [(1, 1)]
    return [(2, 2)] * n


@dataclass
class BranchParams:
    weights: list          # conv kernels [D, D, k, k]
    biases: list           # [D]
    spec: list             # [(kernel, stride), ...]
    rate: int
    large: bool

    @property
    def total_stride(self):
        return prod(s for _, s in self.spec)


def init_branch(store, prefix, dim, rate, large, rng):
    spec = branch_spec(rate, large)
    weights, biases = [], []
    for i, (k, _) in enumerate(spec):
        weights.append(store.add(f"{prefix}.conv{i}.w",
                                 fan_in_param(rng, (dim, dim, k, k), dim * k * k)))
        biases.append(store.add(f"{prefix}.conv{i}.b", np.zeros(dim)))
    return BranchParams(weights=weights, biases=biases, spec=spec,
                        rate=rate, large=large)


def _to_conv_layout(tokens, side):
    """[..., N, D] -> ([B, D, side, side], lead shape)."""
    lead = tokens.shape[:-2]
    n, d = tokens.shape[-2:]
    if n != side * side:
        raise ShapeError(f"{n} tokens do not fill a side-{side} grid")
    b = prod(lead) if lead else 1
    x = T.reshape(tokens, (b, side, side, d))
    return T.transpose(x, (0, 3, 1, 2)), lead


def _from_conv_layout(x, lead):
    """[B, D, s, s] -> [..., s*s, D] with the original leading dims."""
    b, d, s, _ = x.shape
    x = T.transpose(x, (0, 2, 3, 1))
    return T.reshape(x, lead + (s * s, d))


def downsample_tokens(tokens, side, p):
    """Run one conv branch over the token grid.

    Pads the grid at bottom/right with zeros up to a multiple of the branch
    stride, then applies the conv stack with GELU between (not after) convs.
    Returns (tokens [..., N', D], side').
    """
    x, lead = _to_conv_layout(tokens, side)
    mult = p.total_stride
    target = -(-side // mult) * mult
    if target != side:
        extra = target - side
        x = T.pad(x, ((0, 0), (0, 0), (0, extra), (0, extra)))
    for i, ((_, stride), w, b) in enumerate(zip(p.spec, p.weights, p.biases)):
        if i:
            x = T.gelu(x)
        x = T.add(T.conv2d(x, w, stride=stride),
                  T.reshape(b, (b.shape[0], 1, 1)))
    out_side = x.shape[-1]
    return _from_conv_layout(x, lead), out_side


@dataclass
class LocalConvParams:
    w_a: Tensor   # [dh, dh, 1, 3]
    b_a: Tensor
    w_b: Tensor   # [dh, dh, 3, 1]
    b_b: Tensor


def init_local_conv(store, prefix, dh, rng):
    return LocalConvParams(
        w_a=store.add(f"{prefix}.a.w", fan_in_param(rng, (dh, dh, 1, 3), dh * 3)),
        b_a=store.add(f"{prefix}.a.b", np.zeros(dh)),
        w_b=store.add(f"{prefix}.b.w", fan_in_param(rng, (dh, dh, 3, 1), dh * 3)),
        b_b=store.add(f"{prefix}.b.b", np.zeros(dh)),
    )


def local_conv(v, side, p):
    """1x3 then 3x1 conv over the value grid, same shape out.

    v: [..., G, N, dh] head-grouped values living on a side x side grid.
    The caller adds the residual.
    """
    lead = v.shape[:-2]
    n, dh = v.shape[-2:]
    if n != side * side:
        raise ShapeError(f"{n} value rows do not fill a side-{side} grid")
    b = prod(lead) if lead else 1
    x = T.reshape(v, (b, side, side, dh))
    x = T.transpose(x, (0, 3, 1, 2))
    x = T.add(T.conv2d(x, p.w_a, stride=1, padding=(0, 1)),
              T.reshape(p.b_a, (dh, 1, 1)))
    x = T.add(T.conv2d(x, p.w_b, stride=1, padding=(1, 0)),
              T.reshape(p.b_b, (dh, 1, 1)))
    x = T.transpose(x, (0, 2, 3, 1))
    return T.reshape(x, lead + (n, dh))


@dataclass
class CrossAttentionParams:
    wq: Tensor          # [D, D]
    wkv_large: Tensor   # [D, D], per-head [D, 2*dh] blocks for the first h/2 heads
    wkv_small: Tensor   # [D, D], blocks for the last h/2 heads
    wo: Tensor          # [D, D]
    local: LocalConvParams
    branch_large: BranchParams
    branch_small: BranchParams
    heads: int


def init_cross_attention(store, prefix, dim, heads, rate, rng):
    if heads % 2:
        raise ShapeError(f"cross attention needs an even head count, got {heads}")
    if dim % heads:
        raise ShapeError(f"dim {dim} not divisible by heads {heads}")
    mk = lambda nm: store.add(f"{prefix}.{nm}", fan_in_param(rng, (dim, dim), dim))
    return CrossAttentionParams(
        wq=mk("wq"), wkv_large=mk("wkv_large"), wkv_small=mk("wkv_small"),
        wo=mk("wo"),
        local=init_local_conv(store, f"{prefix}.local", dim // heads, rng),
        branch_large=init_branch(store, f"{prefix}.large", dim, rate, True, rng),
        branch_small=init_branch(store, f"{prefix}.small", dim, rate, False, rng),
        heads=heads,
    )


def _group_kv(tokens, wkv, group, dh):
    """Project a branch's tokens to per-head K and V for one head group."""
    kv = T.matmul(tokens, wkv)                       # [.., N', G*2*dh]
    lead = kv.shape[:-2]
    nl = len(lead)
    n = kv.shape[-2]
    kv = T.reshape(kv, lead + (n, group, 2 * dh))
    kv = T.transpose(kv, tuple(range(nl)) + (nl + 1, nl, nl + 2))  # [.., G, N', 2dh]
    k = kv[..., :dh]
    v = kv[..., dh:]
    return k, v


def cross_attention(x, y, y_side, p, trace=None):
    """Queries from x, keys/values from two downsampled copies of y.

    x: [..., N, D], y: [..., Ny, D] on a y_side grid. Heads 0..h/2-1 read
    the large-field branch, heads h/2..h-1 the small-field branch; scores
    are scaled by 1/sqrt(D) (the full dim, not per head). Returns [..., N, D].
    """
    d = x.shape[-1]
    if y.shape[-1] != d:
        raise ShapeError(f"modality dims disagree: {x.shape} vs {y.shape}")
    h = p.heads
    dh = d // h
    group = h // 2
    q = split_heads(T.matmul(x, p.wq), h)            # [.., h, N, dh]

    large_tokens, large_side = downsample_tokens(y, y_side, p.branch_large)
    small_tokens, small_side = downsample_tokens(y, y_side, p.branch_small)

    outs = []
    plan = [(large_tokens, large_side, p.wkv_large, slice(0, group)),
            (small_tokens, small_side, p.wkv_small, slice(group, h))]
    for src, src_side, wkv, head_slice in plan:
        k, v = _group_kv(src, wkv, group, dh)
        v = T.add(v, local_conv(v, src_side, p.local))
        qg = q[(Ellipsis, head_slice, slice(None), slice(None))]
        kt = T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
        scores = T.mul(T.matmul(qg, kt), 1.0 / np.sqrt(d))
        outs.append(T.matmul(T.softmax(scores, axis=-1), v))
        if trace is not None:
            label = "large" if src is large_tokens else "small"
            for i in range(head_slice.start, head_slice.stop):
                trace.setdefault("head_branch", {})[i] = label
            trace.setdefault("branch_tokens", {})[label] = src.shape[-2]
    out = merge_heads(T.concat(outs, axis=-3))
    return T.matmul(out, p.wo)


@dataclass
class StageDirectionParams:
    ln_q_g: Tensor
    ln_q_b: Tensor
    ln_kv_g: Tensor
    ln_kv_b: Tensor
    attn: CrossAttentionParams
    ln_f_g: Tensor
    ln_f_b: Tensor
    ffn: FeedForwardParams


@dataclass
class StageParams:
    rate: int
    x_dir: StageDirectionParams   # x queries y
    y_dir: StageDirectionParams   # y queries x


def init_stage_direction(store, prefix, dim, heads, rate, rng):
    return StageDirectionParams(
        ln_q_g=store.add(f"{prefix}.lnq.g", np.ones(dim)),
        ln_q_b=store.add(f"{prefix}.lnq.b", np.zeros(dim)),
        ln_kv_g=store.add(f"{prefix}.lnkv.g", np.ones(dim)),
        ln_kv_b=store.add(f"{prefix}.lnkv.b", np.zeros(dim)),
        attn=init_cross_attention(store, f"{prefix}.attn", dim, heads, rate, rng),
        ln_f_g=store.add(f"{prefix}.lnf.g", np.ones(dim)),
        ln_f_b=store.add(f"{prefix}.lnf.b", np.zeros(dim)),
        ffn=init_feed_forward(store, f"{prefix}.ffn", dim, rng),
    )


def init_stage(store, prefix, dim, heads, rate, rng):
    return StageParams(
        rate=rate,
        x_dir=init_stage_direction(store, f"{prefix}.xq", dim, heads, rate, rng),
        y_dir=init_stage_direction(store, f"{prefix}.yq", dim, heads, rate, rng),
    )


def _run_direction(q_tokens, kv_tokens, kv_side, dp, trace=None):
    a = cross_attention(
        T.layer_norm(q_tokens, dp.ln_q_g, dp.ln_q_b),
        T.layer_norm(kv_tokens, dp.ln_kv_g, dp.ln_kv_b),
        kv_side, dp.attn, trace=trace)
    x = T.add(q_tokens, a)
    h = T.layer_norm(x, dp.ln_f_g, dp.ln_f_b)
    return T.add(x, feed_forward(h, dp.ffn))


def fusion_stage(x_grid, y_grid, p, trace=None):
    """One dual-direction stage; both directions read the stage inputs."""
    tx = trace.setdefault("x_dir", {}) if trace is not None else None
    ty = trace.setdefault("y_dir", {}) if trace is not None else None
    x_out = _run_direction(x_grid.tokens, y_grid.tokens, y_grid.side, p.x_dir, tx)
    y_out = _run_direction(y_grid.tokens, x_grid.tokens, x_grid.side, p.y_dir, ty)
    return (TokenGrid(tokens=x_out, side=x_grid.side, modality=x_grid.modality),
            TokenGrid(tokens=y_out, side=y_grid.side, modality=y_grid.modality))


def cross_modal_fusion(x_grid, y_grid, stages, expected_rates=None, trace=None):
    """Chain fusion stages and concatenate the final streams per token.

    Returns [..., N, 2D]. When expected_rates is given, the stage schedule
    must match it exactly.
    """
    rates = tuple(s.rate for s in stages)
    if expected_rates is not None and rates != tuple(expected_rates):
        raise ShapeError(
            f"stage schedule {rates} does not match configured {tuple(expected_rates)}")
    if x_grid.tokens.shape[-2:] != y_grid.tokens.shape[-2:]:
        raise ShapeError(
            f"modal token shapes disagree: {x_grid.tokens.shape} vs "
            f"{y_grid.tokens.shape}")
    for i, stage in enumerate(stages):
        st = trace.setdefault(f"stage{i}", {}) if trace is not None else None
        x_grid, y_grid = fusion_stage(x_grid, y_grid, stage, trace=st)
    return T.concat([x_grid.tokens, y_grid.tokens], axis=-1)
