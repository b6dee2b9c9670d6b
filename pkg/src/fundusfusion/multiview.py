"""Multi-view fusion on a shared token canvas with (shifted) window attention.

The V views of one modality are laid side by side into a canvas of shape
[side, V*side, D] after adding a learned multi-view position table (one row
per canvas token, view-major order). Two pre-norm attention blocks run over
the canvas: the first partitions it into non-overlapping M x M windows, the
second cyclically shifts the canvas by (-M//2, -M//2) first so windows
straddle the previous partition. Tokens that end up adjacent only through
the cyclic wrap are masked apart; tokens of neighbouring views inside the
same window attend freely. Finally per-view token maps are averaged.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor
from .backbone import (BlockParams, attention, feed_forward, init_block,
                       merge_heads, split_heads)
from .embedding import TokenGrid


@dataclass
class ViewFusionParams:
    block_a: BlockParams   # unshifted windows
    block_b: BlockParams   # shifted windows
    window: int


def init_view_fusion(store, prefix, dim, heads, window, rng):
    return ViewFusionParams(
        block_a=init_block(store, f"{prefix}.wblock", dim, heads, rng),
        block_b=init_block(store, f"{prefix}.sblock", dim, heads, rng),
        window=window,
    )


def concat_views(grids, mv_pos):
    """Views -> canvas [..., side, V*side, D]; view v fills columns
    [v*side, (v+1)*side). mv_pos has one row per canvas token, view-major."""
    if not grids:
        raise ShapeError("concat_views needs at least one view")
    side = grids[0].side
    mods = {g.modality for g in grids}
    if len(mods) != 1:
        raise ShapeError("concat_views: views mix modalities")
    if any(g.side != side for g in grids):
        raise ShapeError("concat_views: views disagree on grid side")
    v = len(grids)
    d = grids[0].tokens.shape[-1]
    n = side * side
    if mv_pos.shape != (v * n, d):
        raise ShapeError(
            f"multi-view position table {mv_pos.shape} != {(v * n, d)}")
    seq = T.add(T.concat([g.tokens for g in grids], axis=-2), mv_pos)
    lead = seq.shape[:-2]
    nl = len(lead)
    x = T.reshape(seq, lead + (v, side, side, d))
    # [.., v, r, c, d] -> [.., r, v, c, d] -> canvas rows of length v*side
    x = T.transpose(x, tuple(range(nl)) + (nl + 1, nl, nl + 2, nl + 3))
    return T.reshape(x, lead + (side, v * side, d))


def split_canvas(canvas, views):
    """Canvas -> [..., views, N, D], inverse of the concat_views layout."""
    lead = canvas.shape[:-3]
    nl = len(lead)
    side, total, d = canvas.shape[-3:]
    x = T.reshape(canvas, lead + (side, views, side, d))
    x = T.transpose(x, tuple(range(nl)) + (nl + 1, nl, nl + 2, nl + 3))
    return T.reshape(x, lead + (views, side * side, d))


def window_partition(canvas, window):
    """[..., H, W, D] -> [..., nWin, window*window, D], row-major windows."""
    lead = canvas.shape[:-3]
    nl = len(lead)
    h, w, d = canvas.shape[-3:]
    if h % window or w % window:
        raise ShapeError(
            f"window {window} does not tile canvas {(h, w)}")
    nh, nw = h // window, w // window
    x = T.reshape(canvas, lead + (nh, window, nw, window, d))
    x = T.transpose(x, tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4))
    return T.reshape(x, lead + (nh * nw, window * window, d))


def window_unpartition(windows, window, h, w):
    """Inverse of window_partition."""
    lead = windows.shape[:-3]
    nl = len(lead)
    nh, nw = h // window, w // window
    x = T.reshape(windows, lead + (nh, nw, window, window, windows.shape[-1]))
    x = T.transpose(x, tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4))
    return T.reshape(x, lead + (h, w, windows.shape[-1]))


def _region_image(h, w, window, shift):
    """Region ids marking which tokens may attend after a cyclic shift."""
    img = np.zeros((h, w), dtype=np.int64)
    cnt = 0
    edges = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    for hs in edges:
        for ws in edges:
            img[hs, ws] = cnt
            cnt += 1
    return img


def shift_attention_mask(h, w, window, shift):
    """Additive mask [nWin, 1, M*M, M*M]: 0 within a region, -1e9 across.

    Built exactly like the region bookkeeping of the cyclic-shift scheme:
    tokens wrapped in from the opposite canvas edge land in distinct regions
    and are masked out of each other's softmax.
    """
    img = _region_image(h, w, window, shift)
    nh, nw = h // window, w // window
    win = img.reshape(nh, window, nw, window).transpose(0, 2, 1, 3)
    win = win.reshape(nh * nw, window * window)
    diff = win[:, None, :] != win[:, :, None]
    return np.where(diff, -1e9, 0.0)[:, None, :, :]


def window_attention(canvas, p, window, shift, mask=True, counter=None):
    """(Shifted) window attention over the canvas tokens."""
    h, w, _ = canvas.shape[-3:]
    x = canvas
    if shift:
        x = T.roll(x, (-shift, -shift), (-3, -2))
    win = window_partition(x, window)
    add_mask = None
    if shift and mask:
        add_mask = shift_attention_mask(h, w, window, shift)
    out = attention(win, p, mask=add_mask, counter=counter)
    out = window_unpartition(out, window, h, w)
    if shift:
        out = T.roll(out, (shift, shift), (-3, -2))
    return out


def _canvas_block(canvas, bp, window, shift, mask, counter):
    h = T.layer_norm(canvas, bp.ln1_g, bp.ln1_b)
    canvas = T.add(canvas, window_attention(h, bp.attn, window, shift,
                                            mask=mask, counter=counter))
    h = T.layer_norm(canvas, bp.ln2_g, bp.ln2_b)
    return T.add(canvas, feed_forward(h, bp.ffn))


def fuse_views(grids, mv_pos, p, mask=True, counter=None):
    """Full multi-view fusion: canvas, two window blocks, view average.

    Returns a TokenGrid [..., N, D] on the original per-view grid.
    """
    side = grids[0].side
    v = len(grids)
    window = p.window
    if side % window or (v * side) % window:
        raise ShapeError(
            f"window {window} does not tile the {side}x{v * side} canvas")
    canvas = concat_views(grids, mv_pos)
    canvas = _canvas_block(canvas, p.block_a, window, 0, mask, counter)
    canvas = _canvas_block(canvas, p.block_b, window, window // 2, mask, counter)
    per_view = split_canvas(canvas, v)
    fused = T.tmean(per_view, axis=-3)
    return TokenGrid(tokens=fused, side=side, modality=grids[0].modality)


# -- analytic cost model ---------------------------------------------------------

@dataclass(frozen=True)
class FlopReport:
    views: int
    tokens_per_view: int
    dim: int
    window: int
    global_attention_flops: int
    windowed_attention_flops: int

    @property
    def speedup(self):
        return self.global_attention_flops / self.windowed_attention_flops

    def to_dict(self):
        return {
            "views": self.views,
            "tokens_per_view": self.tokens_per_view,
            "dim": self.dim,
            "window": self.window,
            "global_attention_flops": self.global_attention_flops,
            "windowed_attention_flops": self.windowed_attention_flops,
            "speedup": self.speedup,
        }


def attention_flops(views, tokens_per_view, dim, window):
    """Cost of one attention layer over the fused canvas, softmax omitted.

    Global attention: 4*L*D^2 + 2*L^2*D for L = views*tokens_per_view.
    Windowed: the quadratic term collapses to 2*M^2*L*D.
    Exact integers, no floats anywhere.
    """
    v, n, d, m = int(views), int(tokens_per_view), int(dim), int(window)
    if min(v, n, d, m) < 1:
        raise ShapeError("attention_flops: all arguments must be positive")
    side = int(np.sqrt(n))
    if side * side != n:
        raise ShapeError(f"tokens_per_view {n} is not a perfect square")
    if side % m:
        raise ShapeError(f"window {m} does not tile a side-{side} grid")
    length = v * n
    glob = 4 * length * d * d + 2 * length * length * d
    windowed = 4 * length * d * d + 2 * m * m * length * d
    return FlopReport(views=v, tokens_per_view=n, dim=d, window=m,
                      global_attention_flops=glob,
                      windowed_attention_flops=windowed)
