"""Patch tokenization and view embedding.

An image [C, H, W] (optionally with leading batch axes) is cut into
non-overlapping P x P patches, each flattened row-major over
(channel, row, col) and projected to the embed dim, then a learned
per-position table is added. All views of one modality run through the
same projection and position table.
"""

from dataclasses import dataclass
from enum import Enum

from . import tensor as T
from .tensor import ShapeError, Tensor


class Modality(str, Enum):
    CFP = "cfp"
    FFA = "ffa"


@dataclass(frozen=True)
class PatchConfig:
    image_size: int
    patch_size: int
    channels: int
    embed_dim: int

    def __post_init__(self):
        if min(self.image_size, self.patch_size, self.channels, self.embed_dim) < 1:
            raise ShapeError(f"patch config fields must be positive: {self}")
        if self.image_size % self.patch_size:
            raise ShapeError(
                f"patch size {self.patch_size} does not divide image size "
                f"{self.image_size}")

    @property
    def side(self):
        return self.image_size // self.patch_size

    @property
    def tokens(self):
        return self.side * self.side

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels


@dataclass
class TokenGrid:
    """Tokens [..., N, D] arranged row-major on a side x side grid."""
    tokens: Tensor
    side: int
    modality: Modality


def _check_image(image, cfg):
    tail = image.shape[-3:]
    want = (cfg.channels, cfg.image_size, cfg.image_size)
    if image.ndim < 3 or tail != want:
        raise ShapeError(f"image shape {image.shape} does not end in {want}")


def patchify(image, cfg):
    """[..., C, H, W] -> [..., N, P*P*C], patches row-major on the grid."""
    _check_image(image, cfg)
    lead = image.shape[:-3]
    nl = len(lead)
    s, p, c = cfg.side, cfg.patch_size, cfg.channels
    x = T.reshape(image, lead + (c, s, p, s, p))
    # [.., c, sy, py, sx, px] -> [.., sy, sx, c, py, px]
    x = T.transpose(x, tuple(range(nl)) + (nl + 1, nl + 3, nl, nl + 2, nl + 4))
    return T.reshape(x, lead + (cfg.tokens, cfg.patch_dim))


def unpatchify(tokens, cfg):
    """Inverse of patchify."""
    lead = tokens.shape[:-2]
    nl = len(lead)
    s, p, c = cfg.side, cfg.patch_size, cfg.channels
    if tokens.shape[-2:] != (cfg.tokens, cfg.patch_dim):
        raise ShapeError(
            f"token shape {tokens.shape} does not end in "
            f"{(cfg.tokens, cfg.patch_dim)}")
    x = T.reshape(tokens, lead + (s, s, c, p, p))
    x = T.transpose(x, tuple(range(nl)) + (nl + 2, nl, nl + 3, nl + 1, nl + 4))
    return T.reshape(x, lead + (c, cfg.image_size, cfg.image_size))


def embed_view(image, proj, pos, cfg, modality):
    """Project patches and add per-position embeddings.

    proj: [P*P*C, D], pos: [N, D]. Returns a TokenGrid with [..., N, D].
    """
    if proj.shape != (cfg.patch_dim, cfg.embed_dim):
        raise ShapeError(
            f"projection shape {proj.shape} != {(cfg.patch_dim, cfg.embed_dim)}")
    if pos.shape != (cfg.tokens, cfg.embed_dim):
        raise ShapeError(
            f"position table shape {pos.shape} != {(cfg.tokens, cfg.embed_dim)}")
    tokens = T.add(T.matmul(patchify(image, cfg), proj), pos)
    return TokenGrid(tokens=tokens, side=cfg.side, modality=modality)
