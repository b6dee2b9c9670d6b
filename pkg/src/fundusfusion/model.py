"""Full network assembly: per-modality backbones, multi-view fusion of the
angiography views, dual-direction cross-modal fusion, and the task heads.

`fusion` picks the feature path:
  full      cross-modal fusion of both streams, features [N, 2D]
  cfp-only  colour-fundus backbone tokens, features [N, D]
  ffa-only  multi-view fused angiography tokens, features [N, D]
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor
from .backbone import init_block, run_stack, run_views
from .crossmodal import cross_modal_fusion, init_stage
from .decoder import (DecoderParams, avg_pool_tokens, classify,
                      init_classifier, init_decoder)
from .embedding import Modality, PatchConfig, TokenGrid, embed_view
from .multiview import fuse_views, init_view_fusion
from .params import ParamStore, fan_in_param, uniform_param

FUSION_MODES = ("full", "cfp-only", "ffa-only")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch_size: int = 16
    channels: int = 3
    embed_dim: int = 768
    views: int = 4
    backbone_layers: int = 6
    backbone_heads: int = 16
    window: int = 7
    window_heads: int = 16
    cross_heads: int = 16
    cross_rates: tuple = (8, 4, 2)
    classes: int = 4
    hidden: int = 256
    max_sentences: int = 10
    max_words: int = 20
    fusion: str = "full"
    with_decoder: bool = False
    vocab_size: int = 0

    def __post_init__(self):
        patch = PatchConfig(self.image_size, self.patch_size, self.channels,
                            self.embed_dim)
        if patch.side % self.window:
            raise ShapeError(
                f"window {self.window} does not tile the {patch.side}-token grid")
        for heads in (self.backbone_heads, self.window_heads, self.cross_heads):
            if self.embed_dim % heads:
                raise ShapeError(
                    f"embed dim {self.embed_dim} not divisible by {heads} heads")
        if self.cross_heads % 2:
            raise ShapeError("cross_heads must be even (heads split across branches)")
        if self.views < 1:
            raise ShapeError("views must be >= 1")
        if not self.cross_rates or any(r not in (8, 4, 2) for r in self.cross_rates):
            raise ShapeError(f"bad cross rates {self.cross_rates}, want from 8/4/2")
        if tuple(sorted(self.cross_rates, reverse=True)) != tuple(self.cross_rates):
            raise ShapeError("cross rates must be strictly decreasing")
        if self.fusion not in FUSION_MODES:
            raise ShapeError(f"fusion must be one of {FUSION_MODES}")
        if self.classes < 2:
            raise ShapeError("need at least two classes")
        if self.with_decoder and self.vocab_size < 5:
            raise ShapeError("decoder needs a vocabulary")

    @property
    def patch(self):
        return PatchConfig(self.image_size, self.patch_size, self.channels,
                           self.embed_dim)

    @property
    def feature_dim(self):
        return 2 * self.embed_dim if self.fusion == "full" else self.embed_dim


@dataclass
class BackboneParams:
    proj: Tensor
    pos: Tensor
    blocks: list


def _init_backbone(store, prefix, cfg, rng):
    patch = cfg.patch
    return BackboneParams(
        proj=store.add(f"{prefix}.proj",
                       fan_in_param(rng, (patch.patch_dim, cfg.embed_dim),
                                    patch.patch_dim)),
        pos=store.add(f"{prefix}.pos",
                      uniform_param(rng, (patch.tokens, cfg.embed_dim), 0.02)),
        blocks=[init_block(store, f"{prefix}.block{i}", cfg.embed_dim,
                           cfg.backbone_heads, rng)
                for i in range(cfg.backbone_layers)],
    )


@dataclass
class Model:
    cfg: ModelConfig
    store: ParamStore
    cfp: BackboneParams = None
    ffa: BackboneParams = None
    mv_pos: Tensor = None
    view_fusion: object = None
    stages: list = field(default_factory=list)
    classifier: object = None
    decoder: DecoderParams = None

    # -- forward paths -----------------------------------------------------

    def _embed_cfp(self, cfp_images):
        return embed_view(cfp_images, self.cfp.proj, self.cfp.pos,
                          self.cfg.patch, Modality.CFP)

    def _run_cfp(self, cfp_images):
        return run_stack(self._embed_cfp(cfp_images), self.cfp.blocks)

    def _run_ffa(self, ffa_images, counter=None):
        """ffa_images: [..., V, C, H, W]; the view axis is split off and every
        view runs through the shared angiography backbone."""
        v = self.cfg.views
        if ffa_images.shape[-4] != v:
            raise ShapeError(
                f"expected {v} angiography views, got shape {ffa_images.shape}")
        grids = []
        for i in range(v):
            idx = (Ellipsis, i, slice(None), slice(None), slice(None))
            img = ffa_images[idx]
            grids.append(embed_view(img, self.ffa.proj, self.ffa.pos,
                                    self.cfg.patch, Modality.FFA))
        grids = run_views(grids, self.ffa.blocks)
        return fuse_views(grids, self.mv_pos, self.view_fusion, counter=counter)

    def features(self, cfp_images, ffa_images, trace=None):
        """Fused token features, [..., N, feature_dim]."""
        mode = self.cfg.fusion
        if mode == "cfp-only":
            return self._run_cfp(cfp_images).tokens
        if mode == "ffa-only":
            return self._run_ffa(ffa_images).tokens
        cfp_grid = self._run_cfp(cfp_images)
        ffa_grid = self._run_ffa(ffa_images)
        return cross_modal_fusion(cfp_grid, ffa_grid, self.stages,
                                  expected_rates=self.cfg.cross_rates,
                                  trace=trace)

    def pooled(self, cfp_images, ffa_images, trace=None):
        return avg_pool_tokens(self.features(cfp_images, ffa_images, trace=trace))

    def class_probs(self, cfp_images, ffa_images):
        return classify(self.pooled(cfp_images, ffa_images), self.classifier)


def _wrap_images(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return Tensor(arr)


def build_model(cfg, seed=42):
    """Construct a Model with freshly initialized parameters."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    model = Model(cfg=cfg, store=store)
    # ablation modes drop the unused branch entirely so every registered
    # parameter participates in training
    if cfg.fusion != "ffa-only":
        model.cfp = _init_backbone(store, "cfp", cfg, rng)
    if cfg.fusion != "cfp-only":
        model.ffa = _init_backbone(store, "ffa", cfg, rng)
        patch = cfg.patch
        model.mv_pos = store.add(
            "mv.pos",
            uniform_param(rng, (cfg.views * patch.tokens, cfg.embed_dim), 0.02))
        model.view_fusion = init_view_fusion(store, "mv", cfg.embed_dim,
                                             cfg.window_heads, cfg.window, rng)
    if cfg.fusion == "full":
        model.stages = [init_stage(store, f"fuse.r{r}", cfg.embed_dim,
                                   cfg.cross_heads, r, rng)
                        for r in cfg.cross_rates]
    model.classifier = init_classifier(store, "cls", cfg.feature_dim,
                                       cfg.classes, rng)
    if cfg.with_decoder:
        model.decoder = init_decoder(store, "dec", cfg.feature_dim, cfg.hidden,
                                     cfg.vocab_size, cfg.max_sentences,
                                     cfg.max_words, rng)
    return model
