"""Built-in 3D U-Net generator with three architecture variants.

All variants share the U shape: per level a convolutional block, max-pool
2x2x2 between descending levels, stride-2 deconvolution plus a skip
connection between ascending ones, and a final 1x1x1 convolution.  They
differ in block composition, padding, skip style, and feature counts:

* ``original``: unpadded 3x3x3 convolutions, skips concatenate through
  MergeCrop, features 64, 128, 256, ...
* ``symmetric``: padded convolutions keep extents, skips are element-wise
  additions, features 32, 64, 128, ...
* ``residual``: padded blocks of three convolutions with a residual
  addition inside each block, skips are additions, features 28, 36, 52,
  68, ... (plus 8 once, then plus 16 per level).

Every convolution is followed by BatchNorm, Scale, and ELU, except the
final classifier.  Weights are Xavier-uniform from a seeded generator,
biases zero, and the linear-transform layers are identities, so a
generated network is a deterministic function of its config.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocked import ELEMENT_DTYPE
from .errors import ModelError, ShapeError
from .formats import (
    DEFAULT_BN_EPS,
    ROLE_BIAS,
    ROLE_BN_EPS,
    ROLE_BN_MEAN,
    ROLE_BN_VAR,
    ROLE_KERNEL,
    ROLE_SCALE_BETA,
    ROLE_SCALE_GAMMA,
    WeightStore,
)
from .netspec import LayerKind, LayerSpec, NetworkSpec
from .shapes import validate_shapes

VARIANTS = ("original", "symmetric", "residual")

_DEFAULT_BASE = {"original": 64, "symmetric": 32, "residual": 28}


@dataclass(frozen=True)
class ZooConfig:
    variant: str
    levels: int = 4
    base_features: int | None = None
    input_spatial: tuple[int, int, int] = (16, 16, 16)
    in_fmaps: int = 1
    out_fmaps: int = 1
    batch: int = 1
    seed: int = 0
    features: tuple[int, ...] | None = None

    def with_spatial(self, spatial) -> "ZooConfig":
        return ZooConfig(
            variant=self.variant, levels=self.levels, base_features=self.base_features,
            input_spatial=tuple(spatial), in_fmaps=self.in_fmaps,
            out_fmaps=self.out_fmaps, batch=self.batch, seed=self.seed,
            features=self.features)


def feature_schedule(variant: str, levels: int, base: int | None = None) -> tuple[int, ...]:
    """Per-level feature counts for a variant."""
    if variant not in VARIANTS:
        raise ModelError("unknown zoo variant %r" % variant)
    if levels < 1:
        raise ModelError("levels must be >= 1")
    if base is None:
        base = _DEFAULT_BASE[variant]
    if variant == "residual":
        feats = []
        f, inc = base, 8
        for _ in range(levels):
            feats.append(f)
            f += inc
            inc = 16
        return tuple(feats)
    return tuple(base * 2 ** i for i in range(levels))


class _Emitter:
    """Accumulates layers and deterministic weights in declaration order."""

    def __init__(self, seed: int):
        self.layers: list[LayerSpec] = []
        self.store = WeightStore()
        self.rng = np.random.default_rng(seed)

    def add(self, layer: LayerSpec) -> str:
        self.layers.append(layer)
        return layer.tops[0]

    def conv(self, name, bottom, fo, fi, k, stride=1, pad=0,
             kind=LayerKind.CONVOLUTION) -> str:
        kdims = (k, k, k)
        self.add(LayerSpec(name, kind, (bottom,), (name,), {
            "num_output": fo, "kernel": kdims,
            "stride": (stride,) * 3, "pad": (pad,) * 3,
        }))
        fan_in = fi * k * k * k
        fan_out = fo * k * k * k
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        kernel = self.rng.uniform(-bound, bound, size=(fo, fi) + kdims)
        self.store.put("%s.%s" % (name, ROLE_KERNEL), kernel.astype(ELEMENT_DTYPE))
        self.store.put("%s.%s" % (name, ROLE_BIAS), np.zeros(fo, dtype=ELEMENT_DTYPE))
        return name

    def bn_scale_act(self, prefix, bottom, fmaps) -> str:
        bn = self.add(LayerSpec(prefix + "_bn", LayerKind.BATCH_NORM, (bottom,),
                                (prefix + "_bn",), {}))
        self.store.put("%s.%s" % (prefix + "_bn", ROLE_BN_MEAN),
                       np.zeros(fmaps, dtype=ELEMENT_DTYPE))
        self.store.put("%s.%s" % (prefix + "_bn", ROLE_BN_VAR),
                       np.ones(fmaps, dtype=ELEMENT_DTYPE))
        self.store.put("%s.%s" % (prefix + "_bn", ROLE_BN_EPS),
                       np.float32(DEFAULT_BN_EPS))
        sc = self.add(LayerSpec(prefix + "_scale", LayerKind.SCALE, (bn,),
                                (prefix + "_scale",), {}))
        self.store.put("%s.%s" % (prefix + "_scale", ROLE_SCALE_GAMMA),
                       np.ones(fmaps, dtype=ELEMENT_DTYPE))
        self.store.put("%s.%s" % (prefix + "_scale", ROLE_SCALE_BETA),
                       np.zeros(fmaps, dtype=ELEMENT_DTYPE))
        return self.add(LayerSpec(prefix + "_elu", LayerKind.ELU, (sc,),
                                  (prefix + "_elu",), {"alpha": 1.0}))


def _plain_block(em: _Emitter, prefix, bottom, fmaps, in_fmaps, pad) -> str:
    """Two of conv -> BatchNorm -> Scale -> ELU."""
    c1 = em.conv(prefix + "_conv1", bottom, fmaps, in_fmaps, 3, pad=pad)
    a1 = em.bn_scale_act(prefix + "1", c1, fmaps)
    c2 = em.conv(prefix + "_conv2", a1, fmaps, fmaps, 3, pad=pad)
    return em.bn_scale_act(prefix + "2", c2, fmaps)


def _residual_block(em: _Emitter, prefix, bottom, fmaps, in_fmaps) -> str:
    """Three padded convolutions with a residual addition over the last."""
    c1 = em.conv(prefix + "_conv1", bottom, fmaps, in_fmaps, 3, pad=1)
    a1 = em.bn_scale_act(prefix + "1", c1, fmaps)
    c2 = em.conv(prefix + "_conv2", a1, fmaps, fmaps, 3, pad=1)
    a2 = em.bn_scale_act(prefix + "2", c2, fmaps)
    c3 = em.conv(prefix + "_conv3", a2, fmaps, fmaps, 3, pad=1)
    add = em.add(LayerSpec(prefix + "_add", LayerKind.ELTWISE, (c3, a1),
                           (prefix + "_add",), {"op": "add"}))
    return em.bn_scale_act(prefix + "3", add, fmaps)


def _emit(cfg: ZooConfig) -> tuple[NetworkSpec, WeightStore]:
    feats = cfg.features or feature_schedule(cfg.variant, cfg.levels, cfg.base_features)
    feats = tuple(int(f) for f in feats)
    if len(feats) != cfg.levels:
        raise ModelError(
            "feature override has %d entries for %d levels" % (len(feats), cfg.levels))
    if any(f < 1 for f in feats):
        raise ModelError("feature counts must be positive")
    spatial = tuple(int(v) for v in cfg.input_spatial)
    if len(spatial) != 3 or any(v < 1 for v in spatial):
        raise ModelError("input spatial extent must be three positive integers")
    pad = 0 if cfg.variant == "original" else 1
    em = _Emitter(cfg.seed)

    def block(prefix, bottom, fmaps, in_fmaps):
        if cfg.variant == "residual":
            return _residual_block(em, prefix, bottom, fmaps, in_fmaps)
        return _plain_block(em, prefix, bottom, fmaps, in_fmaps, pad)

    em.add(LayerSpec("input", LayerKind.INPUT, (), ("data",),
                     {"shape": (cfg.batch, cfg.in_fmaps) + spatial}))
    skips = []
    top, top_fmaps = "data", cfg.in_fmaps
    for lvl in range(cfg.levels):
        top = block("d%d" % lvl, top, feats[lvl], top_fmaps)
        top_fmaps = feats[lvl]
        if lvl < cfg.levels - 1:
            skips.append(top)
            top = em.add(LayerSpec("pool%d" % lvl, LayerKind.POOLING, (top,),
                                   ("pool%d" % lvl,), {
                "mode": "max", "window": (2, 2, 2), "stride": (2, 2, 2),
            }))
    for lvl in range(cfg.levels - 2, -1, -1):
        up = em.conv("u%d_deconv" % lvl, top, feats[lvl], top_fmaps, 2,
                     stride=2, kind=LayerKind.DECONVOLUTION)
        skip = skips.pop()
        if cfg.variant == "original":
            joined = em.add(LayerSpec("u%d_merge" % lvl, LayerKind.MERGE_CROP,
                                      (skip, up), ("u%d_merge" % lvl,), {}))
            top = block("u%d" % lvl, joined, feats[lvl], feats[lvl] * 2)
        else:
            joined = em.add(LayerSpec("u%d_skip" % lvl, LayerKind.ELTWISE,
                                      (up, skip), ("u%d_skip" % lvl,), {"op": "add"}))
            top = block("u%d" % lvl, joined, feats[lvl], feats[lvl])
        top_fmaps = feats[lvl]
    em.conv("output", top, cfg.out_fmaps, top_fmaps, 1)
    return NetworkSpec("unet_%s" % cfg.variant, tuple(em.layers)), em.store


def generate_zoo(cfg: ZooConfig) -> tuple[NetworkSpec, WeightStore]:
    """Emit one configured variant as a description plus weights."""
    spec, store = _emit(cfg)
    try:
        validate_shapes(spec, store)
    except ShapeError as exc:
        msg = "input %s is too small for variant %r at %d levels" % (
            tuple(cfg.input_spatial), cfg.variant, cfg.levels)
        hint = minimum_cubic_input(cfg)
        if hint is not None:
            msg += "; smallest valid cubic input is %d^3" % hint
        raise ModelError("%s (%s)" % (msg, exc)) from None
    return spec, store


def minimum_cubic_input(cfg: ZooConfig, limit: int = 256) -> int | None:
    """Smallest n such that the variant accepts an n-cubed input, if any."""
    for n in range(1, limit + 1):
        spec, _ = _emit(cfg.with_spatial((n, n, n)))
        try:
            validate_shapes(spec)
        except ShapeError:
            continue
        return n
    return None
