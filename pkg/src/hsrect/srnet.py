"""The spectral rectifier network: grouped multi-receptive-field stems,
trilateral attention with boundary-channel shuffle, and a low-rank manifold
correction head, plus parameter/FLOPs accounting.

The network is a pure function of (params, input).  All corrections are
zero at initialization (the final 1x1 convolution of every back-projection
block starts at zero), so with the global residual the rectifier is exactly
the identity until trained.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cube import HsiCube
from .degrade import fnv1a64
from .tensor import Tensor


@dataclass(frozen=True)
class SrNetConfig:
    bands: int
    groups: int = 4
    blocks: int = 4
    refine_stages: int = 1
    rank: int = 8
    global_residual: bool = True

    def __post_init__(self):
        if self.groups < 1 or self.rank < 1 or self.refine_stages < 0 or self.blocks < 1:
            raise ValueError("groups/blocks/rank must be >= 1, refine_stages >= 0")
        if self.group_width < 2:
            raise ValueError(
                f"group width {self.group_width} < 2; the boundary shuffle needs >= 2")
        if self.rank > self.padded_bands:
            raise ValueError(f"rank {self.rank} exceeds padded band count {self.padded_bands}")

    @property
    def padded_bands(self) -> int:
        return self.groups * math.ceil(self.bands / self.groups)

    @property
    def group_width(self) -> int:
        return self.padded_bands // self.groups

    def sidecar(self) -> dict[str, str]:
        return {
            "bands": str(self.bands),
            "groups": str(self.groups),
            "blocks": str(self.blocks),
            "refine_stages": str(self.refine_stages),
            "rank": str(self.rank),
            "global_residual": str(int(self.global_residual)),
        }

    @classmethod
    def from_sidecar(cls, meta: dict[str, str]) -> "SrNetConfig":
        return cls(
            bands=int(meta["bands"]),
            groups=int(meta["groups"]),
            blocks=int(meta["blocks"]),
            refine_stages=int(meta["refine_stages"]),
            rank=int(meta["rank"]),
            global_residual=bool(int(meta.get("global_residual", "1"))),
        )


class ParamStore:
    """Ordered name -> Tensor mapping for every learnable weight."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, arr: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(arr, dtype=np.float64))
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._tensors.items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ParamStore":
        store = cls()
        for name, arr in arrays.items():
            store.add(name, arr)
        return store


def _conv_names(prefix: str) -> tuple[str, str]:
    return prefix + ".w", prefix + ".b"


def init_params(config: SrNetConfig, seed: str) -> ParamStore:
    """Fan-in-scaled uniform conv weights, zero biases, fusion scalars 1/3,
    and zero-initialized back-projection output convolutions."""
    rng = np.random.default_rng(fnv1a64(seed))
    store = ParamStore()

    def conv(prefix, k, cin, cout, groups=1, zero=False):
        wname, bname = _conv_names(prefix)
        shape = (k, k, cin // groups, cout)
        if zero:
            w = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(k * k * (cin // groups))
            w = rng.uniform(-bound, bound, size=shape)
        store.add(wname, w)
        store.add(bname, np.zeros(cout))

    c = config.group_width
    for b in range(config.blocks):
        for g in range(config.groups):
            p = f"block{b}.group{g}"
            conv(p + ".stem.conv3", 3, c, c)
            conv(p + ".stem.dw5", 5, c, c, groups=c)
            conv(p + ".stem.dil3", 3, c, c)
            conv(p + ".stem.mix", 1, 4 * c, c)
            for view in ("h", "w", "s"):
                conv(p + f".tsa.{view}.conv1", 1, c, c)
                conv(p + f".tsa.{view}.conv2", 1, c, c)
            store.add(p + ".tsa.fuse", np.full(3, 1.0 / 3.0))
    cpad = config.padded_bands
    conv("adjust", 1, cpad, cpad)
    conv("mcr.manifold", 1, cpad, config.rank)
    for i in range(1, config.refine_stages + 1):
        conv(f"mcr.refine{i}", 1, config.rank, config.rank)
    for i in range(config.refine_stages + 1):
        conv(f"mcr.back{i}.conv3", 3, config.rank, config.rank)
        conv(f"mcr.back{i}.out", 1, config.rank, cpad, zero=True)
    return store


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def spectral_group(x: Tensor, groups: int) -> tuple[list[Tensor], int]:
    """Split bands into contiguous groups, replicating the last band when the
    count is not divisible; returns (group list, pad amount)."""
    s = x.shape[-1]
    width = math.ceil(s / groups)
    pad = groups * width - s
    if pad:
        x = T.pad_channels_replicate(x, pad)
    parts = [T.slice_channels(x, g * width, (g + 1) * width) for g in range(groups)]
    return parts, pad


def conv_stem(group: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Four complementary receptive fields (identity, 3x3, 5x5 depthwise,
    3x3 dilation-2) concatenated and mixed by a 1x1 convolution."""
    c = group.shape[-1]
    b3 = T.conv2d(group, params[prefix + ".stem.conv3.w"], params[prefix + ".stem.conv3.b"],
                  padding=1)
    b5 = T.conv2d(group, params[prefix + ".stem.dw5.w"], params[prefix + ".stem.dw5.b"],
                  padding=2, groups=c)
    bd = T.conv2d(group, params[prefix + ".stem.dil3.w"], params[prefix + ".stem.dil3.b"],
                  padding=2, dilation=2)
    cat = T.concat_channels([group, b3, b5, bd])
    return T.conv2d(cat, params[prefix + ".stem.mix.w"], params[prefix + ".stem.mix.b"])


def tsa_forward(group: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Trilateral attention: height/width/global pooled views gated through a
    conv-GeLU-conv-sigmoid path, fused by learnable scalars, applied
    multiplicatively."""
    views = []
    for view, keep in (("h", "height"), ("w", "width"), ("s", "none")):
        a = T.avgpool_axes(group, keep)
        a = T.conv2d(a, params[prefix + f".tsa.{view}.conv1.w"],
                     params[prefix + f".tsa.{view}.conv1.b"])
        a = T.gelu(a)
        a = T.conv2d(a, params[prefix + f".tsa.{view}.conv2.w"],
                     params[prefix + f".tsa.{view}.conv2.b"])
        views.append(T.sigmoid(a))
    fuse = params[prefix + ".tsa.fuse"]
    gate = T.smul(T.component(fuse, 0), views[0])
    gate = T.add(gate, T.smul(T.component(fuse, 1), views[1]))
    gate = T.add(gate, T.smul(T.component(fuse, 2), views[2]))
    return T.broadcast_mul(group, gate)


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """Boundary-swap permutation: at each of the groups-1 group boundaries the
    last channel of one group trades places with the first channel of the
    next.  The swaps are disjoint transpositions, so the permutation is an
    involution."""
    if channels % groups:
        raise ValueError(f"{channels} channels not divisible by {groups} groups")
    if groups > 1 and channels // groups < 2:
        raise ValueError("group width must be >= 2 for the boundary shuffle")
    perm = np.arange(channels)
    width = channels // groups
    for b in range(1, groups):
        lo, hi = b * width - 1, b * width
        perm[lo], perm[hi] = perm[hi], perm[lo]
    return perm


def adjacent_shuffle(x: Tensor, groups: int) -> Tensor:
    return T.permute_channels(x, shuffle_permutation(x.shape[-1], groups))


def hs3a_forward(x: Tensor, params: ParamStore, config: SrNetConfig, block: int) -> Tensor:
    """One attention block: group, stem, trilateral attention, concat, shuffle."""
    parts, pad = spectral_group(x, config.groups)
    if pad:
        raise ValueError("hs3a_forward expects band count divisible by groups")
    out = []
    for g, part in enumerate(parts):
        prefix = f"block{block}.group{g}"
        part = conv_stem(part, params, prefix)
        out.append(tsa_forward(part, params, prefix))
    return adjacent_shuffle(T.concat_channels(out), config.groups)


def mcr_forward(f_s: Tensor, params: ParamStore, refine_stages: int, rank: int) -> Tensor:
    """Manifold correction: embed at the bottleneck rank, refine stage by
    stage, and sum every stage's back-projected correction."""
    if rank > f_s.shape[-1]:
        raise ValueError(f"rank {rank} exceeds channel count {f_s.shape[-1]}")

    def back_block(m, i):
        h = T.gelu(T.conv2d(m, params[f"mcr.back{i}.conv3.w"],
                            params[f"mcr.back{i}.conv3.b"], padding=1))
        return T.conv2d(T.add(h, m), params[f"mcr.back{i}.out.w"],
                        params[f"mcr.back{i}.out.b"])

    m = T.gelu(T.conv2d(f_s, params["mcr.manifold.w"], params["mcr.manifold.b"]))
    total = back_block(m, 0)
    for i in range(1, refine_stages + 1):
        m = T.gelu(T.conv2d(m, params[f"mcr.refine{i}.w"], params[f"mcr.refine{i}.b"]))
        total = T.add(total, back_block(m, i))
    return total


def forward_tensor(x: Tensor, params: ParamStore, config: SrNetConfig) -> Tensor:
    """Full rectifier on an H x W x S tensor (tape-aware)."""
    if x.shape[-1] != config.bands:
        raise ValueError(f"input has {x.shape[-1]} bands, config expects {config.bands}")
    h = T.pad_channels_replicate(x, config.padded_bands - config.bands)
    for b in range(config.blocks):
        h = hs3a_forward(h, params, config, b)
    h = T.conv2d(h, params["adjust.w"], params["adjust.b"])
    h = mcr_forward(h, params, config.refine_stages, config.rank)
    h = T.slice_channels(h, 0, config.bands)
    if config.global_residual:
        h = T.add(h, x)
    return T.clamp01(h)


def srnet_forward(sr_in: HsiCube, params: ParamStore, config: SrNetConfig) -> HsiCube:
    """Rectify a super-resolved cube; identity at initialization."""
    out = forward_tensor(Tensor(sr_in.data), params, config)
    return HsiCube(out.data, sr_in.id)


# ---------------------------------------------------------------------------
# complexity accounting
# ---------------------------------------------------------------------------

def count_params(params: ParamStore) -> int:
    """Total element count over all named tensors (independent of H, W, scale)."""
    return sum(t.data.size for _, t in params.items())


def _conv_flops(k: int, cin: int, cout: int, h: int, w: int, groups: int = 1) -> int:
    return 2 * k * k * (cin // groups) * cout * h * w


def estimate_flops(config: SrNetConfig, height: int, width: int) -> int:
    """Analytic multiply-add count (x2) over every convolution, with the
    attention paths evaluated at their pooled sizes.  The rectifier runs at
    the HR resolution, so pass the HR patch size."""
    if height < 1 or width < 1:
        raise ValueError("spatial size must be >= 1")
    c = config.group_width
    per_group = (
        _conv_flops(3, c, c, height, width)
        + _conv_flops(5, c, c, height, width, groups=c)
        + _conv_flops(3, c, c, height, width)
        + _conv_flops(1, 4 * c, c, height, width)
        + 2 * _conv_flops(1, c, c, height, 1)   # height-view gate path
        + 2 * _conv_flops(1, c, c, 1, width)    # width-view gate path
        + 2 * _conv_flops(1, c, c, 1, 1)        # global-view gate path
    )
    total = config.blocks * config.groups * per_group
    cpad, r = config.padded_bands, config.rank
    total += _conv_flops(1, cpad, cpad, height, width)
    total += _conv_flops(1, cpad, r, height, width)
    total += config.refine_stages * _conv_flops(1, r, r, height, width)
    total += (config.refine_stages + 1) * (
        _conv_flops(3, r, r, height, width) + _conv_flops(1, r, cpad, height, width))
    return total
