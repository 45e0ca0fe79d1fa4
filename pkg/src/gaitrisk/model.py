"""Depression-risk recognition backbone and losses.

Three blocks of dynamic feature extraction, each summing a band-partitioned
local 3D-conv branch with a whole-frame global 3D-conv branch, interleaved
with temporal (grouped, weight-shared) and spatial (max-pool) compression,
followed by a two-way recognition head trained with cross-entropy plus an
identity triplet loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import Tensor
from .seeds import substream

# class index convention: logit 0 is the at-risk class
RISK_CLASS = 0
CONTROL_CLASS = 1


@dataclass(frozen=True)
class BlockConfig:
    in_channels: int
    out_channels: int
    parts: int                    # vertical bands of the local branch
    spatial_kernel: int = 3
    temporal_kernel: int = 5
    tcl_groups: int | None = None  # number of compressed output frames
    scl_enabled: bool = True

    def __post_init__(self):
        if self.spatial_kernel % 2 == 0 or self.temporal_kernel % 2 == 0:
            raise ValueError("conv kernels must have odd extents")
        if self.parts < 1:
            raise ValueError("parts must be >= 1")
        if self.tcl_groups is not None and self.tcl_groups < 1:
            raise ValueError("tcl_groups must be >= 1 when present")


@dataclass(frozen=True)
class ModelConfig:
    blocks: tuple[BlockConfig, BlockConfig, BlockConfig]
    clip_len: int = 60
    frame_h: int = 64
    frame_w: int = 44
    leaky_slope: float = 0.1
    share_local_weights: bool = True

    @property
    def embed_dim(self) -> int:
        return self.blocks[-1].out_channels

    def shape_trace(self) -> list[tuple[int, int, int, int]]:
        """(C, T, H, W) after each block; validates divisibility on the way."""
        c, t, h, w = 1, self.clip_len, self.frame_h, self.frame_w
        if self.blocks[0].in_channels != 1:
            raise ValueError("first block must take 1 input channel")
        trace = []
        for i, blk in enumerate(self.blocks):
            if blk.in_channels != c:
                raise ValueError(f"block {i + 1} expects {blk.in_channels} input "
                                 f"channels, trace gives {c}")
            if h % blk.parts:
                raise ValueError(f"block {i + 1}: parts {blk.parts} does not "
                                 f"divide input height {h}")
            c = blk.out_channels
            if blk.tcl_groups is not None:
                if t % blk.tcl_groups:
                    raise ValueError(f"block {i + 1}: tcl_groups {blk.tcl_groups} "
                                     f"does not divide temporal length {t}")
                t = blk.tcl_groups
            if blk.scl_enabled:
                h = (h + 1) // 2
                w = (w + 1) // 2
            trace.append((c, t, h, w))
        return trace

    def validate(self) -> None:
        self.shape_trace()

    def tcl_group_size(self, block_index: int) -> int:
        """Frames per group (= parameter count) of the block's TCL."""
        blk = self.blocks[block_index]
        if blk.tcl_groups is None:
            raise ValueError(f"block {block_index + 1} has no TCL")
        t = self.clip_len
        for b in self.blocks[:block_index]:
            if b.tcl_groups is not None:
                t = b.tcl_groups
        return t // blk.tcl_groups


def canonical_config() -> ModelConfig:
    """Full-scale configuration: 60-frame clips, channels 32/64/128, 16
    vertical parts, temporal compression to 20 then 1 frame."""
    return ModelConfig(blocks=(
        BlockConfig(1, 32, parts=16, tcl_groups=20, scl_enabled=True),
        BlockConfig(32, 64, parts=16, tcl_groups=None, scl_enabled=True),
        BlockConfig(64, 128, parts=16, tcl_groups=1, scl_enabled=False),
    ), clip_len=60)


def desk_config(clip_len: int = 12, channels: tuple[int, int, int] = (2, 4, 8),
                parts: int = 8, temporal_kernel: int = 5) -> ModelConfig:
    """Reduced configuration sized for single-core desk experiments."""
    c1, c2, c3 = channels
    return ModelConfig(blocks=(
        BlockConfig(1, c1, parts=parts, temporal_kernel=temporal_kernel,
                    tcl_groups=clip_len // 3, scl_enabled=True),
        BlockConfig(c1, c2, parts=parts, temporal_kernel=temporal_kernel,
                    tcl_groups=None, scl_enabled=True),
        BlockConfig(c2, c3, parts=parts, temporal_kernel=temporal_kernel,
                    tcl_groups=1, scl_enabled=False),
    ), clip_len=clip_len)


def tiny_config() -> ModelConfig:
    """Smallest end-to-end configuration, used by the gradient checks."""
    return ModelConfig(blocks=(
        BlockConfig(1, 4, parts=4, tcl_groups=4, scl_enabled=True),
        BlockConfig(4, 8, parts=4, tcl_groups=None, scl_enabled=True),
        BlockConfig(8, 16, parts=4, tcl_groups=1, scl_enabled=False),
    ), clip_len=12, frame_h=16, frame_w=12)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def init_parameters(config: ModelConfig, seed: int = 0,
                    dtype=np.float32) -> dict[str, Tensor]:
    """He-scaled kernels, zero biases, averaging TCL weights; stable names."""
    rng = substream(seed, "init")
    params: dict[str, Tensor] = {}

    def kernel(shape, fan_in):
        arr = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        return Tensor(arr.astype(dtype), requires_grad=True)

    t = config.clip_len
    for i, blk in enumerate(config.blocks, start=1):
        kt, ks = blk.temporal_kernel, blk.spatial_kernel
        fan_in = blk.in_channels * kt * ks * ks
        kshape = (blk.out_channels, blk.in_channels, kt, ks, ks)
        if config.share_local_weights:
            params[f"block{i}.local.kernel"] = kernel(kshape, fan_in)
        else:
            params[f"block{i}.local.kernel"] = kernel((blk.parts,) + kshape, fan_in)
        params[f"block{i}.local.bias"] = Tensor(np.zeros(blk.out_channels, dtype),
                                                requires_grad=True)
        params[f"block{i}.global.kernel"] = kernel(kshape, fan_in)
        params[f"block{i}.global.bias"] = Tensor(np.zeros(blk.out_channels, dtype),
                                                 requires_grad=True)
        if blk.tcl_groups is not None:
            g = t // blk.tcl_groups
            params[f"block{i}.tcl.weight"] = Tensor(
                np.full(g, 1.0 / g, dtype), requires_grad=True)
            t = blk.tcl_groups
    d = config.embed_dim
    params["head.weight"] = Tensor(
        (rng.standard_normal((2, d)) / np.sqrt(d)).astype(dtype),
        requires_grad=True)
    params["head.bias"] = Tensor(np.zeros(2, dtype), requires_grad=True)
    return params


def parameter_count(params: dict[str, Tensor]) -> int:
    return sum(p.data.size for p in params.values())


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _fold_bands(x: Tensor, parts: int) -> Tensor:
    """(B, C, T, H, W) -> (B*K, C, T, H/K, W) stacking vertical bands into
    the batch axis so one shared conv treats bands independently."""
    b, c, t, h, w = x.shape
    band = h // parts
    x = nm.reshape(x, (b, c, t, parts, band, w))
    x = nm.transpose(x, (0, 3, 1, 2, 4, 5))
    return nm.reshape(x, (b * parts, c, t, band, w))


def _unfold_bands(x: Tensor, parts: int) -> Tensor:
    bk, c, t, band, w = x.shape
    b = bk // parts
    x = nm.reshape(x, (b, parts, c, t, band, w))
    x = nm.transpose(x, (0, 2, 3, 1, 4, 5))
    return nm.reshape(x, (b, c, t, parts * band, w))


def local_branch(x: Tensor, parts: int, kernel: Tensor, bias: Tensor,
                 slope: float, shared: bool = True) -> Tensor:
    """Band-partitioned conv: splits H into `parts` bands, convolves each
    band independently (zero-padded per band) and concatenates in order."""
    h = x.shape[3]
    if h % parts:
        raise ValueError(f"parts {parts} does not divide input height {h}")
    if parts == 1:
        return nm.leaky_relu(nm.conv3d(x, kernel, bias), slope)
    if shared:
        folded = _fold_bands(x, parts)
        out = nm.conv3d(folded, kernel, bias)
        return nm.leaky_relu(_unfold_bands(out, parts), slope)
    # ablation path: one distinct kernel per band, concatenated in order
    b, c, t, _, w = x.shape
    band = h // parts
    x6 = nm.transpose(nm.reshape(x, (b, c, t, parts, band, w)),
                      (0, 3, 1, 2, 4, 5))
    outs = []
    for k in range(parts):
        xk = nm.index_axis(x6, 1, k)
        kk = nm.index_axis(kernel, 0, k)
        outs.append(nm.conv3d(xk, kk, bias))
    return nm.leaky_relu(nm.concat(outs, axis=3), slope)


def global_branch(x: Tensor, kernel: Tensor, bias: Tensor, slope: float) -> Tensor:
    return nm.leaky_relu(nm.conv3d(x, kernel, bias), slope)


def dfe_forward(x: Tensor, block: BlockConfig, params: dict[str, Tensor],
                prefix: str, slope: float, shared: bool = True) -> Tensor:
    """Dynamic feature extraction: local(x) + global(x), activations applied
    inside each branch before the sum."""
    loc = local_branch(x, block.parts, params[f"{prefix}.local.kernel"],
                       params[f"{prefix}.local.bias"], slope, shared=shared)
    glo = global_branch(x, params[f"{prefix}.global.kernel"],
                        params[f"{prefix}.global.bias"], slope)
    return nm.add(loc, glo)


def tcl_forward(x: Tensor, group_size: int, weight: Tensor) -> Tensor:
    """Grouped temporal compression: consecutive groups of `group_size`
    frames are reduced by one shared weight vector; T -> T/group_size."""
    b, c, t, h, w = x.shape
    if t % group_size:
        raise ValueError(f"group size {group_size} does not divide T={t}")
    if weight.shape != (group_size,):
        raise ValueError(f"TCL weight must have shape ({group_size},), got "
                         f"{weight.shape}")
    return nm.temporal_group_compress(x, weight)


def scl_forward(x: Tensor) -> Tensor:
    return nm.maxpool_spatial(x)


def backbone_forward(clip: Tensor, params: dict[str, Tensor],
                     config: ModelConfig, trace: list | None = None) -> Tensor:
    """Clip (B, 1, T, H, W) or (1, T, H, W) -> embedding (B, D)."""
    x = nm.as_tensor(clip)
    if x.ndim == 4:
        x = nm.reshape(x, (1,) + tuple(x.shape))
    if x.ndim != 5:
        raise ValueError(f"clip must be 4D or 5D, got shape {x.shape}")
    expected = (1, config.clip_len, config.frame_h, config.frame_w)
    if tuple(x.shape[1:]) != expected:
        raise ValueError(f"clip geometry {tuple(x.shape[1:])} does not match "
                         f"model input {expected}")
    t = config.clip_len
    for i, blk in enumerate(config.blocks, start=1):
        x = dfe_forward(x, blk, params, f"block{i}", config.leaky_slope,
                        shared=config.share_local_weights)
        if blk.tcl_groups is not None:
            g = t // blk.tcl_groups
            x = tcl_forward(x, g, params[f"block{i}.tcl.weight"])
            t = blk.tcl_groups
        if blk.scl_enabled:
            x = scl_forward(x)
        if trace is not None:
            trace.append(tuple(x.shape[1:]))
    return nm.flatten_max(x, start_axis=2)


def head_forward(f: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Embedding(s) -> two logits (risk first)."""
    return nm.fully_connected(f, params["head.weight"], params["head.bias"])


def risk_probability(logits: np.ndarray | Tensor) -> np.ndarray:
    """Softmax probability of the at-risk class, computed stably."""
    y = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    y = np.atleast_2d(y)
    m = y.max(axis=-1, keepdims=True)
    e = np.exp(y - m)
    p = e[..., RISK_CLASS] / e.sum(axis=-1)
    return p


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over the batch via log-sum-exp stabilization."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError("logits must be (B, 2) matching labels (B,)")
    lse = nm.logsumexp(logits, axis=-1)
    picked = nm.gather_index(logits, labels)
    return nm.mean(nm.sub(lse, picked))


def pairwise_euclidean(embeddings: Tensor) -> Tensor:
    """(B, D) -> (B, B) distance matrix, safe to differentiate at zero."""
    sq = nm.sum_(nm.mul(embeddings, embeddings), axis=1)
    gram = nm.matmul(embeddings, nm.transpose(embeddings, (1, 0)))
    b = embeddings.shape[0]
    d2 = nm.sub(nm.add(nm.reshape(sq, (b, 1)), nm.reshape(sq, (1, b))),
                nm.mul(gram, 2.0))
    return nm.sqrt(nm.add(nm.relu(d2), 1e-12))

def triplet_loss_batch(embeddings: Tensor, subject_ids, margin: float = 0.2) -> Tensor:
    """Batch-all triplet loss over every valid (anchor, positive, negative).

    Valid means subject(P) == subject(A) with P != A and subject(N) !=
    subject(A); the result is the mean hinge over triplets with strictly
    positive loss, or 0 when none violate the margin.
    """
    subject_ids = np.asarray(subject_ids)
    b = embeddings.shape[0]
    if subject_ids.shape != (b,):
        raise ValueError("subject_ids must match the batch size")
    same = subject_ids[:, None] == subject_ids[None, :]
    pos_mask = same & ~np.eye(b, dtype=bool)
    neg_mask = ~same
    valid = pos_mask[:, :, None] & neg_mask[:, None, :]
    if not valid.any():
        raise ValueError("batch admits no valid triplet (single subject?)")
    dist = pairwise_euclidean(embeddings)
    d_ap = nm.reshape(dist, (b, b, 1))
    d_an = nm.reshape(dist, (b, 1, b))
    hinge = nm.relu(nm.add(nm.sub(d_ap, d_an), margin))
    active = valid & (hinge.data > 0)
    count = int(active.sum())
    if count == 0:
        return nm.mul(nm.sum_(nm.mul(hinge, np.zeros_like(hinge.data))), 1.0)
    masked = nm.mul(hinge, valid.astype(hinge.data.dtype))
    return nm.mul(nm.sum_(masked), 1.0 / count)


def total_loss(ce: Tensor, tri: Tensor) -> Tensor:
    """Unweighted sum of the two training objectives."""
    return nm.add(ce, tri)
