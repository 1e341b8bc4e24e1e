"""Functional convolutional networks for the teacher and the student.

Networks are described by a tuple of :class:`ConvBlockSpec` and their weights
live in a :class:`ParamSet`.  Forward passes are plain functions of
``(params, images)`` built on ``torch.nn.functional`` so that the same code
serves float32 training and float64 gradient checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ContractError

IMAGE_SIZE = 128
PIXEL_MAP_SIZE = 32
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    norm: bool = True
    act: bool = True


@dataclass(frozen=True)
class ConvBlockSpec:
    layers: tuple[LayerSpec, ...]
    downsample: int = 2

    def validate(self) -> None:
        if not self.layers:
            raise ConfigurationError("conv block has no layers")
        for layer in self.layers:
            if layer.out_channels < 1:
                raise ConfigurationError(f"out_channels must be >= 1, got {layer.out_channels}")
            if layer.kernel < 1 or layer.kernel % 2 == 0:
                raise ConfigurationError(f"kernel must be odd, got {layer.kernel}")
            if layer.stride < 1:
                raise ConfigurationError(f"stride must be >= 1, got {layer.stride}")
        if self.downsample not in (1, 2):
            raise ConfigurationError(f"downsample must be 1 or 2, got {self.downsample}")

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels


Arch = tuple[ConvBlockSpec, ...]


def extractor_arch(widths: Sequence[int] = (32, 64, 128), convs_per_block: int = 2) -> Arch:
    """Three-level extractor: each block is ``convs_per_block`` 3x3 convs then 2x pooling."""
    return tuple(
        ConvBlockSpec(tuple(LayerSpec(int(w)) for _ in range(convs_per_block)), downsample=2)
        for w in widths
    )


def fcb_arch(width: int = 64) -> Arch:
    """Final block fusing the pyramid into a one-channel logit map."""
    return (
        ConvBlockSpec(
            (
                LayerSpec(int(width)),
                LayerSpec(int(width)),
                LayerSpec(1, kernel=1, norm=False, act=False),
            ),
            downsample=1,
        ),
    )


def arch_to_dict(arch: Arch) -> list[dict]:
    return [
        {
            "layers": [
                [l.out_channels, l.kernel, l.stride, int(l.norm), int(l.act)] for l in block.layers
            ],
            "downsample": block.downsample,
        }
        for block in arch
    ]


def arch_from_dict(blocks: list[dict]) -> Arch:
    return tuple(
        ConvBlockSpec(
            tuple(LayerSpec(o, k, s, bool(n), bool(a)) for o, k, s, n, a in block["layers"]),
            int(block["downsample"]),
        )
        for block in blocks
    )


def _layer_prefix(b: int, j: int) -> str:
    return f"b{b}.l{j}"


@dataclass
class ParamSet:
    """All tensors of one network.

    ``tensors`` holds the learnable parameters in layer order; ``buffers``
    holds batch-norm running statistics, which are state but not learned.
    """

    arch: Arch
    in_channels: int
    tensors: dict[str, torch.Tensor]
    buffers: dict[str, torch.Tensor] = field(default_factory=dict)

    def conv_weight_names(self) -> list[str]:
        return [n for n in self.tensors if n.endswith(".weight")]

    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    @property
    def dtype(self) -> torch.dtype:
        return next(iter(self.tensors.values())).dtype

    def map(self, fn) -> "ParamSet":
        return ParamSet(
            self.arch,
            self.in_channels,
            {k: fn(v) for k, v in self.tensors.items()},
            {k: fn(v) for k, v in self.buffers.items()},
        )

    def clone(self) -> "ParamSet":
        return self.map(lambda t: t.detach().clone())

    def to(self, dtype: torch.dtype) -> "ParamSet":
        return self.map(lambda t: t.detach().to(dtype).clone())

    def trainable(self) -> "ParamSet":
        """Detached copy whose learnable tensors are autograd leaves."""
        out = self.clone()
        for t in out.tensors.values():
            t.requires_grad_(True)
        return out

    def frozen(self) -> "ParamSet":
        return self.map(lambda t: t.detach())

    def equal(self, other: "ParamSet") -> bool:
        if self.tensors.keys() != other.tensors.keys() or self.buffers.keys() != other.buffers.keys():
            return False
        pairs = list(zip(self.tensors.values(), other.tensors.values()))
        pairs += list(zip(self.buffers.values(), other.buffers.values()))
        return all(a.shape == b.shape and torch.equal(a, b) for a, b in pairs)


def build_network(
    arch: Sequence[ConvBlockSpec],
    seed: int,
    in_channels: int = 3,
    dtype: torch.dtype = torch.float32,
) -> ParamSet:
    """Initialize a network: He-normal conv weights, zero biases, identity norm."""
    arch = tuple(arch)
    if not arch:
        raise ConfigurationError("architecture is empty")
    for block in arch:
        block.validate()
    gen = torch.Generator().manual_seed(int(seed))
    tensors: dict[str, torch.Tensor] = {}
    buffers: dict[str, torch.Tensor] = {}
    c_in = in_channels
    for b, block in enumerate(arch):
        for j, layer in enumerate(block.layers):
            p = _layer_prefix(b, j)
            fan_in = c_in * layer.kernel * layer.kernel
            std = math.sqrt(2.0 / fan_in)
            shape = (layer.out_channels, c_in, layer.kernel, layer.kernel)
            tensors[f"{p}.weight"] = (torch.randn(shape, generator=gen, dtype=torch.float64) * std).to(dtype)
            tensors[f"{p}.bias"] = torch.zeros(layer.out_channels, dtype=dtype)
            if layer.norm:
                tensors[f"{p}.norm_scale"] = torch.ones(layer.out_channels, dtype=dtype)
                tensors[f"{p}.norm_shift"] = torch.zeros(layer.out_channels, dtype=dtype)
                buffers[f"{p}.running_mean"] = torch.zeros(layer.out_channels, dtype=dtype)
                buffers[f"{p}.running_var"] = torch.ones(layer.out_channels, dtype=dtype)
            c_in = layer.out_channels
    return ParamSet(arch, in_channels, tensors, buffers)


@dataclass
class FeaturePyramid:
    """Per-block outputs of an extractor, finest level first."""

    levels: tuple[torch.Tensor, ...]
    batch_stats: dict[str, tuple[torch.Tensor, torch.Tensor]] = field(default_factory=dict)

    @property
    def f1(self) -> torch.Tensor:
        return self.levels[0]

    @property
    def f2(self) -> torch.Tensor:
        return self.levels[1]

    @property
    def f3(self) -> torch.Tensor:
        return self.levels[2]

    def __len__(self) -> int:
        return len(self.levels)

    def detach(self) -> "FeaturePyramid":
        return FeaturePyramid(tuple(f.detach() for f in self.levels))


def _as_tensor(images) -> torch.Tensor:
    data = getattr(images, "data", images)
    if not isinstance(data, torch.Tensor):
        data = torch.as_tensor(data)
    return data


def _run_block(
    params: ParamSet,
    b: int,
    block: ConvBlockSpec,
    x: torch.Tensor,
    train: bool,
    stats: dict,
) -> torch.Tensor:
    t = params.tensors
    for j, layer in enumerate(block.layers):
        p = _layer_prefix(b, j)
        w = t[f"{p}.weight"]
        if x.shape[1] != w.shape[1]:
            raise ContractError(
                f"layer {p} expects {w.shape[1]} input channels, got {x.shape[1]}"
            )
        x = F.conv2d(x, w, t[f"{p}.bias"], stride=layer.stride, padding=layer.kernel // 2)
        if layer.norm:
            if train:
                mean = x.mean(dim=(0, 2, 3))
                var = x.var(dim=(0, 2, 3), unbiased=False)
                n = x.numel() // x.shape[1]
                stats[p] = (mean.detach(), var.detach() * n / max(n - 1, 1))
            else:
                mean = params.buffers[f"{p}.running_mean"]
                var = params.buffers[f"{p}.running_var"]
            x = (x - mean[None, :, None, None]) / torch.sqrt(var[None, :, None, None] + BN_EPS)
            x = x * t[f"{p}.norm_scale"][None, :, None, None] + t[f"{p}.norm_shift"][None, :, None, None]
        if layer.act:
            x = F.relu(x)
    if block.downsample == 2:
        x = F.avg_pool2d(x, 2)
    return x


def forward_features(params: ParamSet, images, train: bool = False) -> FeaturePyramid:
    """Encode a batch into one feature level per block.

    With ``train=True`` normalization uses batch statistics, which are
    returned in ``batch_stats`` for the caller to fold into running
    averages via :func:`update_running_stats`.
    """
    x = _as_tensor(images)
    if x.dim() != 4 or x.shape[1] != params.in_channels:
        raise ContractError(
            f"expected input (N, {params.in_channels}, H, W), got {tuple(x.shape)}"
        )
    x = x.to(params.dtype)
    stats: dict = {}
    levels = []
    for b, block in enumerate(params.arch):
        x = _run_block(params, b, block, x, train, stats)
        levels.append(x)
    return FeaturePyramid(tuple(levels), stats)


def fuse_pyramid(pyramid: FeaturePyramid) -> torch.Tensor:
    """Pool every level to the coarsest resolution and stack along channels."""
    size = pyramid.levels[-1].shape[-1]
    parts = []
    for f in pyramid.levels:
        factor = f.shape[-1] // size
        if factor * size != f.shape[-1]:
            raise ContractError("pyramid levels are not integer multiples of the coarsest level")
        parts.append(F.avg_pool2d(f, factor) if factor > 1 else f)
    return torch.cat(parts, dim=1)


def pixel_logits(fcb_params: ParamSet, pyramid: FeaturePyramid, train: bool = False, stats=None) -> torch.Tensor:
    x = fuse_pyramid(pyramid)
    if x.shape[1] != fcb_params.in_channels:
        raise ContractError(
            f"final block expects {fcb_params.in_channels} fused channels, got {x.shape[1]}"
        )
    x = x.to(fcb_params.dtype)
    stats = {} if stats is None else stats
    for b, block in enumerate(fcb_params.arch):
        x = _run_block(fcb_params, b, block, x, train, stats)
    if x.shape[1] != 1:
        raise ContractError("final block must end in a single channel")
    return x


def forward_pixel_map(
    fcb_params: ParamSet, pyramid: FeaturePyramid, train: bool = False, stats=None
) -> torch.Tensor:
    """Pixel map in (0, 1) of shape (N, 1, 32, 32)."""
    d = torch.sigmoid(pixel_logits(fcb_params, pyramid, train, stats))
    if d.shape[-1] != PIXEL_MAP_SIZE:
        d = F.interpolate(d, size=(PIXEL_MAP_SIZE, PIXEL_MAP_SIZE), mode="bilinear", align_corners=False)
    return d


def update_running_stats(
    params: ParamSet, stats: dict[str, tuple[torch.Tensor, torch.Tensor]], momentum: float = BN_MOMENTUM
) -> None:
    """Fold batch statistics into the running buffers in place."""
    with torch.no_grad():
        for p, (mean, var) in stats.items():
            rm = params.buffers[f"{p}.running_mean"]
            rv = params.buffers[f"{p}.running_var"]
            rm.mul_(1 - momentum).add_(mean.to(rm.dtype), alpha=momentum)
            rv.mul_(1 - momentum).add_(var.to(rv.dtype), alpha=momentum)


def gradients(loss: torch.Tensor, wrt: ParamSet | Iterable[ParamSet]) -> dict[str, torch.Tensor]:
    """Exact partial derivatives of a scalar ``loss`` for every learnable tensor.

    ``wrt`` must have been produced by :meth:`ParamSet.trainable` and used to
    build ``loss``.  Tensors that do not influence the loss get zeros.  When
    several ParamSets are given, names are prefixed with their position
    (``"0:b0.l0.weight"``).
    """
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise ContractError("loss must be a scalar tensor")
    if loss.grad_fn is None:
        raise ContractError("loss was not produced by differentiable module operations")
    sets = [wrt] if isinstance(wrt, ParamSet) else list(wrt)
    names, leaves = [], []
    for i, ps in enumerate(sets):
        for k, t in ps.tensors.items():
            if not t.requires_grad:
                raise ContractError(f"parameter {k} is not tracked; use ParamSet.trainable()")
            names.append(k if len(sets) == 1 else f"{i}:{k}")
            leaves.append(t)
    grads = torch.autograd.grad(loss.reshape(()), leaves, allow_unused=True)
    return {
        n: (torch.zeros_like(t) if g is None else g.detach())
        for n, t, g in zip(names, leaves, grads)
    }
