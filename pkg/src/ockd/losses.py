"""Teacher and student objectives."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigurationError, ContractError, NumericError
from .net import FeaturePyramid

BCE_CLAMP = 1e-7
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class DistillWeights:
    """Per-level weights of the distillation loss."""

    l1: float = 0.33
    l2: float = 0.33
    l3: float = 0.33

    def __post_init__(self):
        vals = self.as_tuple()
        if any(v < 0 for v in vals) or not any(v > 0 for v in vals):
            raise ConfigurationError(f"distillation weights must be >= 0 with one > 0, got {vals}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.l1, self.l2, self.l3)


def _check_finite(t: torch.Tensor, what: str) -> None:
    if not torch.isfinite(t).all():
        raise NumericError(f"{what} contains non-finite values")


def target_map(labels, like: torch.Tensor) -> torch.Tensor:
    """Broadcast per-sample classes (0 genuine, 1 attack) to constant maps shaped like ``like``."""
    y = torch.as_tensor(labels, dtype=like.dtype, device=like.device).reshape(-1)
    if y.shape[0] != like.shape[0]:
        raise ContractError(f"{y.shape[0]} labels for a batch of {like.shape[0]}")
    return y.view(-1, *([1] * (like.dim() - 1))).expand_as(like)


def pixel_bce(d: torch.Tensor, labels) -> torch.Tensor:
    """Mean over the batch of the per-sample pixel-mean binary cross-entropy."""
    _check_finite(d, "pixel map")
    y = target_map(labels, d)
    dc = d.clamp(BCE_CLAMP, 1 - BCE_CLAMP)
    per_pixel = -(y * torch.log(dc) + (1 - y) * torch.log(1 - dc))
    return per_pixel.flatten(1).mean(dim=1).mean()


def cosine_distance(f: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """``1 - <f, g> / (|f| |g|)`` along the last axis.

    Accepts single vectors or batches of row vectors.  A zero vector yields
    a distance of (nearly) 1 thanks to the norm floor.
    """
    f = torch.as_tensor(f)
    g = torch.as_tensor(g)
    if f.shape != g.shape:
        raise ContractError(f"shape mismatch {tuple(f.shape)} vs {tuple(g.shape)}")
    _check_finite(f, "feature")
    _check_finite(g, "feature")
    nf = torch.linalg.vector_norm(f, dim=-1) + NORM_FLOOR
    ng = torch.linalg.vector_norm(g, dim=-1) + NORM_FLOOR
    return 1 - (f * g).sum(dim=-1) / (nf * ng)


def level_distances(teacher: FeaturePyramid, student: FeaturePyramid) -> torch.Tensor:
    """Cosine distance per sample and level, shape (N, levels).

    Each sample's level tensor is flattened to a single vector.
    """
    if len(teacher) != len(student):
        raise ContractError(f"pyramids have {len(teacher)} and {len(student)} levels")
    cols = []
    for ft, fs in zip(teacher.levels, student.levels):
        if ft.shape != fs.shape:
            raise ContractError(f"level shape mismatch {tuple(ft.shape)} vs {tuple(fs.shape)}")
        cols.append(cosine_distance(ft.flatten(1), fs.flatten(1)))
    return torch.stack(cols, dim=1)


def distill_loss(
    teacher: FeaturePyramid, student: FeaturePyramid, weights: DistillWeights = DistillWeights()
) -> torch.Tensor:
    dist = level_distances(teacher, student)
    if dist.shape[1] != 3:
        raise ContractError(f"distillation expects 3 feature levels, got {dist.shape[1]}")
    lam = torch.tensor(weights.as_tuple(), dtype=dist.dtype)
    return (dist * lam).sum(dim=1).mean()
