"""Adaptive moment estimation with exposed moments.

The moments are kept in a plain container because the sparse engine reads
them to rank inactive weights for regrowth.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import NumericError


@dataclass
class OptimizerMoments:
    first: dict[str, torch.Tensor]
    second: dict[str, torch.Tensor]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def zeros_like(cls, tensors: dict[str, torch.Tensor], **kw) -> "OptimizerMoments":
        return cls(
            {k: torch.zeros_like(v, requires_grad=False) for k, v in tensors.items()},
            {k: torch.zeros_like(v, requires_grad=False) for k, v in tensors.items()},
            **kw,
        )

    def update(self, grads: dict[str, torch.Tensor]) -> None:
        """Advance both exponential averages by one gradient observation."""
        self.step += 1
        for k, g in grads.items():
            if not torch.isfinite(g).all():
                raise NumericError(f"non-finite gradient for {k}")
            self.first[k].mul_(self.beta1).add_(g, alpha=1 - self.beta1)
            self.second[k].mul_(self.beta2).addcmul_(g, g, value=1 - self.beta2)

    def reset(self, name: str, flat_index: torch.Tensor) -> None:
        self.first[name].view(-1)[flat_index] = 0
        self.second[name].view(-1)[flat_index] = 0


@dataclass
class Adam:
    lr: float
    moments: OptimizerMoments = field(repr=False, default=None)

    def step(
        self,
        tensors: dict[str, torch.Tensor],
        grads: dict[str, torch.Tensor],
        masks: dict[str, torch.Tensor] | None = None,
    ) -> None:
        """Update ``tensors`` in place.

        Moments are refreshed for every entry; where ``masks`` has a boolean
        tensor for a name, only the ``True`` entries move.
        """
        if self.moments is None:
            self.moments = OptimizerMoments.zeros_like(tensors)
        m = self.moments
        m.update(grads)
        bc1 = 1 - m.beta1 ** m.step
        bc2 = 1 - m.beta2 ** m.step
        with torch.no_grad():
            for k, t in tensors.items():
                denom = (m.second[k] / bc2).sqrt_().add_(m.eps)
                delta = (m.first[k] / bc1) / denom * self.lr
                if masks is not None and k in masks:
                    delta = delta * masks[k].view_as(delta)
                t.sub_(delta)
