"""Per-layer sparsity masks and the prune/regrow cycle for the student.

Masks cover convolution weight tensors only.  Index sets are flat
row-major offsets into each weight tensor.  All thresholds are realized as
exact top-k boundaries with ties broken by ascending index, so every
selection is deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import torch

from .errors import ConfigurationError, ContractError, NumericError
from .optim import OptimizerMoments

GROWTH_EPS = 1e-8


def active_count(size: int, density: float) -> int:
    """``ceil(size * density)`` evaluated on the decimal value of ``density``."""
    return math.ceil(Fraction(repr(float(density))) * size)


def _check_density(s: float) -> None:
    if not (0 < s <= 1):
        raise ConfigurationError(f"density must be in (0, 1], got {s}", key="density")


@dataclass
class SparsityMask:
    """Active flags per masked layer; ``~active`` is the inactive set."""

    density: float
    active: dict[str, torch.Tensor]

    def layer_size(self, name: str) -> int:
        return self.active[name].numel()

    def active_indices(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.active[name].numpy())

    def inactive_indices(self, name: str) -> np.ndarray:
        return np.flatnonzero(~self.active[name].numpy())

    def copy(self) -> "SparsityMask":
        return SparsityMask(self.density, {k: v.clone() for k, v in self.active.items()})

    def nnz(self) -> dict[str, int]:
        return {k: int(v.sum()) for k, v in self.active.items()}

    def equal(self, other: "SparsityMask") -> bool:
        return self.active.keys() == other.active.keys() and all(
            torch.equal(self.active[k], other.active[k]) for k in self.active
        )


@dataclass(frozen=True)
class RegrowthConfig:
    period: int = 60
    initial_rate: float = 0.5
    total_iterations: int = 1500
    eps: float = GROWTH_EPS

    def __post_init__(self):
        if not (1 <= self.period):
            raise ConfigurationError("regrowth period must be >= 1", key="regrowth_period")
        if not (0 < self.initial_rate < 1):
            raise ConfigurationError("initial regrowth rate must be in (0, 1)", key="regrowth_rate")


def _top_k(values: np.ndarray, candidates: np.ndarray, k: int, largest: bool) -> np.ndarray:
    """``k`` entries of ``candidates`` ranked by ``values``; ties go to the lower index."""
    if k <= 0 or candidates.size == 0:
        return np.empty(0, dtype=np.int64)
    v = values[candidates]
    order = np.argsort(-v if largest else v, kind="stable")
    return np.sort(candidates[order[:k]])


def init_masks(
    weights: dict[str, torch.Tensor], density: float, indicators: dict[str, torch.Tensor] | None = None
) -> SparsityMask:
    """Keep the ``ceil(l * s)`` largest-magnitude indicators of every layer.

    ``weights`` are the conv weight tensors to mask; by default the indicators
    are the weights themselves.
    """
    _check_density(density)
    indicators = weights if indicators is None else indicators
    active = {}
    for name, w in weights.items():
        v = indicators[name]
        if v.shape != w.shape:
            raise ContractError(f"indicator shape {tuple(v.shape)} != weight shape {tuple(w.shape)}")
        mag = v.detach().abs().reshape(-1).double().numpy()
        keep = _top_k(mag, np.arange(mag.size), active_count(mag.size, density), largest=True)
        flags = torch.zeros(mag.size, dtype=torch.bool)
        flags[torch.from_numpy(keep)] = True
        active[name] = flags
    return SparsityMask(float(density), active)


def apply_masks(weights: dict[str, torch.Tensor], mask: SparsityMask) -> dict[str, torch.Tensor]:
    """Copy of ``weights`` with every inactive entry set to exactly zero."""
    out = {}
    for name, w in weights.items():
        if name in mask.active:
            flags = mask.active[name]
            if flags.numel() != w.numel():
                raise ContractError(f"mask for {name} has {flags.numel()} entries, weight has {w.numel()}")
            out[name] = torch.where(flags.view_as(w), w.detach(), torch.zeros((), dtype=w.dtype))
        else:
            out[name] = w.detach().clone()
    return out


def zero_inactive_(weights: dict[str, torch.Tensor], mask: SparsityMask) -> None:
    with torch.no_grad():
        for name, flags in mask.active.items():
            weights[name].view(-1)[~flags] = 0


def prune_set(weights: dict[str, torch.Tensor], mask: SparsityMask, rate: float) -> dict[str, np.ndarray]:
    """Per layer, the ``floor(|A| * rate)`` active indices of smallest magnitude."""
    if not (0 <= rate < 1):
        raise ConfigurationError(f"prune rate must be in [0, 1), got {rate}")
    out = {}
    for name in mask.active:
        act = mask.active_indices(name)
        k = math.floor(act.size * rate)
        mag = weights[name].detach().abs().reshape(-1).double().numpy()
        out[name] = _top_k(mag, act, k, largest=False)
    return out


def growth_score(moments: OptimizerMoments, names=None, eps: float = GROWTH_EPS) -> dict[str, torch.Tensor]:
    """``p / (sqrt(q) + eps)`` for every tensor tracked by ``moments``."""
    names = list(moments.first) if names is None else names
    out = {}
    for k in names:
        p, q = moments.first[k], moments.second[k]
        if not (torch.isfinite(p).all() and torch.isfinite(q).all()):
            raise NumericError(f"non-finite moments for {k}")
        out[k] = p / (q.sqrt() + eps)
    return out


def grow_set(
    mu: dict[str, torch.Tensor],
    mask: SparsityMask,
    counts: dict[str, int],
    exclude: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Per layer, the ``counts[m]`` inactive indices of largest ``|mu|``.

    Indices in ``exclude`` (typically the just-pruned set) are not eligible.
    """
    out = {}
    for name in mask.active:
        cand = mask.inactive_indices(name)
        if exclude is not None and name in exclude and exclude[name].size:
            cand = np.setdiff1d(cand, exclude[name], assume_unique=True)
        k = int(counts.get(name, 0))
        if k > cand.size:
            raise ContractError(f"cannot grow {k} entries in {name}: only {cand.size} inactive")
        score = mu[name].detach().abs().reshape(-1).double().numpy()
        out[name] = _top_k(score, cand, k, largest=True)
    return out


@dataclass
class RegrowthEvent:
    weights: dict[str, torch.Tensor]
    mask: SparsityMask
    pruned: dict[str, np.ndarray]
    grown: dict[str, np.ndarray]


def regrowth_cycle(
    weights: dict[str, torch.Tensor],
    mask: SparsityMask,
    moments: OptimizerMoments,
    rate: float,
    eps: float = GROWTH_EPS,
) -> RegrowthEvent:
    """Prune the weakest active weights and regrow as many inactive ones.

    Returns new weight tensors and a new mask; the moments of grown entries
    are reset to zero in place, since the optimizer state belongs to the
    caller's training loop.  A layer never prunes more entries than it has
    inactive slots to regrow into, which keeps ``|A_m|`` fixed.
    """
    pruned = prune_set(weights, mask, rate)
    for name, idx in pruned.items():
        room = mask.layer_size(name) - int(mask.active[name].sum())
        if idx.size > room:
            mag = weights[name].detach().abs().reshape(-1).double().numpy()
            pruned[name] = _top_k(mag, idx, room, largest=False)
    mu = growth_score(moments, list(mask.active), eps)
    grown = grow_set(mu, mask, {k: v.size for k, v in pruned.items()}, exclude=pruned)

    new_mask = mask.copy()
    new_weights = {k: v.detach().clone() for k, v in weights.items()}
    for name in mask.active:
        flags = new_mask.active[name]
        p = torch.from_numpy(pruned[name])
        g = torch.from_numpy(grown[name])
        flags[p] = False
        flags[g] = True
        w = new_weights[name].view(-1)
        w[p] = 0
        w[g] = 0
        if g.numel():
            moments.reset(name, g)
    return RegrowthEvent(new_weights, new_mask, pruned, grown)


def cosine_decay(initial_rate: float, k: int, total: int) -> float:
    if total <= 0:
        raise ConfigurationError("total iterations must be positive for cosine decay")
    if not (0 <= k <= total):
        raise ConfigurationError(f"iteration {k} outside [0, {total}]")
    return initial_rate / 2 * (1 + math.cos(math.pi * k / total))
