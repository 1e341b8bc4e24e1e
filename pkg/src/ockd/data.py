"""In-memory image containers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ContractError
from .net import IMAGE_SIZE

GENUINE = 0
ATTACK = 1


@dataclass
class ImageBatch:
    data: torch.Tensor
    labels: torch.Tensor | None = None

    def __post_init__(self):
        d = self.data
        if d.dim() != 4 or d.shape[1] != 3 or d.shape[2] != IMAGE_SIZE or d.shape[3] != IMAGE_SIZE:
            raise ContractError(f"image batch must be (N, 3, {IMAGE_SIZE}, {IMAGE_SIZE}), got {tuple(d.shape)}")
        if d.shape[0] < 1:
            raise ContractError("image batch is empty")
        if not torch.isfinite(d).all() or d.min() < 0 or d.max() > 1:
            raise ContractError("image values must be finite and in [0, 1]")

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass
class Dataset:
    """Images stored as uint8 together with per-sample bookkeeping.

    ``ids`` are globally unique sample identifiers (used for split hygiene),
    ``clients`` the client each sample belongs to (``-1`` when unassigned).
    """

    images: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    clients: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.images)
        if self.clients is None:
            self.clients = np.full(n, -1, dtype=np.int64)
        if not (len(self.labels) == len(self.ids) == len(self.clients) == n):
            raise ContractError("dataset fields have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], self.ids[idx], self.clients[idx])

    def where(self, mask) -> "Dataset":
        return self.subset(np.flatnonzero(mask))

    @property
    def genuine(self) -> "Dataset":
        return self.where(self.labels == GENUINE)

    @property
    def attack(self) -> "Dataset":
        return self.where(self.labels == ATTACK)

    def tensor(self, idx=None) -> torch.Tensor:
        imgs = self.images if idx is None else self.images[np.asarray(idx)]
        return torch.from_numpy(imgs.astype(np.float32) / 255.0)

    def batch(self, idx=None) -> ImageBatch:
        labels = self.labels if idx is None else self.labels[np.asarray(idx)]
        return ImageBatch(self.tensor(idx), torch.from_numpy(labels.astype(np.int64)))

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        return Dataset(
            np.concatenate([p.images for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.clients for p in parts]),
        )


def iter_chunks(n: int, size: int):
    for start in range(0, n, size):
        yield np.arange(start, min(n, start + size))
