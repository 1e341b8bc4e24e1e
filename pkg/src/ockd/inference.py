"""Anomaly scoring with a teacher/student pair and the teacher-only baseline."""
from __future__ import annotations

from typing import Mapping

import numpy as np
import torch

from . import net
from .data import ImageBatch, iter_chunks
from .errors import ContractError
from .losses import level_distances

GENUINE_DECISION = "genuine"
ATTACK_DECISION = "attack"


def _as_float_batch(images) -> torch.Tensor:
    x = images.data if isinstance(images, ImageBatch) else images
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(x.astype(np.float32) / 255.0 if x.dtype == np.uint8 else x)
    return x


def _check_same_topology(teacher: net.ParamSet, student: net.ParamSet) -> None:
    if teacher.arch != student.arch or teacher.in_channels != student.in_channels:
        raise ContractError("teacher and student extractors have different topologies")


@torch.no_grad()
def level_scores(teacher: net.ParamSet, student: net.ParamSet, images, chunk: int = 64) -> np.ndarray:
    """Per-sample, per-level cosine distances, shape (N, 3)."""
    _check_same_topology(teacher, student)
    x = _as_float_batch(images)
    out = []
    for idx in iter_chunks(x.shape[0], chunk):
        xb = x[idx]
        t = net.forward_features(teacher, xb)
        s = net.forward_features(student, xb)
        out.append(level_distances(t, s).double().numpy())
    return np.concatenate(out) if out else np.empty((0, len(teacher.arch)))


def score(teacher: net.ParamSet, student: net.ParamSet, images, chunk: int = 64) -> np.ndarray:
    """Mean cosine distance over the three levels, one value in [0, 2] per sample."""
    return level_scores(teacher, student, images, chunk).mean(axis=1)


def classify(xi, threshold: float):
    """``"genuine"`` where the score is below ``threshold``, else ``"attack"``."""
    xi_arr = np.asarray(xi, dtype=np.float64)
    out = np.where(xi_arr < threshold, GENUINE_DECISION, ATTACK_DECISION)
    return str(out) if out.ndim == 0 else out


@torch.no_grad()
def dt_baseline_score(teacher: net.ParamSet, fcb: net.ParamSet, images, chunk: int = 64) -> np.ndarray:
    """Mean of the teacher's pixel map per sample (attack-high)."""
    x = _as_float_batch(images)
    out = []
    for idx in iter_chunks(x.shape[0], chunk):
        d = net.forward_pixel_map(fcb, net.forward_features(teacher, x[idx]))
        out.append(d.flatten(1).mean(dim=1).double().numpy())
    return np.concatenate(out) if out else np.empty(0)


def score_for_client(
    teacher: net.ParamSet,
    students: Mapping[int, net.ParamSet],
    client_id: int,
    images,
    sample_clients,
) -> np.ndarray:
    """Score samples of one client through that client's own student.

    ``sample_clients`` carries the client id of every sample; any sample
    belonging to another client is a routing error.
    """
    if client_id not in students:
        raise ContractError(f"no student registered for client {client_id}")
    sample_clients = np.asarray(sample_clients)
    if sample_clients.shape[0] != _as_float_batch(images).shape[0]:
        raise ContractError("one client id per sample is required")
    if np.any(sample_clients != client_id):
        raise ContractError(f"samples from other clients routed to student {client_id}")
    return score(teacher, students[client_id], images)
