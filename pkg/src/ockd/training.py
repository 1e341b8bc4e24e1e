"""Teacher training and sparse student distillation loops."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import net
from .data import ATTACK, GENUINE, Dataset
from .errors import ConfigurationError, ProtocolViolation
from .losses import DistillWeights, distill_loss, pixel_bce
from .optim import Adam
from .sparse import (
    RegrowthConfig,
    SparsityMask,
    cosine_decay,
    init_masks,
    regrowth_cycle,
    zero_inactive_,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TeacherTrainConfig:
    lr: float = 1e-4
    batch_size: int = 30
    iterations: int = 8400
    seed: int = 0
    widths: tuple[int, ...] = (32, 64, 128)
    fcb_width: int = 64

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError("teacher learning rate must be > 0", key="teacher_lr")
        if self.batch_size < 1:
            raise ConfigurationError("teacher batch size must be >= 1", key="teacher_batch_size")
        if self.iterations < 0:
            raise ConfigurationError("teacher iterations must be >= 0", key="teacher_iterations")


@dataclass(frozen=True)
class StudentTrainConfig:
    lr: float = 1e-4
    batch_size: int = 25
    iterations: int = 1500
    density: float = 0.1
    regrowth_period: int = 60
    regrowth_rate: float = 0.5
    weights: DistillWeights = DistillWeights()
    seed: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError("student learning rate must be > 0", key="student_lr")
        if self.batch_size < 1:
            raise ConfigurationError("student batch size must be >= 1", key="student_batch_size")
        if self.iterations < 1:
            raise ConfigurationError("student iterations must be >= 1", key="student_iterations")
        if not (0 < self.density <= 1):
            raise ConfigurationError(f"density must be in (0, 1], got {self.density}", key="density")
        RegrowthConfig(self.regrowth_period, self.regrowth_rate, self.iterations)


@dataclass
class TeacherResult:
    extractor: net.ParamSet
    fcb: net.ParamSet
    losses: list[float]


@dataclass
class StudentResult:
    params: net.ParamSet
    mask: SparsityMask
    losses: list[float]
    # one record per regrowth event: (iteration, rate, {layer: (pruned, grown, active)})
    events: list[tuple] = field(default_factory=list)


def _batch_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def train_teacher(source: Dataset, cfg: TeacherTrainConfig) -> TeacherResult:
    """Fit extractor and final block on labeled source data with pixel-wise BCE."""
    labels = np.unique(source.labels)
    if not (GENUINE in labels and ATTACK in labels):
        raise ConfigurationError("teacher training needs both genuine and attack samples")
    torch.manual_seed(cfg.seed)
    extractor = net.build_network(net.extractor_arch(cfg.widths), seed=cfg.seed)
    fcb = net.build_network(net.fcb_arch(cfg.fcb_width), seed=cfg.seed + 1, in_channels=sum(cfg.widths))
    if cfg.iterations == 0:
        return TeacherResult(extractor, fcb, [])

    ext, head = extractor.trainable(), fcb.trainable()
    # keys follow the "<set>:<name>" scheme of net.gradients
    named = {f"{i}:{k}": v for i, ps in enumerate((ext, head)) for k, v in ps.tensors.items()}
    opt = Adam(cfg.lr)
    rng = _batch_rng(cfg.seed, 1)
    losses = []
    for k in range(1, cfg.iterations + 1):
        idx = rng.integers(0, len(source), size=cfg.batch_size)
        batch = source.batch(idx)
        pyr = net.forward_features(ext, batch.data, train=True)
        head_stats: dict = {}
        d = net.forward_pixel_map(head, pyr, train=True, stats=head_stats)
        loss = pixel_bce(d, batch.labels)
        grads = net.gradients(loss, [ext, head])
        opt.step(named, grads)
        net.update_running_stats(ext, pyr.batch_stats)
        net.update_running_stats(head, head_stats)
        losses.append(loss.item())
        if k % 100 == 0:
            log.info("teacher iter %d loss %.4f", k, np.mean(losses[-100:]))
    return TeacherResult(ext.frozen().clone(), head.frozen().clone(), losses)


def train_student(
    target_genuine: Dataset,
    teacher: net.ParamSet,
    cfg: StudentTrainConfig,
    callback=None,
) -> StudentResult:
    """Distill ``teacher`` into a sparse student on genuine-only target data.

    ``callback(k, params, mask)`` is invoked after every regrowth event and
    lets callers audit mask invariants mid-run.
    """
    if len(target_genuine) == 0:
        raise ConfigurationError("student training set is empty")
    if np.any(target_genuine.labels != GENUINE):
        raise ProtocolViolation("student training data contains attack samples")
    if not (0 < cfg.density <= 1):
        raise ConfigurationError(f"density must be in (0, 1], got {cfg.density}", key="density")

    torch.manual_seed(cfg.seed)
    frozen_teacher = teacher.frozen()
    init = net.build_network(teacher.arch, seed=cfg.seed, in_channels=teacher.in_channels)
    student = init.trainable()
    names = init.conv_weight_names()
    mask = init_masks({n: student.tensors[n] for n in names}, cfg.density)
    zero_inactive_(student.tensors, mask)

    opt = Adam(cfg.lr)
    rng = _batch_rng(cfg.seed, 2)
    losses, events = [], []
    for k in range(1, cfg.iterations + 1):
        idx = rng.integers(0, len(target_genuine), size=cfg.batch_size)
        x = target_genuine.tensor(idx)
        with torch.no_grad():
            t_pyr = net.forward_features(frozen_teacher, x, train=False)
        s_pyr = net.forward_features(student, x, train=True)
        loss = distill_loss(t_pyr, s_pyr, cfg.weights)
        grads = net.gradients(loss, student)
        opt.step(student.tensors, grads, masks=mask.active)
        zero_inactive_(student.tensors, mask)
        net.update_running_stats(student, s_pyr.batch_stats)
        losses.append(loss.item())

        rate = cosine_decay(cfg.regrowth_rate, k, cfg.iterations)
        if k % cfg.regrowth_period == 0:
            ev = regrowth_cycle({n: student.tensors[n] for n in names}, mask, opt.moments, rate)
            with torch.no_grad():
                for n in names:
                    student.tensors[n].copy_(ev.weights[n])
            mask = ev.mask
            events.append(
                (k, rate, {n: (len(ev.pruned[n]), len(ev.grown[n]), int(mask.active[n].sum())) for n in names})
            )
            if callback is not None:
                callback(k, student, mask, ev)
        if k % 100 == 0:
            log.info("student iter %d loss %.4f", k, np.mean(losses[-100:]))
    return StudentResult(student.frozen().clone(), mask, losses, events)


def write_loss_trace(losses: Sequence[float], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(losses, start=1):
            w.writerow([i, repr(float(v))])
    return path
