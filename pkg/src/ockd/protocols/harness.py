"""General and client-specific one-class domain adaptation runs."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import inference
from ..data import GENUINE, Dataset
from ..errors import ConfigurationError, ProtocolViolation
from ..metrics import EvalReport, evaluate, mean_std, select_threshold_frr, select_threshold_optimal
from ..modelio import save_model
from ..training import (
    StudentResult,
    StudentTrainConfig,
    TeacherResult,
    TeacherTrainConfig,
    train_student,
    train_teacher,
    write_loss_trace,
)
from .synth import DomainData, DomainSpec, client_specs, generate_domain

log = logging.getLogger(__name__)

MODES = ("general", "client-specific")
SCHEMES = ("ideal", "challenging")
METHODS = ("ours", "dt")


@dataclass(frozen=True)
class ProtocolConfig:
    source: DomainSpec
    target: DomainSpec
    teacher: TeacherTrainConfig = TeacherTrainConfig()
    student: StudentTrainConfig = StudentTrainConfig()
    mode: str = "general"
    threshold_scheme: str = "ideal"
    n_clients: int = 5
    client_train_genuine: int = 25
    validation_fraction: float = 0.2
    target_frr: float = 0.10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}", key="mode")
        if self.threshold_scheme not in SCHEMES:
            raise ConfigurationError(f"threshold scheme must be one of {SCHEMES}", key="threshold_scheme")
        if self.mode == "client-specific" and self.n_clients < 2:
            raise ConfigurationError("client-specific mode needs at least 2 clients", key="n_clients")
        if not (0 < self.validation_fraction < 1):
            raise ConfigurationError("validation fraction must be in (0, 1)", key="validation_fraction")


@dataclass
class TaskResult:
    """Outcome of one target task (the whole target, or one client)."""

    client: int
    reports: dict[str, EvalReport]
    test: Dataset
    scores: dict[str, np.ndarray]
    student: StudentResult
    train_ids: np.ndarray


@dataclass
class ProtocolResult:
    config: ProtocolConfig
    teacher: TeacherResult
    tasks: list[TaskResult]
    overall: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)

    @property
    def ours(self) -> EvalReport:
        return self.tasks[0].reports["ours"]

    @property
    def baseline(self) -> EvalReport:
        return self.tasks[0].reports["dt"]

    def students(self) -> dict[int, StudentResult]:
        return {t.client: t.student for t in self.tasks}


def check_target_one_class(spec: DomainSpec) -> None:
    if spec.train_attack > 0:
        raise ProtocolViolation("target training split must contain genuine samples only")


def split_validation(genuine: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Hold out ``fraction`` of genuine training samples (at least one) for validation."""
    n = len(genuine)
    n_val = max(1, int(round(n * fraction)))
    if n_val >= n:
        raise ConfigurationError("validation split would leave no training samples")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 99])).permutation(n)
    return genuine.subset(np.sort(perm[n_val:])), genuine.subset(np.sort(perm[:n_val]))


def _assert_hygiene(train_ids: np.ndarray, test: Dataset, student_train: Dataset) -> None:
    if np.intersect1d(train_ids, test.ids).size:
        raise ProtocolViolation("target test samples leaked into training")
    if np.any(student_train.labels != GENUINE):
        raise ProtocolViolation("student stream saw attack samples")


def _run_task(
    cfg: ProtocolConfig,
    teacher: TeacherResult,
    domain: DomainData,
    source_ids: np.ndarray,
    student_cfg: StudentTrainConfig,
) -> TaskResult:
    train_gen = domain.train.genuine
    val = None
    if cfg.threshold_scheme == "challenging":
        train_gen, val = split_validation(train_gen, cfg.validation_fraction, student_cfg.seed)
    train_ids = np.concatenate([source_ids, train_gen.ids] + ([val.ids] if val is not None else []))
    _assert_hygiene(train_ids, domain.test, train_gen)

    student = train_student(train_gen, teacher.extractor, student_cfg)
    test_x = domain.test.tensor()
    scores = {
        "ours": inference.score(teacher.extractor, student.params, test_x),
        "dt": inference.dt_baseline_score(teacher.extractor, teacher.fcb, test_x),
    }
    labels = domain.test.labels
    reports = {}
    for method in METHODS:
        if cfg.threshold_scheme == "ideal":
            thr = select_threshold_optimal(scores[method], labels)
        else:
            vx = val.tensor()
            vs = (
                inference.score(teacher.extractor, student.params, vx)
                if method == "ours"
                else inference.dt_baseline_score(teacher.extractor, teacher.fcb, vx)
            )
            thr = select_threshold_frr(vs, cfg.target_frr)
        reports[method] = evaluate(scores[method], labels, thr)
    log.info(
        "client %d: ours HTER %.4f AUC %.4f | dt HTER %.4f AUC %.4f",
        domain.client, reports["ours"].hter, reports["ours"].auc, reports["dt"].hter, reports["dt"].auc,
    )
    return TaskResult(domain.client, reports, domain.test, scores, student, train_ids)


def prepare_source(cfg: ProtocolConfig) -> DomainData:
    return generate_domain(cfg.source)


def fit_teacher(cfg: ProtocolConfig, source: DomainData | None = None) -> TeacherResult:
    source = prepare_source(cfg) if source is None else source
    return train_teacher(source.train, cfg.teacher)


def run_ocda(cfg: ProtocolConfig, teacher: TeacherResult | None = None) -> ProtocolResult:
    """Teacher on source, one student on target genuine, scoring on target test."""
    if cfg.mode != "general":
        raise ConfigurationError("run_ocda needs mode = general", key="mode")
    check_target_one_class(cfg.target)
    source = prepare_source(cfg)
    target = generate_domain(cfg.target)
    if teacher is None:
        teacher = train_teacher(source.train, cfg.teacher)
    task = _run_task(cfg, teacher, target, source.train.ids, cfg.student)
    return ProtocolResult(cfg, teacher, [task])


def run_cs_ocda(cfg: ProtocolConfig, teacher: TeacherResult | None = None) -> ProtocolResult:
    """Shared teacher, one student per client, per-client scoring and aggregation."""
    if cfg.mode != "client-specific":
        raise ConfigurationError("run_cs_ocda needs mode = client-specific", key="mode")
    check_target_one_class(cfg.target)
    source = prepare_source(cfg)
    n_train = cfg.client_train_genuine
    if cfg.threshold_scheme == "challenging":
        # validation frames come on top of the training frames
        n_train = int(round(n_train / (1 - cfg.validation_fraction)))
    specs = client_specs(cfg.target, cfg.n_clients, n_train, cfg.target.seed)
    if teacher is None:
        teacher = train_teacher(source.train, cfg.teacher)
    tasks = []
    for c, spec in enumerate(specs):
        dom = generate_domain(spec, client=c)
        scfg = replace(cfg.student, seed=cfg.student.seed + c)
        tasks.append(_run_task(cfg, teacher, dom, source.train.ids, scfg))
    result = ProtocolResult(cfg, teacher, tasks)
    result.overall = aggregate(tasks)
    return result


def aggregate(tasks: list[TaskResult]) -> dict[str, dict[str, tuple[float, float]]]:
    out = {}
    for method in METHODS:
        out[method] = {
            m: mean_std([getattr(t.reports[method], m) for t in tasks]) for m in ("hter", "auc", "acer")
        }
    return out


# ---------------------------------------------------------------- results IO


def _suffix(result: ProtocolResult, task: TaskResult) -> str:
    return "" if result.config.mode == "general" else f"_client{task.client}"


def expected_outputs(cfg: ProtocolConfig) -> list[str]:
    """CSV files :func:`write_results` produces for ``cfg``."""
    suffixes = [""] if cfg.mode == "general" else [f"_client{c}" for c in range(cfg.n_clients)]
    files = ["scores.csv", "loss_teacher.csv"]
    for s in suffixes:
        files += [f"eval_ours{s}.csv", f"eval_dt{s}.csv", f"roc_ours{s}.csv", f"roc_dt{s}.csv", f"loss_student{s}.csv"]
    if cfg.mode == "client-specific":
        files.append("overall.csv")
    return sorted(files)


def expected_models(cfg: ProtocolConfig) -> list[str]:
    suffixes = [""] if cfg.mode == "general" else [f"_client{c}" for c in range(cfg.n_clients)]
    return sorted(["models/teacher_extractor.ockd", "models/teacher_fcb.ockd"] + [f"models/student{s}.ockd" for s in suffixes])


def write_results(result: ProtocolResult, out_dir) -> Path:
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    write_loss_trace(result.teacher.losses, out / "loss_teacher.csv")
    save_model(result.teacher.extractor, out / "models/teacher_extractor.ockd", "teacher-extractor")
    save_model(result.teacher.fcb, out / "models/teacher_fcb.ockd", "teacher-fcb")
    with open(out / "scores.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "client", "label", "score_ours", "score_dt"])
        for task in result.tasks:
            for i in range(len(task.test)):
                w.writerow([
                    int(task.test.ids[i]), task.client, int(task.test.labels[i]),
                    repr(float(task.scores["ours"][i])), repr(float(task.scores["dt"][i])),
                ])
    for task in result.tasks:
        s = _suffix(result, task)
        for method, rep in task.reports.items():
            rep.write_csv(out / f"eval_{method}{s}.csv")
            rep.write_roc_csv(out / f"roc_{method}{s}.csv")
        write_loss_trace(task.student.losses, out / f"loss_student{s}.csv")
        save_model(task.student.params, out / f"models/student{s}.ockd", "student", task.student.mask)
    if result.overall:
        with open(out / "overall.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "metric", "mean", "std", "n"])
            for method, table in result.overall.items():
                for metric, (mu, sd) in table.items():
                    w.writerow([method, metric, repr(mu), repr(sd), len(result.tasks)])
    return out
