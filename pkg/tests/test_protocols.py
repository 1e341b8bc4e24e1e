from dataclasses import replace

import numpy as np
import pytest
import torch

from ockd.data import ATTACK
from ockd.errors import ConfigurationError, ProtocolViolation
from ockd.metrics import mean_std
from ockd.protocols import ProtocolConfig, run_cs_ocda, run_ocda
from ockd.protocols.harness import split_validation
from ockd.protocols.synth import DomainSpec, generate_domain
from ockd.training import StudentTrainConfig, TeacherTrainConfig

SOURCE = DomainSpec(domain_id=0, train_genuine=6, train_attack=6, test_genuine=2, test_attack=2, seed=1)
TARGET = DomainSpec(domain_id=1, train_genuine=10, train_attack=0, test_genuine=4, test_attack=5, seed=2, grid_period=9.0)
TEACHER = TeacherTrainConfig(lr=1e-3, batch_size=4, iterations=4, widths=(2, 3, 4), fcb_width=2)
STUDENT = StudentTrainConfig(lr=1e-3, batch_size=2, iterations=6, density=0.1, regrowth_period=3)


def tiny(**kw):
    base = dict(source=SOURCE, target=TARGET, teacher=TEACHER, student=STUDENT)
    return ProtocolConfig(**{**base, **kw})


def test_attacks_in_target_train_are_rejected():
    with pytest.raises(ProtocolViolation):
        run_ocda(tiny(target=replace(TARGET, train_attack=2)))


def test_mode_checks():
    with pytest.raises(ConfigurationError):
        run_ocda(tiny(mode="client-specific"))
    with pytest.raises(ConfigurationError):
        tiny(mode="client-specific", n_clients=1)
    with pytest.raises(ConfigurationError):
        tiny(threshold_scheme="lucky")


def test_ocda_hygiene_and_reports():
    res = run_ocda(tiny())
    task = res.tasks[0]
    assert np.intersect1d(task.train_ids, task.test.ids).size == 0
    assert set(task.reports) == {"ours", "dt"}
    assert len(task.scores["ours"]) == len(task.test) == 9
    assert 0 <= res.ours.hter <= 1 and 0 <= res.baseline.auc <= 1


def test_challenging_scheme_holds_out_validation():
    res = run_ocda(tiny(threshold_scheme="challenging"))
    task = res.tasks[0]
    # 10 genuine frames: 8 train the student, 2 set the threshold
    assert len(task.train_ids) == 12 + 10
    assert task.student.losses and np.isfinite(task.reports["ours"].threshold)


def test_validation_split_is_disjoint_and_deterministic():
    gen = generate_domain(replace(TARGET, train_genuine=20)).train.genuine
    a_train, a_val = split_validation(gen, 0.2, seed=3)
    b_train, b_val = split_validation(gen, 0.2, seed=3)
    assert len(a_val) == 4 and len(a_train) == 16
    assert np.intersect1d(a_train.ids, a_val.ids).size == 0
    assert np.array_equal(a_val.ids, b_val.ids)


def test_client_specific_students_are_distinct():
    res = run_cs_ocda(tiny(mode="client-specific", n_clients=3, client_train_genuine=4))
    assert [t.client for t in res.tasks] == [0, 1, 2]
    students = [t.student for t in res.tasks]
    for i in range(3):
        for j in range(i + 1, 3):
            a, b = students[i], students[j]
            assert any(
                not torch.equal(a.params.tensors[n] * a.mask.active[n].view_as(a.params.tensors[n]),
                                b.params.tensors[n] * b.mask.active[n].view_as(b.params.tensors[n]))
                for n in a.mask.active
            )
    for t in res.tasks:
        assert np.all(t.test.clients == t.client)
        assert np.all(t.student.mask.density == 0.1)
    hters = [t.reports["ours"].hter for t in res.tasks]
    assert res.overall["ours"]["hter"] == mean_std(hters)


def test_client_validation_frames_come_on_top():
    res = run_cs_ocda(tiny(mode="client-specific", n_clients=2, client_train_genuine=4, threshold_scheme="challenging"))
    for t in res.tasks:
        # 4 training frames on top of round(4 / 0.8) - 4 = 1 validation frame
        assert len(t.train_ids) == 12 + 5
        assert int((t.test.labels == ATTACK).sum()) == 5
