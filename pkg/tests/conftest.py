import time
from dataclasses import dataclass
from pathlib import Path

import pytest
import torch

from ockd import net

torch.set_num_threads(1)


@pytest.fixture
def tiny_arch():
    return net.extractor_arch((2, 3, 4))


@pytest.fixture
def images():
    gen = torch.Generator().manual_seed(0)
    return torch.rand((2, 3, 128, 128), generator=gen)


def finite_difference(fn, tensors: dict, step: float = 1e-5) -> dict:
    """Central differences of scalar ``fn()`` with respect to every entry of ``tensors``."""
    out = {}
    with torch.no_grad():
        for name, t in tensors.items():
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = fn().item()
                flat[i] = orig - step
                down = fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * step)
            out[name] = g
    return out


def max_relative_error(analytic: dict, numeric: dict, params: dict, min_param: float = 1e-6):
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        sel = params[name].detach().abs() >= min_param
        if not sel.any():
            continue
        a, n = a[sel].double(), n[sel].double()
        denom = torch.maximum(a.abs(), n.abs()).clamp_min(1e-12)
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst


# ---------------------------------------------------------------- acceptance

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line, then fail the test if the criterion failed."""

    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")


@dataclass
class DeskRun:
    config: object
    result: object
    out: Path
    seconds: float
    teacher_seconds: float


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """The bundled general-mode task, run once per session through the library."""
    from ockd.config import load_config
    from ockd.protocols.harness import fit_teacher, run_ocda, write_results

    cfg = load_config("bundled:desk")
    proto = cfg.protocol()
    out = tmp_path_factory.mktemp("desk_a")
    start = time.perf_counter()
    teacher = fit_teacher(proto)
    teacher_seconds = time.perf_counter() - start
    result = run_ocda(proto, teacher=teacher)
    write_results(result, out)
    return DeskRun(cfg, result, out, time.perf_counter() - start, teacher_seconds)
