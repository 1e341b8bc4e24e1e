"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration error (the
offending key is named on stderr), 3 input/output failure.

When ``--out`` is omitted, results go to ``$OCKD_RESULTS_DIR`` if that
variable is set, otherwise to ``./results``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import ConfigurationError, ModelFormatError, OCKDError

RESULTS_ENV = "OCKD_RESULTS_DIR"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("ockd")


def _out_dir(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get(RESULTS_ENV, "results"))


def _run_config(args):
    cfg = load_config(args.config)
    overrides = {"seed": args.seed}
    if getattr(args, "density", None) is not None:
        overrides["density"] = args.density
    if getattr(args, "threshold_scheme", None) is not None:
        overrides["threshold_scheme"] = args.threshold_scheme
    return cfg.override(**overrides)


def _teacher_files(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.is_dir():
        base = p / "models" if (p / "models").is_dir() else p
        return base / "teacher_extractor.ockd", base / "teacher_fcb.ockd"
    return p, p.with_name("teacher_fcb.ockd")


# ---------------------------------------------------------------- commands


def cmd_train_teacher(args) -> int:
    from .modelio import save_model
    from .protocols.synth import generate_domain
    from .training import train_teacher, write_loss_trace

    cfg = _run_config(args)
    out = _out_dir(args)
    source = generate_domain(cfg.domain("source"))
    result = train_teacher(source.train, cfg.teacher())
    save_model(result.extractor, out / "models/teacher_extractor.ockd", "teacher-extractor")
    save_model(result.fcb, out / "models/teacher_fcb.ockd", "teacher-fcb")
    write_loss_trace(result.losses, out / "loss_teacher.csv")
    print(f"teacher written to {out / 'models'}")
    return EXIT_OK


def cmd_train_student(args) -> int:
    from .modelio import load_model, save_model
    from .protocols.harness import check_target_one_class
    from .protocols.synth import generate_domain
    from .training import train_student, write_loss_trace

    cfg = _run_config(args)
    out = _out_dir(args)
    ext_path, _ = _teacher_files(args.teacher)
    extractor, _ = load_model(ext_path)
    target_spec = cfg.domain("target")
    check_target_one_class(target_spec)
    target = generate_domain(target_spec)
    result = train_student(target.train.genuine, extractor, cfg.student())
    save_model(result.params, out / "models/student.ockd", "student", result.mask)
    write_loss_trace(result.losses, out / "loss_student.csv")
    print(f"student (density {result.mask.density:g}) written to {out / 'models/student.ockd'}")
    return EXIT_OK


def cmd_run_protocol(args) -> int:
    from .protocols.harness import run_cs_ocda, run_ocda, write_results

    cfg = _run_config(args)
    proto = cfg.protocol()
    out = _out_dir(args)
    result = run_ocda(proto) if proto.mode == "general" else run_cs_ocda(proto)
    write_results(result, out)
    for task in result.tasks:
        tag = "target" if proto.mode == "general" else f"client {task.client}"
        o, d = task.reports["ours"], task.reports["dt"]
        print(f"{tag}: ours HTER {o.hter:.4f} AUC {o.auc:.4f} | baseline HTER {d.hter:.4f} AUC {d.auc:.4f}")
    if result.overall:
        o, d = result.overall["ours"]["hter"], result.overall["dt"]["hter"]
        print(f"overall HTER ours {o[0]:.4f}+-{o[1]:.4f} | baseline {d[0]:.4f}+-{d[1]:.4f}")
    print(f"results written to {out}")
    return EXIT_OK


def _read_image(path: Path) -> np.ndarray:
    from PIL import Image

    from .net import IMAGE_SIZE

    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (IMAGE_SIZE, IMAGE_SIZE):
            im = im.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        return np.asarray(im, dtype=np.uint8).transpose(2, 0, 1).copy()


def cmd_score(args) -> int:
    from . import inference
    from .modelio import load_model

    ext_path, _ = _teacher_files(args.teacher)
    teacher, _ = load_model(ext_path)
    student, _ = load_model(args.student)
    folder = Path(args.images)
    if not folder.is_dir():
        raise FileNotFoundError(f"image directory not found: {folder}")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no images in {folder}")
    images = np.stack([_read_image(p) for p in files])
    xi = inference.score(teacher, student, images)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "image_scores.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["file", "score"] + (["decision"] if args.threshold is not None else [])
        w.writerow(header)
        for p, s in zip(files, xi):
            row = [p.name, repr(float(s))]
            if args.threshold is not None:
                row.append(inference.classify(s, args.threshold))
            w.writerow(row)
    print(f"{len(files)} scores written to {path}")
    return EXIT_OK


_EVAL_RE = re.compile(r"^eval_(ours|dt)(_client\d+)?\.csv$")


def cmd_report(args) -> int:
    from .metrics import EvalReport
    from .plotting import plot_losses, plot_roc, plot_score_histograms

    results = Path(args.results)
    if not results.is_dir():
        raise FileNotFoundError(f"results directory not found: {results}")
    evals = sorted(p for p in results.iterdir() if _EVAL_RE.match(p.name))
    if not evals:
        raise FileNotFoundError(f"no eval_*.csv files in {results}")
    out = Path(args.out) if args.out is not None else results / "report"
    out.mkdir(parents=True, exist_ok=True)

    rows, curves = [], {}
    for p in evals:
        method, client = _EVAL_RE.match(p.name).groups()
        task = client[1:] if client else "target"
        rep = EvalReport.read_csv(p)
        rows.append([task, method, rep.threshold, rep.hter, rep.acer, rep.auc])
        roc_path = results / p.name.replace("eval_", "roc_")
        if roc_path.exists():
            with open(roc_path, newline="", encoding="utf-8") as fh:
                pts = [(float(r["fdr"]), float(r["tdr"])) for r in csv.DictReader(fh)]
            curves[f"{method} {task}"] = pts
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "method", "threshold", "hter", "acer", "auc"])
        for r in rows:
            w.writerow(r[:2] + [repr(float(v)) for v in r[2:]])
        if (results / "overall.csv").exists():
            with open(results / "overall.csv", newline="", encoding="utf-8") as src:
                for r in csv.DictReader(src):
                    if r["metric"] == "hter":
                        w.writerow(["overall", r["method"], "", r["mean"], "", ""])
    figures = [plot_roc(curves, out / "roc.png")]
    scores_csv = results / "scores.csv"
    if scores_csv.exists():
        data = np.genfromtxt(scores_csv, delimiter=",", names=True)
        data = np.atleast_1d(data)
        figures.append(
            plot_score_histograms(
                {"ours": data["score_ours"], "dt": data["score_dt"]},
                data["label"].astype(int),
                out / "scores.png",
            )
        )
    traces = {}
    for p in sorted(results.glob("loss_*.csv")):
        with open(p, newline="", encoding="utf-8") as fh:
            traces[p.stem[5:]] = np.array([float(r["loss"]) for r in csv.DictReader(fh)])
    if traces:
        figures.append(plot_losses(traces, out / "losses.png"))
    print(f"summary and {len(figures)} figures written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ockd", description="One-class teacher/student anomaly detection on synthetic domains."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="TOML run config, or bundled:<name>")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help=f"output directory (default ${RESULTS_ENV} or ./results)")

    p = sub.add_parser("train-teacher", help="train the teacher on the source domain")
    common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="distill a sparse student on target genuine data")
    common(p)
    p.add_argument("--teacher", required=True, help="teacher output directory or extractor file")
    p.add_argument("--density", type=float, default=None, help="override the student density")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("run-protocol", help="run a full adaptation protocol and write reports")
    common(p)
    p.add_argument("--density", type=float, default=None, help="override the student density")
    p.add_argument("--threshold-scheme", choices=["ideal", "challenging"], default=None)
    p.set_defaults(func=cmd_run_protocol)

    p = sub.add_parser("score", help="score a directory of images with a teacher/student pair")
    common(p, config=False)
    p.add_argument("--teacher", required=True, help="teacher output directory or extractor file")
    p.add_argument("--student", required=True, help="student model file")
    p.add_argument("--images", required=True, help="directory of RGB images")
    p.add_argument("--threshold", type=float, default=None, help="also emit decisions at this threshold")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="summarize a results directory with CSV and figures")
    p.add_argument("results", help="directory written by run-protocol")
    p.add_argument("--out", default=None, help="report directory (default <results>/report)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"ockd: configuration error{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ModelFormatError) as exc:
        print(f"ockd: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OCKDError as exc:
        print(f"ockd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
