"""Flat TOML run configurations.

A run file is a single TOML table of scalar (or short list) values.  Domain
parameters use ``source_`` and ``target_`` prefixes, e.g. ``target_blur``.
Every key is type-checked before any computation starts, unknown keys are
rejected, and every error names the offending key.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import tomli

from .errors import ConfigurationError
from .losses import DistillWeights
from .protocols.harness import ProtocolConfig
from .protocols.synth import DomainSpec
from .training import StudentTrainConfig, TeacherTrainConfig

BUNDLED_PREFIX = "bundled:"

REQUIRED = object()

# key -> (type, default); REQUIRED marks keys a file must provide
_RUN_KEYS: dict[str, tuple[type, Any]] = {
    "seed": (int, REQUIRED),
    "mode": (str, "general"),
    "threshold_scheme": (str, "ideal"),
    "n_clients": (int, 5),
    "client_train_genuine": (int, 25),
    "validation_fraction": (float, 0.2),
    "target_frr": (float, 0.1),
    "teacher_lr": (float, REQUIRED),
    "teacher_batch_size": (int, REQUIRED),
    "teacher_iterations": (int, REQUIRED),
    "teacher_widths": (list, [32, 64, 128]),
    "fcb_width": (int, 64),
    "student_lr": (float, REQUIRED),
    "student_batch_size": (int, REQUIRED),
    "student_iterations": (int, REQUIRED),
    "density": (float, REQUIRED),
    "regrowth_period": (int, 60),
    # absent: 0.5 at density >= 0.1, else 0.2
    "regrowth_rate": (float, None),
    "distill_weights": (list, [0.33, 0.33, 0.33]),
}


_DOMAIN_DEFAULTS = {
    "source": {"domain_id": 0},
    # the target contributes genuine training frames only
    "target": {"domain_id": 1, "train_genuine": 100, "train_attack": 0},
}


def _domain_keys(prefix: str) -> dict[str, tuple[type, Any]]:
    out = {}
    for f in dataclasses.fields(DomainSpec):
        default = _DOMAIN_DEFAULTS[prefix].get(f.name, f.default)
        if f.name == "color_shift":
            out[f"{prefix}_{f.name}"] = (list, list(default))
        else:
            out[f"{prefix}_{f.name}"] = (type(default), default)
    return out


KEYS: dict[str, tuple[type, Any]] = {**_RUN_KEYS, **_domain_keys("source"), **_domain_keys("target")}


def _check_type(key: str, value: Any, typ: type) -> Any:
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key} must be a number, got {value!r}", key=key)
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{key} must be an integer, got {value!r}", key=key)
        return value
    if typ is list:
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigurationError(f"{key} must be a list of numbers, got {value!r}", key=key)
        return value
    if not isinstance(value, typ):
        raise ConfigurationError(f"{key} must be of type {typ.__name__}, got {value!r}", key=key)
    return value


def default_regrowth_rate(density: float) -> float:
    return 0.5 if density >= 0.1 else 0.2


@dataclass(frozen=True)
class RunConfig:
    """Validated flat key-value document plus the typed configs built from it."""

    values: dict[str, Any]

    @classmethod
    def from_mapping(cls, raw: dict[str, Any]) -> "RunConfig":
        for key, value in raw.items():
            if key not in KEYS:
                raise ConfigurationError(f"unknown configuration key {key!r}", key=key)
            if isinstance(value, dict):
                raise ConfigurationError(f"{key} must be a flat value, not a table", key=key)
        vals = {}
        for key, (typ, default) in KEYS.items():
            if key in raw:
                vals[key] = _check_type(key, raw[key], typ)
            elif default is REQUIRED:
                raise ConfigurationError(f"missing required configuration key {key!r}", key=key)
            else:
                vals[key] = default
        cfg = cls(vals)
        cfg.protocol()  # surface range errors now, before any compute
        return cfg

    def override(self, **kw) -> "RunConfig":
        """Copy with command-line overrides applied (``None`` values are ignored)."""
        # optional keys left unset stay unset
        vals = {k: v for k, v in self.values.items() if v is not None}
        for key, value in kw.items():
            if value is None:
                continue
            vals[key] = _check_type(key, value, KEYS[key][0])
        return RunConfig.from_mapping(vals)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def domain(self, prefix: str) -> DomainSpec:
        kw = {f.name: self.values[f"{prefix}_{f.name}"] for f in dataclasses.fields(DomainSpec)}
        kw["color_shift"] = tuple(float(c) for c in kw["color_shift"])
        if len(kw["color_shift"]) != 3:
            raise ConfigurationError("color_shift needs 3 entries", key=f"{prefix}_color_shift")
        try:
            return DomainSpec(**kw)
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc), key=f"{prefix}_{exc.key}") from exc

    def teacher(self) -> TeacherTrainConfig:
        v = self.values
        widths = v["teacher_widths"]
        if len(widths) != 3 or not all(isinstance(w, int) and w > 0 for w in widths):
            raise ConfigurationError("teacher_widths needs 3 positive integers", key="teacher_widths")
        if v["fcb_width"] < 1:
            raise ConfigurationError("fcb_width must be >= 1", key="fcb_width")
        return TeacherTrainConfig(
            lr=v["teacher_lr"],
            batch_size=v["teacher_batch_size"],
            iterations=v["teacher_iterations"],
            seed=v["seed"],
            widths=tuple(widths),
            fcb_width=v["fcb_width"],
        )

    def student(self) -> StudentTrainConfig:
        v = self.values
        if len(v["distill_weights"]) != 3:
            raise ConfigurationError("distill_weights needs 3 entries", key="distill_weights")
        try:
            weights = DistillWeights(*(float(x) for x in v["distill_weights"]))
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc), key="distill_weights") from exc
        if not (0 < v["density"] <= 1):
            raise ConfigurationError(f"density must be in (0, 1], got {v['density']}", key="density")
        rate = v["regrowth_rate"]
        rate = default_regrowth_rate(v["density"]) if rate is None else rate
        if not (0 < rate < 1):
            raise ConfigurationError("regrowth_rate must be in (0, 1)", key="regrowth_rate")
        if v["regrowth_period"] < 1:
            raise ConfigurationError("regrowth_period must be >= 1", key="regrowth_period")
        return StudentTrainConfig(
            lr=v["student_lr"],
            batch_size=v["student_batch_size"],
            iterations=v["student_iterations"],
            density=v["density"],
            regrowth_period=v["regrowth_period"],
            regrowth_rate=rate,
            weights=weights,
            seed=v["seed"] + 1,
        )

    def protocol(self) -> ProtocolConfig:
        v = self.values
        if v["n_clients"] < 1:
            raise ConfigurationError("n_clients must be >= 1", key="n_clients")
        if v["client_train_genuine"] < 2:
            raise ConfigurationError("client_train_genuine must be >= 2", key="client_train_genuine")
        if not (0 <= v["target_frr"] <= 1):
            raise ConfigurationError("target_frr must be in [0, 1]", key="target_frr")
        return ProtocolConfig(
            source=self.domain("source"),
            target=self.domain("target"),
            teacher=self.teacher(),
            student=self.student(),
            mode=v["mode"],
            threshold_scheme=v["threshold_scheme"],
            n_clients=v["n_clients"],
            client_train_genuine=v["client_train_genuine"],
            validation_fraction=v["validation_fraction"],
            target_frr=v["target_frr"],
        )


def bundled_names() -> list[str]:
    root = resources.files("ockd") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def read_config_text(source: str | Path) -> str:
    """Text of a config file; ``bundled:<name>`` selects a config shipped with the package."""
    s = str(source)
    if s.startswith(BUNDLED_PREFIX):
        name = s[len(BUNDLED_PREFIX):]
        if name not in bundled_names():
            raise ConfigurationError(f"no bundled config named {name!r}; have {bundled_names()}", key="config")
        return (resources.files("ockd") / "configs" / f"{name}.toml").read_text(encoding="utf-8")
    return Path(s).read_text(encoding="utf-8")


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"configuration is not valid TOML: {exc}", key="config") from exc
    return RunConfig.from_mapping(raw)


def load_config(source: str | Path) -> RunConfig:
    return parse_config(read_config_text(source))
