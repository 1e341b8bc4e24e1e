import pytest

from ockd.config import KEYS, bundled_names, load_config, parse_config
from ockd.errors import ConfigurationError

MINIMAL = """
seed = 4
teacher_lr = 1e-3
teacher_batch_size = 4
teacher_iterations = 2
student_lr = 1e-3
student_batch_size = 4
student_iterations = 3
density = 0.1
"""


def test_minimal_config_builds_typed_configs():
    cfg = parse_config(MINIMAL)
    proto = cfg.protocol()
    assert proto.teacher.lr == 1e-3 and proto.teacher.seed == 4
    assert proto.student.seed == 5 and proto.student.regrowth_rate == 0.5
    assert proto.target.train_attack == 0 and proto.target.domain_id != proto.source.domain_id


def test_low_density_default_rate():
    assert parse_config(MINIMAL.replace("0.1", "0.01")).student().regrowth_rate == 0.2


@pytest.mark.parametrize("key", ["teacher_lr", "student_lr", "density", "seed"])
def test_missing_required_key_is_named(key):
    text = "\n".join(l for l in MINIMAL.splitlines() if not l.startswith(key + " "))
    with pytest.raises(ConfigurationError) as err:
        parse_config(text)
    assert err.value.key == key


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError) as err:
        parse_config(MINIMAL + "teacher_momentum = 0.9\n")
    assert err.value.key == "teacher_momentum"


@pytest.mark.parametrize(
    "line, key",
    [
        ('teacher_batch_size = "four"', "teacher_batch_size"),
        ("student_iterations = 2.5", "student_iterations"),
        ("density = true", "density"),
        ("target_blur = 50.0", "target_blur"),
        ('mode = "batch"', "mode"),
        ("target_color_shift = [0.1, 0.2]", "target_color_shift"),
        ("distill_weights = [0, 0, 0]", "distill_weights"),
    ],
)
def test_invalid_values_name_their_key(line, key):
    lines = [l for l in MINIMAL.splitlines() if not l.startswith(line.split(" ")[0] + " ")]
    with pytest.raises(ConfigurationError) as err:
        parse_config("\n".join(lines + [line]))
    assert err.value.key == key


def test_nested_tables_rejected():
    with pytest.raises(ConfigurationError) as err:
        parse_config(MINIMAL + "[source]\nhue = 0.1\n")
    assert err.value.key == "source"


def test_malformed_toml():
    with pytest.raises(ConfigurationError):
        parse_config("seed = = 3")


def test_override():
    cfg = parse_config(MINIMAL).override(seed=9, density=0.01, threshold_scheme="challenging")
    assert cfg["seed"] == 9 and cfg.student().density == 0.01
    assert cfg.protocol().threshold_scheme == "challenging"


def test_every_key_is_documented_by_type():
    assert all(isinstance(t, type) for t, _ in KEYS.values())


def test_bundled_configs_load():
    names = bundled_names()
    assert "desk" in names
    for name in names:
        load_config(f"bundled:{name}").protocol()
    with pytest.raises(ConfigurationError):
        load_config("bundled:nope")
