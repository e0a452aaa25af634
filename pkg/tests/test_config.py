"""Test configuration files."""

import numpy as np
import pytest

from wxbs.config import (
    EvalConfig,
    RunConfig,
    ToySpec,
    build,
    load_config,
    load_toy_spec,
    parse_config,
)
from wxbs.exceptions import ConfigError
from wxbs.losslab import TOY_POINTS
from wxbs.mods import ModsConfig
from wxbs.synth import StepConfig

NESTED = """{
  "mods": {
    "ladder": "5,1-7",
    "theta_m": 20,
    "ransac": {"inlier_threshold": 3.0, "seed": 42}
  },
  "detect": {"step_id": 2, "scales": [1, 0.5], "detector_params": {"r_min": 100}},
  "eval": {"thetas": [1, 2, 5]},
  "threads": 4
}
"""


def test_defaults():
    cfg = parse_config("{}")
    assert cfg == RunConfig()
    assert cfg.mods == ModsConfig()
    assert cfg.threads is None
    assert cfg.mods_config() is cfg.mods
    assert load_config() == RunConfig()


def test_nested():
    cfg = parse_config(NESTED)
    assert cfg.mods.ladder == "5,1-7"
    assert cfg.mods.theta_m == 20
    assert cfg.mods.ransac.inlier_threshold == 3.0
    assert cfg.mods.ransac.seed == 42
    # Untouched fields keep their defaults
    assert cfg.mods.ransac.max_iter == ModsConfig().ransac.max_iter
    assert [s.step_id for s in cfg.mods.active_steps()] == [5, 1, 2, 3, 4, 6, 7]
    assert cfg.detect.step_id == 2
    assert cfg.detect.scales == (1.0, 0.5)
    assert cfg.detect.detector_params.r_min == 100
    assert cfg.eval.thetas == (1.0, 2.0, 5.0)
    assert cfg.threads == 4


@pytest.mark.parametrize(
    "text, where",
    [
        ('{"mods": {"ransac": {"max_iters": 10}}}', "mods.ransac.max_iters"),
        ('{"colour": 1}', "colour"),
        ('{"detect": {"detector_params": {"rmin": 1}}}', "detect.detector_params.rmin"),
    ],
)
def test_unknown_key(text, where):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert repr(where) in str(e.value)


@pytest.mark.parametrize(
    "text, where",
    [
        ('{"threads": true}', "threads"),
        ('{"threads": 1.5}', "threads"),
        ('{"mods": {"theta_m": "15"}}', "mods.theta_m"),
        (
            '{"mods": {"ransac": {"inlier_threshold": "3"}}}',
            "mods.ransac.inlier_threshold",
        ),
        ('{"mods": {"ransac": {"lo_enabled": 1}}}', "mods.ransac.lo_enabled"),
        ('{"mods": {"ransac": 3}}', "mods.ransac"),
        ('{"mods": {"theta_m": null}}', "mods.theta_m"),
        ('{"eval": {"thetas": 5}}', "eval.thetas"),
        ('{"detect": {"scales": [1, "x"]}}', "detect.scales[1]"),
    ],
)
def test_wrong_type(text, where):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert where in str(e.value)


def test_integers_are_numbers():
    cfg = parse_config('{"mods": {"ransac": {"inlier_threshold": 3}}}')
    assert isinstance(cfg.mods.ransac.inlier_threshold, float)
    assert parse_config('{"output": null}').output is None


def test_syntax_error():
    with pytest.raises(ConfigError) as e:
        parse_config('{\n  "threads": 4,\n}', "run.json")
    assert str(e.value).startswith("run.json:3:1:")
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")


def test_rejected_values():
    with pytest.raises(ConfigError):
        parse_config('{"threads": 0}')
    with pytest.raises(ConfigError) as e:
        parse_config('{"mods": {"ladder": "9"}}')
    assert str(e.value).startswith("mods:")
    with pytest.raises(ConfigError):
        parse_config('{"mods": {"model": "affine"}}')
    with pytest.raises(ConfigError):
        parse_config('{"eval": {"radius": 0}}')


def test_seed_override():
    cfg = parse_config('{"seed": 7, "mods": {"ransac": {"seed": 42}}}')
    assert cfg.mods.ransac.seed == 42
    mods = cfg.mods_config()
    assert mods.ransac.seed == 7
    assert mods.ladder == cfg.mods.ladder


def test_eval_config():
    assert EvalConfig().thetas[0] == 1.0
    assert len(EvalConfig().thetas) == 20
    with pytest.raises(ValueError):
        EvalConfig(thetas=())
    with pytest.raises(ValueError):
        EvalConfig(thetas=(1.0, -2.0))


def test_build_step():
    step = build(StepConfig, {"step_id": 3, "tilts": [1, 2]})
    assert step.tilts == (1.0, 2.0)
    assert step.descriptor == StepConfig().descriptor


def test_toy_spec():
    spec = ToySpec()
    np.testing.assert_array_equal(spec.point_array(), TOY_POINTS)
    # Callers may modify the array they get
    spec.point_array()[0, 0, 0] = 100.0
    np.testing.assert_array_equal(spec.point_array(), TOY_POINTS)
    pts = ToySpec(points=(((0.0, 0.0), (1.0, 0.0)),)).point_array()
    assert pts.shape == (1, 2, 2)
    with pytest.raises(ValueError):
        ToySpec(loss="hinge")
    with pytest.raises(ValueError):
        ToySpec(steps=-1)
    with pytest.raises(ValueError):
        ToySpec(points=(((0.0, 0.0, 0.0), (1.0, 0.0, 0.0)),))
    with pytest.raises(ValueError):
        ToySpec(points=())


def test_files(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(NESTED, encoding="utf-8")
    assert load_config(path) == parse_config(NESTED)
    path.write_text('{"mods": {"bogus": 1}}', encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(OSError):
        load_config(tmp_path / "missing.json")
    toy = tmp_path / "toy.json"
    toy.write_text(
        '{"loss": "posdist", "steps": 5, "points": [[[0, 0], [1, 1]]]}',
        encoding="utf-8",
    )
    spec = load_toy_spec(toy)
    assert spec.loss == "posdist"
    assert spec.steps == 5
    np.testing.assert_array_equal(spec.point_array(), [[[0.0, 0.0], [1.0, 1.0]]])
    toy.write_text('{"loss": "hinge"}', encoding="utf-8")
    with pytest.raises(ConfigError):
        load_toy_spec(toy)
