import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from mcdirichlet import INSTANCE_NAMES, ConfigError, load_config, load_instance, parse_config
from mcdirichlet.instances import instance_text

GOOD = """\
seed: 5
instance: harmonic-ball
sim: {h: 4.0e-3, N: 500}
"""


def line_of(exc):
    msg = str(exc.value)
    assert msg.startswith("line "), msg
    return int(msg.split(":")[0].split()[1])


def test_minimal_config_resolves():
    rc = parse_config(GOOD)
    p = rc.problem()
    assert p.name == "harmonic-ball" and rc.n_paths() == 500
    cfg = rc.sim_config(workers=3)
    assert cfg.h == 4e-3 and cfg.seed == 5 and cfg.workers == 3 and cfg.level is None
    # inline overrides win over the instance, sim blocks merge key by key
    assert p.sim["bridge"] is True


def test_unknown_keys_are_rejected_with_their_line():
    with pytest.raises(ConfigError) as e:
        parse_config(GOOD + "colour: blue\n")
    assert line_of(e) == 4
    with pytest.raises(ConfigError) as e:
        parse_config("seed: 1\ninstance: harmonic-ball\nsim:\n  h: 1.0e-3\n  steps: 9\n")
    assert line_of(e) == 5 and "steps" in str(e.value)


def test_seed_is_mandatory():
    with pytest.raises(ConfigError, match="seed"):
        parse_config("instance: harmonic-ball\n")
    for bad in ("-1", "1.5", "true", "abc"):
        with pytest.raises(ConfigError):
            parse_config(f"seed: {bad}\ninstance: harmonic-ball\n")


def test_point_mass_is_rejected_at_parse_time():
    text = ("seed: 1\ndomain: {kind: ball, center: [0, 0, 0], radius: 1}\ncoefficients:\n"
            "  rho: {kind: dirac, at: [0, 0, 0]}\n")
    with pytest.raises(ConfigError, match="point masses") as e:
        parse_config(text)
    assert line_of(e) == 4


def test_other_validation_errors():
    cases = [
        "seed: 1\ninstance: no-such-thing\n",
        "seed: 1\ndomain: {kind: torus}\n",
        "seed: 1\ndomain: {kind: ball, center: [0, 0, 0], radius: 1, lo: [0, 0, 0]}\n",
        "seed: 1\ninstance: harmonic-ball\nboundary: {name: sawtooth}\n",
        "seed: 1\ninstance: harmonic-ball\ncoefficients: {mu: [{kind: zero}]}\n",
        "seed: 1\ninstance: harmonic-ball\nprobes: [[0, 0]]\n",
        "seed: 1\ninstance: harmonic-ball\nsim: {level: fine}\n",
        "seed: 1\nkato: {measures: [{label: a, measure: {kind: zero}, extra: 1}]}\n",
        "seed: 1\n  bad: [indent\n",
        "- just\n- a list\n",
    ]
    for text in cases:
        with pytest.raises(ConfigError):
            parse_config(text)


def test_problem_needs_a_domain():
    rc = parse_config("seed: 1\nkato: {alpha: 1.0}\n")
    with pytest.raises(ConfigError, match="instance"):
        rc.problem()


@given(st.integers(0, 2**63), st.floats(1e-4, 0.1), st.integers(100, 10**6))
def test_round_trip_through_yaml(seed, h, N):
    rc = parse_config(f"seed: {seed}\ninstance: poisson-ball\nsim: {{h: {h!r}, N: {N}}}\n")
    again = parse_config(rc.dump())
    assert again.data == rc.data
    assert again.sim_config() == rc.sim_config()


def test_with_seed_keeps_everything_else():
    rc = parse_config(GOOD)
    other = rc.with_seed(99)
    assert other.seed == 99 and rc.seed == 5
    assert {k: v for k, v in other.data.items() if k != "seed"} == {k: v for k, v in rc.data.items() if k != "seed"}


def test_load_config_from_file(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(GOOD)
    assert load_config(p).seed == 5
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


@pytest.mark.parametrize("name", INSTANCE_NAMES)
def test_builtin_instances_parse(name):
    rc = parse_config(instance_text(name))
    p = rc.problem()
    assert p.name == name and p.domain.dim == 3
    assert p.domain.contains(np.asarray(p.probes[0]))
    assert yaml.safe_load(instance_text(name))["seed"] >= 0
    assert load_instance(name).name == name
