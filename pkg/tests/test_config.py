import pytest

from cotdr.config import (
    ConfigError,
    bundled_config,
    config_hash,
    fiber_to_dict,
    from_dict,
    load_config,
    parse_config,
)
from cotdr.fiber_channel import EnvironmentState, echo_schedule


@pytest.mark.parametrize("name, n_cores, center", [("mcf19_5km", 19, "10"), ("mcf7_10km", 7, "4"), ("mcf4_5km", 4, "c")])
def test_bundled_configs_load(name, n_cores, center):
    cfg = load_config(bundled_config(name))
    assert len(cfg.fiber.cores) == n_cores
    assert cfg.fiber.center_core_id == center
    assert cfg.temperatures == (10.0, 20.0, 30.0, 40.0, 50.0)
    assert "illustrative" in cfg.name


def test_bundled_skews_lie_in_the_reported_band():
    for name in ("mcf19_5km", "mcf7_10km"):
        cfg = load_config(bundled_config(name))
        per_km = [abs(c.skew_offset) / (c.length / 1000.0) for c in cfg.fiber.cores]
        assert max(per_km) <= 2e-9
        assert max(per_km) >= 0.5e-9


def test_bundled_group_echoes_are_resolvable():
    for name in ("mcf19_5km", "mcf7_10km", "mcf4_5km"):
        cfg = load_config(bundled_config(name))
        for group in cfg.fiber.measurement_groups():
            sched = sorted(e.delay for e in echo_schedule(cfg.fiber.select(group), EnvironmentState(20.0)))
            assert min(b - a for a, b in zip(sched, sched[1:])) > 300e-12


def test_small_config_parses(small_config):
    cfg = load_config(small_config)
    assert cfg.fiber.core("a").skew_offset == 1.5e-9  # exponent without a dot is still a float
    assert cfg.fiber.core("a").tdc == 7.1
    assert cfg.fiber.core("b").birefringence is None
    assert cfg.acquisition.prbs_order == 11
    assert cfg.acquisition.frontend == "adc7"
    assert cfg.pmd.n_points == 16


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/cfg.yaml")


def test_schema_errors_carry_line_numbers():
    text = "fiber:\n  center_core_id: a\n  cores:\n    - core_id: a\n      length: 100\n      tdc: fast\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text, "x.yaml")
    assert "x.yaml:6:" in str(info.value)
    assert "fiber.cores.0.tdc" in str(info.value)


def test_unknown_keys_and_syntax_errors():
    with pytest.raises(ConfigError, match=":3:"):
        parse_config("fiber:\n  center_core_id: a\n  colour: red\n  cores: [{core_id: a, length: 1}]\n")
    with pytest.raises(ConfigError, match="syntax"):
        parse_config("fiber: [unclosed\n")
    with pytest.raises(ConfigError):
        parse_config("- just a list\n")


def test_semantic_errors_become_config_errors():
    text = "fiber:\n  center_core_id: z\n  cores: [{core_id: a, length: 100}]\n"
    with pytest.raises(ConfigError, match="center core"):
        parse_config(text)


def test_fiber_round_trip_and_hash(small_config):
    cfg = load_config(small_config)
    raw = dict(cfg.raw)
    raw["fiber"] = fiber_to_dict(cfg.fiber)
    again = from_dict(raw)
    assert again.fiber == cfg.fiber
    assert config_hash(cfg.raw) == config_hash(load_config(small_config).raw)
    bumped = cfg.with_acquisition(n_traces=50)
    assert bumped.acquisition.n_traces == 50
    assert bumped.digest() != cfg.digest()
