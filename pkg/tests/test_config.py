from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from multisurrogate.config import (
    DEFAULT_N_GRID,
    DEFAULT_R,
    ConfigError,
    from_dict,
    load_config,
    parse_config,
    serialize,
)

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))

MINIMAL = {
    "experiment": "worst-case-rate",
    "basis": {"kind": "legendre", "degree": 2},
    "family": {"kind": "oscillatory", "frequencies": [1.0]},
}


def test_defaults():
    cfg = from_dict(MINIMAL)
    assert cfg.replications == DEFAULT_R == 100
    assert cfg.n_grid == DEFAULT_N_GRID == tuple(2**k for k in range(8, 14))
    assert cfg.seed == 0 and cfg.threads == 1
    assert cfg.model == {"distribution": "uniform", "lower": [0.0], "upper": [1.0]}
    assert cfg.assumptions == {"vc_class": True}


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert parse_config(serialize(cfg)).digest() == cfg.digest()


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as info:
        from_dict({**MINIMAL, "basis": {"kind": "legendre", "degree": 2, "ridge": 0.1}})
    assert any("'ridge'" in e for e in info.value.errors)


def test_all_errors_are_collected():
    bad = {"experiment": "single-rate", "replications": 0, "n_grid": [512, 256], "bogus": 1,
           "basis": {"kind": "legendre", "degree": 2}, "family": {"kind": "polynomial", "powers": [2, 3]}}
    with pytest.raises(ConfigError) as info:
        from_dict(bad)
    text = "\n".join(info.value.errors)
    for needle in ("replications", "n_grid", "'bogus'", "exactly one member"):
        assert needle in text
    assert len(info.value.errors) >= 4


def test_inconsistent_dimension_rejected():
    with pytest.raises(ConfigError, match="dimension 5 inconsistent"):
        from_dict({**MINIMAL, "basis": {"kind": "legendre", "degree": 2, "dimension": 5}})
    assert from_dict({**MINIMAL, "basis": {"kind": "legendre", "degree": 2, "dimension": 3}})


def test_structural_rules():
    with pytest.raises(ConfigError, match="mutually exclusive"):
        from_dict({**MINIMAL, "schedule": {"rule": "constant", "value": 2}})
    with pytest.raises(ConfigError, match="intercept"):
        from_dict({"experiment": "cv-rate", "basis": {"kind": "legendre", "degree": 2, "intercept": True},
                   "family": MINIMAL["family"]})
    with pytest.raises(ConfigError, match="at least two"):
        from_dict({**MINIMAL, "n_grid": [1024]})
    with pytest.raises(ConfigError, match="missing required field 'experiment'"):
        from_dict({})
    with pytest.raises(ConfigError, match="malformed YAML"):
        parse_config("experiment: [unclosed")
    with pytest.raises(ConfigError, match="bounded"):
        from_dict({**MINIMAL, "model": {"distribution": "gaussian", "lower": [0.0], "upper": [1.0]}})


def test_grid_specs():
    cfg = from_dict({**MINIMAL, "n_grid": {"start": 100, "stop": 1000, "factor": 3}})
    assert cfg.n_grid == (100, 300, 900)
    q = from_dict({"experiment": "quantile", "n_grid": [64],
                   "quantile": {"level": 0.5, "y_grid": {"start": 0, "stop": 1, "num": 5}}})
    assert q.quantile["y_grid"] == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ConfigError, match="unknown key"):
        from_dict({**MINIMAL, "n_grid": {"start": 1, "stop": 4, "num": 3}})


def test_digest_ignores_run_location():
    a = from_dict({**MINIMAL, "output_dir": "x", "threads": 4})
    b = from_dict({**MINIMAL, "output_dir": "y"})
    assert a.digest() == b.digest()
    assert a.digest() != from_dict({**MINIMAL, "seed": 1}).digest()


@settings(max_examples=60, deadline=None)
@given(
    degree=st.integers(0, 8),
    seed=st.integers(0, 2**31),
    R=st.integers(1, 500),
    start=st.integers(2, 64),
    k=st.integers(2, 6),
    freqs=st.lists(st.floats(0.1, 5, allow_nan=False), min_size=1, max_size=5),
    kind=st.sampled_from(["legendre", "monomial"]),
)
def test_serialization_round_trip(degree, seed, R, start, k, freqs, kind):
    raw = {"experiment": "worst-case-rate", "seed": seed, "replications": R,
           "n_grid": [start * 2**i for i in range(k)],
           "basis": {"kind": kind, "degree": degree},
           "family": {"kind": "oscillatory", "frequencies": freqs}}
    cfg = from_dict(raw)
    again = parse_config(serialize(cfg))
    assert again == cfg
    assert again.digest() == cfg.digest()
