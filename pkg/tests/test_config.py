import json

import pytest

from compabs.config import ConfigError, RunConfig, benchmark_defaults, load_config, save_config

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


def test_benchmark_defaults():
    b1 = benchmark_defaults(1, 8)
    assert b1.network.n == 8 and b1.sampling.n_c == 150 and b1.decomposition.sigma == 2
    assert b1.lipschitz.L_x == 1.0 and not b1.synthesis.enabled
    assert b1.eta_z == 1.0
    b2 = benchmark_defaults(2)
    assert b2.sampling.n_c == 100 and b2.sampling.n_fit == 20 and b2.decomposition.sigma == 4
    assert b2.lipschitz.L_x < 0 and b2.synthesis.enabled and b2.eta_z == 2.0
    assert b2.synthesis.radius == 2.5 and b2.synthesis.horizon == 100
    with pytest.raises(ConfigError):
        benchmark_defaults(3)


@pytest.mark.parametrize("suffix", [".toml", ".json"])
def test_roundtrip(tmp_path, suffix):
    cfg = benchmark_defaults(1, 3).replace(sampling={"seed": 7}, backend="bdd", lasso={"alpha_grid": [0.0, 0.5]})
    save_config(cfg, tmp_path / f"c{suffix}")
    back = load_config(tmp_path / f"c{suffix}")
    assert back == cfg


def test_partial_file_keeps_benchmark_defaults(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[network]\nbenchmark = 1\nn = 2\n\n[sampling]\nn_c = 10\n")
    cfg = load_config(p)
    assert cfg.network.n == 2 and cfg.sampling.n_c == 10 and cfg.sampling.n_fit == 200
    assert cfg.decomposition.mode == "chain"


@pytest.mark.parametrize("text", [
    "[network]\nbogus = 1\n",
    "[grid]\neta_x = -1.0\n",
    "[grid]\nrho_x = 0.5\n",
    "[sampling]\nn_fit = 0\n",
    "[decomposition]\nsigma = 5\n",
    "[decomposition]\nmode = \"star\"\n",
    "[network]\nn = \"four\"\n",
    "backend = \"gpu\"\n",
    "[synthesis]\nx0 = [1.0]\n",
    "network = 3\n",
])
def test_invalid_configs(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_unparsable(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_serializations_parse():
    cfg = benchmark_defaults(2)
    assert RunConfig.from_dict(tomllib.loads(cfg.to_toml())) == cfg
    assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg
