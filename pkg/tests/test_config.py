import pytest

from vrident.config import CONFIG_ENV_VAR, PipelineConfig, load_config
from vrident.errors import ConfigError


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.blocking.mode == "fba" and cfg.blocking.r == 1.0
    assert cfg.classifier.n_estimators == (50, 200)
    assert cfg.classifier.max_depth == (1, 20)
    assert cfg.classifier.iterations == 5
    assert cfg.classifier.folds == 5
    assert cfg.classifier.train_fraction == 0.9
    assert cfg.features.hj_top_k == 500


def test_load_yaml_and_relative_paths(tmp_path):
    (tmp_path / "groups.yaml").write_text("g: [1, 2]\n")
    path = tmp_path / "c.yaml"
    path.write_text("seed: 9\napp_groups: groups.yaml\nblocking:\n  r: 0.5\n")
    cfg = load_config(path)
    assert cfg.seed == 9 and cfg.blocking.r == 0.5
    assert cfg.app_groups == tmp_path / "groups.yaml"


def test_env_var_fallback(tmp_path, monkeypatch):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 4\n")
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
    assert load_config().seed == 4
    monkeypatch.delenv(CONFIG_ENV_VAR)
    assert load_config().seed == 0


def test_error_points_at_line(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 1\nblocking:\n  mode: fba\n  r: 3.0\n")
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    msg = str(exc.value)
    assert f"{path}:4: blocking.r" in msg


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("classifier:\n  trees: 10\n")
    with pytest.raises(ConfigError, match=":2: classifier.trees"):
        load_config(path)


@pytest.mark.parametrize("override", [
    {"blocking.r": 0.0}, {"blocking.r": 2.5}, {"classifier.folds": 1},
    {"classifier.train_fraction": 1.0}, {"classifier.n_estimators": (10, 5)},
])
def test_invariants(override):
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides(**override)


def test_hash_ignores_jobs_only():
    a = PipelineConfig()
    assert a.config_hash() == a.with_overrides(jobs=4).config_hash()
    assert a.config_hash() != a.with_overrides(seed=1).config_hash()


def test_bad_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: [1\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(path)
