import pytest

from mtlrec.config import CONFIG_ENV_VAR, PRODUCTION_CLASS_COUNTS, derive_seed, load_config, parse_override
from mtlrec.errors import ConfigError


def test_desk_defaults_validate():
    cfg = load_config()
    assert cfg.preset == "desk" and cfg.seed == 7
    assert cfg.synthetic.seed == cfg.seed


def test_production_preset_loads_production_values():
    cfg = load_config(preset="paper")
    assert cfg.mmoe.num_experts == 12 and cfg.train.learning_rate == 0.001 and cfg.train.batch_size == 300
    assert cfg.walk.walk_length == 100 and cfg.topics.num_clusters == 6000 and cfg.topics.threshold == 0.6
    assert (cfg.queue.min_exposures, cfg.queue.min_ctr) == (10, 0.07)
    r = cfg.retrieval
    assert (r.history_window, r.top_topics, r.num_candidates) == (128, 4, 600)
    assert PRODUCTION_CLASS_COUNTS == (50, 367, 12000)


def test_file_then_overrides_then_flags(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 3\ntopics:\n  num_clusters: 12\n  threshold: 0.5\n")
    cfg = load_config(p, ["topics.threshold=0.4"], seed=9)
    assert cfg.topics.num_clusters == 12 and cfg.topics.threshold == 0.4 and cfg.seed == 9


def test_environment_variable_names_the_file(tmp_path, monkeypatch):
    p = tmp_path / "c.yaml"
    p.write_text("ranker:\n  variant: lr\n")
    monkeypatch.setenv(CONFIG_ENV_VAR, str(p))
    assert load_config().ranker.variant == "lr"


@pytest.mark.parametrize("override", ["nope.key=1", "topics.num_clusters=abc", "topics.threshold=2",
                                      "features.tags=3", "topics", "synthetic=5"])
def test_bad_overrides_raise_config_error(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(preset="laptop")


def test_parse_override_uses_yaml_scalars():
    assert parse_override("ranker.hidden=[8, 4]") == ("ranker.hidden", [8, 4])
    assert parse_override("features.tags=true") == ("features.tags", True)


def test_derived_seeds_differ_per_stage_and_are_stable():
    assert derive_seed(7, "train-mmoe") == derive_seed(7, "train-mmoe")
    assert derive_seed(7, "train-mmoe") != derive_seed(7, "replay")
    assert derive_seed(7, "replay") != derive_seed(8, "replay")


def test_topk_must_fit_cluster_count():
    with pytest.raises(ConfigError):
        load_config(overrides=["topics.num_clusters=3"])
