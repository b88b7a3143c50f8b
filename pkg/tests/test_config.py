import pytest

from flakesift.config import Config, ConfigError, load_config, parse_config
from flakesift.strdist import FEATURE_NAMES


def test_defaults():
    cfg = Config()
    assert (cfg.min_silhouette, cfg.linkage, cfg.k_folds, cfg.n_estimators, cfg.seed) == (0.6, "average", 5, 100, 42)
    assert cfg.min_flaky_for_ml == 10 and cfg.trace_sample_k == 5
    assert cfg.enabled_features == list(range(len(FEATURE_NAMES)))


def test_parse_grammar():
    text = """
    # comment
    seed = 7
    linkage = complete
    disabled_features = name_jaro, code_jaro
    min_silhouette=0.5
    """
    values = parse_config(text)
    assert values == {"seed": 7, "linkage": "complete", "disabled_features": ("name_jaro", "code_jaro"),
                      "min_silhouette": 0.5}
    cfg = Config(**values)
    assert FEATURE_NAMES.index("name_jaro") not in cfg.enabled_features


@pytest.mark.parametrize("text", ["bogus = 1", "seed 7", "seed = seven", "linkage = centroid",
                                  "min_silhouette = 2", "k_folds = 1", "disabled_features = nope"])
def test_invalid_config(text):
    with pytest.raises(ConfigError):
        Config(**parse_config(text))


def test_precedence(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("seed = 1\nlinkage = single\n")
    assert load_config(str(path), environ={}).seed == 1
    assert load_config(str(path), environ={"FLAKESIFT_SEED": "2"}).seed == 2
    cfg = load_config(str(path), environ={"FLAKESIFT_SEED": "2"}, seed=3, linkage=None)
    assert cfg.seed == 3 and cfg.linkage == "single"
    assert load_config(None, environ={}).seed == 42
