import pytest

from egfl_lab.config import (
    SEED_ENV,
    VARIANT_ORDER,
    ExperimentConfig,
    build_config,
    dump_config,
    load_config,
    parse_config_text,
)
from egfl_lab.egl import DivergenceKind
from egfl_lab.errors import ConfigError


def test_defaults_match_full_scale_run():
    """Test the default experiment sizes and thresholds"""
    cfg = ExperimentConfig()
    assert (cfg.K, cfg.N, cfg.D, cfg.T, cfg.L) == (50, 3, 1500, 40, 40)
    assert cfg.gamma == (0.82, 0.85, 0.84)
    assert cfg.R_lambda == 1e-5 and cfg.eta_lambda == 0.12
    assert cfg.layer_dims == (3, 16, 8, 1)
    assert cfg.variants == VARIANT_ORDER


def test_parse_key_value_text():
    """Test comments, lists and numbers parse into typed values"""
    values = parse_config_text("""
        # desk run
        K = 10
        R_lambda = 10   # strong constraint
        gamma = 0.8, 0.9, 0.85
        hidden = 8
        variants = EGFL-JS, FL-vanilla
    """)
    assert values == {
        "K": 10,
        "R_lambda": 10.0,
        "gamma": (0.8, 0.9, 0.85),
        "hidden": (8,),
        "variants": ("EGFL-JS", "FL-vanilla"),
    }


def test_unknown_key_is_named():
    """Test an unrecognised key is refused by name"""
    with pytest.raises(ConfigError, match="batch_size") as info:
        parse_config_text("batch_size = 32")
    assert info.value.key == "batch_size"


def test_duplicate_and_malformed_lines():
    """Test repeated keys and lines without '=' are refused"""
    with pytest.raises(ConfigError, match="twice"):
        parse_config_text("T = 1\nT = 2")
    with pytest.raises(ConfigError, match=":2"):
        parse_config_text("T = 1\njust words", source="run.conf")
    with pytest.raises(ConfigError, match="integer"):
        parse_config_text("K = ten")


@pytest.mark.parametrize("changes, key", [
    (dict(gamma=(0.8, 1.2, 0.8)), "gamma"),
    (dict(gamma=(0.8, 0.8)), "gamma"),
    (dict(K=0), "K"),
    (dict(N=4, gamma=(0.8,) * 4), "N"),
    (dict(R_lambda=-1.0), "R_lambda"),
    (dict(threshold=1.0), "threshold"),
    (dict(variants=("FL-fancy",)), "variants"),
])
def test_validation_names_the_key(changes, key):
    """Test invalid values raise a config error naming the offending key"""
    with pytest.raises(ConfigError, match=key) as info:
        ExperimentConfig(**changes)
    assert info.value.key == key


def test_gamma_follows_slice_count():
    """Test fewer slices take a prefix of the default recall targets"""
    assert ExperimentConfig(N=1).gamma == (0.82,)
    assert ExperimentConfig(N=2).gamma == (0.82, 0.85)


def test_seed_precedence(monkeypatch):
    """Test the explicit seed beats the file, which beats EGFL_SEED"""
    monkeypatch.setenv(SEED_ENV, "17")
    assert build_config({}).seed == 17
    assert build_config({"seed": 3}).seed == 3
    assert build_config({"seed": 3}, seed=5).seed == 5
    monkeypatch.delenv(SEED_ENV)
    assert build_config({}).seed == 0


def test_bad_seed_environment(monkeypatch):
    """Test a non-integer EGFL_SEED is a config error"""
    monkeypatch.setenv(SEED_ENV, "abc")
    with pytest.raises(ConfigError, match=SEED_ENV):
        build_config({})


def test_local_config_per_variant():
    """Test variants map onto divergence and multiplier radius"""
    cfg = ExperimentConfig(R_lambda=10.0, L=7)
    js = cfg.local_config("EGFL-JS", 1)
    assert (js.divergence, js.R_lambda, js.gamma, js.epochs) == (DivergenceKind.JS, 10.0, 0.85, 7)
    assert cfg.local_config("EGFL-KL", 0).divergence is DivergenceKind.KL
    assert cfg.local_config("EGFL-unconstrained", 0).R_lambda == 0.0
    vanilla = cfg.local_config("FL-vanilla", 2)
    assert (vanilla.divergence, vanilla.R_lambda) == (DivergenceKind.NONE, 0.0)
    assert cfg.local_config("FL-constrained", 2).R_lambda == 10.0


def test_dump_and_load(tmp_path):
    """Test a dumped configuration loads back unchanged"""
    cfg = ExperimentConfig(K=4, D=200, T=3, L=2, gamma=(0.8, 0.7, 0.9), hidden=(6, 3), seed=9)
    path = tmp_path / "run.conf"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
