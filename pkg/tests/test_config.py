import pytest

from weakrec.config import ConfigError, RunConfig, describe_keys


def test_ini_round_trip():
    cfg = RunConfig()
    cfg.override("recommender.model=bpr")
    cfg.override("recommender.lr=0.001")
    cfg.override("prompt.fuzzy=yes")
    back = RunConfig.from_ini(cfg.to_ini())
    assert back == cfg
    assert back.recommender.lr == 0.001 and back.prompt.fuzzy is True


def test_unknown_keys_are_errors():
    with pytest.raises(ConfigError, match="recommender.kk"):
        RunConfig.from_ini("[recommender]\nkk = 5\n")
    with pytest.raises(ConfigError, match=r"\[model\]"):
        RunConfig.from_ini("[model]\nk = 5\n")
    with pytest.raises(ConfigError):
        RunConfig().override("k=5")


def test_type_errors():
    with pytest.raises(ConfigError, match="int"):
        RunConfig().override("recommender.k=many")
    with pytest.raises(ConfigError):
        RunConfig().override("prompt.fuzzy=maybe")


def test_validate():
    RunConfig().validate()
    cfg = RunConfig()
    cfg.override("backend.name=gpt")
    with pytest.raises(ConfigError, match="backend.name"):
        cfg.validate()
    cfg = RunConfig()
    cfg.override("dataset.format=movielens")
    cfg.override("dataset.path=/nonexistent/ratings.dat")
    with pytest.raises(ConfigError, match="does not exist"):
        cfg.validate()
    cfg = RunConfig()
    cfg.override("gate.t_s=high")
    with pytest.raises(ConfigError):
        cfg.validate()


def test_fingerprint_ignores_output():
    a, b = RunConfig(), RunConfig()
    b.override("run.output=/elsewhere")
    assert a.fingerprint() == b.fingerprint()
    b.override("run.seed=1")
    assert a.fingerprint() != b.fingerprint()


def test_describe_covers_every_key():
    text = describe_keys()
    cfg = RunConfig()
    for section, spec in cfg.sections().items():
        assert f"[{section}]" in text
        for key in vars(spec):
            assert f"  {key} = " in text
