import pytest
from hypothesis import given, strategies as st

from ckge.config import Hyperparameters, RunConfig, apply_overrides, load_config, parse_pairs
from ckge.errors import ConfigError
from ckge.synthetic import SyntheticSpec


class TestValidation:
    @pytest.mark.parametrize("field,value", [
        ("dim", 0), ("margin", -1.0), ("lambda_obs", -0.1), ("lambda_init", 0.0), ("tau", 0.0),
        ("n_clusters", 0), ("momentum", 1.5), ("momentum", -0.1), ("alpha_mode", "sqrt"),
        ("learning_rate", 0.0), ("batch_size", 0),
    ])
    def test_rejects(self, field, value):
        with pytest.raises(ConfigError, match=field):
            Hyperparameters(**{field: value}).validate()

    def test_needs_exactly_one_dataset(self):
        with pytest.raises(ConfigError):
            RunConfig().validate()
        with pytest.raises(ConfigError):
            RunConfig(data_root="x", synthetic=SyntheticSpec()).validate()
        RunConfig(data_root="x").validate()


class TestTextFormat:
    def test_roundtrip(self, tmp_path):
        cfg = RunConfig(synthetic=SyntheticSpec(n_entities=77, triple_counts=[5, 6, 7]),
                        hp=Hyperparameters(dim=12, beta=0.125, lambda_obs_relation=2.0), disable_fcc=True)
        path = tmp_path / "cfg.txt"
        path.write_text(cfg.dumps())
        assert load_config(path) == cfg

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("# comment\ndim = 16\nsynthetic.seed=3\n")
        cfg = load_config(path, {"dim": "8", "disable-bayes": "true"})
        assert cfg.hp.dim == 8 and cfg.disable_bayes and cfg.synthetic.seed == 3

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            apply_overrides(RunConfig(), {"dimension": "3"})

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="dim"):
            apply_overrides(RunConfig(), {"dim": "three"})

    def test_bad_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_pairs(["dim=3", "oops"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.txt")

    @given(st.integers(1, 512), st.floats(0, 10, allow_nan=False), st.booleans(), st.sampled_from(["raw", "filtered"]))
    def test_dumps_parses_back(self, dim, beta, flag, protocol):
        cfg = RunConfig(data_root="d", hp=Hyperparameters(dim=dim, beta=beta), freeze_old_centroids=flag,
                        protocol=protocol)
        assert load_config(None, parse_pairs(cfg.dumps().splitlines())) == cfg
