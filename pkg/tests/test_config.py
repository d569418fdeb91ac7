import pytest

from ldprec.config import ExperimentConfig, load_config, parse_config_text
from ldprec.errors import ConfigError


class TestExperimentConfig:
    def test_defaults(self):
        c = ExperimentConfig()
        assert c.epsilons == (0.1, 0.5, 1.0, 2.0, 3.0)
        assert c.threshold == 4.0
        fc = c.fit_config()
        assert (fc.n_components, fc.latent_dim, fc.ridge, fc.center) == (3, 20, 1.0, True)

    def test_threshold_per_dataset(self):
        assert ExperimentConfig(dataset="libimseti").threshold == 7.0
        assert ExperimentConfig(relevance_threshold=3.5).threshold == 3.5

    @pytest.mark.parametrize("kwargs", [
        {"dataset": "netflix"}, {"mechanism": "gauss"}, {"predictor": "knn"},
        {"epsilons": ()}, {"epsilons": (5.0,)}, {"epsilons": (0.05,)}, {"epsilons": (-1.0,)},
        {"folds": 1}, {"latent_dim": 0}, {"subsample": 0.0}, {"subsample": 1.5},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kwargs)

    def test_any_epsilon_override(self):
        assert ExperimentConfig(epsilons=(5,), allow_any_epsilon=True).epsilons == (5.0,)

    def test_provenance_excludes_paths(self):
        a = ExperimentConfig(out="x.csv", data_path="/tmp/u.data").provenance()
        b = ExperimentConfig().provenance()
        assert a == b
        assert "ridge=1.0" in a and "threshold=4.0" in a


class TestConfigFile:
    def test_parse(self):
        vals = parse_config_text(
            "# sweep\nmechanism = laplace-clamp\nepsilon = 0.5, 1\nk = 2\nlatent-dim = 4\n"
            "clip_predictions = yes\nsubsample = none\n")
        assert vals == {"mechanism": "laplace-clamp", "epsilons": (0.5, 1.0), "k_components": 2,
                        "latent_dim": 4, "clip_predictions": True, "subsample": None}

    @pytest.mark.parametrize("text,line", [("folds = 3\nnonsense\n", 2), ("bogus = 1\n", 1),
                                           ("\nfolds = three\n", 2)])
    def test_errors_name_the_line(self, text, line):
        with pytest.raises(ConfigError, match=f"cfg:{line}:"):
            parse_config_text(text, "cfg")

    def test_overrides_win(self, tmp_path):
        p = tmp_path / "exp.cfg"
        p.write_text("folds = 3\nseed = 7\n")
        c = load_config(p, {"seed": 9})
        assert (c.folds, c.seed) == (3, 9)
