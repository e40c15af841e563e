import pytest

import focusfuse as ff
from focusfuse.config import ENV_CONFIG, parse_config_file, resolve_config
from focusfuse.errors import InputError


class TestDefaults:
    def test_published_values(self):
        cfg = ff.Config()
        assert cfg.sigma_xy == 8
        assert cfg.lam == 64.0
        assert cfg.thr == 0.1
        assert cfg.sigmoid_mean == 0.5
        assert cfg.sigmoid_slope == 40.0
        assert cfg.window == 7

    def test_solver_params_roundtrip(self):
        params = ff.Config().solver_params()
        assert params.sigma_xy == 8
        assert params.lam == 64.0
        assert params.cg_tol == 1e-5
        assert params.cg_max_iters == 25
        assert params.bistoch_iters == 16


class TestConfigFile:
    def test_parse_types_and_comments(self, tmp_path):
        path = tmp_path / "f.cfg"
        path.write_text(
            "# solver\nsigma_xy = 4\nlam = 32.5  # inline comment\n\nepochs=7\n"
        )
        values = parse_config_file(path)
        assert values == {"sigma_xy": 4, "lam": 32.5, "epochs": 7}
        assert isinstance(values["sigma_xy"], int)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "f.cfg"
        path.write_text("sigma_zz = 4\n")
        with pytest.raises(InputError):
            parse_config_file(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "f.cfg"
        path.write_text("sigma_xy = four\n")
        with pytest.raises(InputError):
            parse_config_file(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(InputError):
            parse_config_file(tmp_path / "nope.cfg")


class TestPrecedence:
    def test_flag_over_file_over_default(self, tmp_path):
        path = tmp_path / "f.cfg"
        path.write_text("sigma_xy = 4\nepochs = 9\n")
        cfg = resolve_config({"sigma_xy": 2, "epochs": None}, config_path=path, env={})
        assert cfg.sigma_xy == 2  # flag wins
        assert cfg.epochs == 9  # file beats default
        assert cfg.lam == 64.0  # default untouched

    def test_env_fallback_when_no_flag(self, tmp_path):
        path = tmp_path / "env.cfg"
        path.write_text("thr = 0.25\n")
        cfg = resolve_config({}, config_path=None, env={ENV_CONFIG: str(path)})
        assert cfg.thr == 0.25

    def test_explicit_path_beats_env(self, tmp_path):
        a = tmp_path / "a.cfg"
        a.write_text("thr = 0.2\n")
        b = tmp_path / "b.cfg"
        b.write_text("thr = 0.3\n")
        cfg = resolve_config({}, config_path=a, env={ENV_CONFIG: str(b)})
        assert cfg.thr == 0.2
