"""設定クラスの単体テスト"""
import pytest
from pydantic import ValidationError

from config.settings import BenchSettings, CodebookSettings, EncoderSettings, LoggingSettings, settings


class TestSettings:
    """設定クラスのテスト"""

    def test_codebook_defaults(self):
        assert settings.codebook.max_iters == 100
        assert settings.codebook.rel_tol == 1e-6
        assert settings.codebook.restarts == 1

    def test_codebook_sizes(self):
        assert settings.codebook.m_euclidean == 256
        assert settings.codebook.m_manifold == 32

    def test_encoder_defaults(self):
        assert settings.encoders.r == 256
        assert settings.encoders.eig_floor == 1e-10
        assert settings.encoders.landmark_min == 256
        assert settings.encoders.sigma_grid == "0.25,0.5,1,2,4,8,16"

    def test_eval_defaults(self):
        assert settings.evals.lam == 1e-3
        assert settings.evals.folds == 3

    def test_bench_defaults(self):
        assert settings.bench.warmup == 5
        assert settings.bench.repeats == 20


class TestEnvironmentOverride:
    """環境変数による上書きのテスト"""

    def test_codebook_prefix(self, monkeypatch):
        monkeypatch.setenv("KVLAD_CODEBOOK_MAX_ITERS", "50")
        assert CodebookSettings().max_iters == 50

    def test_encoder_prefix(self, monkeypatch):
        monkeypatch.setenv("KVLAD_ENCODERS_NORM", "intra,ssr")
        assert EncoderSettings().norm == "intra,ssr"

    def test_log_level(self, monkeypatch):
        monkeypatch.setenv("KVLAD_LOG", "debug")
        assert LoggingSettings().log == "debug"

    def test_invalid_log_level(self, monkeypatch):
        monkeypatch.setenv("KVLAD_LOG", "verbose")
        with pytest.raises(ValidationError):
            LoggingSettings()

    def test_bench_repeats_minimum(self, monkeypatch):
        monkeypatch.setenv("KVLAD_BENCH_REPEATS", "5")
        with pytest.raises(ValidationError):
            BenchSettings()
