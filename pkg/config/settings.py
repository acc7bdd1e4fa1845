"""動作パラメータの一元管理

環境変数で関心ごとに上書き可能（プレフィックスはクラスごとに異なる）。
例: KVLAD_CODEBOOK_MAX_ITERS=50 を .env に追加するだけでチューニングできる。

使い方:
    from config.settings import settings
    opts = ClusterOptions(max_iters=settings.codebook.max_iters)
"""
from typing import Literal, Optional

from pydantic import Field
from pydantic_settings import BaseSettings


class LoggingSettings(BaseSettings):
    """ログ出力パラメータ

    環境変数プレフィックス: KVLAD_
    例: KVLAD_LOG=debug
    """
    log: Literal["error", "info", "debug"] = Field("info", description="標準エラー出力のログレベル")
    log_dir: Optional[str] = Field(None, description="ローテーションログの出力先（未設定ならファイル出力なし）")

    model_config = {"env_prefix": "KVLAD_", "extra": "ignore"}


class CodebookSettings(BaseSettings):
    """コードブック学習パラメータ

    環境変数プレフィックス: KVLAD_CODEBOOK_
    """
    max_iters: int = Field(100, ge=1, description="Lloyd 反復の最大回数")
    rel_tol: float = Field(1e-6, ge=0.0, description="歪みの相対減少量による収束判定")
    restarts: int = Field(1, ge=1, description="シードを変えた再実行回数")
    m_euclidean: int = Field(256, ge=1, description="ユークリッド記述子の既定コードブックサイズ")
    m_manifold: int = Field(32, ge=1, description="SPD/Grassmann 記述子の既定コードブックサイズ")
    max_samples: int = Field(5000, ge=1, description="カーネル k-means で保持する学習記述子の上限")

    model_config = {"env_prefix": "KVLAD_CODEBOOK_", "extra": "ignore"}


class EncoderSettings(BaseSettings):
    """符号化パラメータ

    環境変数プレフィックス: KVLAD_ENCODERS_
    """
    r: int = Field(256, ge=1, description="nVLAD/fVLAD の RKHS 近似次元")
    eig_floor: float = Field(1e-10, ge=0.0, description="λ_max に対する固有値の相対下限")
    landmark_min: int = Field(256, ge=1, description="Nyström ランドマーク数の下限")
    landmark_factor: int = Field(4, ge=1, description="Nyström ランドマーク数 = factor × r")
    norm: str = Field("", description="既定の正規化（intra,ssr,global のカンマ区切り）")
    sigma_grid: str = Field("0.25,0.5,1,2,4,8,16", description="--sigma cv で --grid を省略したときの σ の候補")

    model_config = {"env_prefix": "KVLAD_ENCODERS_", "extra": "ignore"}


class EvalSettings(BaseSettings):
    """分類・交差検証パラメータ

    環境変数プレフィックス: KVLAD_EVALS_
    """
    lam: float = Field(1e-3, gt=0.0, description="リッジ正則化係数 λ")
    folds: int = Field(3, ge=2, description="交差検証の分割数")

    model_config = {"env_prefix": "KVLAD_EVALS_", "extra": "ignore"}


class BenchSettings(BaseSettings):
    """計測パラメータ

    環境変数プレフィックス: KVLAD_BENCH_
    """
    warmup: int = Field(5, ge=0, description="計測前の空回し回数")
    repeats: int = Field(20, ge=20, description="計測回数")

    model_config = {"env_prefix": "KVLAD_BENCH_", "extra": "ignore"}


class _Settings:
    """全設定の集約クラス。`settings.codebook.max_iters` のように参照する"""
    logging: LoggingSettings = LoggingSettings()
    codebook: CodebookSettings = CodebookSettings()
    encoders: EncoderSettings = EncoderSettings()
    evals: EvalSettings = EvalSettings()
    bench: BenchSettings = BenchSettings()


settings = _Settings()
