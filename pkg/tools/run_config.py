"""実行設定の組み立て

設定の優先順位は settings の既定値 < --config ファイル < コマンドラインフラグ。
設定ファイルは一行一項目の `key = value` 形式で、`#` 以降はコメントとして無視する。
キーは `-` と `_` のどちらで書いてもよく、`bench.warmup` のような
ドット区切りのキーは最後の要素だけを使う。
"""
import logging
import os
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import settings
from evals.pipeline import PipelineConfig
from handlers.error_handler import ConfigError, MissingArtifactError
from models.data_models import (
    ClusterOptions,
    EncoderTag,
    Geometry,
    GeometryTag,
    KernelFamily,
    KernelSpec,
    NormalizationSpec,
)

_logger = logging.getLogger(__name__)

Command = Literal["gen", "codebook", "encode", "gram", "classify", "eval", "bench", "export"]

# CLI フラグ名とフィールド名が異なるもの
_ALIASES = {
    "in": "inputs",
    "lambda": "lam",
    "kernel": "family",
    "encoders": "bench_encoders",
}


def _split_list(v) -> list[str]:
    if v is None:
        return []
    if isinstance(v, str):
        return [item.strip() for item in v.split(",") if item.strip()]
    return [str(item) for item in v]


class RunConfig(BaseModel):
    """コマンド一回分の実行設定"""
    command: Command

    # 入出力
    inputs: list[str] = Field(default_factory=list, description="--in（カンマ区切りで複数可）")
    out: Optional[str] = None
    codebook: Optional[str] = None
    map: Optional[str] = None
    codes: Optional[str] = None
    gram: Optional[str] = None
    labels: Optional[str] = None
    model: Optional[str] = None
    model_out: Optional[str] = None
    csv: Optional[str] = None

    # データ生成
    geometry: Optional[GeometryTag] = None
    classes: int = Field(3, ge=1)
    sets_per_class: int = Field(10, ge=2)
    per_set: int = Field(50, ge=1)
    d: Optional[int] = Field(None, ge=1)
    p: Optional[int] = Field(None, ge=1)
    separation: float = Field(3.0, ge=0.0)
    noise: float = Field(0.1, ge=0.0)

    # コードブック・符号化
    method: Literal["kmeans", "kernel-kmeans"] = "kmeans"
    family: Optional[KernelFamily] = None
    sigma: Optional[float] = Field(None, gt=0.0, description="σ（sigma_cv の場合は None）")
    sigma_cv: bool = Field(False, description="--sigma cv で交差検証により σ を選ぶ")
    grid: list[float] = Field(default_factory=list, description="交差検証する σ の候補")
    encoder: Optional[EncoderTag] = None
    m: Optional[int] = Field(None, ge=1)
    r: Optional[int] = Field(None, ge=1)
    norm: NormalizationSpec = Field(default_factory=lambda: NormalizationSpec.from_flags(settings.encoders.norm))
    normalized: bool = False
    rbf_gamma: Optional[float] = Field(None, gt=0.0)

    # 学習・評価
    lam: float = Field(default_factory=lambda: settings.evals.lam, gt=0.0)
    folds: int = Field(default_factory=lambda: settings.evals.folds, ge=2)
    splits: Optional[int] = Field(None, ge=1, description="繰り返しランダム分割の回数")
    seed: int = Field(0, ge=0, lt=2 ** 64)

    # 計測
    bench_encoders: list[EncoderTag] = Field(default_factory=list)
    warmup: int = Field(default_factory=lambda: settings.bench.warmup, ge=0)
    repeats: int = Field(default_factory=lambda: settings.bench.repeats, ge=20)

    model_config = ConfigDict(extra="forbid")

    @field_validator("inputs", mode="before")
    @classmethod
    def _to_paths(cls, v) -> list[str]:
        return _split_list(v)

    @field_validator("bench_encoders", mode="before")
    @classmethod
    def _to_encoders(cls, v) -> list[str]:
        return _split_list(v)

    @field_validator("grid", mode="before")
    @classmethod
    def _to_grid(cls, v) -> list[float]:
        return [float(item) for item in _split_list(v)]

    @field_validator("norm", mode="before")
    @classmethod
    def _to_norm(cls, v) -> NormalizationSpec:
        if isinstance(v, NormalizationSpec):
            return v
        return NormalizationSpec.from_flags(v)

    @model_validator(mode="before")
    @classmethod
    def _detect_cv(cls, data):
        if isinstance(data, dict):
            sigma = data.get("sigma")
            if isinstance(sigma, str) and sigma.strip().lower() == "cv":
                data = {**data, "sigma": None, "sigma_cv": True}
        return data

    # ============ 派生値 ============

    def sigma_grid(self, kernel: KernelSpec) -> list[float]:
        """交差検証する σ の候補を返す。

        --grid を省略した場合は settings の既定候補を使い、Stein カーネルでは
        正定値が保証される σ ≥ (n−1)/2 の候補だけを残す。

        Raises:
            ConfigError: 候補が一つも残らない場合
        """
        if self.grid:
            return list(self.grid)
        grid = [float(v) for v in _split_list(settings.encoders.sigma_grid)]
        if kernel.family == "stein":
            floor = (kernel.geometry.dims - 1) / 2.0
            grid = [sigma for sigma in grid if sigma >= floor]
        if not grid:
            raise ConfigError("grid", "既定の σ の候補が一つも残りません。--grid を指定してください")
        _logger.info("既定の σ の候補を使います: %s", grid)
        return grid

    def input_path(self) -> str:
        """単一入力を要求するコマンドの --in を返す。"""
        return self.require("inputs")[0]

    def require(self, key: str):
        """値が設定されていることを確認して返す。

        Raises:
            ConfigError: 値が未設定の場合
        """
        value = getattr(self, key)
        if value is None or value == []:
            flag = {"inputs": "in", "lam": "lambda", "family": "kernel"}.get(key, key).replace("_", "-")
            raise ConfigError(flag, f"{self.command} には --{flag} が必要です")
        return value

    def codebook_size(self, geometry: Geometry) -> int:
        if self.m is not None:
            return self.m
        if geometry.tag == "euclidean":
            return settings.codebook.m_euclidean
        return settings.codebook.m_manifold

    def resolved_r(self, encoder: EncoderTag) -> Optional[int]:
        """nVLAD/fVLAD は既定の r、sVLAD は指定がなければ全階数（None）。"""
        if self.r is not None or encoder == "svlad":
            return self.r
        if encoder in ("nvlad", "fvlad"):
            return settings.encoders.r
        return None

    def pipeline(self, geometry: Geometry, encoder: Optional[EncoderTag] = None) -> PipelineConfig:
        """符号化と分類のパイプライン設定を作る。"""
        encoder = encoder or self.require("encoder")
        return PipelineConfig(
            encoder=encoder,
            family=self.family,
            sigma=self.sigma if self.sigma is not None else 1.0,
            m=self.codebook_size(geometry),
            r=self.resolved_r(encoder),
            norm=self.norm,
            normalized=self.normalized,
            lam=self.lam,
            seed=self.seed,
            cluster=ClusterOptions(
                max_iters=settings.codebook.max_iters,
                rel_tol=settings.codebook.rel_tol,
                restarts=settings.codebook.restarts,
                seed=self.seed,
                max_samples=settings.codebook.max_samples,
            ),
            eig_floor=settings.encoders.eig_floor,
            landmark_min=settings.encoders.landmark_min,
            landmark_factor=settings.encoders.landmark_factor,
        )


# ============ 設定ファイル ============

def normalize_key(key: str) -> str:
    """キーをフィールド名に揃える（`-` → `_`、ドット区切りは最後の要素）。"""
    key = key.strip().lower().replace("-", "_").split(".")[-1]
    return _ALIASES.get(key, key)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """`key = value` 形式の設定テキストを辞書にする。

    Args:
        text: 設定テキスト
        source: エラーメッセージに使う出所

    Returns:
        dict[str, str]: 正規化したキーと値の文字列

    Raises:
        ConfigError: `=` を含まない行や空のキーがある場合
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}", f"`key = value` 形式ではありません: {raw.strip()}")
        values[normalize_key(key)] = value.strip()
    return values


def read_config_file(path: str) -> dict[str, str]:
    """設定ファイルを読み込む。

    Raises:
        MissingArtifactError: ファイルが存在しない場合
    """
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with open(path, encoding="utf-8") as f:
        values = parse_config_text(f.read(), source=path)
    _logger.debug("設定ファイルを読み込みました: %s (%d 項目)", path, len(values))
    return values


def build_run_config(command: str, flags: dict[str, object]) -> RunConfig:
    """設定ファイルとフラグを優先順位どおりに重ねて RunConfig を作る。

    Args:
        command: サブコマンド名
        flags: コマンドラインで明示されたフラグ（未指定のものは含めない）

    Returns:
        RunConfig: 検証済みの実行設定

    Raises:
        ValidationError: 値が不正な場合（キー名はエラー位置に含まれる）
    """
    merged: dict[str, object] = {}
    config_path = flags.get("config")
    if config_path:
        merged.update(read_config_file(str(config_path)))
    merged.update({normalize_key(k): v for k, v in flags.items() if k != "config" and v is not None})
    merged["command"] = command
    try:
        return RunConfig.model_validate(merged)
    except ValidationError:
        _logger.error("実行設定の検証に失敗しました: command=%s", command)
        raise
