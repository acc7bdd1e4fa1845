"""符号化方式と分類器をつないだ学習・予測パイプライン

交差検証・繰り返し分割評価・CLI の bench から共通に使う。
kVLAD はグラム行列とカーネルリッジ、それ以外は明示的な符号とリッジ回帰で分類する。
"""
import logging
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from codebook.kernel_kmeans import kernel_kmeans_fit
from codebook.kmeans import kmeans_fit
from encoders.fourier import fourier_fit
from encoders.kvlad import kvlad_cross_gram, kvlad_gram
from encoders.nystrom import nystrom_fit, select_landmarks
from encoders.pipeline import map_descriptors, pipeline_encode
from encoders.subspace import subspace_fit, svlad_encode
from encoders.vlad import vlad_encode
from evals.classifiers import kridge_predict, kridge_train, ridge_predict, ridge_train
from evals.metrics import accuracy
from geometry.descriptors import flatten_descriptors
from handlers.error_handler import ConfigError, GeometryMismatchError
from models.data_models import (
    KERNEL_GEOMETRY,
    ClusterOptions,
    Dataset,
    DescriptorSet,
    EncoderTag,
    ExplicitCodebook,
    FourierMap,
    Geometry,
    ImplicitCodebook,
    KernelFamily,
    KernelSpec,
    NormalizationSpec,
    NystromMap,
    SubspaceProjector,
    VladCode,
    compute_fingerprint,
)

_logger = logging.getLogger(__name__)

# 幾何ごとの既定カーネル族
DEFAULT_FAMILY: dict[str, KernelFamily] = {
    "euclidean": "rbf",
    "spd": "stein",
    "grassmann": "projection",
}


def check_encoder_geometry(encoder: EncoderTag, geometry: Geometry, family: Optional[KernelFamily] = None) -> None:
    """符号化方式・幾何・カーネル族の組み合わせを検証する。

    Raises:
        GeometryMismatchError: 組み合わせが不正な場合
    """
    if encoder in ("vlad", "fvlad") and geometry.tag != "euclidean":
        raise GeometryMismatchError(f"{encoder} は euclidean 専用", geometry.describe())
    if encoder == "le-vlad" and geometry.tag == "euclidean":
        raise GeometryMismatchError("le-vlad は spd / grassmann 専用", geometry.describe())
    if encoder == "fvlad" and family not in (None, "rbf"):
        raise GeometryMismatchError("fvlad は rbf カーネル専用", family)
    if encoder in ("kvlad", "svlad", "nvlad") and family is not None:
        if KERNEL_GEOMETRY[family] != geometry.tag:
            raise GeometryMismatchError(f"カーネル {family} は {KERNEL_GEOMETRY[family]} 専用", geometry.describe())


class PipelineConfig(BaseModel):
    """符号化方式と分類器の設定"""
    encoder: EncoderTag
    family: Optional[KernelFamily] = Field(None, description="カーネル族（省略時は幾何の既定）")
    sigma: float = Field(1.0, gt=0.0)
    m: int = Field(..., ge=1)
    r: Optional[int] = Field(None, ge=1, description="nVLAD/fVLAD の次元、sVLAD の最大次元")
    norm: NormalizationSpec = NormalizationSpec()
    normalized: bool = Field(False, description="kVLAD でブロック正規化した内積を使うか")
    lam: float = Field(1e-3, gt=0.0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    cluster: ClusterOptions = ClusterOptions()
    eig_floor: float = Field(1e-10, ge=0.0)
    landmark_min: int = Field(256, ge=1)
    landmark_factor: int = Field(4, ge=1)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_r(self) -> "PipelineConfig":
        if self.encoder in ("nvlad", "fvlad") and self.r is None:
            raise ValueError(f"{self.encoder} には r が必要です")
        return self

    def kernel(self, geometry: Geometry) -> KernelSpec:
        family = self.family or DEFAULT_FAMILY[geometry.tag]
        return KernelSpec(geometry=geometry, family=family, sigma=self.sigma)

    def cluster_options(self) -> ClusterOptions:
        return self.cluster.model_copy(update={"seed": self.seed})


class EncoderArtifacts:
    """学習済みの符号化器一式"""

    def __init__(
        self,
        config: PipelineConfig,
        geometry: Geometry,
        codebook: ExplicitCodebook | ImplicitCodebook,
        feature_map: NystromMap | FourierMap | None = None,
        projector: Optional[SubspaceProjector] = None,
    ) -> None:
        self.config = config
        self.geometry = geometry
        self.codebook = codebook
        self.feature_map = feature_map
        self.projector = projector

    def encode(self, descriptor_set: DescriptorSet) -> VladCode:
        """集合一つを明示的な符号にする（kVLAD には使えない）。"""
        encoder = self.config.encoder
        norm = self.config.norm
        if encoder == "vlad":
            return vlad_encode(descriptor_set, self.codebook, norm)
        if encoder == "le-vlad":
            flat = flatten_descriptors(descriptor_set.descriptors, self.geometry)
            return vlad_encode(flat, self.codebook, norm, encoder="le-vlad")
        if encoder in ("nvlad", "fvlad"):
            return pipeline_encode(descriptor_set, encoder, self.feature_map, self.codebook, norm)
        if encoder == "svlad":
            return svlad_encode(descriptor_set, self.codebook, self.projector, norm)
        raise ConfigError("encoder", "kvlad は明示的な符号を作りません（グラム行列を使ってください）")


def training_descriptors(sets: Sequence[DescriptorSet]) -> np.ndarray:
    """学習集合の記述子を一つの配列に連結する。"""
    if not sets:
        raise ValueError("学習集合が一つもありません")
    return np.concatenate([s.descriptors for s in sets], axis=0)


def fit_feature_map(
    stack: np.ndarray,
    geometry: Geometry,
    config: PipelineConfig,
) -> NystromMap | FourierMap:
    """nVLAD / fVLAD 用の写像を学習記述子から作る。"""
    if config.encoder == "fvlad":
        return fourier_fit(geometry.dims, config.sigma, config.r, config.seed)
    kernel = config.kernel(geometry)
    idx = select_landmarks(stack, config.r, config.seed, config.landmark_min, config.landmark_factor)
    fingerprint = compute_fingerprint(
        "nystrom", kernel.family, kernel.sigma, geometry.describe(), config.seed, idx, stack[idx]
    )
    return nystrom_fit(stack[idx], kernel, min(config.r, idx.size), config.eig_floor, fingerprint)


def fit_encoder(train_sets: Sequence[DescriptorSet], geometry: Geometry, config: PipelineConfig) -> EncoderArtifacts:
    """学習集合からコードブック（と写像・射影器）を学習する。

    Args:
        train_sets: 学習集合
        geometry: 記述子の幾何
        config: パイプライン設定

    Returns:
        EncoderArtifacts: 学習済みの符号化器
    """
    check_encoder_geometry(config.encoder, geometry, config.family)
    stack = training_descriptors(train_sets)
    opts = config.cluster_options()
    encoder = config.encoder
    if encoder == "vlad":
        return EncoderArtifacts(config, geometry, kmeans_fit(stack, config.m, opts))
    if encoder == "le-vlad":
        flat = flatten_descriptors(stack, geometry)
        return EncoderArtifacts(config, geometry, kmeans_fit(flat, config.m, opts))
    if encoder in ("nvlad", "fvlad"):
        fmap = fit_feature_map(stack, geometry, config)
        mapped = map_descriptors(stack, encoder, fmap)
        cb = kmeans_fit(mapped, config.m, opts, fingerprint=fmap.fingerprint)
        return EncoderArtifacts(config, geometry, cb, feature_map=fmap)
    cb = kernel_kmeans_fit(stack, config.kernel(geometry), config.m, opts)
    if encoder == "svlad":
        return EncoderArtifacts(config, geometry, cb, projector=subspace_fit(cb, config.r, config.eig_floor))
    return EncoderArtifacts(config, geometry, cb)


def fit_predict(
    train_sets: Sequence[DescriptorSet],
    test_sets: Sequence[DescriptorSet],
    geometry: Geometry,
    config: PipelineConfig,
) -> np.ndarray:
    """学習集合で符号化器と分類器を学習し、評価集合のラベルを予測する。

    Returns:
        np.ndarray: 評価集合ごとの予測ラベル
    """
    artifacts = fit_encoder(train_sets, geometry, config)
    train_labels = [s.label for s in train_sets]
    if config.encoder == "kvlad":
        cb = artifacts.codebook
        train_gram = kvlad_gram(train_sets, cb, config.normalized)
        model = kridge_train(train_gram, train_labels, config.lam)
        cross = kvlad_cross_gram(test_sets, train_sets, cb, config.normalized)
        return kridge_predict(model, cross)
    train_codes = [artifacts.encode(s) for s in train_sets]
    model = ridge_train(train_codes, train_labels, config.lam)
    return ridge_predict(model, [artifacts.encode(s) for s in test_sets])


def stratified_halves(labels: Sequence[int], rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """クラスごとに半分ずつ学習・評価に振り分けた添字を返す。"""
    labels = np.asarray(labels)
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        half = max(1, idx.size // 2)
        train.extend(idx[:half])
        test.extend(idx[half:])
    return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(test, dtype=np.int64))


def repeated_split_accuracy(dataset: Dataset, config: PipelineConfig, repeats: int, seed: int) -> dict:
    """データセットを繰り返しランダムに分割し、評価正解率の平均を求める。

    Args:
        dataset: 全集合（分割タグは無視する）
        config: パイプライン設定
        repeats: 分割の回数
        seed: 分割用の乱数シード

    Returns:
        dict: {"mean": 平均正解率, "accuracies": 分割ごとの正解率}
    """
    if repeats < 1:
        raise ConfigError("repeats", "1 以上である必要があります")
    sets = dataset.sets
    accuracies = []
    for rep in range(repeats):
        rng = np.random.default_rng([seed, rep])
        train_idx, test_idx = stratified_halves([s.label for s in sets], rng)
        train = [sets[i] for i in train_idx]
        test = [sets[i] for i in test_idx]
        pred = fit_predict(train, test, dataset.geometry, config)
        accuracies.append(accuracy(pred, [s.label for s in test]))
        _logger.info("分割 %d: 正解率=%.4f", rep, accuracies[-1])
    return {"mean": float(np.mean(accuracies)), "accuracies": accuracies}
