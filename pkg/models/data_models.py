"""データモデルの定義

幾何・カーネル・コードブック・符号・グラム行列など、モジュール間で受け渡す
Pydanticモデルを定義する。数値配列は numpy 配列で保持し、生成時に形状と
不変条件を検証する。
"""
import hashlib
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

GeometryTag = Literal["euclidean", "spd", "grassmann"]
KernelFamily = Literal["rbf", "linear", "stein", "projection"]
EncoderTag = Literal["vlad", "le-vlad", "kvlad", "nvlad", "svlad", "fvlad"]
SplitTag = Literal["train", "test", "all"]

# カーネル族と幾何の対応
KERNEL_GEOMETRY: dict[str, str] = {
    "rbf": "euclidean",
    "linear": "euclidean",
    "stein": "spd",
    "projection": "grassmann",
}

# 正規化の適用順（固定）
NORMALIZATION_ORDER: tuple[str, ...] = ("intra", "ssr", "global")

_SYMMETRY_TOL = 1e-10

_ARRAY_MODEL = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ============ 共通ユーティリティ ============

def as_float_array(v) -> np.ndarray:
    """入力を float64 の numpy 配列に変換する。"""
    return np.asarray(v, dtype=np.float64)


def compute_fingerprint(*parts: object) -> int:
    """学習成果物を識別する 64 ビットのフィンガープリントを計算する。

    numpy 配列はバイト列、それ以外は repr で連結してハッシュする。

    Args:
        *parts: カーネル仕様・シード・学習 ID など

    Returns:
        int: 0 以外の 64 ビット整数
    """
    digest = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, np.ndarray):
            digest.update(np.ascontiguousarray(part).tobytes())
        else:
            digest.update(repr(part).encode("utf-8"))
        digest.update(b"\x1f")
    value = int.from_bytes(digest.digest(), "little")
    return value or 1


# ============ 幾何・カーネル ============

class Geometry(BaseModel):
    """記述子の幾何。

    euclidean: d 次元ベクトル / spd: d×d 行列 / grassmann: d×p の正規直交基底。
    """
    tag: GeometryTag = Field(..., description="幾何の種類")
    dims: int = Field(..., gt=0, description="次元 d（SPD では行列サイズ n）")
    subdim: int = Field(0, ge=0, description="Grassmann の部分空間次元 p（それ以外は 0）")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_subdim(self) -> "Geometry":
        if self.tag == "grassmann":
            if not 0 < self.subdim <= self.dims:
                raise ValueError(f"Grassmann には 0 < p <= d が必要です: p={self.subdim}, d={self.dims}")
        elif self.subdim != 0:
            raise ValueError(f"{self.tag} では subdim は 0 である必要があります")
        return self

    @property
    def descriptor_shape(self) -> tuple[int, ...]:
        """記述子一つ分の配列形状。"""
        if self.tag == "euclidean":
            return (self.dims,)
        if self.tag == "spd":
            return (self.dims, self.dims)
        return (self.dims, self.subdim)

    @property
    def values_per_descriptor(self) -> int:
        return int(np.prod(self.descriptor_shape))

    def describe(self) -> str:
        if self.tag == "grassmann":
            return f"grassmann G({self.subdim},{self.dims})"
        return f"{self.tag}({self.dims})"


class KernelSpec(BaseModel):
    """カーネル評価の唯一の設定源。σ はバンド幅（linear では未使用）。"""
    geometry: Geometry
    family: KernelFamily
    sigma: float = Field(1.0, gt=0.0, description="バンド幅 σ")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_family(self) -> "KernelSpec":
        expected = KERNEL_GEOMETRY[self.family]
        if self.geometry.tag != expected:
            raise ValueError(
                f"カーネル '{self.family}' は {expected} 幾何専用です（指定: {self.geometry.tag}）"
            )
        return self

    @property
    def gamma(self) -> float:
        """RBF の γ = 1/(2σ²)。"""
        return 1.0 / (2.0 * self.sigma ** 2)


class ClusterOptions(BaseModel):
    """k-means / カーネル k-means の反復設定"""
    max_iters: int = Field(100, ge=1, description="最大反復回数")
    rel_tol: float = Field(1e-6, ge=0.0, description="歪みの相対減少量の閾値")
    seed: int = Field(0, ge=0, lt=2 ** 64, description="乱数シード")
    restarts: int = Field(1, ge=1, description="再実行回数")
    max_samples: Optional[int] = Field(None, ge=1, description="保持する学習記述子の上限")

    model_config = ConfigDict(frozen=True)


class NormalizationSpec(BaseModel):
    """符号の後処理。適用順は常に intra → ssr → global。"""
    intra: bool = Field(False, description="ブロックごとの ℓ2 正規化")
    ssr: bool = Field(False, description="符号付き平方根")
    global_l2: bool = Field(False, description="ベクトル全体の ℓ2 正規化")

    model_config = ConfigDict(frozen=True)

    @classmethod
    def from_flags(cls, flags: str | Sequence[str] | None) -> "NormalizationSpec":
        """"intra,ssr,global" 形式の指定から生成する。

        Raises:
            ValueError: 未知のフラグが含まれる場合
        """
        if flags is None:
            return cls()
        if isinstance(flags, str):
            flags = [f for f in flags.replace(" ", "").split(",") if f]
        unknown = set(flags) - set(NORMALIZATION_ORDER)
        if unknown:
            raise ValueError(f"未知の正規化フラグです: {sorted(unknown)}")
        return cls(intra="intra" in flags, ssr="ssr" in flags, global_l2="global" in flags)

    @classmethod
    def from_bitmask(cls, mask: int) -> "NormalizationSpec":
        return cls(intra=bool(mask & 1), ssr=bool(mask & 2), global_l2=bool(mask & 4))

    @property
    def flags(self) -> tuple[str, ...]:
        enabled = {"intra": self.intra, "ssr": self.ssr, "global": self.global_l2}
        return tuple(f for f in NORMALIZATION_ORDER if enabled[f])

    @property
    def bitmask(self) -> int:
        return int(self.intra) | (int(self.ssr) << 1) | (int(self.global_l2) << 2)


# ============ 記述子集合・データセット ============

class DescriptorSet(BaseModel):
    """一枚の画像・動画分の局所記述子の集合（ラベル付き）"""
    id: int = Field(..., ge=0, lt=2 ** 32, description="集合 ID")
    label: int = Field(..., ge=0, lt=2 ** 32, description="クラスラベル")
    geometry: Geometry
    descriptors: np.ndarray = Field(..., description="記述子を積み重ねた配列 (N, *shape)")
    split: SplitTag = Field("all", description="train / test の区分")

    model_config = _ARRAY_MODEL

    @field_validator("descriptors", mode="before")
    @classmethod
    def _to_array(cls, v) -> np.ndarray:
        return as_float_array(v)

    @model_validator(mode="after")
    def _check_descriptors(self) -> "DescriptorSet":
        from geometry.descriptors import first_invalid

        shape = self.geometry.descriptor_shape
        if self.descriptors.ndim != len(shape) + 1 or self.descriptors.shape[1:] != shape:
            raise ValueError(
                f"記述子の形状 {self.descriptors.shape[1:]} が幾何 {shape} と一致しません"
            )
        if self.descriptors.shape[0] == 0:
            raise ValueError("記述子集合が空です")
        failure = first_invalid(self.descriptors, self.geometry)
        if failure is not None:
            index, diagnostic = failure
            raise ValueError(f"記述子 {index} が不正です: {diagnostic}")
        return self

    def __len__(self) -> int:
        return int(self.descriptors.shape[0])


class Dataset(BaseModel):
    """同一幾何の記述子集合の列"""
    geometry: Geometry
    sets: list[DescriptorSet] = Field(default_factory=list)

    model_config = _ARRAY_MODEL

    @model_validator(mode="after")
    def _check_sets(self) -> "Dataset":
        ids = [s.id for s in self.sets]
        if len(ids) != len(set(ids)):
            raise ValueError("集合 ID が重複しています")
        for s in self.sets:
            if s.geometry != self.geometry:
                raise ValueError(f"集合 {s.id} の幾何がデータセットと一致しません")
        return self

    @property
    def ids(self) -> list[int]:
        return [s.id for s in self.sets]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sets], dtype=np.int64)

    def split_sets(self, split: SplitTag) -> list[DescriptorSet]:
        return [s for s in self.sets if s.split == split]

    def subset(self, split: SplitTag) -> "Dataset":
        """指定区分の集合だけを持つデータセットを返す。"""
        return Dataset(geometry=self.geometry, sets=self.split_sets(split))

    def stacked(self) -> np.ndarray:
        """全集合の記述子を一つの配列に連結する。"""
        return np.concatenate([s.descriptors for s in self.sets], axis=0)

    def check_label_complete(self) -> None:
        """test 側の全クラスが train 側にも存在することを確認する。

        Raises:
            ValueError: train 側に存在しないクラスがある場合
        """
        train = {s.label for s in self.sets if s.split == "train"}
        missing = {s.label for s in self.sets} - train
        if missing:
            raise ValueError(f"train に存在しないクラスがあります: {sorted(missing)}")


# ============ コードブック ============

class ExplicitCodebook(BaseModel):
    """ユークリッド空間の明示的コードブック"""
    centers: np.ndarray = Field(..., description="中心 (m, d)")
    fingerprint: int = Field(0, ge=0, lt=2 ** 64, description="学習に用いた写像のフィンガープリント（0 は写像なし）")
    distortions: tuple[float, ...] = Field((), description="反復ごとの歪み")
    labels: Optional[np.ndarray] = Field(None, description="学習点の最終割り当て")

    model_config = _ARRAY_MODEL

    @field_validator("centers", mode="before")
    @classmethod
    def _to_array(cls, v) -> np.ndarray:
        return as_float_array(v)

    @model_validator(mode="after")
    def _check_centers(self) -> "ExplicitCodebook":
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise ValueError("centers は (m, d) かつ m >= 1 である必要があります")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("centers に有限でない値が含まれています")
        return self

    @property
    def m(self) -> int:
        return int(self.centers.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centers.shape[1])


class ImplicitCodebook(BaseModel):
    """カーネル空間のコードブック。

    中心は保持した学習記述子のメンバー添字リストとしてのみ存在し、
    カーネル評価を通してだけ扱う。
    """
    training: np.ndarray = Field(..., description="保持した学習記述子 (M, *shape)")
    kernel: KernelSpec
    members: list[np.ndarray] = Field(..., description="クラスタごとのメンバー添字")
    self_kernels: np.ndarray = Field(..., description="k(c_s, c_s) のキャッシュ (m,)")
    row_sums: list[np.ndarray] = Field(..., description="クラスタ内カーネル行和のキャッシュ")
    seed: int = Field(0, ge=0, lt=2 ** 64)
    distortions: tuple[float, ...] = Field(())
    fingerprint: int = Field(0, ge=0, lt=2 ** 64)

    model_config = _ARRAY_MODEL

    @field_validator("training", mode="before")
    @classmethod
    def _to_array(cls, v) -> np.ndarray:
        return as_float_array(v)

    @field_validator("members", mode="before")
    @classmethod
    def _to_index_arrays(cls, v) -> list[np.ndarray]:
        return [np.asarray(idx, dtype=np.int64) for idx in v]

    @model_validator(mode="after")
    def _check_partition(self) -> "ImplicitCodebook":
        total = self.training.shape[0]
        if not self.members:
            raise ValueError("クラスタが一つもありません")
        if any(idx.size == 0 for idx in self.members):
            raise ValueError("空のクラスタがあります")
        joined = np.concatenate(self.members)
        if joined.size != total or not np.array_equal(np.sort(joined), np.arange(total)):
            raise ValueError("メンバー添字が学習記述子の分割になっていません")
        if self.self_kernels.shape != (len(self.members),):
            raise ValueError("self_kernels の長さがクラスタ数と一致しません")
        return self

    @property
    def m(self) -> int:
        return len(self.members)

    @property
    def geometry(self) -> Geometry:
        return self.kernel.geometry

    def member_descriptors(self, s: int) -> np.ndarray:
        """クラスタ s のメンバー記述子を返す。"""
        return self.training[self.members[s]]

    def labels(self) -> np.ndarray:
        """学習記述子ごとのクラスタ番号を返す。"""
        out = np.empty(self.training.shape[0], dtype=np.int64)
        for s, idx in enumerate(self.members):
            out[idx] = s
        return out


# ============ 符号 ============

class VladCode(BaseModel):
    """ブロック構造と正規化状態を持つ明示的な符号"""
    blocks: list[np.ndarray] = Field(..., description="ブロックごとの値（長さ r_s）")
    encoder: EncoderTag
    normalization: tuple[str, ...] = Field((), description="適用済みの正規化（適用順）")

    model_config = _ARRAY_MODEL

    @field_validator("blocks", mode="before")
    @classmethod
    def _to_arrays(cls, v) -> list[np.ndarray]:
        return [as_float_array(b).ravel() for b in v]

    @model_validator(mode="after")
    def _check_finite(self) -> "VladCode":
        if not self.blocks:
            raise ValueError("ブロックが一つもありません")
        if not all(np.all(np.isfinite(b)) for b in self.blocks):
            raise ValueError("符号に有限でない値が含まれています")
        return self

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def block_lengths(self) -> tuple[int, ...]:
        return tuple(int(b.size) for b in self.blocks)

    @property
    def vector(self) -> np.ndarray:
        """ブロックを連結した一本のベクトル。"""
        return np.concatenate(self.blocks)


class CodeMatrix(BaseModel):
    """複数集合の符号をまとめた行列（符号ファイルの内容）"""
    encoder: EncoderTag
    normalization: tuple[str, ...] = ()
    block_lengths: tuple[int, ...]
    ids: tuple[int, ...]
    labels: np.ndarray
    values: np.ndarray = Field(..., description="(集合数, Σr_s)")

    model_config = _ARRAY_MODEL

    @field_validator("values", mode="before")
    @classmethod
    def _to_array(cls, v) -> np.ndarray:
        return np.atleast_2d(as_float_array(v))

    @field_validator("labels", mode="before")
    @classmethod
    def _to_labels(cls, v) -> np.ndarray:
        return np.asarray(v, dtype=np.int64)

    @model_validator(mode="after")
    def _check_shape(self) -> "CodeMatrix":
        n = len(self.ids)
        if self.values.shape != (n, sum(self.block_lengths)):
            raise ValueError(
                f"values の形状 {self.values.shape} が ({n}, {sum(self.block_lengths)}) と一致しません"
            )
        if self.labels.shape != (n,):
            raise ValueError("labels の長さが集合数と一致しません")
        return self

    @classmethod
    def from_codes(cls, ids: Sequence[int], labels: Sequence[int], codes: Sequence[VladCode]) -> "CodeMatrix":
        """VladCode の列からまとめる。

        Raises:
            ValueError: 符号のブロック構造・符号化方式が揃っていない場合
        """
        if not codes:
            raise ValueError("符号が一つもありません")
        first = codes[0]
        for code in codes[1:]:
            if code.block_lengths != first.block_lengths or code.encoder != first.encoder:
                raise ValueError("ブロック構造の異なる符号は一つの行列にまとめられません")
        return cls(
            encoder=first.encoder,
            normalization=first.normalization,
            block_lengths=first.block_lengths,
            ids=tuple(int(i) for i in ids),
            labels=np.asarray(labels, dtype=np.int64),
            values=np.vstack([c.vector for c in codes]),
        )

    def code(self, row: int) -> VladCode:
        """row 番目の集合の符号を VladCode として返す。"""
        bounds = np.cumsum((0,) + self.block_lengths)
        vec = self.values[row]
        return VladCode(
            blocks=[vec[bounds[i]:bounds[i + 1]] for i in range(len(self.block_lengths))],
            encoder=self.encoder,
            normalization=self.normalization,
        )


# ============ グラム行列 ============

class GramMatrix(BaseModel):
    """集合間（kVLAD）または記述子間（カーネル）の対称グラム行列"""
    values: np.ndarray
    item_ids: tuple[int, ...]

    model_config = _ARRAY_MODEL

    @field_validator("values", mode="before")
    @classmethod
    def _to_array(cls, v) -> np.ndarray:
        return as_float_array(v)

    @model_validator(mode="after")
    def _check_symmetric(self) -> "GramMatrix":
        n = len(self.item_ids)
        if self.values.shape != (n, n):
            raise ValueError(f"グラム行列の形状 {self.values.shape} が ({n}, {n}) ではありません")
        if not np.all(np.isfinite(np.diag(self.values))):
            raise ValueError("グラム行列の対角に有限でない値があります")
        scale = max(1.0, float(np.max(np.abs(self.values)))) if n else 1.0
        if n and np.max(np.abs(self.values - self.values.T)) > _SYMMETRY_TOL * scale:
            raise ValueError("グラム行列が対称ではありません")
        return self

    @property
    def size(self) -> int:
        return len(self.item_ids)

    def positions(self, ids: Sequence[int]) -> np.ndarray:
        """ID 列に対応する行番号を返す。

        Raises:
            KeyError: グラム行列に存在しない ID がある場合
        """
        lookup = {item: i for i, item in enumerate(self.item_ids)}
        try:
            return np.array([lookup[int(i)] for i in ids], dtype=np.int64)
        except KeyError as e:
            raise KeyError(f"グラム行列に ID {e.args[0]} がありません") from None

    def sub(self, ids: Sequence[int]) -> "GramMatrix":
        """ID 列で指定した主小行列を返す。"""
        pos = self.positions(ids)
        return GramMatrix(values=self.values[np.ix_(pos, pos)], item_ids=tuple(int(i) for i in ids))

    def cross(self, row_ids: Sequence[int], col_ids: Sequence[int]) -> "CrossGram":
        """行 ID × 列 ID の部分行列を CrossGram として返す。"""
        rows = self.positions(row_ids)
        cols = self.positions(col_ids)
        return CrossGram(
            values=self.values[np.ix_(rows, cols)],
            row_ids=tuple(int(i) for i in row_ids),
            col_ids=tuple(int(i) for i in col_ids),
        )


class CrossGram(BaseModel):
    """評価対象（行）× 学習項目（列）の内積行列"""
    values: np.ndarray
    row_ids: tuple[int, ...]
    col_ids: tuple[int, ...]

    model_config = _ARRAY_MODEL

    @field_validator("values", mode="before")
    @classmethod
    def _to_array(cls, v) -> np.ndarray:
        return np.atleast_2d(as_float_array(v))

    @model_validator(mode="after")
    def _check_shape(self) -> "CrossGram":
        if self.values.shape != (len(self.row_ids), len(self.col_ids)):
            raise ValueError("CrossGram の形状が ID 数と一致しません")
        return self


# ============ 近似写像 ============

class NystromMap(BaseModel):
    """Nyström 写像 z_N(x) = Σ^{-1/2} Vᵀ [k(x, t_1), …, k(x, t_M)]ᵀ"""
    landmarks: np.ndarray = Field(..., description="ランドマーク (M, *shape)")
    kernel: KernelSpec
    projection: np.ndarray = Field(..., description="Σ^{-1/2}Vᵀ (r, M)")
    eigenvalues: np.ndarray = Field(..., description="ランドマークグラムの全固有値（降順）")
    fingerprint: int = Field(0, ge=0, lt=2 ** 64)

    model_config = _ARRAY_MODEL

    @model_validator(mode="after")
    def _check_projection(self) -> "NystromMap":
        m = self.landmarks.shape[0]
        if self.projection.ndim != 2 or self.projection.shape[1] != m:
            raise ValueError("projection の形状がランドマーク数と一致しません")
        if self.projection.shape[0] > m:
            raise ValueError("r はランドマーク数以下である必要があります")
        return self

    @property
    def r(self) -> int:
        return int(self.projection.shape[0])


class FourierMap(BaseModel):
    """ランダムフーリエ特徴 z_F(x) = √(2/r) cos(ωᵀx + b)"""
    omegas: np.ndarray = Field(..., description="周波数 (r, d)")
    offsets: np.ndarray = Field(..., description="位相 (r,)")
    sigma: float = Field(..., gt=0.0)
    seed: int = Field(..., ge=0, lt=2 ** 64)
    fingerprint: int = Field(0, ge=0, lt=2 ** 64)

    model_config = _ARRAY_MODEL

    @model_validator(mode="after")
    def _check_shapes(self) -> "FourierMap":
        if self.omegas.ndim != 2 or self.omegas.shape[0] < 1:
            raise ValueError("omegas は (r, d) かつ r >= 1 である必要があります")
        if self.offsets.shape != (self.omegas.shape[0],):
            raise ValueError("offsets の長さが r と一致しません")
        return self

    @property
    def r(self) -> int:
        return int(self.omegas.shape[0])

    @property
    def d(self) -> int:
        return int(self.omegas.shape[1])


class SubspaceProjector(BaseModel):
    """コードワードごとの局所部分空間への射影"""
    codebook: ImplicitCodebook
    bases: list[np.ndarray] = Field(..., description="U_s (N_s, r_s)")
    eigenvalues: list[np.ndarray] = Field(..., description="Λ_s (r_s,) 降順")
    centroids: list[np.ndarray] = Field(..., description="射影した中心の座標 (r_s,)")

    model_config = _ARRAY_MODEL

    @model_validator(mode="after")
    def _check_blocks(self) -> "SubspaceProjector":
        m = self.codebook.m
        if not len(self.bases) == len(self.eigenvalues) == len(self.centroids) == m:
            raise ValueError("射影の数がクラスタ数と一致しません")
        for lam in self.eigenvalues:
            if lam.size == 0 or np.any(lam <= 0) or np.any(np.diff(lam) > 0):
                raise ValueError("固有値は正かつ降順である必要があります")
        return self

    @property
    def block_lengths(self) -> tuple[int, ...]:
        return tuple(int(lam.size) for lam in self.eigenvalues)

    @property
    def fingerprint(self) -> int:
        return self.codebook.fingerprint


# ============ 分類器 ============

class RidgeModel(BaseModel):
    """一対他リッジ回帰（バイアス列付き、バイアスは正則化しない）"""
    weights: np.ndarray = Field(..., description="(C, D+1)、最終列がバイアス")
    lam: float = Field(..., gt=0.0)
    classes: np.ndarray

    model_config = _ARRAY_MODEL

    @model_validator(mode="after")
    def _check_weights(self) -> "RidgeModel":
        if self.classes.size < 2:
            raise ValueError("クラス数は 2 以上である必要があります")
        if self.weights.shape[0] != self.classes.size or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights の形状または値が不正です")
        return self

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1] - 1)


class KernelRidgeModel(BaseModel):
    """事前計算グラムを用いるカーネルリッジ回帰（中心化でバイアスを扱う）"""
    dual_coef: np.ndarray = Field(..., description="(N, C)")
    lam: float = Field(..., gt=0.0)
    classes: np.ndarray
    train_ids: tuple[int, ...]
    column_means: np.ndarray = Field(..., description="学習グラムの列平均 (N,)")
    grand_mean: float
    target_means: np.ndarray = Field(..., description="one-hot 目標の平均 (C,)")

    model_config = _ARRAY_MODEL

    @model_validator(mode="after")
    def _check_coef(self) -> "KernelRidgeModel":
        if self.classes.size < 2:
            raise ValueError("クラス数は 2 以上である必要があります")
        if self.dual_coef.shape != (len(self.train_ids), self.classes.size):
            raise ValueError("dual_coef の形状が学習項目数・クラス数と一致しません")
        if not np.all(np.isfinite(self.dual_coef)):
            raise ValueError("dual_coef に有限でない値があります")
        return self
