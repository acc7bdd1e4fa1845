"""バイナリ形式での読み書き

データセット（KVLD）・コードブック（KVLC）・写像（KVLM）・符号（KVLE）・
グラム行列（KVLG）の入出力と、分類器モデルの JSON 入出力、CSV 書き出しを提供する。
全形式とも 4 バイトのマジック、u16 のバージョン、リトルエンディアン、IEEE-754 倍精度。

書き込みは同じディレクトリの一時ファイルに書いてから置き換えるため、
失敗しても不完全なファイルは残らない。
"""
import json
import logging
import os
import struct
import tempfile
from typing import Callable, Optional

import numpy as np
from pydantic import ValidationError

from codebook.kernel_kmeans import build_implicit_codebook
from handlers.error_handler import DataFormatError, MissingArtifactError
from models.data_models import (
    CodeMatrix,
    Dataset,
    DescriptorSet,
    ExplicitCodebook,
    FourierMap,
    Geometry,
    GramMatrix,
    ImplicitCodebook,
    KernelRidgeModel,
    KernelSpec,
    NormalizationSpec,
    NystromMap,
    RidgeModel,
    SplitTag,
)

_logger = logging.getLogger(__name__)

VERSION = 1

DATASET_MAGIC = b"KVLD"
CODEBOOK_MAGIC = b"KVLC"
MAP_MAGIC = b"KVLM"
CODES_MAGIC = b"KVLE"
GRAM_MAGIC = b"KVLG"

_GEOMETRY_CODES = {"euclidean": 0, "spd": 1, "grassmann": 2}
_FAMILY_CODES = {"rbf": 0, "linear": 1, "stein": 2, "projection": 3}
_ENCODER_CODES = {"vlad": 0, "le-vlad": 1, "kvlad": 2, "nvlad": 3, "svlad": 4, "fvlad": 5}


def _invert(table: dict[str, int]) -> dict[int, str]:
    return {v: k for k, v in table.items()}


# ============ 低水準の入出力 ============

class _Writer:
    """リトルエンディアンのバイト列を組み立てる"""

    def __init__(self, magic: bytes) -> None:
        self._parts: list[bytes] = [magic, struct.pack("<H", VERSION)]

    def pack(self, fmt: str, *values) -> None:
        self._parts.append(struct.pack("<" + fmt, *values))

    def array(self, values: np.ndarray, dtype: str = "<f8") -> None:
        self._parts.append(np.ascontiguousarray(values, dtype=dtype).tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class _Reader:
    """バイト列を先頭から読み進める。不足時は "unexpected end" を送出する"""

    def __init__(self, data: bytes, path: str, magic: bytes) -> None:
        self._data = data
        self._path = path
        self._pos = 0
        if data[:4] != magic:
            raise DataFormatError(path, "bad magic")
        self._pos = 4
        (version,) = self.unpack("H")
        if version != VERSION:
            raise DataFormatError(path, "bad version")

    def fail(self, diagnostic: str) -> DataFormatError:
        return DataFormatError(self._path, diagnostic)

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize("<" + fmt)
        if self._pos + size > len(self._data):
            raise self.fail("unexpected end")
        values = struct.unpack_from("<" + fmt, self._data, self._pos)
        self._pos += size
        return values

    def array(self, count: int, dtype: str = "<f8") -> np.ndarray:
        size = count * np.dtype(dtype).itemsize
        if self._pos + size > len(self._data):
            raise self.fail("unexpected end")
        values = np.frombuffer(self._data, dtype=dtype, count=count, offset=self._pos).copy()
        self._pos += size
        return values.astype(np.float64) if dtype == "<f8" else values.astype(np.int64)

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise self.fail("trailing bytes")


def atomic_write_bytes(path: str, data: bytes) -> None:
    """一時ファイルに書いてから置き換える。"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kvlad-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    _logger.debug("書き込み完了: %s (%d bytes)", path, len(data))


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_bytes(path: str) -> bytes:
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with open(path, "rb") as f:
        return f.read()


def read_magic(path: str) -> bytes:
    """ファイル先頭の 4 バイトを返す。"""
    return _read_bytes(path)[:4]


# ============ データセット ============

def _write_dataset_block(w: _Writer, geometry: Geometry, sets: list[tuple[int, int, np.ndarray]]) -> None:
    w.pack("BBIII", _GEOMETRY_CODES[geometry.tag], 0, geometry.dims, geometry.subdim, len(sets))
    for set_id, label, descriptors in sets:
        w.pack("III", set_id, label, descriptors.shape[0])
        w.array(descriptors)


def _read_dataset_block(r: _Reader) -> tuple[Geometry, list[tuple[int, int, np.ndarray]]]:
    tag_code, _pad, d, p, num_sets = r.unpack("BBIII")
    tags = _invert(_GEOMETRY_CODES)
    if tag_code not in tags:
        raise r.fail("geometry mismatch")
    try:
        geometry = Geometry(tag=tags[tag_code], dims=d, subdim=p)
    except ValidationError:
        raise r.fail("dimension mismatch") from None
    shape = geometry.descriptor_shape
    sets = []
    for _ in range(num_sets):
        set_id, label, count = r.unpack("III")
        values = r.array(count * geometry.values_per_descriptor)
        sets.append((set_id, label, values.reshape((count,) + shape)))
    return geometry, sets


def write_dataset(path: str, dataset: Dataset) -> None:
    """データセットを KVLD 形式で書き込む（分割タグは保存しない）。"""
    w = _Writer(DATASET_MAGIC)
    _write_dataset_block(w, dataset.geometry, [(s.id, s.label, s.descriptors) for s in dataset.sets])
    atomic_write_bytes(path, w.getvalue())


def read_dataset(path: str, split: SplitTag = "all") -> Dataset:
    """KVLD 形式のデータセットを読み込む。

    Args:
        path: ファイルパス
        split: 読み込んだ全集合に付ける分割タグ

    Raises:
        MissingArtifactError: ファイルが存在しない場合
        DataFormatError: 形式が不正な場合
    """
    r = _Reader(_read_bytes(path), path, DATASET_MAGIC)
    geometry, raw = _read_dataset_block(r)
    r.finish()
    try:
        sets = [
            DescriptorSet(id=i, label=l, geometry=geometry, descriptors=x, split=split)
            for i, l, x in raw
        ]
        return Dataset(geometry=geometry, sets=sets)
    except ValidationError as e:
        raise DataFormatError(path, f"invalid descriptor set: {e.errors()[0]['msg']}") from None


# ============ コードブック ============

def _pack_kernel(w: _Writer, k: KernelSpec) -> None:
    w.pack("Bd", _FAMILY_CODES[k.family], k.sigma)


def _unpack_kernel(r: _Reader, geometry: Geometry) -> KernelSpec:
    family_code, sigma = r.unpack("Bd")
    families = _invert(_FAMILY_CODES)
    if family_code not in families:
        raise r.fail("geometry mismatch")
    try:
        return KernelSpec(geometry=geometry, family=families[family_code], sigma=sigma)
    except ValidationError:
        raise r.fail("geometry mismatch") from None


def write_codebook(path: str, cb: ExplicitCodebook | ImplicitCodebook) -> None:
    """コードブックを KVLC 形式で書き込む。"""
    w = _Writer(CODEBOOK_MAGIC)
    if isinstance(cb, ExplicitCodebook):
        w.pack("BBIIQ", 0, 0, cb.m, cb.dim, cb.fingerprint)
        w.array(cb.centers)
    else:
        w.pack("BB", 1, 0)
        _write_dataset_block(w, cb.geometry, [(0, 0, cb.training)])
        w.pack("I", cb.m)
        for idx in cb.members:
            w.pack("I", idx.size)
            w.array(idx, "<u4")
        _pack_kernel(w, cb.kernel)
        w.pack("QQ", cb.seed, cb.fingerprint)
    atomic_write_bytes(path, w.getvalue())


def read_codebook(path: str) -> ExplicitCodebook | ImplicitCodebook:
    """KVLC 形式のコードブックを読み込む。暗黙的コードブックのキャッシュは再計算する。

    Raises:
        MissingArtifactError: ファイルが存在しない場合
        DataFormatError: 形式が不正な場合
    """
    r = _Reader(_read_bytes(path), path, CODEBOOK_MAGIC)
    kind, _pad = r.unpack("BB")
    if kind == 0:
        m, d, fingerprint = r.unpack("IIQ")
        centers = r.array(m * d).reshape(m, d)
        r.finish()
        return ExplicitCodebook(centers=centers, fingerprint=fingerprint)
    if kind != 1:
        raise r.fail("bad codebook kind")
    geometry, raw = _read_dataset_block(r)
    if len(raw) != 1:
        raise r.fail("dimension mismatch")
    training = raw[0][2]
    (m,) = r.unpack("I")
    labels = np.full(training.shape[0], -1, dtype=np.int64)
    for s in range(m):
        (count,) = r.unpack("I")
        idx = r.array(count, "<u4")
        if np.any(idx >= labels.size):
            raise r.fail("dimension mismatch")
        if np.unique(idx).size != idx.size or np.any(labels[idx] >= 0):
            raise r.fail("bad codebook")
        labels[idx] = s
    kernel = _unpack_kernel(r, geometry)
    seed, fingerprint = r.unpack("QQ")
    r.finish()
    if np.any(labels < 0):
        raise r.fail("member lists do not cover the training descriptors")
    return build_implicit_codebook(training, kernel, labels, m, seed=seed, fingerprint=fingerprint)


# ============ 写像 ============

def write_map(path: str, fmap: NystromMap | FourierMap) -> None:
    """Nyström / フーリエ写像を KVLM 形式で書き込む。"""
    w = _Writer(MAP_MAGIC)
    if isinstance(fmap, NystromMap):
        w.pack("BBQ", 0, 0, fmap.fingerprint)
        _write_dataset_block(w, fmap.kernel.geometry, [(0, 0, fmap.landmarks)])
        _pack_kernel(w, fmap.kernel)
        w.pack("I", fmap.r)
        w.array(fmap.projection)
        w.array(fmap.eigenvalues)
    else:
        w.pack("BBQ", 1, 0, fmap.fingerprint)
        w.pack("IIdQ", fmap.d, fmap.r, fmap.sigma, fmap.seed)
        w.array(fmap.omegas)
        w.array(fmap.offsets)
    atomic_write_bytes(path, w.getvalue())


def read_map(path: str) -> NystromMap | FourierMap:
    """KVLM 形式の写像を読み込む。

    Raises:
        MissingArtifactError: ファイルが存在しない場合
        DataFormatError: 形式が不正な場合
    """
    r = _Reader(_read_bytes(path), path, MAP_MAGIC)
    kind, _pad, fingerprint = r.unpack("BBQ")
    if kind == 0:
        geometry, raw = _read_dataset_block(r)
        if len(raw) != 1:
            raise r.fail("dimension mismatch")
        landmarks = raw[0][2]
        kernel = _unpack_kernel(r, geometry)
        (rank,) = r.unpack("I")
        count = landmarks.shape[0]
        projection = r.array(rank * count).reshape(rank, count)
        eigenvalues = r.array(count)
        r.finish()
        return NystromMap(
            landmarks=landmarks, kernel=kernel, projection=projection,
            eigenvalues=eigenvalues, fingerprint=fingerprint,
        )
    if kind != 1:
        raise r.fail("bad map kind")
    d, rank, sigma, seed = r.unpack("IIdQ")
    omegas = r.array(rank * d).reshape(rank, d)
    offsets = r.array(rank)
    r.finish()
    return FourierMap(omegas=omegas, offsets=offsets, sigma=sigma, seed=seed, fingerprint=fingerprint)


# ============ 符号 ============

def write_codes(path: str, codes: CodeMatrix) -> None:
    """符号行列を KVLE 形式で書き込む。"""
    w = _Writer(CODES_MAGIC)
    mask = NormalizationSpec.from_flags(codes.normalization).bitmask
    w.pack("BBI", _ENCODER_CODES[codes.encoder], mask, len(codes.block_lengths))
    w.array(np.asarray(codes.block_lengths), "<u4")
    w.pack("I", len(codes.ids))
    for row, (set_id, label) in enumerate(zip(codes.ids, codes.labels)):
        w.pack("II", set_id, int(label))
        w.array(codes.values[row])
    atomic_write_bytes(path, w.getvalue())


def read_codes(path: str) -> CodeMatrix:
    """KVLE 形式の符号行列を読み込む。

    Raises:
        MissingArtifactError: ファイルが存在しない場合
        DataFormatError: 形式が不正な場合
    """
    r = _Reader(_read_bytes(path), path, CODES_MAGIC)
    encoder_code, mask, m = r.unpack("BBI")
    encoders = _invert(_ENCODER_CODES)
    if encoder_code not in encoders:
        raise r.fail("bad encoder tag")
    lengths = tuple(int(v) for v in r.array(m, "<u4"))
    (num_sets,) = r.unpack("I")
    total = sum(lengths)
    ids, labels, rows = [], [], []
    for _ in range(num_sets):
        set_id, label = r.unpack("II")
        ids.append(set_id)
        labels.append(label)
        rows.append(r.array(total))
    r.finish()
    return CodeMatrix(
        encoder=encoders[encoder_code],
        normalization=NormalizationSpec.from_bitmask(mask).flags,
        block_lengths=lengths,
        ids=tuple(ids),
        labels=np.asarray(labels, dtype=np.int64),
        values=np.vstack(rows) if rows else np.zeros((0, total)),
    )


# ============ グラム行列 ============

def write_gram(path: str, gram: GramMatrix) -> None:
    """グラム行列を KVLG 形式（上三角のみ）で書き込む。"""
    w = _Writer(GRAM_MAGIC)
    w.pack("I", gram.size)
    w.array(np.asarray(gram.item_ids), "<u4")
    w.array(gram.values[np.triu_indices(gram.size)])
    atomic_write_bytes(path, w.getvalue())


def read_gram(path: str) -> GramMatrix:
    """KVLG 形式のグラム行列を読み込み、下三角を鏡映して復元する。

    Raises:
        MissingArtifactError: ファイルが存在しない場合
        DataFormatError: 形式が不正な場合
    """
    r = _Reader(_read_bytes(path), path, GRAM_MAGIC)
    (n,) = r.unpack("I")
    ids = tuple(int(v) for v in r.array(n, "<u4"))
    rows, cols = np.triu_indices(n)
    upper = r.array(rows.size)
    r.finish()
    values = np.zeros((n, n))
    values[rows, cols] = upper
    values[cols, rows] = upper
    return GramMatrix(values=values, item_ids=ids)


# ============ 分類器モデル（JSON） ============

def write_model(path: str, model: RidgeModel | KernelRidgeModel) -> None:
    """分類器モデルを JSON で書き込む。"""
    if isinstance(model, RidgeModel):
        payload = {
            "kind": "ridge",
            "lam": model.lam,
            "classes": model.classes.tolist(),
            "weights": model.weights.tolist(),
        }
    else:
        payload = {
            "kind": "kernel-ridge",
            "lam": model.lam,
            "classes": model.classes.tolist(),
            "train_ids": list(model.train_ids),
            "dual_coef": model.dual_coef.tolist(),
            "column_means": model.column_means.tolist(),
            "grand_mean": model.grand_mean,
            "target_means": model.target_means.tolist(),
        }
    atomic_write_text(path, json.dumps(payload, ensure_ascii=False, indent=1) + "\n")


def read_model(path: str) -> RidgeModel | KernelRidgeModel:
    """JSON の分類器モデルを読み込む。

    Raises:
        MissingArtifactError: ファイルが存在しない場合
        DataFormatError: 形式が不正な場合
    """
    try:
        payload = json.loads(_read_bytes(path).decode("utf-8"))
        if payload["kind"] == "ridge":
            return RidgeModel(
                weights=np.asarray(payload["weights"], dtype=np.float64),
                lam=payload["lam"],
                classes=np.asarray(payload["classes"], dtype=np.int64),
            )
        if payload["kind"] == "kernel-ridge":
            return KernelRidgeModel(
                dual_coef=np.asarray(payload["dual_coef"], dtype=np.float64),
                lam=payload["lam"],
                classes=np.asarray(payload["classes"], dtype=np.int64),
                train_ids=tuple(payload["train_ids"]),
                column_means=np.asarray(payload["column_means"], dtype=np.float64),
                grand_mean=payload["grand_mean"],
                target_means=np.asarray(payload["target_means"], dtype=np.float64),
            )
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError, ValidationError) as e:
        raise DataFormatError(path, f"invalid model: {e}") from None
    raise DataFormatError(path, f"unknown model kind: {payload.get('kind')}")


# ============ CSV 書き出し ============

def _csv_text(rows: np.ndarray, prefix: Optional[np.ndarray] = None) -> str:
    lines = []
    for i, row in enumerate(np.atleast_2d(rows)):
        cells = [] if prefix is None else [str(int(v)) for v in prefix[i]]
        cells.extend(f"{v:.17g}" for v in row)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def export_csv(path: str, csv_path: str) -> dict:
    """符号またはグラム行列を、ヘッダなし・有効数字 17 桁の CSV に書き出す。

    符号は行ごとに id,label,値…、グラム行列は N×N の値を書き出す。

    Returns:
        dict: 書き出した内容の概要

    Raises:
        DataFormatError: 符号・グラム行列以外のファイルの場合
    """
    readers: dict[bytes, Callable[[], tuple[str, dict]]] = {
        CODES_MAGIC: lambda: _export_codes(path),
        GRAM_MAGIC: lambda: _export_gram(path),
    }
    magic = read_magic(path)
    if magic not in readers:
        raise DataFormatError(path, "bad magic")
    text, summary = readers[magic]()
    atomic_write_text(csv_path, text)
    return summary


def _export_codes(path: str) -> tuple[str, dict]:
    codes = read_codes(path)
    prefix = np.column_stack([np.asarray(codes.ids), codes.labels])
    return _csv_text(codes.values, prefix), {"kind": "codes", "rows": len(codes.ids), "cols": codes.values.shape[1] + 2}


def _export_gram(path: str) -> tuple[str, dict]:
    gram = read_gram(path)
    return _csv_text(gram.values), {"kind": "gram", "rows": gram.size, "cols": gram.size}
