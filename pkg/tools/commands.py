"""サブコマンドの実装

各関数は検証済みの RunConfig を受け取り、成果物をファイルに書き出して
標準出力用の概要（JSON に変換できる dict）を返す。
"""
import logging
import os
from typing import Callable

import numpy as np

from data.serialization import (
    export_csv,
    read_codebook,
    read_codes,
    read_dataset,
    read_gram,
    read_map,
    read_model,
    write_codebook,
    write_codes,
    write_dataset,
    write_gram,
    write_map,
    write_model,
)
from data.synthetic import gen_euclidean, gen_grassmann, gen_spd
from encoders.kvlad import kvlad_gram, kvlad_inner, kvlad_rbf_gram
from encoders.subspace import subspace_fit
from evals.bench import bench_encoder, cycle
from evals.classifiers import kridge_predict, kridge_train, ridge_predict, ridge_train
from evals.cross_validation import cv_bandwidth
from evals.metrics import accuracy
from evals.pipeline import EncoderArtifacts, check_encoder_geometry, fit_encoder, repeated_split_accuracy
from handlers.error_handler import ConfigError, GeometryMismatchError, MissingArtifactError
from models.data_models import (
    CodeMatrix,
    Dataset,
    DescriptorSet,
    ExplicitCodebook,
    FourierMap,
    ImplicitCodebook,
    RidgeModel,
)
from tools.run_config import RunConfig

_logger = logging.getLogger(__name__)

# コードブックの学習方法ごとに使える符号化方式
_METHOD_ENCODERS = {
    "kmeans": ("vlad", "le-vlad", "nvlad", "fvlad"),
    "kernel-kmeans": ("kvlad", "svlad"),
}


def _hex(fingerprint: int) -> str:
    return f"{fingerprint:#018x}"


# ============ gen ============

def run_gen(cfg: RunConfig) -> dict:
    """合成データセットを生成し、<out>/train.kvd と <out>/test.kvd に書き出す。"""
    geometry = cfg.require("geometry")
    d = cfg.require("d")
    out = cfg.require("out")
    if geometry == "euclidean":
        dataset = gen_euclidean(cfg.classes, cfg.sets_per_class, cfg.per_set, d, cfg.separation, cfg.seed)
    elif geometry == "spd":
        dataset = gen_spd(cfg.classes, cfg.sets_per_class, cfg.per_set, d, cfg.seed)
    else:
        dataset = gen_grassmann(cfg.classes, cfg.sets_per_class, cfg.per_set, d, cfg.require("p"), cfg.noise, cfg.seed)
    train_path = os.path.join(out, "train.kvd")
    test_path = os.path.join(out, "test.kvd")
    train, test = dataset.subset("train"), dataset.subset("test")
    write_dataset(train_path, train)
    write_dataset(test_path, test)
    return {
        "command": "gen",
        "geometry": dataset.geometry.describe(),
        "train": train_path,
        "test": test_path,
        "train_sets": len(train.sets),
        "test_sets": len(test.sets),
    }


# ============ codebook ============

def _codebook_encoder(cfg: RunConfig, dataset: Dataset) -> str:
    allowed = _METHOD_ENCODERS[cfg.method]
    if cfg.encoder is None:
        if cfg.method == "kernel-kmeans":
            return "kvlad"
        return "vlad" if dataset.geometry.tag == "euclidean" else "le-vlad"
    if cfg.encoder not in allowed:
        raise ConfigError("encoder", f"--method {cfg.method} では {cfg.encoder} は使えません（{', '.join(allowed)}）")
    return cfg.encoder


def run_codebook(cfg: RunConfig) -> dict:
    """学習データセットからコードブック（nVLAD/fVLAD では写像も）を学習する。

    写像は --map、省略時は <out>.map に書き出す。sVLAD の射影器は encode 時に作る。
    """
    dataset = read_dataset(cfg.input_path(), split="train")
    out = cfg.require("out")
    encoder = _codebook_encoder(cfg, dataset)
    check_encoder_geometry(encoder, dataset.geometry, cfg.family)
    sigma, sigma_source = None, "fixed"
    if cfg.sigma_cv:
        if encoder in ("vlad", "le-vlad"):
            raise ConfigError("sigma", f"{encoder} にはカーネルがないため σ の交差検証はできません")
        scored = cfg.pipeline(dataset.geometry, encoder)
        grid = cfg.sigma_grid(scored.kernel(dataset.geometry))
        sigma = cv_bandwidth(dataset.sets, dataset.labels, grid, cfg.folds, cfg.seed, scored, dataset.geometry)
        sigma_source = "cv"
    # sVLAD はカーネル k-means のコードブックだけを保存する
    pcfg = cfg.pipeline(dataset.geometry, "kvlad" if encoder == "svlad" else encoder)
    if sigma is not None:
        pcfg = pcfg.model_copy(update={"sigma": sigma})
    artifacts = fit_encoder(dataset.sets, dataset.geometry, pcfg)
    cb = artifacts.codebook
    write_codebook(out, cb)
    summary = {
        "command": "codebook",
        "method": cfg.method,
        "encoder": encoder,
        "geometry": dataset.geometry.describe(),
        "m": cb.m,
        "sigma": pcfg.sigma,
        "sigma_source": sigma_source,
        "distortion": cb.distortions[-1] if cb.distortions else None,
        "fingerprint": _hex(cb.fingerprint),
        "out": out,
    }
    if artifacts.feature_map is not None:
        map_path = cfg.map or out + ".map"
        write_map(map_path, artifacts.feature_map)
        summary.update({"map": map_path, "r": artifacts.feature_map.r})
    return summary


# ============ encode ============

def _encoder_artifacts(
    cfg: RunConfig,
    dataset: Dataset,
    encoder: str,
    codebook_path: str,
    cb: ExplicitCodebook | ImplicitCodebook,
) -> EncoderArtifacts:
    """読み込んだコードブック（と写像）から符号化器を組み立てる。sVLAD の射影器はここで作る。"""
    pcfg = cfg.pipeline(dataset.geometry, encoder)
    feature_map = projector = None
    if encoder in ("kvlad", "svlad"):
        if not isinstance(cb, ImplicitCodebook):
            raise ConfigError("codebook", f"{encoder} にはカーネル k-means のコードブックが必要です")
        if cb.geometry != dataset.geometry:
            raise GeometryMismatchError(cb.geometry.describe(), dataset.geometry.describe())
        pcfg = pcfg.model_copy(update={"family": cb.kernel.family, "sigma": cb.kernel.sigma})
        if encoder == "svlad":
            projector = subspace_fit(cb, pcfg.r, pcfg.eig_floor)
    else:
        if not isinstance(cb, ExplicitCodebook):
            raise ConfigError("codebook", f"{encoder} には k-means のコードブックが必要です")
        if encoder in ("nvlad", "fvlad"):
            feature_map = read_map(cfg.map or codebook_path + ".map")
    return EncoderArtifacts(pcfg, dataset.geometry, cb, feature_map=feature_map, projector=projector)


def run_encode(cfg: RunConfig) -> dict:
    """データセットの全集合を明示的な符号にして KVLE ファイルに書き出す。"""
    dataset = read_dataset(cfg.input_path())
    encoder = cfg.require("encoder")
    if encoder == "kvlad":
        raise ConfigError("encoder", "kvlad は明示的な符号を作りません。gram コマンドを使ってください")
    check_encoder_geometry(encoder, dataset.geometry, cfg.family)
    codebook_path = cfg.require("codebook")
    out = cfg.require("out")
    artifacts = _encoder_artifacts(cfg, dataset, encoder, codebook_path, read_codebook(codebook_path))
    codes = CodeMatrix.from_codes(dataset.ids, dataset.labels, [artifacts.encode(s) for s in dataset.sets])
    write_codes(out, codes)
    return {
        "command": "encode",
        "encoder": encoder,
        "geometry": dataset.geometry.describe(),
        "sets": len(codes.ids),
        "dim": int(codes.values.shape[1]),
        "block_lengths": list(codes.block_lengths),
        "normalization": list(codes.normalization),
        "out": out,
    }


# ============ gram ============

def run_gram(cfg: RunConfig) -> dict:
    """--in の全データセットを通した kVLAD グラム行列を書き出す。"""
    cb = read_codebook(cfg.require("codebook"))
    out = cfg.require("out")
    if not isinstance(cb, ImplicitCodebook):
        raise ConfigError("codebook", "kVLAD グラムにはカーネル k-means のコードブックが必要です")
    sets: list[DescriptorSet] = []
    for path in cfg.require("inputs"):
        dataset = read_dataset(path)
        if dataset.geometry != cb.geometry:
            raise GeometryMismatchError(cb.geometry.describe(), dataset.geometry.describe())
        sets.extend(dataset.sets)
    ids = [s.id for s in sets]
    if len(set(ids)) != len(ids):
        raise ConfigError("in", "入力データセット間で集合 id が重複しています")
    gram = kvlad_gram(sets, cb, cfg.normalized)
    if cfg.rbf_gamma is not None:
        gram = kvlad_rbf_gram(gram, cfg.rbf_gamma)
    write_gram(out, gram)
    return {
        "command": "gram",
        "sets": gram.size,
        "normalized": cfg.normalized,
        "rbf_gamma": cfg.rbf_gamma,
        "out": out,
    }


# ============ classify / eval ============

def _code_rows(codes: CodeMatrix, ids: list[int]) -> np.ndarray:
    rows = {set_id: row for row, set_id in enumerate(codes.ids)}
    missing = [i for i in ids if i not in rows]
    if missing:
        raise ConfigError("labels", f"符号ファイルにない集合 id があります: {missing[:5]}")
    return codes.values[[rows[i] for i in ids]]


def _source(cfg: RunConfig) -> str:
    if (cfg.codes is None) == (cfg.gram is None):
        raise ConfigError("codes", "--codes と --gram のどちらか一方を指定してください")
    return "codes" if cfg.codes is not None else "gram"


def run_classify(cfg: RunConfig) -> dict:
    """--labels の集合で分類器を学習し、モデルを JSON で書き出す。"""
    labels_ds = read_dataset(cfg.require("labels"), split="train")
    model_out = cfg.require("model_out")
    ids, truth = labels_ds.ids, labels_ds.labels
    if _source(cfg) == "codes":
        values = _code_rows(read_codes(cfg.codes), ids)
        model = ridge_train(values, truth, cfg.lam)
        pred = ridge_predict(model, values)
    else:
        gram = read_gram(cfg.gram)
        model = kridge_train(gram.sub(ids), truth, cfg.lam)
        pred = kridge_predict(model, gram.cross(ids, ids))
    write_model(model_out, model)
    return {
        "command": "classify",
        "model": type(model).__name__,
        "classes": int(model.classes.size),
        "train_sets": len(ids),
        "lambda": cfg.lam,
        "train_accuracy": accuracy(pred, truth),
        "out": model_out,
    }


def _eval_splits(cfg: RunConfig) -> dict:
    dataset = read_dataset(cfg.input_path())
    result = repeated_split_accuracy(dataset, cfg.pipeline(dataset.geometry), cfg.splits, cfg.seed)
    return {
        "command": "eval",
        "mode": "splits",
        "encoder": cfg.encoder,
        "splits": cfg.splits,
        "accuracy": result["mean"],
        "accuracies": result["accuracies"],
    }


def run_eval(cfg: RunConfig) -> dict:
    """学習済みモデルで --labels の集合を予測し、正解率を報告する。

    --splits を指定した場合は --in のデータセットを繰り返しランダムに分割して評価する。
    """
    if cfg.splits is not None:
        return _eval_splits(cfg)
    model = read_model(cfg.require("model"))
    labels_ds = read_dataset(cfg.require("labels"), split="test")
    ids, truth = labels_ds.ids, labels_ds.labels
    source = _source(cfg)
    if isinstance(model, RidgeModel):
        if source != "codes":
            raise ConfigError("codes", "リッジ回帰モデルには --codes が必要です")
        pred = ridge_predict(model, _code_rows(read_codes(cfg.codes), ids))
    else:
        if source != "gram":
            raise ConfigError("gram", "カーネルリッジモデルには --gram が必要です")
        pred = kridge_predict(model, read_gram(cfg.gram).cross(ids, model.train_ids))
    return {
        "command": "eval",
        "mode": "model",
        "sets": len(ids),
        "accuracy": accuracy(pred, truth),
    }


# ============ bench ============

def _bench_fn(artifacts: EncoderArtifacts, sets: list[DescriptorSet]) -> Callable[[int], object]:
    if artifacts.config.encoder != "kvlad":
        pick = cycle(sets)
        return lambda i: artifacts.encode(pick(i))
    cb, normalized = artifacts.codebook, artifacts.config.normalized
    n = len(sets)
    return lambda i: kvlad_inner(sets[i % n], sets[(i + 1) % n], cb, normalized)


def _loaded_encoder(cfg: RunConfig, dataset: Dataset, path: str, cb: ExplicitCodebook | ImplicitCodebook) -> str:
    """学習済みコードブック（と写像）がそのまま使える符号化方式を返す。"""
    if isinstance(cb, ImplicitCodebook):
        return "kvlad"
    if cb.fingerprint == 0:
        return "vlad" if dataset.geometry.tag == "euclidean" else "le-vlad"
    return "fvlad" if isinstance(read_map(cfg.map or path + ".map"), FourierMap) else "nvlad"


def run_bench(cfg: RunConfig) -> dict:
    """学習済みの符号化器ごとに符号化時間を計測する（kVLAD は集合ペアの内積一回あたり）。

    --codebook にカンマ区切りで学習済みコードブックを渡す。--encoders を省略すると
    コードブックごとに対応する方式を一つずつ計測する。sVLAD はカーネル k-means の
    コードブックから射影器を作って計測する。

    Raises:
        MissingArtifactError: コードブック・写像がない場合や、要求された方式に使える
            コードブックがない場合
    """
    dataset = read_dataset(cfg.input_path())
    paths = [p.strip() for p in (cfg.codebook or "").split(",") if p.strip()]
    if not paths:
        raise MissingArtifactError("--codebook")
    loaded = []
    for path in paths:
        cb = read_codebook(path)
        loaded.append((path, cb, _loaded_encoder(cfg, dataset, path, cb)))
    encoders = cfg.bench_encoders or list(dict.fromkeys(kind for _, _, kind in loaded))
    rows = []
    for encoder in encoders:
        check_encoder_geometry(encoder, dataset.geometry, cfg.family)
        wanted = "kvlad" if encoder == "svlad" else encoder
        match = next(((path, cb) for path, cb, kind in loaded if kind == wanted), None)
        if match is None:
            raise MissingArtifactError(f"{encoder} 用の学習済みコードブック（--codebook）")
        artifacts = _encoder_artifacts(cfg, dataset, encoder, *match)
        row = bench_encoder(
            encoder,
            dataset.geometry.describe(),
            _bench_fn(artifacts, dataset.sets),
            per_pair=encoder == "kvlad",
            warmup=cfg.warmup,
            repeats=cfg.repeats,
        )
        rows.append(row.model_dump())
    return {"command": "bench", "codebooks": paths, "rows": rows}


# ============ export ============

def run_export(cfg: RunConfig) -> dict:
    """符号・グラム行列を CSV に書き出す。"""
    csv_path = cfg.require("csv")
    summary = export_csv(cfg.input_path(), csv_path)
    return {"command": "export", **summary, "out": csv_path}


COMMANDS: dict[str, Callable[[RunConfig], dict]] = {
    "gen": run_gen,
    "codebook": run_codebook,
    "encode": run_encode,
    "gram": run_gram,
    "classify": run_classify,
    "eval": run_eval,
    "bench": run_bench,
    "export": run_export,
}


def dispatch(cfg: RunConfig) -> dict:
    """サブコマンドを実行して概要を返す。"""
    _logger.info("コマンド開始: %s", cfg.command)
    summary = COMMANDS[cfg.command](cfg)
    _logger.info("コマンド終了: %s", cfg.command)
    return summary
