"""kernel VLAD ツールキット - コマンドラインのエントリーポイント

標準出力にはコマンドごとに一行の JSON 概要だけを出し、人が読むログは標準エラー出力に出す。
終了コード: 0 成功, 1 使用法・設定の誤り, 2 データの誤り, 3 数値計算の失敗。
"""
import argparse
import json
import logging
import os
import sys
import time
from logging.handlers import RotatingFileHandler
from typing import Mapping, Optional, Sequence

from dotenv import load_dotenv

# .envファイルを読み込み（settings の読み込みより前）
load_dotenv()

from config.settings import settings  # noqa: E402
from handlers.error_handler import EXIT_OK, ConfigError, ErrorHandler  # noqa: E402

_logger = logging.getLogger(__name__)

_FMT = "%(asctime)s [%(levelname)s] %(name)s - %(message)s"
_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def setup_logging(level_name: str, log_dir: Optional[str] = None) -> None:
    """ルートロガーを設定する（標準エラー出力、log_dir があればローテーションファイルも）。"""
    level = _LEVELS.get(level_name.lower(), logging.INFO)
    formatter = logging.Formatter(_FMT)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    handlers: list[logging.Handler] = [console_handler]

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        # app.log ハンドラー（INFO以上、10MB × 5世代）
        app_handler = RotatingFileHandler(
            os.path.join(log_dir, "app.log"), maxBytes=10 * 1024 * 1024, backupCount=5, encoding="utf-8"
        )
        app_handler.setLevel(logging.INFO)
        app_handler.setFormatter(formatter)
        # error.log ハンドラー（ERROR以上、10MB × 5世代）
        error_handler_file = RotatingFileHandler(
            os.path.join(log_dir, "error.log"), maxBytes=10 * 1024 * 1024, backupCount=5, encoding="utf-8"
        )
        error_handler_file.setLevel(logging.ERROR)
        error_handler_file.setFormatter(formatter)
        handlers.extend([app_handler, error_handler_file])

    logging.basicConfig(level=min(level, logging.INFO) if log_dir else level, handlers=handlers, force=True)


class _ArgumentParser(argparse.ArgumentParser):
    """使用法の誤りを SystemExit ではなく ConfigError として送出するパーサー"""

    def error(self, message: str) -> None:
        raise ConfigError("argv", message)


def _add(parser: argparse.ArgumentParser, *flags: str, **kwargs) -> None:
    # 未指定のフラグは名前空間に含めない（設定ファイルの値を上書きしないため）
    parser.add_argument(*flags, default=argparse.SUPPRESS, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    """サブコマンドとフラグを定義したパーサーを作る。"""
    parser = _ArgumentParser(prog="kvlad", description="kernel VLAD ツールキット")
    sub = parser.add_subparsers(dest="command", required=True)

    common = _ArgumentParser(add_help=False)
    _add(common, "--config", help="key = value 形式の設定ファイル")
    _add(common, "--seed", type=int)

    gen = sub.add_parser("gen", parents=[common], help="合成データセットを生成する")
    _add(gen, "--geometry", choices=["euclidean", "spd", "grassmann"])
    _add(gen, "--classes", type=int)
    _add(gen, "--sets-per-class", type=int)
    _add(gen, "--per-set", type=int)
    _add(gen, "--d", type=int)
    _add(gen, "--p", type=int)
    _add(gen, "--separation", type=float)
    _add(gen, "--noise", type=float)
    _add(gen, "--out", help="出力ディレクトリ")

    codebook = sub.add_parser("codebook", parents=[common], help="コードブックを学習する")
    _add(codebook, "--in")
    _add(codebook, "--method", choices=["kmeans", "kernel-kmeans"])
    _add(codebook, "--encoder")
    _add(codebook, "--kernel", choices=["rbf", "linear", "stein", "projection"])
    _add(codebook, "--sigma", help="σ または cv")
    _add(codebook, "--grid", help="sigma=cv のときの σ 候補（カンマ区切り）")
    _add(codebook, "--folds", type=int)
    _add(codebook, "--m", type=int)
    _add(codebook, "--r", type=int)
    _add(codebook, "--map")
    _add(codebook, "--out")

    encode = sub.add_parser("encode", parents=[common], help="集合を明示的な符号にする")
    _add(encode, "--in")
    _add(encode, "--codebook")
    _add(encode, "--map")
    _add(encode, "--encoder")
    _add(encode, "--r", type=int)
    _add(encode, "--norm", help="intra,ssr,global のカンマ区切り")
    _add(encode, "--out")

    gram = sub.add_parser("gram", parents=[common], help="kVLAD グラム行列を計算する")
    _add(gram, "--in", help="データセット（カンマ区切りで複数可）")
    _add(gram, "--codebook")
    _add(gram, "--normalized", action="store_true")
    _add(gram, "--rbf-gamma", type=float)
    _add(gram, "--out")

    classify = sub.add_parser("classify", parents=[common], help="分類器を学習する")
    _add(classify, "--codes")
    _add(classify, "--gram")
    _add(classify, "--labels", help="学習集合のデータセット")
    _add(classify, "--lambda", type=float)
    _add(classify, "--model-out")

    evaluate = sub.add_parser("eval", parents=[common], help="分類器を評価する")
    _add(evaluate, "--model")
    _add(evaluate, "--codes")
    _add(evaluate, "--gram")
    _add(evaluate, "--labels", help="評価集合のデータセット")
    _add(evaluate, "--in", help="--splits 用のデータセット")
    _add(evaluate, "--splits", type=int)
    _add(evaluate, "--encoder")
    _add(evaluate, "--kernel", choices=["rbf", "linear", "stein", "projection"])
    _add(evaluate, "--sigma")
    _add(evaluate, "--m", type=int)
    _add(evaluate, "--r", type=int)
    _add(evaluate, "--norm")
    _add(evaluate, "--lambda", type=float)

    bench = sub.add_parser("bench", parents=[common], help="符号化時間を計測する")
    _add(bench, "--in")
    _add(bench, "--codebook", help="学習済みコードブック（カンマ区切りで複数可）")
    _add(bench, "--map", help="nVLAD/fVLAD の写像（省略時は <codebook>.map）")
    _add(bench, "--encoders")
    _add(bench, "--r", type=int)
    _add(bench, "--norm")

    export = sub.add_parser("export", parents=[common], help="符号・グラム行列を CSV に書き出す")
    _add(export, "--in")
    _add(export, "--csv")
    return parser


def run(argv: Sequence[str], env: Optional[Mapping[str, str]] = None) -> int:
    """コマンドを一つ実行して終了コードを返す。

    Args:
        argv: プログラム名を除く引数
        env: 環境変数（KVLAD_LOG / KVLAD_LOG_DIR を参照する。None なら settings の値）

    Returns:
        int: 終了コード
    """
    env = env if env is not None else {}
    setup_logging(env.get("KVLAD_LOG", settings.logging.log), env.get("KVLAD_LOG_DIR", settings.logging.log_dir))

    # 遅延インポート（ロギング設定後に読み込む）
    from tools.commands import dispatch
    from tools.run_config import build_run_config

    command = None
    start = time.perf_counter()
    try:
        args = vars(build_parser().parse_args(list(argv)))
        command = args.pop("command")
        cfg = build_run_config(command, args)
        summary = dispatch(cfg)
        summary["elapsed_ms"] = round((time.perf_counter() - start) * 1000.0, 3)
        print(json.dumps(summary, ensure_ascii=False))
        return EXIT_OK
    except Exception as e:
        code = ErrorHandler.exit_code_for(e)
        message = ErrorHandler.describe(e)
        _logger.error("コマンド失敗: command=%s exit=%d %s", command, code, message, exc_info=_logger.isEnabledFor(logging.DEBUG))
        print(json.dumps({"command": command, "error": message, "exit_code": code}, ensure_ascii=False))
        return code


def main() -> None:
    """メイン関数"""
    sys.exit(run(sys.argv[1:], os.environ))


if __name__ == "__main__":
    main()
