"""エラーハンドリング関連のモジュール

ライブラリ層が送出する例外階層と、CLI 向けにメッセージ・終了コードへ変換する
ErrorHandler を定義する。
"""
from pydantic import ValidationError

# 終了コード
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class KvladError(Exception):
    """本パッケージの全例外の基底クラス。"""

    exit_code: int = EXIT_USAGE


# ============ 設定・入力エラー（終了コード 1） ============

class ConfigError(KvladError, ValueError):
    """設定値が不正な場合に送出される例外。"""

    exit_code = EXIT_USAGE

    def __init__(self, key: str, message: str) -> None:
        """初期化する。

        Args:
            key: 問題のある設定キー
            message: 詳細メッセージ
        """
        self.key = key
        super().__init__(f"設定 '{key}' が不正です: {message}")


class GeometryMismatchError(KvladError, ValueError):
    """記述子の幾何とカーネル・コードブックの幾何が一致しない場合の例外。"""

    exit_code = EXIT_USAGE

    def __init__(self, expected: str, actual: str) -> None:
        self.expected = expected
        self.actual = actual
        super().__init__(f"geometry mismatch: 期待={expected}, 実際={actual}")


class DimensionMismatchError(KvladError, ValueError):
    """ベクトル・行列の次元が一致しない場合の例外。"""

    exit_code = EXIT_USAGE

    def __init__(self, expected: object, actual: object) -> None:
        self.expected = expected
        self.actual = actual
        super().__init__(f"dimension mismatch: 期待={expected}, 実際={actual}")


class InvalidDescriptorError(KvladError, ValueError):
    """記述子が幾何の不変条件を満たさない場合の例外。"""

    exit_code = EXIT_DATA

    def __init__(self, diagnostic: str, index: int | None = None) -> None:
        """初期化する。

        Args:
            diagnostic: 失敗した不変条件の名前（"asymmetric" など）
            index: 記述子の位置（不明な場合は None）
        """
        self.diagnostic = diagnostic
        self.index = index
        where = f"（位置 {index}）" if index is not None else ""
        super().__init__(f"不正な記述子です{where}: {diagnostic}")


# ============ データ・ファイルエラー（終了コード 2） ============

class DataFormatError(KvladError):
    """バイナリファイルの形式不正を表す例外。"""

    exit_code = EXIT_DATA

    def __init__(self, path: str, diagnostic: str) -> None:
        """初期化する。

        Args:
            path: 読み込み対象のファイルパス
            diagnostic: "bad magic" / "bad version" / "unexpected end" などの診断名
        """
        self.path = path
        self.diagnostic = diagnostic
        super().__init__(f"{path}: {diagnostic}")


class FingerprintMismatchError(KvladError):
    """写像とコードブックのフィンガープリントが一致しない場合の例外。"""

    exit_code = EXIT_DATA

    def __init__(self, expected: int, actual: int) -> None:
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"fingerprint mismatch: コードブック={expected:#018x}, 写像={actual:#018x}"
        )


class MissingArtifactError(KvladError):
    """必要な学習済みファイルが存在しない場合の例外。"""

    exit_code = EXIT_DATA

    def __init__(self, path: str) -> None:
        self.path = path
        super().__init__(f"ファイルが見つかりません: {path}")


# ============ 数値エラー（終了コード 3） ============

class NumericalError(KvladError, ArithmeticError):
    """数値計算上の失敗を表す例外の基底クラス。"""

    exit_code = EXIT_NUMERICAL


class NonSpdError(NumericalError):
    """Cholesky 分解に失敗した（正定値でない）場合の例外。"""

    def __init__(self, what: str) -> None:
        self.what = what
        super().__init__(f"正定値行列ではありません: {what}")


class InconsistentKernelError(NumericalError):
    """カーネル値から求めた二乗距離が許容値を超えて負になった場合の例外。"""

    def __init__(self, value: float) -> None:
        self.value = value
        super().__init__(f"カーネル値が矛盾しています（二乗距離={value:.3e}）")


class DistortionIncreaseError(NumericalError):
    """Lloyd 反復で歪みが丸め誤差を超えて増加した場合の例外。"""

    def __init__(self, previous: float, current: float, iteration: int) -> None:
        self.previous = previous
        self.current = current
        self.iteration = iteration
        super().__init__(f"歪みが増加しました: {previous:.12g} -> {current:.12g}（反復 {iteration}）")


class DegenerateKernelError(NumericalError):
    """固有値の下限を超える固有値が一つもない場合の例外。"""

    def __init__(self, what: str) -> None:
        self.what = what
        super().__init__(f"カーネル行列が退化しています: {what}")


class ErrorHandler:
    """エラーハンドリングヘルパー関数クラス

    例外オブジェクトを受け取り、ユーザー向けエラーメッセージ文字列または終了コードを返す。
    ログ出力は行わない（呼び出し元モジュールが _logger 経由でログを出力すること）。
    """

    @staticmethod
    def exit_code_for(error: BaseException) -> int:
        """例外に対応する終了コードを返す。

        Args:
            error: 発生した例外オブジェクト

        Returns:
            int: 終了コード（1: 使用法, 2: データ, 3: 数値）
        """
        if isinstance(error, KvladError):
            return error.exit_code
        if isinstance(error, ValidationError):
            return EXIT_USAGE
        if isinstance(error, (FileNotFoundError, PermissionError, IsADirectoryError)):
            return EXIT_DATA
        if isinstance(error, ArithmeticError):
            return EXIT_NUMERICAL
        return EXIT_USAGE

    @staticmethod
    def handle_validation_error(error: ValidationError) -> str:
        """設定バリデーションエラーのユーザー向けメッセージを生成する。

        Args:
            error: Pydantic v2のValidationErrorインスタンス

        Returns:
            str: 問題のあるキーを列挙したメッセージ
        """
        field_errors = []
        for err in error.errors():
            loc = ".".join(str(part) for part in err["loc"]) or "config"
            field_errors.append(f"- {loc}: {err['msg']}")
        error_details = "\n".join(field_errors)
        return f"設定に不備があります。以下の項目を確認してください。\n{error_details}"

    @staticmethod
    def handle_file_error(error: OSError) -> str:
        """ファイル入出力エラーのユーザー向けメッセージを生成する。

        Args:
            error: 発生した OSError

        Returns:
            str: ファイル名を含むメッセージ
        """
        return f"ファイルにアクセスできません: {error.filename}（{error.strerror}）"

    @staticmethod
    def handle_kvlad_error(error: KvladError) -> str:
        """本パッケージの例外のユーザー向けメッセージを生成する。"""
        return f"{type(error).__name__}: {error}"

    @staticmethod
    def handle_unexpected_error(error: Exception) -> str:
        """予期しないエラーのユーザー向けメッセージを生成する。

        Args:
            error: 予期しない例外インスタンス

        Returns:
            str: ユーザー向けエラーメッセージ
        """
        error_type = type(error).__name__
        return f"予期しないエラーが発生しました。（エラー種別: {error_type}, 詳細: {error}）"

    @classmethod
    def describe(cls, error: BaseException) -> str:
        """例外の種類に応じたメッセージを返す。"""
        if isinstance(error, ValidationError):
            return cls.handle_validation_error(error)
        if isinstance(error, KvladError):
            return cls.handle_kvlad_error(error)
        if isinstance(error, OSError):
            return cls.handle_file_error(error)
        return cls.handle_unexpected_error(error)
