"""
spectrascreen 共通の例外クラス

すべて SpectraError (ValueError 派生) を基底にしているので、
呼び出し側は `except SpectraError` でまとめて捕捉できる。
"""

from typing import Optional


class SpectraError(ValueError):
    """spectrascreen の全例外の基底クラス"""


class FormatError(SpectraError):
    """ファイルやドキュメントの形式が不正"""


class ValidationError(SpectraError):
    """データ内容の検証エラー（行・列・試料IDを任意で保持）"""

    def __init__(
        self,
        message: str,
        *,
        row: Optional[int] = None,
        column: Optional[str] = None,
        sample_id: Optional[str] = None,
    ):
        super().__init__(message)
        self.row = row
        self.column = column
        self.sample_id = sample_id


class PreconditionError(ValidationError):
    """事前条件（状態）違反"""


class ShapeError(SpectraError):
    """配列の形状が一致しない"""


class ConfigurationError(SpectraError):
    """設定値の組み合わせが不正"""


class DegenerateError(SpectraError):
    """ノルムがゼロ、定数ベクトルなどの退化した入力"""


class DegenerateComponentError(DegenerateError):
    """PLS の第 component 成分（1始まり）が退化した"""

    def __init__(self, component: int, message: str):
        super().__init__(f"成分 {component}: {message}")
        self.component = component


class SingularityError(SpectraError):
    """線形方程式系が特異（または正定値でない）"""
