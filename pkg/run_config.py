"""
実行設定
JSON の RunConfig（各モジュールのパラメータをまとめたもの）と、
.env / 環境変数から読む実行環境の既定値（スレッド数・進捗表示）
"""

import os
from pathlib import Path
from typing import Dict, Optional, Union

from dotenv import load_dotenv
from pydantic import ValidationError as PydanticValidationError

from artifacts import read_json
from evaluation import PipelineConfig
from spectra_errors import ConfigurationError
from synth import SynthConfig

THREADS_ENV = "SPECTRASCREEN_THREADS"
PROGRESS_ENV = "SPECTRASCREEN_PROGRESS"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


class RunConfig(PipelineConfig):
    """パイプライン設定に合成データの設定を加えたもの（未知のキーはエラー）"""

    synth: SynthConfig = SynthConfig()

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(**{name: getattr(self, name) for name in PipelineConfig.model_fields})


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    RunConfig を JSON から読み込む

    Args:
        path: 設定ファイル。None ならすべて既定値
    """

    if path is None:
        return RunConfig()
    try:
        return RunConfig.model_validate(read_json(path))
    except PydanticValidationError as e:
        raise ConfigurationError(f"{path}: 設定が不正です\n{e}") from e


class RunEnvironment:
    """実行環境の既定値を .env と環境変数から読むクラス"""

    def __init__(self, env_file: Union[str, Path] = ".env"):
        """
        Args:
            env_file: 環境変数ファイルのパス（デフォルト: .env）。
                      すでに設定済みの環境変数は上書きしない
        """
        self.env_file = Path(env_file)
        self.loaded = self.load()

    def load(self) -> bool:
        if self.env_file.exists():
            load_dotenv(self.env_file, override=False)
            return True
        return False

    def threads(self) -> int:
        value = os.getenv(THREADS_ENV, "").strip()
        if not value:
            return 1
        try:
            threads = int(value)
        except ValueError as e:
            raise ConfigurationError(f"{THREADS_ENV}={value!r} は整数である必要があります") from e
        if threads < 1:
            raise ConfigurationError(f"{THREADS_ENV} は 1 以上である必要があります")
        return threads

    def progress(self) -> bool:
        value = os.getenv(PROGRESS_ENV, "").strip().lower()
        if value in _TRUE:
            return True
        if value in _FALSE:
            return False
        raise ConfigurationError(f"{PROGRESS_ENV}={value!r} は true/false で指定してください")

    def describe(self) -> Dict[str, str]:
        """現在の設定値の一覧（表示用）"""

        source = str(self.env_file) if self.loaded else "環境変数のみ"
        return {
            "source": source,
            THREADS_ENV: str(self.threads()),
            PROGRESS_ENV: "on" if self.progress() else "off",
        }
