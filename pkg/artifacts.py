"""
成果物ファイル（JSON / CSV）の読み書き
書き込みはすべて一時ファイル + rename で行い、途中で落ちても壊れたファイルを残さない
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from spectra_errors import FormatError, ValidationError

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> Path:
    """テキストを原子的に書き込む（同じディレクトリに一時ファイルを作って置き換え）"""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise

    return path


def write_json(path: PathLike, data: Dict[str, Any]) -> Path:
    """辞書をJSONで保存"""

    text = json.dumps(data, ensure_ascii=False, indent=2) + "\n"
    return atomic_write_text(path, text)


def read_json(path: PathLike) -> Dict[str, Any]:
    """JSONファイルを読み込む"""

    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: JSONとして読めません ({e})") from e
        except UnicodeDecodeError as e:
            raise FormatError(f"{path}: UTF-8 として読めません ({e})") from e

    if not isinstance(data, dict):
        raise FormatError(f"{path}: 最上位はオブジェクトである必要があります")
    return data


def read_text_csv(path: PathLike) -> pd.DataFrame:
    """CSVをすべて文字列のまま読み込む（空文字はそのまま残す）"""

    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: UTF-8 として読めません ({e})") from e
    except pd.errors.EmptyDataError as e:
        raise FormatError(f"{path}: 空のファイルです") from e
    except pd.errors.ParserError as e:
        raise ValidationError(f"{path}: 行の列数が揃っていません ({e})") from e


def check_document(data: Dict[str, Any], expected_format: str) -> None:
    """ドキュメントの format タグとバージョンを確認"""

    found = data.get("format")
    if found != expected_format:
        raise FormatError(f"format が {expected_format!r} ではありません: {found!r}")
    if data.get("version") != 1:
        raise FormatError(f"未対応のバージョンです: {data.get('version')!r}")


def matrix_to_lists(matrix: np.ndarray) -> List:
    """numpy配列を行優先のネストしたリストに変換"""

    return np.asarray(matrix, dtype=float).tolist()


def lists_to_matrix(data: Sequence, shape: Tuple[int, ...], name: str) -> np.ndarray:
    """ネストしたリストを numpy 配列に戻し、形状を確認"""

    try:
        arr = np.asarray(data, dtype=float)
    except (TypeError, ValueError) as e:
        raise FormatError(f"{name}: 数値配列として読めません") from e

    if arr.shape != tuple(shape):
        raise FormatError(f"{name}: 形状 {arr.shape} は {tuple(shape)} と一致しません")
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{name}: 有限でない値が含まれています")
    return arr


def write_frame_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    """DataFrameをCSVで保存（UTF-8、LF改行、浮動小数は最短の往復可能表記）"""

    text = frame.to_csv(index=False, lineterminator="\n")
    return atomic_write_text(path, text)


def write_scores_csv(path: PathLike, sample_ids: Sequence[str], labels: np.ndarray, scores: np.ndarray) -> Path:
    """PLSスコアを `id,label,t1,...,tN` 形式で保存"""

    scores = np.asarray(scores, dtype=float)
    columns = [f"t{i + 1}" for i in range(scores.shape[1])]
    frame = pd.DataFrame(scores, columns=columns)
    frame.insert(0, "label", np.asarray(labels, dtype=int))
    frame.insert(0, "id", list(sample_ids))
    return write_frame_csv(path, frame)


def load_scores_csv(path: PathLike) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """スコアCSVを読み込み、(試料ID, ラベル, スコア行列) を返す"""

    frame = read_text_csv(path)
    columns = list(frame.columns)
    expected = ["id", "label"] + [f"t{i + 1}" for i in range(len(columns) - 2)]
    if len(columns) < 3 or columns != expected:
        raise FormatError(f"{path}: ヘッダーは id,label,t1,...,tN である必要があります")

    scores = frame[columns[2:]].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = np.argwhere(~np.isfinite(scores))
    if bad.size:
        row, col = bad[0]
        raise ValidationError(
            f"{path}: 行 {row + 1}, 列 {columns[col + 2]!r} が数値ではありません",
            row=int(row) + 1,
            column=columns[col + 2],
        )

    labels = parse_labels(frame["label"].tolist(), path)
    return frame["id"].tolist(), labels, scores


def parse_labels(cells: Sequence[str], path: PathLike) -> np.ndarray:
    labels = np.empty(len(cells), dtype=int)
    for i, cell in enumerate(cells):
        if cell.strip() not in ("0", "1"):
            raise ValidationError(
                f"{path}: 行 {i + 1} のラベル {cell!r} は 0 または 1 である必要があります",
                row=i + 1,
                column="label",
            )
        labels[i] = int(cell)
    return labels
