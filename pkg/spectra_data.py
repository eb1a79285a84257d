"""
ATR-FTIR スペクトルのデータモデル
波数グリッド、スペクトル、データセットと、CSV入出力・反復測定の平均・帯域切り出し
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from artifacts import parse_labels, read_text_csv, write_frame_csv
from spectra_errors import FormatError, PreconditionError, ShapeError, ValidationError

# 解析に使う指紋領域（1800〜900 cm⁻¹ を 874 点で等間隔に取る）
CANONICAL_HI = 1800.0
CANONICAL_LO = 900.0
CANONICAL_COUNT = 874


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class WavenumberGrid:
    """単調減少する波数グリッド (cm⁻¹)"""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1 or values.size == 0:
            raise ValidationError("波数グリッドは空でない1次元配列である必要があります")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValidationError("波数はすべて有限な正の値である必要があります")
        if values.size > 1 and np.any(np.diff(values) >= 0):
            raise ValidationError("波数グリッドは狭義単調減少である必要があります")
        object.__setattr__(self, "values", values)

    @classmethod
    def canonical(cls) -> "WavenumberGrid":
        return cls(np.linspace(CANONICAL_HI, CANONICAL_LO, CANONICAL_COUNT))

    @property
    def count(self) -> int:
        return int(self.values.size)

    def band_mask(self, hi: float, lo: float) -> np.ndarray:
        """閉区間 [lo, hi] に入る点のマスク"""
        return (self.values >= lo) & (self.values <= hi)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WavenumberGrid):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None

    def __len__(self) -> int:
        return self.count


def canonical_grid() -> WavenumberGrid:
    return WavenumberGrid.canonical()


@dataclass(frozen=True, eq=False)
class Spectrum:
    """1本の吸光度スペクトル"""

    grid: WavenumberGrid
    absorbance: np.ndarray

    def __post_init__(self):
        absorbance = _frozen(self.absorbance)
        if absorbance.shape != (self.grid.count,):
            raise ShapeError(f"吸光度の長さ {absorbance.shape} がグリッド点数 {self.grid.count} と一致しません")
        if not np.all(np.isfinite(absorbance)):
            raise ValidationError("吸光度に有限でない値が含まれています")
        object.__setattr__(self, "absorbance", absorbance)


@dataclass(frozen=True, eq=False)
class SpectraDataset:
    """スペクトル行列 X（試料 × 波数）と二値ラベル（1 = 陽性, 0 = 陰性）"""

    grid: WavenumberGrid
    X: np.ndarray
    labels: np.ndarray
    sample_ids: Tuple[str, ...]

    def __post_init__(self):
        X = _frozen(self.X)
        labels = _frozen(self.labels, dtype=int)
        sample_ids = tuple(str(s) for s in self.sample_ids)

        if X.ndim != 2:
            raise ShapeError("X は2次元配列である必要があります")
        if X.shape[1] != self.grid.count:
            raise ShapeError(f"特徴量数 {X.shape[1]} がグリッド点数 {self.grid.count} と一致しません")
        if labels.shape != (X.shape[0],) or len(sample_ids) != X.shape[0]:
            raise ShapeError("X の行数とラベル数・試料ID数が一致しません")
        if not np.all(np.isfinite(X)):
            raise ValidationError("X に欠損値または有限でない値が含まれています")
        if not np.all(np.isin(labels, (0, 1))):
            raise ValidationError("ラベルは 0 または 1 である必要があります")

        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_ids", sample_ids)

    @property
    def n_samples(self) -> int:
        return int(self.X.shape[0])

    def spectrum(self, index: int) -> Spectrum:
        return Spectrum(self.grid, self.X[index])

    def subset(self, indices: Sequence[int]) -> "SpectraDataset":
        indices = np.asarray(indices, dtype=int)
        return SpectraDataset(
            self.grid,
            self.X[indices],
            self.labels[indices],
            tuple(self.sample_ids[i] for i in indices),
        )

    def with_matrix(self, X: np.ndarray) -> "SpectraDataset":
        """ラベル・IDはそのままに X だけ差し替えたデータセット"""
        return SpectraDataset(self.grid, X, self.labels, self.sample_ids)


def load_spectra_csv(path: Union[str, Path]) -> SpectraDataset:
    """
    `id,label,<波数1>,...,<波数M>` 形式のCSVを読み込む

    Args:
        path: CSVファイルのパス

    Returns:
        読み込んだデータセット（行順はファイルのまま）
    """

    frame = read_text_csv(path)

    columns = [str(c) for c in frame.columns]
    if len(columns) < 3 or columns[0] != "id" or columns[1] != "label":
        raise FormatError(f"{path}: ヘッダーは id,label,<波数...> である必要があります")

    try:
        wavenumbers = np.array([float(c) for c in columns[2:]])
    except ValueError as e:
        raise FormatError(f"{path}: ヘッダーの波数が数値ではありません") from e
    try:
        grid = WavenumberGrid(wavenumbers)
    except ValidationError as e:
        raise FormatError(f"{path}: {e}") from e

    # dtype=str で読んでいるので、NaN が現れるのは列が足りない行だけ
    short_rows = np.flatnonzero(frame.isna().any(axis=1).to_numpy())
    if short_rows.size:
        row = int(short_rows[0]) + 1
        raise ValidationError(f"{path}: 行 {row} の列数がヘッダーと一致しません", row=row)

    labels = parse_labels(frame["label"].tolist(), path)

    X = frame[columns[2:]].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        row, col = (int(v) for v in bad[0])
        column = columns[col + 2]
        raise ValidationError(
            f"{path}: 行 {row + 1}, 列 {column!r} の値 {frame.iloc[row, col + 2]!r} が有限な数値ではありません",
            row=row + 1,
            column=column,
        )

    return SpectraDataset(grid, X, labels, tuple(frame["id"].tolist()))


def write_spectra_csv(ds: SpectraDataset, path: Union[str, Path]) -> Path:
    """load_spectra_csv と同じ形式で保存"""

    columns = [repr(float(v)) for v in ds.grid.values]
    frame = pd.DataFrame(ds.X, columns=columns)
    frame.insert(0, "label", ds.labels)
    frame.insert(0, "id", list(ds.sample_ids))
    return write_frame_csv(path, frame)


def average_replicates(replicates: List[Spectrum]) -> Spectrum:
    """同一試料の反復測定スペクトルを点ごとに平均する"""

    if not replicates:
        raise PreconditionError("反復測定のリストが空です")

    grid = replicates[0].grid
    for spectrum in replicates[1:]:
        if spectrum.grid != grid:
            raise ValidationError("反復測定の波数グリッドが一致しません")

    # 列ごとにソートしてから平均し、入力順に依存しない結果にする
    stacked = np.sort(np.vstack([s.absorbance for s in replicates]), axis=0)
    if np.all(stacked == stacked[0]):
        return Spectrum(grid, stacked[0].copy())
    return Spectrum(grid, stacked.mean(axis=0))


def truncate_band(ds: SpectraDataset, hi: float, lo: float) -> SpectraDataset:
    """波数が閉区間 [lo, hi] に入る列だけを残す"""

    if not hi > lo:
        raise ValidationError(f"帯域の上限 {hi} は下限 {lo} より大きい必要があります")

    mask = ds.grid.band_mask(hi, lo)
    if not mask.any():
        raise ValidationError(f"帯域 {hi}〜{lo} cm⁻¹ にグリッド点がありません")

    return SpectraDataset(WavenumberGrid(ds.grid.values[mask]), ds.X[:, mask], ds.labels, ds.sample_ids)


def class_mean_spectrum(ds: SpectraDataset, label: int) -> Spectrum:
    """指定ラベルの試料の平均スペクトル"""

    rows = ds.labels == label
    if not rows.any():
        raise ValidationError(f"ラベル {label} の試料がありません")
    return Spectrum(ds.grid, ds.X[rows].mean(axis=0))
