"""
VIP スコアと生体分子重要度 (BMI)
PLS モデルから各波数の寄与 (VIP) を求め、生体分子ごとの吸収帯で RMS を取る
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from artifacts import read_json, write_json
from pls import PlsModel
from spectra_data import WavenumberGrid
from spectra_errors import DegenerateError, PreconditionError, ShapeError, ValidationError


class BandEntry(BaseModel):
    """1つの生体分子と、その吸収帯（閉区間 [lo, hi] cm⁻¹ のリスト）"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    intervals: Tuple[Tuple[float, float], ...] = Field(min_length=1)

    @field_validator("intervals")
    @classmethod
    def _check_intervals(cls, intervals):
        for lo, hi in intervals:
            if not lo <= hi:
                raise ValueError(f"区間 [{lo}, {hi}] は lo ≤ hi である必要があります")
        return intervals


class BandTable(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    bands: Tuple[BandEntry, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _unique_names(self):
        names = [entry.name for entry in self.bands]
        if len(set(names)) != len(names):
            raise ValueError("生体分子名が重複しています")
        return self

    @property
    def names(self) -> List[str]:
        return [entry.name for entry in self.bands]


# 主要な赤外吸収帯（cm⁻¹）
DEFAULT_BANDS = {
    "Lipids": ((1720.0, 1760.0), (1430.0, 1470.0)),
    "Amide I": ((1600.0, 1700.0),),
    "Amide II": ((1500.0, 1600.0),),
    "Amide III": ((1220.0, 1350.0),),
    "Nucleic acids": ((1220.0, 1240.0), (1040.0, 1120.0), (950.0, 1000.0)),
    "Carbohydrates": ((1100.0, 1180.0), (970.0, 1050.0)),
}


def default_band_table() -> BandTable:
    return BandTable(bands=tuple(BandEntry(name=name, intervals=iv) for name, iv in DEFAULT_BANDS.items()))


def load_band_table(path: Union[str, Path]) -> BandTable:
    return BandTable.model_validate(read_json(path))


def save_band_table(table: BandTable, path: Union[str, Path]) -> Path:
    return write_json(path, table.model_dump(mode="json"))


@dataclass(frozen=True, eq=False)
class VipVector:
    values: np.ndarray
    normalized: bool

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class BmiReport:
    per_biomolecule: Dict[str, float]
    band_table: BandTable
    grid: WavenumberGrid

    def as_percent(self) -> Dict[str, float]:
        return {name: 100.0 * value for name, value in self.per_biomolecule.items()}


def component_ss(model: PlsModel) -> np.ndarray:
    """各成分が説明する平方和 SS(i) = Q_i² · t_iᵀt_i"""

    T = model.T_train
    return model.Q[0] ** 2 * np.einsum("ij,ij->j", T, T)


def vip_scores(model: PlsModel) -> VipVector:
    """
    VIP スコア V(j) = sqrt(M · Σᵢ SS(i)·(w_ji/‖w_i‖)² / Σᵢ SS(i))

    Returns:
        正規化前の VIP（Σⱼ V(j)² = M が成り立つ）
    """

    ss = component_ss(model)
    total = ss.sum()
    if not total > 0:
        raise DegenerateError("全成分の説明平方和がゼロのため VIP を計算できません")

    W = model.W_L
    weights_sq = (W / np.linalg.norm(W, axis=0)) ** 2
    values = np.sqrt(model.n_features * (weights_sq @ ss) / total)
    return VipVector(values, normalized=False)


def normalize_vip(v: VipVector) -> VipVector:
    """VIP を最小値 0・最大値 1 に min-max 正規化"""

    if v.normalized:
        raise PreconditionError("すでに正規化された VIP です")

    lo, hi = v.values.min(), v.values.max()
    if not hi > lo:
        raise DegenerateError("VIP が定数のため正規化できません")

    values = (v.values - lo) / (hi - lo)
    # 丸めで端点がずれないように固定
    values[np.argmin(v.values)] = 0.0
    values[np.argmax(v.values)] = 1.0
    return VipVector(values, normalized=True)


def band_indices(entry: BandEntry, grid: WavenumberGrid) -> np.ndarray:
    """いずれかの区間に入るグリッド点のインデックス（重複なし）"""

    mask = np.zeros(grid.count, dtype=bool)
    for lo, hi in entry.intervals:
        mask |= grid.band_mask(hi, lo)
    return np.flatnonzero(mask)


def bmi(v: VipVector, table: BandTable, grid: WavenumberGrid) -> BmiReport:
    """生体分子ごとに、吸収帯に入る正規化 VIP の RMS を求める"""

    if not v.normalized:
        raise PreconditionError("BMI には正規化した VIP が必要です")
    if v.values.shape != (grid.count,):
        raise ShapeError(f"VIP の長さ {v.values.size} がグリッド点数 {grid.count} と一致しません")

    per_biomolecule = {}
    for entry in table.bands:
        indices = band_indices(entry, grid)
        if indices.size == 0:
            raise ValidationError(f"{entry.name}: 吸収帯にグリッド点がありません")
        per_biomolecule[entry.name] = float(np.sqrt(np.mean(v.values[indices] ** 2)))

    return BmiReport(per_biomolecule, table, grid)


def bmi_report_to_dict(report: BmiReport, raw: VipVector, normalized: VipVector) -> Dict[str, Any]:
    return {
        "bmi": report.per_biomolecule,
        "bmi_percent": report.as_percent(),
        "bands": report.band_table.model_dump(mode="json")["bands"],
        "wavenumbers": report.grid.values.tolist(),
        "vip": raw.values.tolist(),
        "vip_normalized": normalized.values.tolist(),
    }
