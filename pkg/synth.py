"""
合成 ATR-FTIR コホートの生成
主要吸収帯にガウスピークを置き、陽性試料では一部の生体分子のピークだけを強める。
試料ごとにランダムなベースライン（2次式 + 幅の広いガウス）とノイズを加える。
"""

from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from spectra_data import SpectraDataset, WavenumberGrid

TRUTH_FORMAT = "spectrascreen.truth"


class PeakSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    center: float = Field(gt=0)
    # ガウスの標準偏差 (cm⁻¹)
    width: float = Field(gt=0)
    amplitude: float = Field(gt=0)
    biomolecule: str = Field(min_length=1)


# 主要吸収帯の代表ピークと、帯域内の肩ピーク。脂質のピークはノイズと同程度の強さにとどめる
DEFAULT_PEAKS = (
    PeakSpec(center=1750, width=10, amplitude=0.03, biomolecule="Lipids"),
    PeakSpec(center=1736, width=10, amplitude=0.05, biomolecule="Lipids"),
    PeakSpec(center=1685, width=12, amplitude=0.30, biomolecule="Amide I"),
    PeakSpec(center=1659, width=18, amplitude=0.60, biomolecule="Amide I"),
    PeakSpec(center=1636, width=12, amplitude=0.30, biomolecule="Amide I"),
    PeakSpec(center=1580, width=10, amplitude=0.25, biomolecule="Amide II"),
    PeakSpec(center=1549, width=18, amplitude=0.40, biomolecule="Amide II"),
    PeakSpec(center=1517, width=12, amplitude=0.25, biomolecule="Amide II"),
    PeakSpec(center=1335, width=10, amplitude=0.25, biomolecule="Amide III"),
    PeakSpec(center=1307, width=12, amplitude=0.25, biomolecule="Amide III"),
    PeakSpec(center=1280, width=10, amplitude=0.25, biomolecule="Amide III"),
    PeakSpec(center=1255, width=12, amplitude=0.25, biomolecule="Amide III"),
    PeakSpec(center=1224, width=10, amplitude=0.25, biomolecule="Nucleic acids"),
    PeakSpec(center=1150, width=15, amplitude=0.10, biomolecule="Carbohydrates"),
    PeakSpec(center=1115, width=10, amplitude=0.25, biomolecule="Nucleic acids"),
    PeakSpec(center=1087, width=12, amplitude=0.30, biomolecule="Nucleic acids"),
    PeakSpec(center=1065, width=10, amplitude=0.25, biomolecule="Nucleic acids"),
    PeakSpec(center=1050, width=20, amplitude=0.12, biomolecule="Carbohydrates"),
    PeakSpec(center=990, width=10, amplitude=0.25, biomolecule="Nucleic acids"),
    PeakSpec(center=965, width=10, amplitude=0.25, biomolecule="Nucleic acids"),
)


class BaselineSpec(BaseModel):
    """
    ベースライン = offset + slope·s + curvature·s² + broad·exp(−½((ν − broad_center)/broad_width)²)
    s = (ν − 1350) / 450。各係数は (下限, 上限) の一様乱数（下限 = 上限なら固定値）
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    offset: Tuple[float, float] = (0.05, 0.25)
    slope: Tuple[float, float] = (-0.08, 0.08)
    curvature: Tuple[float, float] = (-0.05, 0.05)
    broad_amplitude: Tuple[float, float] = (0.0, 0.15)
    broad_center: Tuple[float, float] = (1000.0, 1700.0)
    broad_width: float = Field(250.0, gt=0)

    @model_validator(mode="after")
    def _ordered_ranges(self):
        for name in ("offset", "slope", "curvature", "broad_amplitude", "broad_center"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} の範囲は (下限, 上限) の順で指定してください")
        return self


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_samples: int = Field(112, ge=2)
    n_positive: int = Field(53, ge=0)
    peaks: Tuple[PeakSpec, ...] = Field(DEFAULT_PEAKS, min_length=1)
    # 陽性試料で振幅を class_effect 倍する生体分子
    perturbed: Tuple[str, ...] = Field(("Amide I", "Amide II", "Amide III", "Nucleic acids"), min_length=1)
    class_effect: float = Field(1.15, gt=0)
    jitter_sigma: float = Field(0.1, ge=0)
    baseline: BaselineSpec = BaselineSpec()
    noise_sigma: float = Field(0.002, ge=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.n_positive > self.n_samples:
            raise ValueError("n_positive が n_samples を超えています")
        known = {peak.biomolecule for peak in self.peaks}
        unknown = [name for name in self.perturbed if name not in known]
        if unknown:
            raise ValueError(f"ピークのない生体分子が perturbed に指定されています: {unknown}")
        return self

    @property
    def n_negative(self) -> int:
        return self.n_samples - self.n_positive


@dataclass(frozen=True, eq=False)
class SynthTruth:
    """生成に使った真値（データセットと同じ行順）"""

    baselines: np.ndarray
    signals: np.ndarray
    perturbed_centers: Tuple[float, ...]
    perturbed_biomolecules: Tuple[str, ...]
    sample_seeds: Tuple[int, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": TRUTH_FORMAT,
            "version": 1,
            "perturbed_centers": list(self.perturbed_centers),
            "perturbed_biomolecules": list(self.perturbed_biomolecules),
            "sample_seeds": list(self.sample_seeds),
            "baselines": self.baselines.tolist(),
        }


def gaussian(wavenumbers: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((wavenumbers - center) / width) ** 2)


def _baseline(nu: np.ndarray, spec: BaselineSpec, rng: np.random.Generator) -> np.ndarray:
    s = (nu - 1350.0) / 450.0
    offset = rng.uniform(*spec.offset)
    slope = rng.uniform(*spec.slope)
    curvature = rng.uniform(*spec.curvature)
    broad = rng.uniform(*spec.broad_amplitude)
    broad_center = rng.uniform(*spec.broad_center)
    return offset + slope * s + curvature * s**2 + broad * gaussian(nu, broad_center, spec.broad_width)


def gen_dataset(cfg: SynthConfig = SynthConfig()) -> Tuple[SpectraDataset, SynthTruth]:
    """
    合成データセットを生成する

    各スペクトル = Σ ピーク（クラス効果 × 試料ごとの対数正規ジッター）+ ベースライン + ガウスノイズ。
    ラベルと試料ごとの乱数は SeedSequence(seed) から派生させるので、同じ設定なら常に同じ結果になる。

    Returns:
        (dataset, truth)
    """

    grid = WavenumberGrid.canonical()
    nu = grid.values

    label_seq, sample_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    labels = np.zeros(cfg.n_samples, dtype=int)
    labels[: cfg.n_positive] = 1
    labels = np.random.default_rng(label_seq).permutation(labels)
    sample_seeds = np.random.default_rng(sample_seq).integers(0, 2**63 - 1, size=cfg.n_samples)

    centers = np.array([peak.center for peak in cfg.peaks])
    shapes = np.vstack([gaussian(nu, peak.center, peak.width) for peak in cfg.peaks])
    amplitudes = np.array([peak.amplitude for peak in cfg.peaks])
    perturbed = np.array([peak.biomolecule in cfg.perturbed for peak in cfg.peaks])

    signals = np.empty((cfg.n_samples, grid.count))
    baselines = np.empty((cfg.n_samples, grid.count))
    for i in range(cfg.n_samples):
        rng = np.random.default_rng(int(sample_seeds[i]))
        jitter = rng.lognormal(0.0, cfg.jitter_sigma, size=len(cfg.peaks))
        effect = np.where(perturbed & (labels[i] == 1), cfg.class_effect, 1.0)
        peaks = (amplitudes * effect * jitter) @ shapes

        baselines[i] = _baseline(nu, cfg.baseline, rng)
        signals[i] = peaks + rng.normal(0.0, cfg.noise_sigma, size=grid.count)

    ids = tuple(f"S{i + 1:03d}" for i in range(cfg.n_samples))
    ds = SpectraDataset(grid, signals + baselines, labels, ids)
    truth = SynthTruth(
        baselines=baselines,
        signals=signals,
        perturbed_centers=tuple(float(c) for c in centers[perturbed]),
        perturbed_biomolecules=tuple(cfg.perturbed),
        sample_seeds=tuple(int(s) for s in sample_seeds),
    )
    return ds, truth
