"""
airPLS によるベースライン補正
Whittaker 平滑化（重み付き罰則付き最小二乗）を帯行列のコレスキー分解で解き、
負の残差だけを指数的に重み付けし直す反復でベースラインを推定する
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.linalg import LinAlgError, solveh_banded
from tqdm import tqdm

from spectra_data import SpectraDataset
from spectra_errors import ShapeError, SingularityError, SpectraError, ValidationError


class AirPlsParams(BaseModel):
    """airPLS のパラメータ（JSON では λ を `lambda` と書く）"""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    lam: float = Field(1e5, gt=0, alias="lambda")
    max_iter: int = Field(15, ge=1)
    tol_ratio: float = Field(1e-3, gt=0, lt=1)
    diff_order: int = Field(2, ge=1)


@dataclass(frozen=True, eq=False)
class BaselineResult:
    baseline: np.ndarray
    corrected: np.ndarray
    iterations_used: int
    converged: bool
    weights: np.ndarray


@lru_cache(maxsize=16)
def penalty_bands(n: int, diff_order: int) -> np.ndarray:
    """
    差分罰則行列 DᵀD の下三角帯形式（solveh_banded の lower=True 形式）

    Returns:
        形状 (diff_order + 1, n) の読み取り専用配列。ab[k, j] = (DᵀD)[j + k, j]
    """

    coefficients = np.zeros(2 * diff_order + 1)
    coefficients[diff_order] = 1.0
    for _ in range(diff_order):
        coefficients = coefficients[:-1] - coefficients[1:]

    D = sparse.diags(coefficients, np.arange(diff_order + 1), shape=(n - diff_order, n), format="csc")
    penalty = (D.T @ D).tocsr()

    bands = np.zeros((diff_order + 1, n))
    for k in range(diff_order + 1):
        bands[k, : n - k] = penalty.diagonal(-k)
    bands.setflags(write=False)
    return bands


def whittaker_smooth(y: np.ndarray, w: np.ndarray, lam: float, diff_order: int = 2) -> np.ndarray:
    """
    Σ wᵢ(yᵢ − zᵢ)² + λ‖D z‖² を最小にする z を返す

    Args:
        y: 信号
        w: 非負の重み（y と同じ長さ）
        lam: 平滑化の強さ λ (> 0)
        diff_order: 差分の次数

    Returns:
        平滑化された信号 z
    """

    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)

    if y.ndim != 1 or w.shape != y.shape:
        raise ShapeError("y と w は同じ長さの1次元配列である必要があります")
    if diff_order < 1 or y.size < diff_order + 1:
        raise ValidationError(f"信号の長さは diff_order + 1 = {diff_order + 1} 以上必要です")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w)) and np.isfinite(lam)):
        raise ValidationError("入力に有限でない値が含まれています")
    if lam <= 0:
        raise ValidationError("λ は正である必要があります")
    if np.any(w < 0):
        raise ValidationError("重みは非負である必要があります")
    if not np.any(w > 0):
        raise SingularityError("重みがすべてゼロのため連立方程式が特異です")

    ab = lam * penalty_bands(y.size, diff_order)
    ab[0] += w

    try:
        return solveh_banded(ab, w * y, lower=True, check_finite=False)
    except LinAlgError as e:
        raise SingularityError(f"罰則付き最小二乗の系が正定値ではありません ({e})") from e


def airpls(y: np.ndarray, params: AirPlsParams = AirPlsParams()) -> BaselineResult:
    """
    airPLS でベースラインを推定する

    反復 t ごとに z = whittaker_smooth(y, w) を求め、y ≥ z の点は重み 0、
    y < z の点は exp(t·|y − z| / ‖d⁻‖₁) に更新する。‖d⁻‖₁ < tol_ratio·‖y‖₁ で収束。
    max_iter に達しても例外にはせず converged=False を返す。
    """

    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ShapeError("y は1次元配列である必要があります")
    if not np.all(np.isfinite(y)):
        raise ValidationError("入力に有限でない値が含まれています")
    if y.size < params.diff_order + 1:
        raise ValidationError(f"信号の長さは diff_order + 1 = {params.diff_order + 1} 以上必要です")

    weights = np.ones_like(y)
    y_l1 = np.abs(y).sum()

    if y_l1 == 0:
        zeros = np.zeros_like(y)
        return BaselineResult(zeros, y - zeros, 0, True, weights)

    baseline = y
    converged = False
    iterations = 0
    for t in range(1, params.max_iter + 1):
        baseline = whittaker_smooth(y, weights, params.lam, params.diff_order)
        iterations = t

        residual = y - baseline
        negative = residual < 0
        neg_l1 = np.abs(residual[negative]).sum()

        if neg_l1 < params.tol_ratio * y_l1:
            converged = True
            break
        if t == params.max_iter:
            break
        # 残りの点が少なすぎると次の系が特異になる
        if np.count_nonzero(negative) < params.diff_order + 1:
            break

        weights = np.zeros_like(y)
        weights[negative] = np.exp(t * np.abs(residual[negative]) / neg_l1)

    return BaselineResult(baseline, y - baseline, iterations, converged, weights)


def baseline_correct_dataset(
    ds: SpectraDataset,
    params: AirPlsParams = AirPlsParams(),
    threads: int = 1,
    progress: bool = False,
) -> SpectraDataset:
    """データセットの各行に airPLS を適用（ラベルとグリッドはそのまま）"""

    def correct_row(index: int) -> np.ndarray:
        try:
            return airpls(ds.X[index], params).corrected
        except SpectraError as e:
            sample_id = ds.sample_ids[index]
            raise ValidationError(f"試料 {sample_id}: {e}", row=index + 1, sample_id=sample_id) from e

    indices = range(ds.n_samples)
    bar = tqdm(total=ds.n_samples, desc="ベースライン補正", disable=not progress)
    with bar:
        if threads <= 1:
            rows = []
            for index in indices:
                rows.append(correct_row(index))
                bar.update(1)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = []
                for row in pool.map(correct_row, indices):
                    rows.append(row)
                    bar.update(1)

    return ds.with_matrix(np.vstack(rows) if rows else ds.X)
