"""
NIPALS による PLS-1（目的変数が1つの部分最小二乗法）
スペクトル行列を N 次元の PLS スコアに圧縮し、回帰係数も求める
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from artifacts import check_document, lists_to_matrix, matrix_to_lists
from spectra_errors import (
    ConfigurationError,
    DegenerateComponentError,
    FormatError,
    ShapeError,
    SingularityError,
    ValidationError,
)

PLS_FORMAT = "spectrascreen.pls"

# ノルムがこれ以下（初期ノルムに対する比）なら成分が退化したとみなす。後半の成分の ‖Xᵀu‖ は 1e-11 程度まで下がる
_DEGENERATE_RTOL = 1e-14

# 縮約後の ‖X‖_F がこれ以下（初期比）なら X の情報は使い切っている
_EXHAUSTED_RTOL = 1e-12

# PᵀW の条件数の上限
_MAX_CONDITION = 1e12


class PlsConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_components: int = Field(24, ge=1)
    epsilon: float = Field(1e-10, gt=0)
    max_inner_iter: int = Field(500, ge=1)


@dataclass(frozen=True, eq=False)
class PlsModel:
    """
    学習済み PLS モデル（M = 特徴量数, N = 成分数, P = 学習試料数）

    W_L: (M, N) 重み、P: (M, N) Xローディング、Q: (1, N) Yローディング、
    B: (M, 1) 回帰係数、x_mean: (M,) 学習データの平均スペクトル、
    T_train: (P, N) 学習スコア（各列は単位ノルム）
    """

    W_L: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    B: np.ndarray
    x_mean: np.ndarray
    T_train: np.ndarray
    y_mean: float
    config: PlsConfig
    inner_iterations: Tuple[int, ...]
    y_residual_norms: Tuple[float, ...]
    wavenumbers: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("W_L", "P", "Q", "B", "x_mean", "T_train", "wavenumbers"):
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.array(value, dtype=float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return int(self.W_L.shape[1])

    @property
    def n_features(self) -> int:
        return int(self.W_L.shape[0])

    @property
    def epsilon(self) -> float:
        return self.config.epsilon


def pls_fit(
    X: np.ndarray,
    y: np.ndarray,
    cfg: PlsConfig = PlsConfig(),
    wavenumbers: Optional[np.ndarray] = None,
) -> PlsModel:
    """
    NIPALS で PLS-1 モデルを学習する

    X を列平均で中心化し、成分ごとに
    w ← Xᵀu/‖Xᵀu‖, t ← Xw/‖Xw‖, q ← Yᵀt/‖Yᵀt‖, u ← Yq を ‖u − u_new‖ < ε まで反復、
    p = Xᵀt/(tᵀt) を求めて X ← X − t pᵀ, Y ← Y − t qᵀ と縮約する。
    最後に B = W_L (PᵀW_L)⁻¹ Qᵀ。

    各成分の符号は w の絶対値最大の要素が正になるように揃える（w, t, p, q を一緒に反転）。

    Args:
        X: 学習スペクトル (P, M)
        y: 目的変数 (P,)。二値分類では {0, 1}
        cfg: 成分数・収束判定
        wavenumbers: 各特徴量の波数（BMI 計算用に保持するだけ）

    Returns:
        学習済みモデル
    """

    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)

    if X.ndim != 2:
        raise ShapeError("X は2次元配列である必要があります")
    n_samples, n_features = X.shape
    if y.shape != (n_samples,):
        raise ShapeError(f"y の長さ {y.size} が X の行数 {n_samples} と一致しません")
    if n_samples < 2:
        raise ValidationError("PLS の学習には2試料以上が必要です")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("X または y に有限でない値が含まれています")
    n_components = cfg.n_components
    if n_components > min(n_samples - 1, n_features):
        raise ConfigurationError(
            f"成分数 {n_components} は min(試料数 − 1, 特徴量数) = {min(n_samples - 1, n_features)} 以下である必要があります"
        )
    if wavenumbers is not None and np.shape(wavenumbers) != (n_features,):
        raise ShapeError("wavenumbers の長さが特徴量数と一致しません")

    x_mean = X.mean(axis=0)
    X_res = X - x_mean
    Y_res = y.reshape(-1, 1).copy()

    x_scale = np.linalg.norm(X_res)
    y_scale = np.linalg.norm(Y_res)

    W = np.zeros((n_features, n_components))
    P = np.zeros((n_features, n_components))
    Q = np.zeros((1, n_components))
    T = np.zeros((n_samples, n_components))
    inner_iterations = []
    y_residual_norms = [float(y_scale)]

    if np.all(y == y[0]):
        raise DegenerateComponentError(1, "y が定数です（単一クラス）")

    for i in range(n_components):
        component = i + 1
        if np.linalg.norm(X_res) <= _EXHAUSTED_RTOL * x_scale:
            raise DegenerateComponentError(component, "縮約後の X に情報が残っていません")
        u = Y_res[:, 0].copy()

        converged = False
        for iteration in range(1, cfg.max_inner_iter + 1):
            xu = X_res.T @ u
            xu_norm = np.linalg.norm(xu)
            if xu_norm <= _DEGENERATE_RTOL * x_scale * y_scale:
                raise DegenerateComponentError(component, "‖Xᵀu‖ がゼロです")
            w = xu / xu_norm

            xw = X_res @ w
            xw_norm = np.linalg.norm(xw)
            if xw_norm <= _DEGENERATE_RTOL * x_scale:
                raise DegenerateComponentError(component, "‖Xw‖ がゼロです")
            t = xw / xw_norm

            yt = Y_res.T @ t
            yt_norm = np.linalg.norm(yt)
            if yt_norm <= _DEGENERATE_RTOL * y_scale:
                raise DegenerateComponentError(component, "‖Yᵀt‖ がゼロです")
            q = yt / yt_norm

            u_new = Y_res @ q
            if np.linalg.norm(u - u_new) < cfg.epsilon:
                converged = True
                break
            u = u_new

        if not converged:
            raise DegenerateComponentError(component, f"内側の反復が {cfg.max_inner_iter} 回で収束しませんでした")

        p = X_res.T @ t / (t @ t)

        if w[np.argmax(np.abs(w))] < 0:
            w, t, p, q = -w, -t, -p, -q

        X_res = X_res - np.outer(t, p)
        Y_res = Y_res - np.outer(t, q)

        W[:, i] = w
        P[:, i] = p
        Q[:, i] = q
        T[:, i] = t
        inner_iterations.append(iteration)
        y_residual_norms.append(float(np.linalg.norm(Y_res)))

    PtW = P.T @ W
    if not np.all(np.isfinite(PtW)) or np.linalg.cond(PtW) > _MAX_CONDITION:
        raise SingularityError("PᵀW_L が特異のため回帰係数を計算できません")
    try:
        B = W @ np.linalg.solve(PtW, Q.T)
    except np.linalg.LinAlgError as e:
        raise SingularityError(f"PᵀW_L が特異です ({e})") from e

    return PlsModel(
        W_L=W,
        P=P,
        Q=Q,
        B=B,
        x_mean=x_mean,
        T_train=T,
        y_mean=float(y.mean()),
        config=cfg,
        inner_iterations=tuple(inner_iterations),
        y_residual_norms=tuple(y_residual_norms),
        wavenumbers=wavenumbers,
    )


def _centered(model: PlsModel, X_new: np.ndarray) -> np.ndarray:
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new.reshape(1, -1)
    if X_new.ndim != 2 or X_new.shape[1] != model.n_features:
        raise ShapeError(f"入力の列数 {X_new.shape[-1]} がモデルの特徴量数 {model.n_features} と一致しません")
    return X_new - model.x_mean


def pls_transform(model: PlsModel, X_new: np.ndarray) -> np.ndarray:
    """新しいデータを (X_new − x_mean)·W_L で PLS スコアに射影する"""

    return _centered(model, X_new) @ model.W_L


def pls_predict(model: PlsModel, X_new: np.ndarray) -> np.ndarray:
    """回帰による連続値の予測 (X_new − x_mean)·B + mean(y_train)。しきい値処理はしない"""

    return (_centered(model, X_new) @ model.B)[:, 0] + model.y_mean


def pls_model_to_dict(model: PlsModel) -> Dict[str, Any]:
    """モデルをJSONに書ける辞書へ変換"""

    return {
        "format": PLS_FORMAT,
        "version": 1,
        "dims": {
            "n_features": model.n_features,
            "n_components": model.n_components,
            "n_samples": int(model.T_train.shape[0]),
        },
        "config": model.config.model_dump(mode="json"),
        "y_mean": model.y_mean,
        "inner_iterations": list(model.inner_iterations),
        "y_residual_norms": list(model.y_residual_norms),
        "wavenumbers": None if model.wavenumbers is None else model.wavenumbers.tolist(),
        "x_mean": model.x_mean.tolist(),
        "W_L": matrix_to_lists(model.W_L),
        "P": matrix_to_lists(model.P),
        "Q": matrix_to_lists(model.Q),
        "B": matrix_to_lists(model.B),
        "T_train": matrix_to_lists(model.T_train),
    }


def pls_model_from_dict(data: Dict[str, Any]) -> PlsModel:
    """pls_model_to_dict の逆変換"""

    check_document(data, PLS_FORMAT)
    try:
        dims = data["dims"]
        m, n, p = int(dims["n_features"]), int(dims["n_components"]), int(dims["n_samples"])
        config = PlsConfig.model_validate(data["config"])
        wavenumbers = data.get("wavenumbers")

        return PlsModel(
            W_L=lists_to_matrix(data["W_L"], (m, n), "W_L"),
            P=lists_to_matrix(data["P"], (m, n), "P"),
            Q=lists_to_matrix(data["Q"], (1, n), "Q"),
            B=lists_to_matrix(data["B"], (m, 1), "B"),
            x_mean=lists_to_matrix(data["x_mean"], (m,), "x_mean"),
            T_train=lists_to_matrix(data["T_train"], (p, n), "T_train"),
            y_mean=float(data["y_mean"]),
            config=config,
            inner_iterations=tuple(int(v) for v in data["inner_iterations"]),
            y_residual_norms=tuple(float(v) for v in data["y_residual_norms"]),
            wavenumbers=None if wavenumbers is None else lists_to_matrix(wavenumbers, (m,), "wavenumbers"),
        )
    except (KeyError, TypeError) as e:
        raise FormatError(f"PLS モデルの項目が不足しています ({e})") from e
