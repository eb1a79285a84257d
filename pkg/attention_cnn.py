"""
チャネル注意機構 (squeeze-excitation) 付き 1D-CNN 分類器
PLS スコア（既定 24 次元）を入力に、陽性/陰性の2クラスを判定する

順伝播・逆伝播とも numpy で実装（64bit 浮動小数）。畳み込みは im2col + 行列積。
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import expit, log_softmax, softmax
from tqdm import tqdm

from artifacts import check_document, lists_to_matrix, matrix_to_lists
from spectra_errors import ConfigurationError, FormatError, ShapeError, ValidationError

CNN_FORMAT = "spectrascreen.cnn"

N_CLASSES = 2


class CnnArchitecture(BaseModel):
    """畳み込み3層 → チャネル注意 → 全結合 (C·L → 2)"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    input_len: int = Field(24, ge=1)
    channels: Tuple[int, ...] = Field((16, 32, 64), min_length=1)
    kernel_len: int = Field(3, ge=1)
    reduction_ratio: int = Field(16, ge=1)

    @field_validator("channels")
    @classmethod
    def _positive_channels(cls, channels):
        if any(c < 1 for c in channels):
            raise ValueError("チャネル数は正である必要があります")
        return channels

    @field_validator("kernel_len")
    @classmethod
    def _odd_kernel(cls, kernel_len):
        if kernel_len % 2 != 1:
            raise ValueError("same パディングのためカーネル長は奇数である必要があります")
        return kernel_len

    @property
    def attended_channels(self) -> int:
        return self.channels[-1]

    @property
    def flat_features(self) -> int:
        return self.attended_channels * self.input_len

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """パラメータ名と形状（この順で初期化・保存する）"""

        shapes = {}
        c_in = 1
        for i, c_out in enumerate(self.channels, start=1):
            shapes[f"conv{i}_weight"] = (c_out, c_in, self.kernel_len)
            shapes[f"conv{i}_bias"] = (c_out,)
            c_in = c_out
        hidden = self.attended_channels // self.reduction_ratio
        shapes["we1"] = (hidden, self.attended_channels)
        shapes["we2"] = (self.attended_channels, hidden)
        shapes["fc_weight"] = (N_CLASSES, self.flat_features)
        shapes["fc_bias"] = (N_CLASSES,)
        return shapes


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(2e-4, gt=0)
    epochs: int = Field(200, ge=1)
    batch_mode: Literal["full"] = "full"
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_epsilon: float = Field(1e-8, gt=0)
    seed: int = 0


@dataclass(eq=False)
class AttentionCnnModel:
    arch: CnnArchitecture
    params: Dict[str, np.ndarray]
    rng_seed: int

    def copy(self) -> "AttentionCnnModel":
        return AttentionCnnModel(self.arch, {k: v.copy() for k, v in self.params.items()}, self.rng_seed)


@dataclass
class TrainHistory:
    """エポックごとの学習曲線（val_* は検証データを渡したときだけ埋まる）"""

    loss: List[float] = field(default_factory=list)
    accuracy: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, List[float]]:
        return {
            "loss": list(self.loss),
            "accuracy": list(self.accuracy),
            "val_loss": list(self.val_loss),
            "val_accuracy": list(self.val_accuracy),
        }


def model_init(arch: CnnArchitecture = CnnArchitecture(), seed: int = 0) -> AttentionCnnModel:
    """
    パラメータを初期化する

    重みは fan-in に合わせた一様分布 U(−1/√fan_in, 1/√fan_in)、バイアスはゼロ。
    同じ seed なら常に同じパラメータになる。
    """

    C = arch.attended_channels
    if C % arch.reduction_ratio != 0:
        raise ConfigurationError(f"縮小率 r = {arch.reduction_ratio} がチャネル数 {C} を割り切りません")

    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.parameter_shapes().items():
        if name.endswith("_bias"):
            params[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)

    return AttentionCnnModel(arch, params, seed)


# ---------------------------------------------------------------------------
# 畳み込み
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, kernel_len: int) -> np.ndarray:
    """(B, C_in, L) → (B, L, C_in·K)。ゼロパディングは両側 K // 2"""

    pad = kernel_len // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    windows = sliding_window_view(padded, kernel_len, axis=2)
    batch, c_in, length, _ = windows.shape
    return windows.transpose(0, 2, 1, 3).reshape(batch, length, c_in * kernel_len)


def _conv_pre(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    cols = _im2col(x, weight.shape[2])
    z = (cols @ weight.reshape(weight.shape[0], -1).T).transpose(0, 2, 1) + bias[:, None]
    return z, cols


def _conv_backward(dz: np.ndarray, cols: np.ndarray, weight: np.ndarray):
    c_out, c_in, kernel_len = weight.shape
    batch, _, length = dz.shape
    pad = kernel_len // 2

    dz_t = dz.transpose(0, 2, 1)
    d_weight = np.tensordot(dz_t, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
    d_bias = dz.sum(axis=(0, 2))

    d_cols = (dz_t @ weight.reshape(c_out, -1)).reshape(batch, length, c_in, kernel_len)
    d_padded = np.zeros((batch, c_in, length + 2 * pad))
    for k in range(kernel_len):
        d_padded[:, :, k : k + length] += d_cols[:, :, :, k].transpose(0, 2, 1)

    return d_padded[:, :, pad : pad + length], d_weight, d_bias


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, relu: bool = True) -> np.ndarray:
    """
    1次元畳み込み（相互相関、stride 1、same パディング）+ バイアス（+ ReLU）

    Args:
        x: 入力 (C_in, L) またはバッチ (B, C_in, L)
        weight: カーネル (C_out, C_in, K)
        bias: バイアス (C_out,)
        relu: False なら活性化前の値を返す

    Returns:
        (C_out, L) または (B, C_out, L)
    """

    x = np.asarray(x, dtype=float)
    weight = np.asarray(weight, dtype=float)
    bias = np.asarray(bias, dtype=float)

    single = x.ndim == 2
    batch = x[None] if single else x
    if batch.ndim != 3 or weight.ndim != 3:
        raise ShapeError("入力は (C_in, L) か (B, C_in, L)、カーネルは (C_out, C_in, K) である必要があります")
    if batch.shape[1] != weight.shape[1]:
        raise ShapeError(f"入力チャネル数 {batch.shape[1]} がカーネルの {weight.shape[1]} と一致しません")
    if bias.shape != (weight.shape[0],):
        raise ShapeError("バイアスの長さが出力チャネル数と一致しません")
    if weight.shape[2] % 2 != 1:
        raise ShapeError("カーネル長は奇数である必要があります")

    z, _ = _conv_pre(batch, weight, bias)
    out = np.maximum(z, 0.0) if relu else z
    return out[0] if single else out


# ---------------------------------------------------------------------------
# チャネル注意
# ---------------------------------------------------------------------------


def _excite(v: np.ndarray, we1: np.ndarray, we2: np.ndarray):
    h = v @ we1.T
    a = np.maximum(h, 0.0)
    g = expit(a @ we2.T)
    return h, a, g


def _attention_forward(U: np.ndarray, we1: np.ndarray, we2: np.ndarray):
    v_avg = U.mean(axis=2)
    v_max = U.max(axis=2)
    h_avg, a_avg, g_avg = _excite(v_avg, we1, we2)
    h_max, a_max, g_max = _excite(v_max, we1, we2)
    w_total = g_avg + g_max
    scaled = w_total[:, :, None] * U

    cache = {
        "U": U,
        "v_avg": v_avg,
        "v_max": v_max,
        "argmax": U.argmax(axis=2),
        "h_avg": h_avg,
        "a_avg": a_avg,
        "g_avg": g_avg,
        "h_max": h_max,
        "a_max": a_max,
        "g_max": g_max,
        "w_total": w_total,
    }
    return w_total, scaled, cache


def channel_attention(U: np.ndarray, model: AttentionCnnModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    平均・最大プーリングの2経路で共有の励起重みを通し、チャネルごとの重みを掛ける

    w_avg = σ(W_e2 δ(W_e1 v_avg)), w_max = σ(W_e2 δ(W_e1 v_max)), w_total = w_avg + w_max

    Args:
        U: 特徴マップ (C, L) またはバッチ (B, C, L)

    Returns:
        (w_total, scaled): w_total は (C,) / (B, C)、scaled は U と同じ形状
    """

    U = np.asarray(U, dtype=float)
    if not np.all(np.isfinite(U)):
        raise ValidationError("特徴マップに有限でない値が含まれています")

    single = U.ndim == 2
    batch = U[None] if single else U
    C = model.arch.attended_channels
    if batch.ndim != 3 or batch.shape[1] != C:
        raise ShapeError(f"特徴マップは ({C}, L) である必要があります: {U.shape}")

    w_total, scaled, _ = _attention_forward(batch, model.params["we1"], model.params["we2"])
    return (w_total[0], scaled[0]) if single else (w_total, scaled)


def _excite_backward(d_g, v, h, a, g, we1, we2, grads):
    d_s = d_g * g * (1.0 - g)
    grads["we2"] += d_s.T @ a
    d_h = (d_s @ we2) * (h > 0)
    grads["we1"] += d_h.T @ v
    return d_h @ we1


def _attention_backward(d_scaled: np.ndarray, cache: Dict[str, np.ndarray], params, grads) -> np.ndarray:
    U = cache["U"]
    length = U.shape[2]
    we1, we2 = params["we1"], params["we2"]

    d_U = cache["w_total"][:, :, None] * d_scaled
    d_w_total = (d_scaled * U).sum(axis=2)

    d_v_avg = _excite_backward(d_w_total, cache["v_avg"], cache["h_avg"], cache["a_avg"], cache["g_avg"], we1, we2, grads)
    d_v_max = _excite_backward(d_w_total, cache["v_max"], cache["h_max"], cache["a_max"], cache["g_max"], we1, we2, grads)

    d_U += d_v_avg[:, :, None] / length
    np.put_along_axis(
        d_U,
        cache["argmax"][:, :, None],
        np.take_along_axis(d_U, cache["argmax"][:, :, None], axis=2) + d_v_max[:, :, None],
        axis=2,
    )
    return d_U


# ---------------------------------------------------------------------------
# ネットワーク全体
# ---------------------------------------------------------------------------


def _check_inputs(model: AttentionCnnModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.arch.input_len:
        raise ShapeError(f"入力は (試料数, {model.arch.input_len}) である必要があります: {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("入力に有限でない値が含まれています")
    return X


def _forward_batch(model: AttentionCnnModel, X: np.ndarray):
    params = model.params
    h = X[:, None, :]
    layers = []
    for i in range(1, len(model.arch.channels) + 1):
        z, cols = _conv_pre(h, params[f"conv{i}_weight"], params[f"conv{i}_bias"])
        layers.append({"z": z, "cols": cols})
        h = np.maximum(z, 0.0)

    _, scaled, attention = _attention_forward(h, params["we1"], params["we2"])
    flat = scaled.reshape(scaled.shape[0], -1)
    logits = flat @ params["fc_weight"].T + params["fc_bias"]

    cache = {"layers": layers, "attention": attention, "flat": flat, "scaled_shape": scaled.shape}
    return logits, cache


def forward(model: AttentionCnnModel, scores: np.ndarray) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    順伝播

    1×L → conv(16) → conv(32) → conv(64) → チャネル注意 → 平坦化 (64·L) → 全結合 → 2 ロジット

    Args:
        scores: 1試料 (L,) またはバッチ (B, L)

    Returns:
        (logits, cache): logits は (2,) / (B, 2)。cache は逆伝播用の中間値
    """

    scores = np.asarray(scores, dtype=float)
    single = scores.ndim == 1
    X = _check_inputs(model, scores[None] if single else scores)
    logits, cache = _forward_batch(model, X)
    return (logits[0] if single else logits), cache


def _check_labels(y: np.ndarray, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ShapeError(f"ラベル数 {y.size} が試料数 {n} と一致しません")
    if not np.all(np.isin(y, (0, 1))):
        raise ValidationError("ラベルは 0 または 1 である必要があります")
    return y.astype(int)


def _loss_grad_logits(model: AttentionCnnModel, X: np.ndarray, y: np.ndarray):
    params = model.params
    batch = X.shape[0]

    logits, cache = _forward_batch(model, X)
    log_p = log_softmax(logits, axis=1)
    loss = -float(log_p[np.arange(batch), y].mean())

    d_logits = np.exp(log_p)
    d_logits[np.arange(batch), y] -= 1.0
    d_logits /= batch

    grads = {name: np.zeros_like(value) for name, value in params.items()}
    grads["fc_weight"] = d_logits.T @ cache["flat"]
    grads["fc_bias"] = d_logits.sum(axis=0)
    d_scaled = (d_logits @ params["fc_weight"]).reshape(cache["scaled_shape"])

    d_h = _attention_backward(d_scaled, cache["attention"], params, grads)
    for i in range(len(model.arch.channels), 0, -1):
        layer = cache["layers"][i - 1]
        d_z = d_h * (layer["z"] > 0)
        d_h, grads[f"conv{i}_weight"], grads[f"conv{i}_bias"] = _conv_backward(
            d_z, layer["cols"], params[f"conv{i}_weight"]
        )

    return loss, grads, logits


def loss_and_grad(model: AttentionCnnModel, X: np.ndarray, y: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    バッチ平均のソフトマックス交差エントロピーと、全パラメータの勾配

    Args:
        X: 入力 (B, L)
        y: ラベル (B,)、1 = 陽性

    Returns:
        (loss, grads): grads はパラメータと同じ名前・形状の辞書
    """

    X = _check_inputs(model, X)
    if X.shape[0] < 1:
        raise ShapeError("バッチが空です")
    y = _check_labels(y, X.shape[0])
    loss, grads, _ = _loss_grad_logits(model, X, y)
    return loss, grads


def _accuracy(logits: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(logits.argmax(axis=1) == y))


def train(
    model: AttentionCnnModel,
    T_train: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    validation: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    progress: bool = False,
) -> Tuple[AttentionCnnModel, TrainHistory]:
    """
    フルバッチ Adam で学習する（入力のモデルは変更せず、学習後のコピーを返す）

    履歴の各エポックの値は、そのエポックの更新前のパラメータで計算したもの。

    Args:
        model: 初期モデル
        T_train: 学習入力 (P, L)
        y: ラベル (P,)。両クラスが必要
        cfg: 学習設定
        validation: (X_val, y_val) を渡すと毎エポック検証損失・精度も記録
        progress: tqdm の進捗バーを出す
    """

    X = _check_inputs(model, T_train)
    y = _check_labels(y, X.shape[0])
    if np.unique(y).size < 2:
        raise ValidationError("学習データに片方のクラスしかありません")

    if validation is not None:
        X_val = _check_inputs(model, validation[0])
        y_val = _check_labels(validation[1], X_val.shape[0])

    trained = model.copy()
    params = trained.params
    m = {name: np.zeros_like(value) for name, value in params.items()}
    v = {name: np.zeros_like(value) for name, value in params.items()}
    history = TrainHistory()

    epochs = tqdm(range(1, cfg.epochs + 1), desc="学習", disable=not progress, leave=False)
    for step in epochs:
        if validation is not None:
            val_logits, _ = _forward_batch(trained, X_val)
            val_log_p = log_softmax(val_logits, axis=1)
            history.val_loss.append(-float(val_log_p[np.arange(y_val.size), y_val].mean()))
            history.val_accuracy.append(_accuracy(val_logits, y_val))

        loss, grads, logits = _loss_grad_logits(trained, X, y)
        history.loss.append(loss)
        history.accuracy.append(_accuracy(logits, y))

        correction1 = 1.0 - cfg.beta1**step
        correction2 = 1.0 - cfg.beta2**step
        for name, grad in grads.items():
            m[name] = cfg.beta1 * m[name] + (1.0 - cfg.beta1) * grad
            v[name] = cfg.beta2 * v[name] + (1.0 - cfg.beta2) * grad**2
            m_hat = m[name] / correction1
            v_hat = v[name] / correction2
            params[name] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)

        if progress:
            epochs.set_postfix(loss=f"{loss:.4f}", acc=f"{history.accuracy[-1]:.3f}")

    return trained, history


def predict_proba(model: AttentionCnnModel, X: np.ndarray) -> np.ndarray:
    """各行のクラス確率 (Q, 2)。1列目が陽性クラス"""

    X = _check_inputs(model, X)
    logits, _ = _forward_batch(model, X)
    return softmax(logits, axis=1)


def cnn_model_to_dict(model: AttentionCnnModel) -> Dict[str, Any]:
    return {
        "format": CNN_FORMAT,
        "version": 1,
        "architecture": model.arch.model_dump(mode="json"),
        "rng_seed": model.rng_seed,
        "parameters": {name: matrix_to_lists(value) for name, value in model.params.items()},
    }


def cnn_model_from_dict(data: Dict[str, Any]) -> AttentionCnnModel:
    check_document(data, CNN_FORMAT)
    try:
        arch = CnnArchitecture.model_validate(data["architecture"])
        stored = data["parameters"]
        params = {
            name: lists_to_matrix(stored[name], shape, name) for name, shape in arch.parameter_shapes().items()
        }
        return AttentionCnnModel(arch, params, int(data["rng_seed"]))
    except (KeyError, TypeError) as e:
        raise FormatError(f"CNN モデルの項目が不足しています ({e})") from e
