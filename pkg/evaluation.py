"""
交差検証による評価
airPLS → PLS → CNN のパイプラインを k 分割で学習・評価し、
混同行列・各種指標・ROC/AUC・学習曲線をまとめたレポートを作る
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from sklearn.metrics import auc, confusion_matrix, roc_curve
from sklearn.model_selection import KFold, StratifiedKFold
from tqdm import tqdm

from attention_cnn import CnnArchitecture, TrainConfig, TrainHistory, model_init, predict_proba, train
from artifacts import check_document
from baseline import AirPlsParams, baseline_correct_dataset
from pls import PlsConfig, PlsModel, pls_fit, pls_transform
from spectra_data import SpectraDataset
from spectra_errors import ConfigurationError, FormatError, ShapeError, ValidationError

REPORT_FORMAT = "spectrascreen.report"


class FoldConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k: int = Field(5, ge=2)
    seed: int = Field(0, ge=0)
    stratified: bool = False


class PipelineConfig(BaseModel):
    """交差検証パイプライン全体の設定"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    airpls: AirPlsParams = AirPlsParams()
    pls: PlsConfig = PlsConfig()
    architecture: CnnArchitecture = CnnArchitecture()
    train: TrainConfig = TrainConfig()
    folds: FoldConfig = FoldConfig()
    # 学習フォールドの平均・標準偏差で特徴量を標準化してから CNN に入れる
    standardize_scores: bool = True
    # False ならベースライン補正後のスペクトルをそのまま CNN に入れる
    use_pls: bool = True
    threshold: float = Field(0.5, gt=0, lt=1)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int
    stratified: bool = False

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    @property
    def fold_sizes(self) -> List[int]:
        return [int(np.count_nonzero(self.assignments == f)) for f in range(self.k)]


def _plan_from_splits(n: int, k: int, seed: int, splits, stratified: bool) -> FoldPlan:
    assignments = np.full(n, -1, dtype=int)
    for fold, (_, test) in enumerate(splits):
        assignments[test] = fold
    assignments.setflags(write=False)
    return FoldPlan(k, assignments, seed, stratified)


def _check_fold_args(n: int, k: int, seed: int) -> None:
    if k < 2:
        raise ConfigurationError(f"分割数 k = {k} は 2 以上である必要があります")
    if n < k:
        raise ConfigurationError(f"試料数 {n} が分割数 {k} より少ないです")
    if seed < 0:
        raise ConfigurationError("seed は 0 以上である必要があります")


def kfold_split(n: int, k: int = 5, seed: int = 0) -> FoldPlan:
    """
    シード付きでシャッフルしてから k 個の連続した塊に分ける

    塊の大きさの差は高々 1（先頭の n mod k 個が1つ多い）
    """

    _check_fold_args(n, k, seed)
    splits = KFold(n_splits=k, shuffle=True, random_state=seed).split(np.zeros((n, 1)))
    return _plan_from_splits(n, k, seed, splits, stratified=False)


def stratified_kfold_split(labels: np.ndarray, k: int = 5, seed: int = 0) -> FoldPlan:
    """各フォールドのクラス比をそろえた分割"""

    labels = np.asarray(labels, dtype=int)
    _check_fold_args(labels.size, k, seed)
    try:
        splits = list(StratifiedKFold(n_splits=k, shuffle=True, random_state=seed).split(np.zeros((labels.size, 1)), labels))
    except ValueError as e:
        raise ConfigurationError(f"層化分割できません ({e})") from e
    return _plan_from_splits(labels.size, k, seed, splits, stratified=True)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def _binary(values: Sequence, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ShapeError(f"{name} は1次元である必要があります")
    if not np.all(np.isin(arr, (0, 1))):
        raise ValidationError(f"{name} は 0/1 である必要があります")
    return arr.astype(int)


def confusion(pred: Sequence[int], truth: Sequence[int]) -> ConfusionMatrix:
    """混同行列（1 = 陽性）"""

    pred = _binary(pred, "pred")
    truth = _binary(truth, "truth")
    if pred.shape != truth.shape:
        raise ShapeError(f"pred ({pred.size}) と truth ({truth.size}) の長さが異なります")
    if pred.size == 0:
        return ConfusionMatrix(0, 0, 0, 0)

    (tn, fp), (fn, tp) = confusion_matrix(truth, pred, labels=[0, 1])
    return ConfusionMatrix(tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn))


@dataclass(frozen=True)
class MetricSet:
    """定義できない指標（分母がゼロ）は None"""

    accuracy: float
    sensitivity: Optional[float]
    specificity: Optional[float]
    f1: Optional[float]
    precision: Optional[float] = None

    def to_dict(self) -> Dict[str, Optional[float]]:
        return {
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "f1": self.f1,
            "precision": self.precision,
        }


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den > 0 else None


def metrics(cm: ConfusionMatrix) -> MetricSet:
    """正解率・感度・特異度・F1・適合率"""

    if cm.total == 0:
        raise ValidationError("混同行列が空です")

    return MetricSet(
        accuracy=(cm.tp + cm.tn) / cm.total,
        sensitivity=_ratio(cm.tp, cm.tp + cm.fn),
        specificity=_ratio(cm.tn, cm.tn + cm.fp),
        f1=_ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn),
        precision=_ratio(cm.tp, cm.tp + cm.fp),
    )


def mean_metrics(sets: Sequence[MetricSet]) -> MetricSet:
    """指標ごとの算術平均（None のフォールドは除く）"""

    def mean_of(name: str) -> Optional[float]:
        values = [getattr(s, name) for s in sets if getattr(s, name) is not None]
        return float(np.mean(values)) if values else None

    return MetricSet(
        accuracy=mean_of("accuracy"),
        sensitivity=mean_of("sensitivity"),
        specificity=mean_of("specificity"),
        f1=mean_of("f1"),
        precision=mean_of("precision"),
    )


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "auc": self.auc,
            "fpr": self.fpr.tolist(),
            "tpr": self.tpr.tolist(),
            # 先頭のしきい値は +∞（どの試料も陽性にしない点）
            "thresholds": [float(t) if np.isfinite(t) else None for t in self.thresholds],
        }


def roc_auc(scores: Sequence[float], truth: Sequence[int]) -> RocCurve:
    """
    ROC 曲線と AUC（台形則）

    同じスコアは1つのしきい値にまとめるので、同点の組は AUC に 0.5 ずつ寄与する
    """

    scores = np.asarray(scores, dtype=float)
    truth = _binary(truth, "truth")
    if scores.shape != truth.shape:
        raise ShapeError("scores と truth の長さが異なります")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("スコアに有限でない値が含まれています")
    if np.unique(truth).size < 2:
        raise ValidationError("ROC には陽性・陰性の両方が必要です")

    fpr, tpr, thresholds = roc_curve(truth, scores, drop_intermediate=False)
    return RocCurve(fpr, tpr, thresholds, float(auc(fpr, tpr)))


@dataclass(frozen=True, eq=False)
class FoldFeatures:
    train: np.ndarray
    test: np.ndarray
    pls_model: Optional[PlsModel]
    center: np.ndarray
    scale: np.ndarray


def standardize(train: np.ndarray, test: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """学習側の平均・標準偏差で両方を標準化（標準偏差ゼロの列はそのまま）"""

    center = train.mean(axis=0)
    scale = train.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (train - center) / scale, (test - center) / scale, center, scale


def fold_features(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    cfg: PipelineConfig = PipelineConfig(),
    wavenumbers: Optional[np.ndarray] = None,
) -> FoldFeatures:
    """
    1フォールド分の CNN 入力を作る

    PLS は学習側だけで学習し、学習・テストの両方を同じ x_mean と W_L で射影する
    """

    pls_model = None
    if cfg.use_pls:
        pls_model = pls_fit(X_train, y_train, cfg.pls, wavenumbers=wavenumbers)
        train_features = pls_transform(pls_model, X_train)
        test_features = pls_transform(pls_model, X_test)
    else:
        train_features = np.asarray(X_train, dtype=float)
        test_features = np.asarray(X_test, dtype=float)

    n_features = train_features.shape[1]
    if cfg.standardize_scores:
        train_features, test_features, center, scale = standardize(train_features, test_features)
    else:
        center, scale = np.zeros(n_features), np.ones(n_features)

    return FoldFeatures(train_features, test_features, pls_model, center, scale)


@dataclass(frozen=True, eq=False)
class FoldResult:
    fold: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    confusion: ConfusionMatrix
    metrics: MetricSet
    test_scores: np.ndarray
    history: TrainHistory
    misclassified: Tuple[str, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fold": self.fold,
            "train_size": int(self.train_indices.size),
            "test_size": int(self.test_indices.size),
            "test_indices": self.test_indices.tolist(),
            "confusion": self.confusion.to_dict(),
            "metrics": self.metrics.to_dict(),
            "test_scores": self.test_scores.tolist(),
            "misclassified": list(self.misclassified),
            "history": self.history.to_dict(),
        }


def _mean_history(histories: Sequence[TrainHistory]) -> TrainHistory:
    def mean_curve(name: str) -> List[float]:
        curves = [getattr(h, name) for h in histories]
        if not curves or any(len(c) == 0 for c in curves):
            return []
        return np.mean(np.array(curves), axis=0).tolist()

    return TrainHistory(
        loss=mean_curve("loss"),
        accuracy=mean_curve("accuracy"),
        val_loss=mean_curve("val_loss"),
        val_accuracy=mean_curve("val_accuracy"),
    )


@dataclass(frozen=True, eq=False)
class EvalReport:
    config: PipelineConfig
    plan: FoldPlan
    folds: Tuple[FoldResult, ...]
    mean_metrics: MetricSet
    roc: RocCurve
    oof_scores: np.ndarray
    mean_history: TrainHistory
    sample_ids: Tuple[str, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": REPORT_FORMAT,
            "version": 1,
            "config": self.config.model_dump(mode="json", by_alias=True),
            "plan": {
                "k": self.plan.k,
                "seed": self.plan.seed,
                "stratified": self.plan.stratified,
                "fold_sizes": self.plan.fold_sizes,
                "assignments": self.plan.assignments.tolist(),
            },
            "sample_ids": list(self.sample_ids),
            "mean_metrics": self.mean_metrics.to_dict(),
            "roc": self.roc.to_dict(),
            "oof_scores": self.oof_scores.tolist(),
            "mean_history": self.mean_history.to_dict(),
            "folds": [fold.to_dict() for fold in self.folds],
        }


def _plan_for(ds: SpectraDataset, folds: FoldConfig) -> FoldPlan:
    if folds.stratified:
        return stratified_kfold_split(ds.labels, folds.k, folds.seed)
    return kfold_split(ds.n_samples, folds.k, folds.seed)


def _check_input_len(ds: SpectraDataset, cfg: PipelineConfig) -> None:
    expected = cfg.pls.n_components if cfg.use_pls else ds.grid.count
    if cfg.architecture.input_len != expected:
        raise ConfigurationError(f"CNN の入力長 {cfg.architecture.input_len} が特徴量数 {expected} と一致しません")


def run_fold(corrected: SpectraDataset, plan: FoldPlan, fold: int, cfg: PipelineConfig) -> FoldResult:
    """1フォールド分の学習と評価"""

    train_idx = plan.train_indices(fold)
    test_idx = plan.test_indices(fold)
    y_train = corrected.labels[train_idx]
    y_test = corrected.labels[test_idx]

    features = fold_features(
        corrected.X[train_idx],
        y_train.astype(float),
        corrected.X[test_idx],
        cfg,
        wavenumbers=corrected.grid.values,
    )

    model = model_init(cfg.architecture, cfg.train.seed + fold)
    model, history = train(model, features.train, y_train, cfg.train, validation=(features.test, y_test))

    scores = predict_proba(model, features.test)[:, 1]
    pred = (scores >= cfg.threshold).astype(int)
    cm = confusion(pred, y_test)
    wrong = tuple(corrected.sample_ids[i] for i, ok in zip(test_idx, pred == y_test) if not ok)

    return FoldResult(
        fold=fold,
        train_indices=train_idx,
        test_indices=test_idx,
        confusion=cm,
        metrics=metrics(cm),
        test_scores=scores,
        history=history,
        misclassified=wrong,
    )


def _fold_done(bar, result: FoldResult, progress: bool) -> None:
    bar.update(1)
    if progress:
        tqdm.write(f"   フォールド {result.fold}: 正解率 {result.metrics.accuracy:.3f} (誤分類 {len(result.misclassified)} 件)")


def cross_validate(
    ds: SpectraDataset,
    cfg: PipelineConfig = PipelineConfig(),
    threads: int = 1,
    progress: bool = False,
) -> EvalReport:
    """
    k 分割交差検証

    ベースライン補正はラベルを使わないので最初に全試料へ1回だけ適用し、
    各フォールドで PLS を学習側だけに当てはめて CNN を学習・評価する。
    ROC は全フォールドのテスト予測をまとめて1本引く。

    Args:
        ds: 生スペクトルのデータセット
        cfg: パイプライン設定
        threads: フォールドと行単位の補正を並列に処理するスレッド数
        progress: tqdm の進捗バーを出す
    """

    if np.unique(ds.labels).size < 2:
        raise ValidationError("データセットに陽性・陰性の両方が必要です")
    _check_input_len(ds, cfg)

    plan = _plan_for(ds, cfg.folds)
    for fold in range(plan.k):
        if np.unique(ds.labels[plan.train_indices(fold)]).size < 2:
            raise ValidationError(
                f"フォールド {fold} の学習データが単一クラスです。seed を変えるか stratified を有効にしてください"
            )

    corrected = baseline_correct_dataset(ds, cfg.airpls, threads=threads, progress=progress)

    bar = tqdm(total=plan.k, desc="交差検証", disable=not progress)
    with bar:
        if threads <= 1:
            results = []
            for fold in range(plan.k):
                results.append(run_fold(corrected, plan, fold, cfg))
                _fold_done(bar, results[-1], progress)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = []
                for result in pool.map(lambda f: run_fold(corrected, plan, f, cfg), range(plan.k)):
                    results.append(result)
                    _fold_done(bar, result, progress)

    oof = np.zeros(ds.n_samples)
    for result in results:
        oof[result.test_indices] = result.test_scores

    return EvalReport(
        config=cfg,
        plan=plan,
        folds=tuple(results),
        mean_metrics=mean_metrics([r.metrics for r in results]),
        roc=roc_auc(oof, ds.labels),
        oof_scores=oof,
        mean_history=_mean_history([r.history for r in results]),
        sample_ids=ds.sample_ids,
    )


def roc_rows(report: Dict[str, Any]) -> List[Tuple[Optional[float], float, float]]:
    """レポートJSONから (threshold, fpr, tpr) の行を取り出す"""

    check_document(report, REPORT_FORMAT)
    try:
        roc = report["roc"]
        return list(zip(roc["thresholds"], roc["fpr"], roc["tpr"]))
    except (KeyError, TypeError) as e:
        raise FormatError(f"レポートに ROC がありません ({e})") from e
