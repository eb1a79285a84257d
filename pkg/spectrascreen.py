"""
spectrascreen コマンドライン

使い方:
    python spectrascreen.py synth --out cohort.csv --truth truth.json
    python spectrascreen.py preprocess --in cohort.csv --out corrected.csv
    python spectrascreen.py fit-pls --in corrected.csv --components 24 --out pls.json --scores-out t_train.csv
    python spectrascreen.py bmi --model pls.json --out bmi.json
    python spectrascreen.py train --scores t_train.csv --epochs 200 --lr 2e-4 --seed 7 --out model.json
    python spectrascreen.py evaluate --in cohort.csv --config run.json --out report.json
    python spectrascreen.py roc --report report.json --out roc.csv

終了コード: 0 = 成功, 1 = 入力・設定の検証エラー, 2 = 使い方の誤り
"""

import argparse
import sys
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError as PydanticValidationError

from artifacts import load_scores_csv, parse_labels, read_json, read_text_csv, write_frame_csv, write_json, write_scores_csv
from attention_cnn import cnn_model_to_dict, model_init, train
from baseline import baseline_correct_dataset
from evaluation import cross_validate, roc_rows
from importance import (
    bmi,
    bmi_report_to_dict,
    default_band_table,
    load_band_table,
    normalize_vip,
    save_band_table,
    vip_scores,
)
from pls import pls_fit, pls_model_from_dict, pls_model_to_dict, pls_transform
from run_config import RunEnvironment, load_run_config
from spectra_data import WavenumberGrid, load_spectra_csv, write_spectra_csv
from spectra_errors import ConfigurationError, SpectraError, ValidationError
from synth import SynthConfig, gen_dataset

__version__ = "0.1.0"


def status(message: str) -> None:
    """状況表示は標準エラーへ（標準出力にはデータを出さない）"""
    print(message, file=sys.stderr)


class _UsageError(Exception):
    def __init__(self, code: int):
        super().__init__(code)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """エラー時に終了せず、dispatch に終了コードを返させる"""

    def exit(self, status=0, message=None):
        if message:
            self._print_message(message, sys.stderr)
        raise _UsageError(status)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spectrascreen", description="ATR-FTIR スペクトルによるスクリーニング")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_runtime(p):
        p.add_argument("--config", help="RunConfig の JSON（省略時は既定値）")
        p.add_argument("--threads", type=int, help="スレッド数（既定: 環境変数 SPECTRASCREEN_THREADS または 1）")
        p.add_argument("--progress", action="store_true", default=None, help="進捗バーを表示")

    p = sub.add_parser("preprocess", help="airPLS でベースライン補正")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--diff-order", type=int)
    add_runtime(p)

    p = sub.add_parser("fit-pls", help="PLS モデルを学習")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--components", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--scores-out", help="学習データの PLS スコアCSV（id,label,t1..tN）")
    add_runtime(p)

    p = sub.add_parser("bmi", help="VIP と生体分子重要度")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bands", help="吸収帯表の JSON（省略時は既定の表）")
    p.add_argument("--bands-out", help="使った吸収帯表を JSON で保存（編集して --bands に渡せる）")

    p = sub.add_parser("train", help="CNN を学習")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", help="id,label 列を持つCSV（省略時はスコアCSVの label 列）")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    add_runtime(p)

    p = sub.add_parser("evaluate", help="k 分割交差検証")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    add_runtime(p)

    p = sub.add_parser("synth", help="合成コホートを生成")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="真のベースラインなどを保存する JSON")
    p.add_argument("--config", help="SynthConfig の JSON")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("roc", help="レポートから ROC 曲線をCSVに書き出す")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)

    return parser


def _with_overrides(model, **updates):
    """None でない値だけ上書きして検証し直す"""

    updates = {k: v for k, v in updates.items() if v is not None}
    if not updates:
        return model
    data = model.model_dump()
    data.update(updates)
    return type(model).model_validate(data)


def _runtime(args, env: RunEnvironment):
    threads = args.threads if args.threads is not None else env.threads()
    if threads < 1:
        raise ConfigurationError("--threads は 1 以上である必要があります")
    progress = args.progress if args.progress is not None else env.progress()
    return threads, progress


def cmd_preprocess(args, env: RunEnvironment) -> None:
    cfg = load_run_config(args.config)
    params = _with_overrides(cfg.airpls, lam=args.lam, max_iter=args.max_iter, tol_ratio=args.tol, diff_order=args.diff_order)
    threads, progress = _runtime(args, env)

    status(f"📖 {args.input} を読み込み中...")
    ds = load_spectra_csv(args.input)
    status(f"🔧 airPLS: {ds.n_samples} 試料 × {ds.grid.count} 点 (λ = {params.lam:g})")
    corrected = baseline_correct_dataset(ds, params, threads=threads, progress=progress)
    write_spectra_csv(corrected, args.out)
    status(f"💾 {args.out} に保存しました")


def cmd_fit_pls(args, env: RunEnvironment) -> None:
    cfg = load_run_config(args.config)
    pls_cfg = _with_overrides(cfg.pls, n_components=args.components, epsilon=args.epsilon)

    status(f"📖 {args.input} を読み込み中...")
    ds = load_spectra_csv(args.input)
    status(f"🔧 PLS: {pls_cfg.n_components} 成分")
    model = pls_fit(ds.X, ds.labels.astype(float), pls_cfg, wavenumbers=ds.grid.values)

    write_json(args.out, pls_model_to_dict(model))
    status(f"💾 {args.out} に保存しました")
    if args.scores_out:
        write_scores_csv(args.scores_out, ds.sample_ids, ds.labels, pls_transform(model, ds.X))
        status(f"💾 {args.scores_out} に保存しました")


def cmd_bmi(args, env: RunEnvironment) -> None:
    model = pls_model_from_dict(read_json(args.model))
    if model.wavenumbers is None:
        raise ValidationError(f"{args.model}: 波数が記録されていないモデルです")
    table = load_band_table(args.bands) if args.bands else default_band_table()

    raw = vip_scores(model)
    normalized = normalize_vip(raw)
    report = bmi(normalized, table, WavenumberGrid(model.wavenumbers))

    write_json(args.out, bmi_report_to_dict(report, raw, normalized))
    if args.bands_out:
        save_band_table(table, args.bands_out)
        status(f"💾 吸収帯表を {args.bands_out} に保存しました")
    for name, value in report.as_percent().items():
        status(f"   {name}: {value:.2f}%")
    status(f"💾 {args.out} に保存しました")


def _labels_for(ids: List[str], path: str) -> np.ndarray:
    frame = read_text_csv(path)
    if "id" not in frame.columns or "label" not in frame.columns:
        raise ValidationError(f"{path}: id 列と label 列が必要です")
    lookup = dict(zip(frame["id"], frame["label"]))
    missing = [i for i in ids if i not in lookup]
    if missing:
        raise ValidationError(f"{path}: 試料 {missing[0]} のラベルがありません", sample_id=missing[0])

    return parse_labels([lookup[i] for i in ids], path)


def cmd_train(args, env: RunEnvironment) -> None:
    cfg = load_run_config(args.config)
    train_cfg = _with_overrides(cfg.train, epochs=args.epochs, learning_rate=args.lr, seed=args.seed)
    _, progress = _runtime(args, env)

    status(f"📖 {args.scores} を読み込み中...")
    ids, labels, scores = load_scores_csv(args.scores)
    if args.labels:
        labels = _labels_for(ids, args.labels)
    if scores.shape[1] != cfg.architecture.input_len:
        raise ConfigurationError(
            f"スコアの次元 {scores.shape[1]} が CNN の入力長 {cfg.architecture.input_len} と一致しません"
        )

    status(f"🔧 CNN を学習中: {train_cfg.epochs} エポック, lr = {train_cfg.learning_rate:g}")
    model = model_init(cfg.architecture, train_cfg.seed)
    model, history = train(model, scores, labels, train_cfg, progress=progress)

    data = cnn_model_to_dict(model)
    data["train_config"] = train_cfg.model_dump(mode="json")
    data["history"] = history.to_dict()
    write_json(args.out, data)
    status(f"✅ 最終損失 {history.loss[-1]:.4f}, 学習正解率 {history.accuracy[-1]:.3f}")
    status(f"💾 {args.out} に保存しました")


def cmd_evaluate(args, env: RunEnvironment) -> None:
    cfg = load_run_config(args.config)
    threads, progress = _runtime(args, env)
    settings = ", ".join(f"{key}={value}" for key, value in env.describe().items())
    status(f"⚙️ 実行環境: {settings}")

    status(f"📖 {args.input} を読み込み中...")
    ds = load_spectra_csv(args.input)
    status(f"🔧 {cfg.folds.k} 分割交差検証を実行中...")
    report = cross_validate(ds, cfg.pipeline_config(), threads=threads, progress=progress)

    data = report.to_dict()
    # 合成データの設定も含めて、実行に使った設定をすべて残す
    data["config"] = cfg.model_dump(mode="json", by_alias=True)
    write_json(args.out, data)

    m = report.mean_metrics
    status(f"✅ 平均正解率 {m.accuracy:.4f}, AUC {report.roc.auc:.4f}")
    status(f"💾 {args.out} に保存しました")


def cmd_synth(args, env: RunEnvironment) -> None:
    cfg = SynthConfig.model_validate(read_json(args.config)) if args.config else SynthConfig()
    cfg = _with_overrides(cfg, seed=args.seed)

    status(f"🔧 合成コホートを生成中: {cfg.n_samples} 試料 (陽性 {cfg.n_positive} / 陰性 {cfg.n_negative})")
    ds, truth = gen_dataset(cfg)
    write_spectra_csv(ds, args.out)
    status(f"💾 {args.out} に保存しました")
    if args.truth:
        data = truth.to_dict()
        data["config"] = cfg.model_dump(mode="json")
        write_json(args.truth, data)
        status(f"💾 {args.truth} に保存しました")


def cmd_roc(args, env: RunEnvironment) -> None:
    rows = roc_rows(read_json(args.report))
    frame = pd.DataFrame(rows, columns=["threshold", "fpr", "tpr"])
    frame["threshold"] = frame["threshold"].astype(float).fillna(np.inf)
    write_frame_csv(args.out, frame)
    status(f"💾 {args.out} に保存しました ({len(frame)} 点)")


COMMANDS = {
    "preprocess": cmd_preprocess,
    "fit-pls": cmd_fit_pls,
    "bmi": cmd_bmi,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "roc": cmd_roc,
}


def dispatch(argv: Optional[List[str]] = None) -> int:
    """
    サブコマンドを実行して終了コードを返す

    Returns:
        0 = 成功, 1 = 検証エラー, 2 = 使い方の誤り
    """

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        return e.code

    try:
        env = RunEnvironment()
        COMMANDS[args.command](args, env)
    except (SpectraError, PydanticValidationError) as e:
        status(f"❌ {e}")
        return 1
    except OSError as e:
        status(f"❌ ファイルを開けません: {e}")
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
