"""Metrics, comparison baselines, attention export, look-back sweep and ablations."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .data import DatasetManifest, WindowArrays, build_split
from .model import ForwardTrace, ModelConfig, model_forward, predict
from .training import TrainConfig, train

log = logging.getLogger(__name__)

AGGREGATION = "global-flatten"


@dataclass
class MetricReport:
    mse: float
    mae: float
    r: float
    r2: float
    n_samples: int
    n_variates: int
    horizon: int
    aggregation: str = AGGREGATION
    note: str = ""

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k in ("mse", "mae", "r", "r2"):
            if not np.isfinite(d[k]):
                d[k] = None
        if not d["note"]:
            del d["note"]
        return d

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def compute_metrics(preds, targets) -> MetricReport:
    """MSE, MAE, Pearson R and R^2 over all samples, variates and steps pooled.

    ``preds`` and ``targets`` are paired sequences of N x T matrices (or
    stacked (S, N, T) arrays). R is NaN, with a note, when either side has
    zero variance; R^2 is NaN when the targets do.
    """
    if isinstance(preds, np.ndarray) and preds.ndim == 2:
        preds, targets = preds[None], np.asarray(targets)[None]
    if len(preds) == 0 or len(preds) != len(targets):
        raise ValueError("need equally many, non-zero predictions and targets")
    shapes = {np.shape(p) for p in preds} | {np.shape(t) for t in targets}
    if len(shapes) != 1:
        raise ValueError(f"prediction/target shapes differ: {sorted(shapes)}")
    P = np.asarray(preds, dtype=float)
    Y = np.asarray(targets, dtype=float)
    p, y = P.ravel(), Y.ravel()
    err = p - y
    mse = float(np.mean(err * err))
    mae = float(np.mean(np.abs(err)))
    yc, pc = y - y.mean(), p - p.mean()
    ss_tot = float(yc @ yc)
    ss_pred = float(pc @ pc)
    # constancy is tested exactly; centring a constant vector leaves rounding residue
    flat_y, flat_p = np.ptp(y) == 0, np.ptp(p) == 0
    note = ""
    if flat_y or flat_p:
        r = float("nan")
        note = "R undefined: zero-variance " + ("targets" if flat_y else "predictions")
    else:
        r = float(np.clip((pc @ yc) / np.sqrt(ss_pred * ss_tot), -1.0, 1.0))
    r2 = float("nan") if flat_y else 1.0 - float(err @ err) / ss_tot
    _, n_var, horizon = P.shape
    return MetricReport(mse, mae, r, r2, P.shape[0], n_var, horizon, AGGREGATION, note)


# baselines ----------------------------------------------------------------------------

def baseline_persistence(lookback, T):
    """Repeat the last observed column ``T`` times."""
    lookback = np.asarray(lookback)
    if lookback.shape[-1] < 1:
        raise ValueError("look-back must hold at least one point")
    return np.repeat(lookback[..., -1:], T, axis=-1)


class RidgeLinear:
    """One linear map L -> T shared by every variate, fit by ridge regression.

    Only the weight matrix is damped, so large ``lam`` drives the prediction
    towards the mean target.
    """

    def __init__(self, lam=1e-6):
        self.lam = lam
        self.W = None
        self.b = None
        self.rank_deficient = False

    def fit(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        A = X.reshape(-1, X.shape[-1])
        B = Y.reshape(-1, Y.shape[-1])
        xm, ym = A.mean(axis=0), B.mean(axis=0)
        Ac, Bc = A - xm, B - ym
        gram = Ac.T @ Ac
        self.rank_deficient = bool(np.linalg.matrix_rank(gram) < gram.shape[0])
        if self.rank_deficient:
            # expected after look-back z-scoring (rows sum to zero), so only logged
            log.info("ridge-linear baseline: rank-deficient normal equations, relying on damping")
        self.W = np.linalg.solve(gram + self.lam * np.eye(gram.shape[0]), Ac.T @ Bc)
        self.b = ym - xm @ self.W
        return self

    def predict(self, X):
        return np.asarray(X) @ self.W + self.b


def baseline_linear(X, Y, lam=1e-6) -> RidgeLinear:
    """Fit the shared ridge-linear baseline on look-back/horizon stacks."""
    return RidgeLinear(lam).fit(X, Y)


# attention export ---------------------------------------------------------------------------

@dataclass
class AttentionExport:
    sia: list  # per layer, N x N (mean over heads and samples)
    spa: np.ndarray | None
    scores: np.ndarray | None
    notices: list

    def write(self, out_dir, prefix="attention"):
        """Write CSV matrices (header row/column of variate indices)."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for g, A in enumerate(self.sia):
            paths.append(_write_matrix(os.path.join(out_dir, f"{prefix}_sia_layer{g}.csv"), A))
        if self.spa is not None:
            paths.append(_write_matrix(os.path.join(out_dir, f"{prefix}_spa.csv"), self.spa))
            p = os.path.join(out_dir, f"{prefix}_scores.csv")
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["variate", "score"])
                for i, s in enumerate(self.scores):
                    w.writerow([i, f"{s:.17g}"])
            paths.append(p)
        for n in self.notices:
            log.warning(n)
        return paths


def _write_matrix(path, M):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(range(M.shape[1])))
        for i, row in enumerate(M):
            w.writerow([i] + [f"{v:.17g}" for v in row])
    return path


def export_attention(traces) -> AttentionExport:
    """Average SIA maps (over heads and samples) and SPA scores of one or more traces.

    Per-variate scores are the column means of the averaged SPA matrix,
    normalized to sum to one.
    """
    if isinstance(traces, ForwardTrace):
        traces = [traces]
    if not traces:
        raise ValueError("no traces to export")
    notices = []
    sia = []
    if all(t.sia_enabled and t.attention for t in traces):
        n_layers = len(traces[0].attention)
        for g in range(n_layers):
            # (heads, N, N) or (B, heads, N, N) -> stack of per-sample head means
            per = [np.asarray(t.attention[g]) for t in traces]
            per = [a.reshape(-1, *a.shape[-3:]).mean(axis=1) for a in per]
            sia.append(np.concatenate(per).mean(axis=0))
    else:
        notices.append("SIA disabled in the producing forward pass; SIA maps omitted")
    spa = scores = None
    if all(t.spa_enabled and t.spa_scores is not None for t in traces):
        per = [np.asarray(t.spa_scores).reshape(-1, *np.shape(t.spa_scores)[-2:]) for t in traces]
        spa = np.concatenate(per).mean(axis=0)
        col = spa.mean(axis=0)
        scores = col / col.sum()
    else:
        notices.append("SPA disabled in the producing forward pass; SPA scores omitted")
    return AttentionExport(sia, spa, scores, notices)


def traces_for(params, cfg: ModelConfig, X, batch_size=256):
    return [model_forward(X[i:i + batch_size], params, cfg) for i in range(0, len(X), batch_size)]


# train/evaluate cycles --------------------------------------------------------------------------

def evaluate_params(params, cfg: ModelConfig, data: WindowArrays) -> MetricReport:
    return compute_metrics(predict(data.X, params, cfg), data.Y)


def evaluate_baselines(train_data: WindowArrays, test_data: WindowArrays, T):
    persist = compute_metrics(baseline_persistence(test_data.X, T), test_data.Y)
    lin = baseline_linear(train_data.X, train_data.Y)
    linear = compute_metrics(lin.predict(test_data.X), test_data.Y)
    if lin.rank_deficient:
        linear.note = "rank-deficient normal equations; ridge-damped solve"
    return {"persistence": persist, "ridge_linear": linear}


def fit_and_score(manifest, records, model_cfg, train_cfg, out_dir=None):
    """Train on the manifest's train/val split and score on its test split."""
    s = manifest.window.get("s", 20)
    splits = {p: build_split(manifest, records, p, model_cfg.L, model_cfg.T, s)
              for p in ("train", "val", "test")}
    result = train(manifest, model_cfg, train_cfg, splits=splits, out_dir=out_dir)
    report = evaluate_params(result.params, model_cfg, splits["test"])
    return report, result, splits


def _min_length(records):
    return min(r.length for r in records.values())


def sweep_lookback(manifest: DatasetManifest, model_cfg: ModelConfig, train_cfg: TrainConfig,
                   L_values, records=None):
    """Independent train/test cycles for each look-back length (T and seeds fixed)."""
    records = records if records is not None else manifest.load_records()
    shortest = _min_length(records)
    rows = []
    for L in L_values:
        if L + model_cfg.T > shortest:
            warnings.warn(f"L={L}: L+T exceeds the shortest series ({shortest}); skipped", stacklevel=2)
            continue
        cfg = model_cfg.replace(L=L)
        report, _, _ = fit_and_score(manifest, records, cfg, train_cfg)
        rows.append({"L": L, "mse": report.mse, "mae": report.mae, "r": report.r, "r2": report.r2})
    return rows


ABLATIONS = (
    ("full", {}),
    ("-SIA", {"enable_sia": False}),
    ("-TFR", {"enable_tfr": False}),
    ("-SPA", {"enable_spa": False}),
)


def run_ablation(manifest: DatasetManifest, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 records=None, return_results=False):
    """Train the full model and each single-module ablation under shared seeds."""
    records = records if records is not None else manifest.load_records()
    rows, results = [], {}
    for name, flags in ABLATIONS:
        cfg = model_cfg.replace(**flags)
        report, result, _ = fit_and_score(manifest, records, cfg, train_cfg)
        rows.append({"variant": name, "mse": report.mse, "mae": report.mae,
                     "r": report.r, "r2": report.r2, "best_epoch": result.meta["epoch"]})
        results[name] = (cfg, result)
    return (rows, results) if return_results else rows


def write_table(path, rows):
    if not rows:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("")
        return path
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in r.items()})
    return path
