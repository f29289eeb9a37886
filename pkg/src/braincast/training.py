"""Loss, gradients, RMSprop and the early-stopping training loop."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import runtime
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetManifest, WindowArrays, build_split
from .errors import ConfigError, DataError, DivergenceError, NumericalError
from .model import ModelConfig, check_params, forward_graph, init_params, predict
from .numerics import Rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 64
    patience: int = 5
    max_epochs: int = 100
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be positive")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("train.patience, train.batch_size and train.max_epochs must be >= 1")
        if not 0 <= self.rmsprop_decay < 1:
            raise ConfigError("train.rmsprop_decay must lie in [0, 1)")
        if self.precision not in ("float64", "float32"):
            raise ConfigError("train.precision must be float64 or float32")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# loss and gradients ----------------------------------------------------------------

def mse_loss(pred, target):
    """Per sample ``(1/N) sum_n ||pred[n] - target[n]||^2``, averaged over a batch."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    r = pred - target
    n = pred.shape[-2]
    per_sample = (r * r).sum(axis=(-2, -1)) / n
    return float(np.mean(per_sample))


def _as_arrays(batch):
    if isinstance(batch, tuple):
        return np.asarray(batch[0]), np.asarray(batch[1])
    if isinstance(batch, WindowArrays):
        return batch.X, batch.Y
    if not batch:
        raise ValueError("empty batch")
    return (np.stack([w.lookback for w in batch]), np.stack([w.horizon for w in batch]))


def loss_and_grads(params, X, Y, cfg: ModelConfig):
    """Batch-mean loss and its exact gradient for every parameter.

    Complex parameters receive ``dL/dRe + 1j * dL/dIm``.
    """
    if len(X) == 0:
        raise ValueError("empty batch")
    P = {k: ag.param(v, name=k) for k, v in params.items()}
    dtype = params["embed.weight"].dtype
    pred = forward_graph(ag.Tensor(np.asarray(X, dtype=dtype)), P, cfg)["prediction"]
    B, N = pred.shape[0], pred.shape[1]
    loss = ag.scale(ag.sum_all(ag.square(ag.sub(pred, np.asarray(Y, dtype=dtype)))), 1.0 / (B * N))
    found = loss.backward()
    grads = {}
    for k, v in params.items():
        g = found.get(k)
        grads[k] = np.zeros_like(v) if g is None else np.asarray(g, dtype=v.dtype)
        if not np.all(np.isfinite(grads[k])):
            raise NumericalError(f"non-finite gradient for parameter {k}")
    return float(loss.data), grads


def compute_gradients(params, batch, cfg: ModelConfig):
    X, Y = _as_arrays(batch)
    return loss_and_grads(params, X, Y, cfg)[1]


# RMSprop ------------------------------------------------------------------------------

@dataclass
class OptState:
    """Squared-gradient averages; complex parameters keep the real and the
    imaginary accumulator in the real and imaginary parts of one array."""

    v: dict
    step: int = 0


def init_opt_state(params) -> OptState:
    return OptState({k: np.zeros_like(p) for k, p in params.items()}, 0)


def _sq(g):
    if np.iscomplexobj(g):
        return g.real * g.real + 1j * (g.imag * g.imag)
    return g * g


def _scaled(g, v, eps):
    if np.iscomplexobj(g):
        return g.real / (np.sqrt(v.real) + eps) + 1j * (g.imag / (np.sqrt(v.imag) + eps))
    return g / (np.sqrt(v) + eps)


def rmsprop_step(params, grads, opt: OptState, cfg: TrainConfig):
    """``v <- rho v + (1 - rho) g^2;  w <- w - lr g / (sqrt(v) + eps)``."""
    rho, lr, eps = cfg.rmsprop_decay, cfg.learning_rate, cfg.rmsprop_eps
    new_params, new_v = {}, {}
    for k, w in params.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter {w.shape}")
        v = rho * opt.v[k] + (1.0 - rho) * _sq(g)
        new_v[k] = v
        new_params[k] = w - lr * _scaled(g, v, eps)
    return new_params, OptState(new_v, opt.step + 1)


# early stopping --------------------------------------------------------------------------

class EarlyStopping:
    """Track the best validation loss; ``update`` returns True once the loss
    has failed to improve for ``patience`` consecutive epochs."""

    def __init__(self, patience, best=float("inf"), best_epoch=0, bad=0):
        self.patience = patience
        self.best = best
        self.best_epoch = best_epoch
        self.bad = bad

    def update(self, epoch, val):
        if val < self.best:
            self.best, self.best_epoch, self.bad = val, epoch, 0
            return False
        self.bad += 1
        return self.bad >= self.patience

    @property
    def improved_at(self):
        return self.best_epoch


# training loop --------------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict  # best-validation parameters
    meta: dict
    log: list
    last_params: dict
    opt: OptState
    wall_seconds: float = 0.0  # never persisted; checkpoints stay reproducible


def _precision_dtype(name):
    return np.float32 if name == "float32" else np.float64


def _cast(params, dtype):
    out = {}
    for k, v in params.items():
        target = np.result_type(dtype, np.complex64) if np.iscomplexobj(v) else dtype
        out[k] = v.astype(target)
    return out


def evaluate_mse(params, data: WindowArrays, cfg: ModelConfig):
    """Element-wise MSE over every sample, variate and horizon step."""
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty split")
    pred = predict(data.X, params, cfg)
    return float(np.mean((pred - data.Y) ** 2))


def _meta(model_cfg, train_cfg, epoch, val_mse, extra=None):
    m = {
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "seed": train_cfg.seed,
        "epoch": epoch,
        "val_loss": None if val_mse is None or not np.isfinite(val_mse) else float(val_mse),
    }
    if extra:
        m.update(extra)
    return m


def save_model(path, params, model_cfg, train_cfg, epoch, val_mse, extra=None):
    return save_checkpoint(path, params, _meta(model_cfg, train_cfg, epoch, val_mse, extra))


def load_model(path):
    """Return ``(params, ModelConfig, meta)`` from a model checkpoint."""
    arrays, meta = load_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["model"])
    check_params(arrays, cfg)
    return arrays, cfg, meta


def _state_arrays(params, best, opt):
    out = {}
    for prefix, reg in (("param/", params), ("best/", best), ("opt/", opt.v)):
        out.update({prefix + k: v for k, v in reg.items()})
    return out


def _split_state(arrays):
    groups = {"param/": {}, "best/": {}, "opt/": {}}
    for k, v in arrays.items():
        for prefix, reg in groups.items():
            if k.startswith(prefix):
                reg[k[len(prefix):]] = v
    return groups["param/"], groups["best/"], groups["opt/"]


LOG_FIELDS = ("epoch", "train_mse", "val_mse", "elapsed_s", "stopped")


def _write_log(path, records):
    # fixed field order: records restored from a checkpoint header come back key-sorted
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({k: r[k] for k in LOG_FIELDS}) + "\n")


def train(manifest: DatasetManifest, model_cfg: ModelConfig, train_cfg: TrainConfig,
          records=None, out_dir=None, resume_from=None, splits=None, stop_after=None,
          record_timing=None) -> TrainResult:
    """Fit BrainCast with RMSprop and early stopping on validation MSE.

    Windows use ``model_cfg.L``/``model_cfg.T`` and the manifest stride. With
    ``out_dir`` set, ``best.ckpt``, ``state.ckpt`` (resumable) and
    ``train_log.jsonl`` are written after every epoch. ``stop_after`` ends the
    run after that many epochs without marking it stopped, leaving a state a
    later ``resume_from`` call continues exactly.
    """
    if record_timing is None:
        record_timing = not runtime.deterministic()
    if splits is None:
        records = records if records is not None else manifest.load_records()
        s = manifest.window.get("s", 20)
        splits = {p: build_split(manifest, records, p, model_cfg.L, model_cfg.T, s)
                  for p in ("train", "val")}
    tr, va = splits["train"], splits["val"]
    if len(tr) == 0 or len(va) == 0:
        raise DataError("training and validation splits must both contain windows")
    if tr.X.shape[1] != model_cfg.N:
        raise ConfigError(f"data has {tr.X.shape[1]} variates but model.N={model_cfg.N}")

    dtype = _precision_dtype(train_cfg.precision)
    Xtr, Ytr = tr.X.astype(dtype), tr.Y.astype(dtype)
    rng = Rng(train_cfg.seed)

    if resume_from is not None:
        arrays, meta = load_checkpoint(resume_from)
        if meta.get("kind") != "train-state":
            raise ConfigError(f"{resume_from} is not a training-state checkpoint")
        params, best, v = _split_state(arrays)
        opt = OptState(v, meta["step"])
        stopper = EarlyStopping(train_cfg.patience, meta["best_val"], meta["best_epoch"], meta["bad"])
        history = [{k: r[k] for k in LOG_FIELDS} for r in meta["log"]]
        start = meta["epoch"] + 1
    else:
        params = _cast(init_params(model_cfg, rng.child("init")), dtype)
        best = {k: v.copy() for k, v in params.items()}
        opt = init_opt_state(params)
        stopper = EarlyStopping(train_cfg.patience)
        history = []
        start = 1
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    t0 = time.perf_counter()
    epoch = start - 1
    done = bool(history and history[-1]["stopped"])
    for epoch in range(start, train_cfg.max_epochs + 1):
        if done:
            break
        order = rng.substream(f"shuffle/{epoch}").permutation(len(Xtr))
        total = 0.0
        for i in range(0, len(order), train_cfg.batch_size):
            idx = np.sort(order[i:i + train_cfg.batch_size])
            try:
                loss, grads = loss_and_grads(params, Xtr[idx], Ytr[idx], model_cfg)
            except NumericalError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}", epoch,
                                      out_dir and os.path.join(out_dir, "best.ckpt")) from None
            if not np.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}: non-finite training loss", epoch,
                                      out_dir and os.path.join(out_dir, "best.ckpt"))
            total += loss * len(idx)
            params, opt = rmsprop_step(params, grads, opt, train_cfg)
        train_mse = total / len(Xtr) / model_cfg.T
        val_mse = evaluate_mse(params, va, model_cfg)
        if not np.isfinite(val_mse):
            raise DivergenceError(f"epoch {epoch}: non-finite validation loss", epoch,
                                  out_dir and os.path.join(out_dir, "best.ckpt"))
        stop = stopper.update(epoch, val_mse)
        if stopper.best_epoch == epoch:
            best = {k: v.copy() for k, v in params.items()}
            if out_dir is not None:
                save_model(os.path.join(out_dir, "best.ckpt"), best, model_cfg, train_cfg,
                           epoch, val_mse)
        history.append({
            "epoch": epoch,
            "train_mse": train_mse,
            "val_mse": val_mse,
            "elapsed_s": round(time.perf_counter() - t0, 3) if record_timing else None,
            "stopped": stop,
        })
        log.info("epoch %d train_mse %.6f val_mse %.6f", epoch, train_mse, val_mse)
        if out_dir is not None:
            _write_log(os.path.join(out_dir, "train_log.jsonl"), history)
            state_meta = _meta(model_cfg, train_cfg, epoch, val_mse, {
                "kind": "train-state", "step": opt.step, "best_val": stopper.best,
                "best_epoch": stopper.best_epoch, "bad": stopper.bad, "log": history})
            save_checkpoint(os.path.join(out_dir, "state.ckpt"),
                            _state_arrays(params, best, opt), state_meta)
        if stop:
            break
        if stop_after is not None and epoch - start + 1 >= stop_after:
            break

    meta = _meta(model_cfg, train_cfg, stopper.best_epoch, stopper.best)
    return TrainResult(best, meta, history, params, opt, time.perf_counter() - t0)
