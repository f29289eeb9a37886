"""Series ingestion, subject splits, sliding windows and normalization."""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .numerics import Rng

STD_FLOOR = 1e-5


@dataclass
class SeriesRecord:
    subject_id: str
    values: np.ndarray  # (N, length)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise DataError(f"{self.subject_id}: values must be an N x length matrix")
        if not np.all(np.isfinite(self.values)):
            r, c = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(f"{self.subject_id}: non-finite value at variate {r}, time {c}")

    @property
    def variates(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.values.shape[1]


@dataclass
class WindowSample:
    lookback: np.ndarray  # (N, L)
    horizon: np.ndarray  # (N, T)
    norm_mean: np.ndarray  # (N,)
    norm_std: np.ndarray  # (N,)
    subject_id: str = ""
    offset: int = 0

    @property
    def source(self):
        return f"{self.subject_id}@{self.offset}"


# CSV ------------------------------------------------------------------------------

def load_series_csv(path, subject_id=None) -> SeriesRecord:
    """Read a ``t,v0,...,v{N-1}`` CSV into an N x length record.

    The ``t`` column is ignored. Ragged rows, non-numeric or non-finite cells
    and empty files raise :class:`DataError` naming the offending line.
    """
    path = os.fspath(path)
    if subject_id is None:
        subject_id = os.path.splitext(os.path.basename(path))[0]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        n = len(header) - 1
        expected = ["t"] + [f"v{i}" for i in range(n)]
        if n < 1 or header != expected:
            raise DataError(f"{path}: line 1: header must be t,v0,...,v{{N-1}}, got {','.join(header)}")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n + 1:
                raise DataError(f"{path}: line {line}: expected {n + 1} fields, found {len(row)}")
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError:
                raise DataError(f"{path}: line {line}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: line {line}: non-finite cell")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return SeriesRecord(subject_id, np.array(rows).T)


def write_series_csv(path, values, t=None):
    """Write an N x length matrix with 17 significant digits (round-trip exact)."""
    values = np.asarray(values)
    n, length = values.shape
    t = np.arange(length) if t is None else t
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"v{i}" for i in range(n)])
        for j in range(length):
            w.writerow([repr(t[j]) if isinstance(t[j], float) else str(t[j])]
                       + [f"{v:.17g}" for v in values[:, j]])


# manifest ------------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    files: list  # [{"path": ..., "subject_id": ...}]
    split: dict  # {"train": [...], "val": [...], "test": [...]}
    window: dict  # {"L": ..., "T": ..., "s": ...}
    seed: int = 0
    normalization: str = "lookback_zscore"
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        seen = {}
        for part in ("train", "val", "test"):
            for sid in self.split.get(part, []):
                if sid in seen:
                    raise DataError(f"subject {sid} appears in both {seen[sid]} and {part}")
                seen[sid] = part
        if self.normalization != "lookback_zscore":
            raise DataError(f"unsupported normalization {self.normalization!r}")

    def to_dict(self):
        return {
            "files": self.files,
            "split": {k: list(self.split.get(k, [])) for k in ("train", "val", "test")},
            "window": dict(self.window),
            "seed": self.seed,
            "normalization": self.normalization,
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed manifest: {exc}") from None
        for key in ("files", "split", "window"):
            if key not in d:
                raise DataError(f"{path}: manifest lacks '{key}'")
        m = cls(d["files"], d["split"], d["window"], d.get("seed", 0),
                d.get("normalization", "lookback_zscore"),
                base_dir=os.path.dirname(os.path.abspath(path)))
        for entry in m.files:
            if not os.path.exists(m.resolve(entry["path"])):
                raise DataError(f"{path}: listed file {entry['path']} does not exist")
        return m

    def resolve(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def with_window(self, **changes):
        w = dict(self.window)
        w.update(changes)
        return DatasetManifest(self.files, self.split, w, self.seed, self.normalization, self.base_dir)

    def load_records(self) -> dict:
        return {e["subject_id"]: load_series_csv(self.resolve(e["path"]), e["subject_id"])
                for e in self.files}


def split_counts(n, fractions):
    """Subjects per split: val/test get floor(f*n) (at least one when f > 0),
    the remainder goes to training."""
    _, f_val, f_test = fractions
    n_val = max(1, math.floor(f_val * n)) if f_val > 0 else 0
    n_test = max(1, math.floor(f_test * n)) if f_test > 0 else 0
    n_train = n - n_val - n_test
    if n_train < 1:
        raise DataError(f"cannot split {n} subjects with fractions {fractions}")
    return n_train, n_val, n_test


def split_subjects(records, fractions=(0.8, 0.1, 0.1), rng=None, window=None,
                   files=None) -> DatasetManifest:
    """Shuffle subjects and partition them into disjoint train/val/test lists."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions {fractions} do not sum to 1")
    if any(f < 0 for f in fractions):
        raise DataError("split fractions must be non-negative")
    ids = [r.subject_id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate subject ids")
    if len(ids) < 3:
        raise DataError("need at least 3 subjects to split")
    rng = rng or Rng(0)
    order = rng.substream("split_subjects").permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train, n_val, _ = split_counts(len(ids), fractions)
    split = {
        "train": shuffled[:n_train],
        "val": shuffled[n_train:n_train + n_val],
        "test": shuffled[n_train + n_val:],
    }
    if files is None:
        files = [{"path": f"{sid}.csv", "subject_id": sid} for sid in ids]
    return DatasetManifest(files, split, dict(window or {"L": 140, "T": 20, "s": 20}), rng.seed)


# windows -----------------------------------------------------------------------------------

def window_offsets(length, L, T, s):
    if min(L, T, s) < 1:
        raise DataError("L, T and s must be positive")
    if length < L + T:
        return range(0)
    return range(0, length - (L + T) + 1, s)


def make_windows(record: SeriesRecord, L, T, s) -> list[WindowSample]:
    """Cut full (look-back, horizon) windows at offsets 0, s, 2s, ..."""
    offsets = window_offsets(record.length, L, T, s)
    if not offsets:
        warnings.warn(f"{record.subject_id}: length {record.length} < L+T={L + T}, no windows",
                      stacklevel=2)
    N = record.variates
    out = []
    for o in offsets:
        out.append(WindowSample(
            lookback=record.values[:, o:o + L].copy(),
            horizon=record.values[:, o + L:o + L + T].copy(),
            norm_mean=np.zeros(N),
            norm_std=np.ones(N),
            subject_id=record.subject_id,
            offset=o,
        ))
    return out


def normalize_window(w: WindowSample, std_floor=STD_FLOOR) -> WindowSample:
    """Z-score both halves with the look-back statistics of each variate.

    Stats compose with any stats already stored on ``w`` so that
    :func:`denormalize_forecast` always maps back to the raw scale.
    """
    mu = w.lookback.mean(axis=1)
    sd = np.maximum(w.lookback.std(axis=1), std_floor)
    return WindowSample(
        lookback=(w.lookback - mu[:, None]) / sd[:, None],
        horizon=(w.horizon - mu[:, None]) / sd[:, None],
        norm_mean=w.norm_mean + w.norm_std * mu,
        norm_std=w.norm_std * sd,
        subject_id=w.subject_id,
        offset=w.offset,
    )


def denormalize_forecast(pred, w: WindowSample):
    pred = np.asarray(pred)
    if pred.ndim != 2 or pred.shape[0] != w.norm_mean.shape[0]:
        raise DataError(f"prediction shape {pred.shape} does not match {w.norm_mean.shape[0]} variates")
    return pred * w.norm_std[:, None] + w.norm_mean[:, None]


@dataclass
class WindowArrays:
    """Stacked, normalized windows of one split."""

    X: np.ndarray  # (S, N, L)
    Y: np.ndarray  # (S, N, T)
    mean: np.ndarray  # (S, N)
    std: np.ndarray  # (S, N)
    sources: list

    def __len__(self):
        return len(self.X)


def stack_windows(windows, L, T, N=None) -> WindowArrays:
    if not windows:
        n = N or 0
        return WindowArrays(np.zeros((0, n, L)), np.zeros((0, n, T)), np.zeros((0, n)),
                            np.zeros((0, n)), [])
    return WindowArrays(
        np.stack([w.lookback for w in windows]),
        np.stack([w.horizon for w in windows]),
        np.stack([w.norm_mean for w in windows]),
        np.stack([w.norm_std for w in windows]),
        [w.source for w in windows],
    )


def build_split(manifest: DatasetManifest, records: dict, part: str, L=None, T=None,
                s=None) -> WindowArrays:
    """Normalized windows for every subject of one split, in manifest order."""
    L = L or manifest.window["L"]
    T = T or manifest.window["T"]
    s = s or manifest.window["s"]
    windows = []
    N = None
    for sid in manifest.split.get(part, []):
        if sid not in records:
            raise DataError(f"subject {sid} of split {part} has no file")
        rec = records[sid]
        if N is not None and rec.variates != N:
            raise DataError(f"subject {sid} has {rec.variates} variates, expected {N}")
        N = rec.variates
        windows.extend(normalize_window(w) for w in make_windows(rec, L, T, s))
    return stack_windows(windows, L, T, N)


# synthetic benchmark ----------------------------------------------------------------------

def ar1_noise(gen: np.random.Generator, shape, ar, std):
    """Stationary AR(1) noise along the last axis."""
    *lead, length = shape
    eps = gen.standard_normal(size=(*lead, length))
    out = np.empty((*lead, length))
    start_sd = std / math.sqrt(1.0 - ar * ar) if abs(ar) < 1 else std
    out[..., 0] = start_sd * eps[..., 0]
    for t in range(1, length):
        out[..., t] = ar * out[..., t - 1] + std * eps[..., t]
    return out


def generate_synthetic(n_subjects, N, length, n_latents, noise_ar, noise_std, rng: Rng,
                       freq_band=(0.01, 0.12)):
    """Subjects whose variates mix a few shared sinusoidal sources plus AR(1) noise.

    Latent frequencies, the N x n_latents mixing matrix and per-variate offsets
    are common to all subjects (one population); phases and noise are drawn
    per subject. Frequencies are in cycles per sample, one uniform draw per
    equal-width sub-band of ``freq_band`` so they are distinct.
    """
    if n_latents > N:
        raise DataError("n_latents must not exceed N")
    pop = rng.substream("synthetic/population")
    edges = np.linspace(freq_band[0], freq_band[1], n_latents + 1)
    freqs = pop.uniform(edges[:-1], edges[1:])
    mixing = pop.standard_normal((N, n_latents))
    offsets = pop.standard_normal(N)
    t = np.arange(length)
    records = []
    for i in range(n_subjects):
        phases = rng.substream(f"synthetic/phase/{i}").uniform(0, 2 * np.pi, n_latents)
        latents = np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])
        values = offsets[:, None] + mixing @ latents
        if noise_std > 0:
            values = values + ar1_noise(rng.substream(f"synthetic/noise/{i}"), (N, length),
                                        noise_ar, noise_std)
        records.append(SeriesRecord(f"sub-{i:03d}", values))
    return records
