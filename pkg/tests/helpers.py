"""Shared builders for the slower integration tests."""

import numpy as np

from braincast import data as d
from braincast.model import ModelConfig, forward_graph
from braincast import autograd as ag
from braincast.numerics import Rng, finite_diff_grad
from braincast.training import loss_and_grads, mse_loss


def grad_check(params, X, Y, cfg: ModelConfig, h=1e-5):
    """Per parameter group: max |analytic - numeric| / max |numeric|.

    Complex parameters are checked as separate real and imaginary coordinate
    blocks, reported as ``name.re`` and ``name.im``. Groups whose true
    gradient vanishes identically (e.g. the key bias of an unscaled softmax,
    which only shifts every logit of a row equally) would divide noise by
    noise, so the denominator is floored at 1e-3 of the largest gradient seen.
    """
    _, grads = loss_and_grads(params, X, Y, cfg)

    def loss_with(name, value):
        p = dict(params)
        p[name] = value
        pred = forward_graph(ag.Tensor(X), {k: ag.Tensor(v) for k, v in p.items()}, cfg)
        return mse_loss(pred["prediction"].data, Y)

    diffs, scales = {}, {}
    for name, w in params.items():
        parts = [("re", 1.0, lambda g: g.real)]
        if np.iscomplexobj(w):
            parts.append(("im", 1j, lambda g: g.imag))
        for label, unit, pick in parts:
            base = w.copy()

            def f(v, name=name, base=base, unit=unit):
                return loss_with(name, base + unit * v.reshape(base.shape))

            num = finite_diff_grad(f, np.zeros(w.size), h=h).reshape(w.shape)
            ana = pick(grads[name])
            key = f"{name}.{label}" if np.iscomplexobj(w) else name
            diffs[key] = float(np.max(np.abs(ana - num)))
            scales[key] = float(np.max(np.abs(num)))
    floor = 1e-3 * max(scales.values())
    return {k: diffs[k] / max(scales[k], floor) for k in diffs}


def tiny_dataset(n_subjects=5, N=4, length=60, seed=3, window=None):
    records = d.generate_synthetic(n_subjects, N, length, 2, 0.5, 0.2, Rng(seed))
    window = window or {"L": 16, "T": 4, "s": 4}
    manifest = d.split_subjects(records, rng=Rng(seed), window=window)
    return manifest, {r.subject_id: r for r in records}


def write_dataset(directory, manifest, records):
    for sid, rec in records.items():
        d.write_series_csv(directory / f"{sid}.csv", rec.values)
    path = directory / "manifest.json"
    manifest.base_dir = str(directory)
    manifest.save(path)
    return path


# acceptance verdicts, printed once more by the terminal-summary hook in conftest
ACCEPTANCE = {}


def verdict(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line
