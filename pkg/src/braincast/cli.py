"""Command-line interface.

Subcommands: generate, train, eval, forecast, sweep, ablate, export-attn.

Configuration resolves in layers: built-in defaults, then the manifest's
window geometry, then ``--config FILE`` (JSON, nested or flat dotted keys),
then individual ``--model.D 64`` / ``--train.lr 1e-3`` style flags. The
resolved values and where each one came from are written to
``<out>/config.json``.

Exit codes: 0 success, 1 usage/configuration, 2 data, 3 numeric divergence,
4 I/O or checkpoint.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import data as dp
from . import evaluation as ev
from . import plotting, runtime
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .model import ModelConfig
from .numerics import Rng
from .training import TrainConfig, load_model, train

log = logging.getLogger("braincast")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 1, 2, 3, 4

# full-scale defaults (the synthetic benchmark overrides several)
DEFAULTS = {
    "data.manifest": None,
    "data.s": 20,
    "model.N": None,
    "model.L": 140,
    "model.T": 20,
    "model.D": 512,
    "model.G": 2,
    "model.heads": 8,
    "model.ffn_hidden": None,
    "model.decomposition_kernel": 25,
    "model.enable_sia": True,
    "model.enable_tfr": True,
    "model.enable_spa": True,
    "model.ln_eps": 1e-5,
    **{f"train.{f.name}": f.default for f in dataclasses.fields(TrainConfig)},
}
ALIASES = {"train.lr": "train.learning_rate", "train.batch": "train.batch_size"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


@dataclasses.dataclass
class RunConfig:
    values: dict
    provenance: dict

    def get(self, key):
        return self.values[key]

    def set(self, key, value, source):
        self.values[key] = value
        self.provenance[key] = source

    def section(self, name):
        p = name + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.section("model"))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.section("train"))

    def nested(self):
        out = {}
        for k, v in self.values.items():
            head, _, tail = k.partition(".")
            out.setdefault(head, {})[tail] = v
        return out

    def write(self, out_dir):
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump({"resolved": self.nested(), "provenance": self.provenance}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _canonical_key(key):
    key = ALIASES.get(key, key)
    if key not in DEFAULTS:
        raise UsageError(f"unknown configuration key '{key}'")
    return key


def _parse_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _split_overrides(extra):
    """Turn leftover ``--section.key value`` pairs into a dict."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise UsageError(f"unrecognized argument '{tok}'")
        body = tok[2:]
        if "=" in body:
            key, raw = body.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"flag '{tok}' needs a value")
            key, raw = body, extra[i + 1]
            i += 2
        out[_canonical_key(key)] = _parse_value(raw)
    return out


def resolve_config(args, extra) -> RunConfig:
    rc = RunConfig(dict(DEFAULTS), {k: "default" for k in DEFAULTS})
    file_vals, flag_vals = {}, _split_overrides(extra)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        raw.pop("provenance", None)
        raw = raw.get("resolved", raw)
        file_vals = {_canonical_key(k): v for k, v in _flatten(raw).items()}
    if getattr(args, "manifest", None):
        if flag_vals.get("data.manifest") not in (None, args.manifest):
            raise UsageError("--manifest conflicts with --data.manifest")
        flag_vals["data.manifest"] = args.manifest
    if getattr(args, "seed", None) is not None:
        flag_vals["train.seed"] = args.seed
    manifest_path = flag_vals.get("data.manifest", file_vals.get("data.manifest"))
    if manifest_path:
        manifest = dp.DatasetManifest.load(manifest_path)
        for src, dst in (("L", "model.L"), ("T", "model.T"), ("s", "data.s")):
            if src in manifest.window:
                rc.set(dst, manifest.window[src], "manifest")
    for k, v in file_vals.items():
        rc.set(k, v, "file")
    for k, v in flag_vals.items():
        rc.set(k, v, "flag")
    return rc


def _load_data(rc: RunConfig):
    path = rc.get("data.manifest")
    if not path:
        raise UsageError("a manifest is required (--manifest or data.manifest)")
    manifest = dp.DatasetManifest.load(path)
    records = manifest.load_records()
    n = {r.variates for r in records.values()}
    if len(n) != 1:
        raise DataError(f"subjects disagree on variate count: {sorted(n)}")
    n = n.pop()
    if rc.get("model.N") is None:
        rc.set("model.N", n, "data")
    elif rc.get("model.N") != n:
        raise ConfigError(f"model.N={rc.get('model.N')} but data has {n} variates")
    manifest = manifest.with_window(L=rc.get("model.L"), T=rc.get("model.T"), s=rc.get("data.s"))
    return manifest, records


def _prepare_out(args):
    out = args.out
    os.makedirs(out, exist_ok=True)
    os.makedirs(os.path.join(out, "figures"), exist_ok=True)
    return out


def _fig(out, name):
    return os.path.join(out, "figures", name)


# subcommands ---------------------------------------------------------------------------

def cmd_generate(args, extra):
    if extra:
        raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
    out = args.out
    os.makedirs(out, exist_ok=True)
    rng = Rng(args.seed)
    records = dp.generate_synthetic(args.subjects, args.variates, args.length, args.latents,
                                    args.noise_ar, args.noise_std, rng)
    files = []
    for r in records:
        name = f"{r.subject_id}.csv"
        dp.write_series_csv(os.path.join(out, name), r.values)
        files.append({"path": name, "subject_id": r.subject_id})
    manifest = dp.split_subjects(records, tuple(args.fractions), rng,
                                 window={"L": args.L, "T": args.T, "s": args.s}, files=files)
    manifest.save(os.path.join(out, "manifest.json"))
    print(f"wrote {len(records)} series and manifest.json to {out}")
    return 0


def _baseline_report(splits, T):
    base = ev.evaluate_baselines(splits["train"], splits["test"], T)
    return {k: v.to_dict() for k, v in base.items()}


def cmd_train(args, extra):
    rc = resolve_config(args, extra)
    manifest, records = _load_data(rc)
    mcfg, tcfg = rc.model_config(), rc.train_config()
    out = _prepare_out(args)
    rc.write(out)
    splits = {p: dp.build_split(manifest, records, p) for p in ("train", "val", "test")}
    result = train(manifest, mcfg, tcfg, splits=splits, out_dir=out, resume_from=args.resume)
    report = ev.evaluate_params(result.params, mcfg, splits["test"])
    report.to_json(os.path.join(out, "metrics.json"))
    with open(os.path.join(out, "baselines.json"), "w", encoding="utf-8") as fh:
        json.dump(_baseline_report(splits, mcfg.T), fh, indent=2)
        fh.write("\n")
    plotting.training_curve(result.log, _fig(out, "training_curve.png"))
    _forecast_figure(result.params, mcfg, splits["test"], _fig(out, "test_forecast.png"))
    print(json.dumps(report.to_dict()))
    return 0


def _forecast_figure(params, cfg, data, path):
    if len(data):
        from .model import predict
        pred = predict(data.X[:1], params, cfg)[0]
        plotting.forecast(data.X[0], data.Y[0], pred, path)


def _checkpoint_and_data(args, extra):
    rc = resolve_config(args, extra)
    params, mcfg, meta = load_model(args.checkpoint)
    for k, v in mcfg.to_dict().items():
        rc.set(f"model.{k}", v, "checkpoint")
    manifest, records = _load_data(rc)
    return rc, params, mcfg, manifest, records


def cmd_eval(args, extra):
    rc, params, mcfg, manifest, records = _checkpoint_and_data(args, extra)
    out = _prepare_out(args)
    rc.write(out)
    split = dp.build_split(manifest, records, args.split)
    report = ev.evaluate_params(params, mcfg, split)
    report.to_json(os.path.join(out, "metrics.json"))
    _forecast_figure(params, mcfg, split, _fig(out, f"{args.split}_forecast.png"))
    print(json.dumps(report.to_dict()))
    return 0


def cmd_forecast(args, extra):
    if extra:
        raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
    params, mcfg, _ = load_model(args.checkpoint)
    rec = dp.load_series_csv(args.input)
    if rec.variates != mcfg.N:
        raise DataError(f"{args.input} has {rec.variates} variates, checkpoint expects {mcfg.N}")
    if rec.length < mcfg.L:
        raise DataError(f"{args.input} has {rec.length} points, need at least L={mcfg.L}")
    raw = dp.WindowSample(rec.values[:, -mcfg.L:], np.zeros((mcfg.N, mcfg.T)),
                          np.zeros(mcfg.N), np.ones(mcfg.N), rec.subject_id, rec.length - mcfg.L)
    w = dp.normalize_window(raw)
    from .model import predict
    pred = dp.denormalize_forecast(predict(w.lookback[None], params, mcfg)[0], w)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "forecast.csv")
    dp.write_series_csv(path, pred, t=np.arange(rec.length, rec.length + mcfg.T))
    os.makedirs(os.path.join(args.out, "figures"), exist_ok=True)
    plotting.forecast(raw.lookback, None, pred, _fig(args.out, "forecast.png"))
    print(f"wrote {path}")
    return 0


def cmd_sweep(args, extra):
    rc = resolve_config(args, extra)
    manifest, records = _load_data(rc)
    out = _prepare_out(args)
    rc.write(out)
    L_values = [int(v) for v in args.L_values.split(",") if v.strip()]
    rows = ev.sweep_lookback(manifest, rc.model_config(), rc.train_config(), L_values, records)
    ev.write_table(os.path.join(out, "sweep.csv"), rows)
    if rows:
        plotting.metric_table(rows, "L", _fig(out, "sweep.png"), metrics=("mse", "r"))
    print(f"wrote {len(rows)} rows to {os.path.join(out, 'sweep.csv')}")
    return 0


def cmd_ablate(args, extra):
    rc = resolve_config(args, extra)
    manifest, records = _load_data(rc)
    out = _prepare_out(args)
    rc.write(out)
    mcfg = rc.model_config()
    rows = ev.run_ablation(manifest, mcfg, rc.train_config(), records)
    ev.write_table(os.path.join(out, "ablation.csv"), rows)
    splits = {p: dp.build_split(manifest, records, p) for p in ("train", "test")}
    base = ev.evaluate_baselines(splits["train"], splits["test"], mcfg.T)
    ev.write_table(os.path.join(out, "baselines.csv"),
                   [{"baseline": k, "mse": v.mse, "mae": v.mae, "r": v.r, "r2": v.r2}
                    for k, v in base.items()])
    plotting.metric_table(rows, "variant", _fig(out, "ablation.png"), metrics=("mse", "r"), kind="bar")
    for r in rows:
        print(f"{r['variant']:>5}  mse {r['mse']:.6f}  r {r['r']:.4f}")
    return 0


def cmd_export_attn(args, extra):
    rc, params, mcfg, manifest, records = _checkpoint_and_data(args, extra)
    out = _prepare_out(args)
    rc.write(out)
    split = dp.build_split(manifest, records, args.split)
    if len(split) == 0:
        raise DataError(f"split {args.split} has no windows")
    export = ev.export_attention(ev.traces_for(params, mcfg, split.X))
    paths = export.write(out)
    for g, A in enumerate(export.sia):
        plotting.attention_map(A, _fig(out, f"sia_layer{g}.png"), f"SIA layer {g}")
    if export.spa is not None:
        plotting.attention_map(export.spa, _fig(out, "spa.png"), "SPA scores")
    for n in export.notices:
        print(f"notice: {n}")
    print(f"wrote {len(paths)} files to {out}")
    return 0


def build_parser():
    p = _Parser(prog="braincast", description="BrainCast multivariate time-series forecasting")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic coupled-sinusoid benchmark")
    g.add_argument("--subjects", type=int, default=12)
    g.add_argument("--variates", type=int, default=16)
    g.add_argument("--length", type=int, default=800)
    g.add_argument("--latents", type=int, default=4)
    g.add_argument("--noise-ar", type=float, default=0.8)
    g.add_argument("--noise-std", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--fractions", type=float, nargs=3, default=(0.8, 0.1, 0.1))
    g.add_argument("--L", type=int, default=140)
    g.add_argument("--T", type=int, default=20)
    g.add_argument("--s", type=int, default=20)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    def common(sp, needs_checkpoint=False):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--manifest", help="dataset manifest (same as --data.manifest)")
        sp.add_argument("--out", help="output directory (required unless --print-config)")
        sp.add_argument("--print-config", action="store_true",
                        help="print the resolved configuration as JSON and exit")
        if needs_checkpoint:
            sp.add_argument("--checkpoint", required=True)
        else:
            sp.add_argument("--seed", type=int, help="shorthand for --train.seed")

    t = sub.add_parser("train", help="train and report test metrics")
    common(t)
    t.add_argument("--resume", help="state.ckpt of an interrupted run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on one split")
    common(e, needs_checkpoint=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("forecast", help="forecast the T points after a series CSV")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--input", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_forecast)

    s = sub.add_parser("sweep", help="look-back length sweep")
    common(s)
    s.add_argument("--L-values", default="100,120,140,160,180")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("ablate", help="full model vs. -SIA/-TFR/-SPA")
    common(a)
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export-attn", help="export averaged attention matrices")
    common(x, needs_checkpoint=True)
    x.add_argument("--split", choices=("train", "val", "test"), default="test")
    x.set_defaults(func=cmd_export_attn)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        if args.command in ("generate", "forecast") and extra:
            raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "print_config", False):
            rc = resolve_config(args, extra)
            print(json.dumps({"resolved": rc.nested(), "provenance": rc.provenance},
                             indent=2, sort_keys=True))
            return 0
        if args.out is None:
            raise UsageError(f"{args.command}: --out is required")
        with runtime.thread_limit():
            return args.func(args, extra)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
