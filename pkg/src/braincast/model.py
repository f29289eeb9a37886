"""BrainCast forward computation.

The model maps a look-back block ``X_P`` (N variates x L points) to a
forecast (N x T) through three paths:

* SIA: every variate's look-back is embedded as one token; a stack of
  SIAformer layers (FAN projections, variate-wise multi-head attention, FFN,
  two layer norms) mixes information across variates.
* TFR: spectrum flipping equalizes low- and high-energy bins, a moving-average
  split feeds two FFNs, and a complex affine map of the flipped spectrum is
  subtracted in the frequency domain to restore the energy level.
* SPA: cross-attention with spatial features as queries and temporal features
  as keys and values, added back onto the spatial features.

Every computation is written once against :mod:`braincast.autograd` tensors;
the public numpy functions below run the same code with gradient tracking
off. Inputs may carry a leading batch axis, ``(B, N, L)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import numerics
from .errors import ConfigError


@dataclass
class ModelConfig:
    N: int
    L: int = 140
    T: int = 20
    D: int = 512
    G: int = 2
    heads: int = 8
    ffn_hidden: int | None = None
    decomposition_kernel: int = 25
    enable_sia: bool = True
    enable_tfr: bool = True
    enable_spa: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("N", "L", "T", "D", "G", "heads", "decomposition_kernel"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"model.{name} must be a positive integer, got {v!r}")
        if self.ffn_hidden is not None and self.ffn_hidden < 1:
            raise ConfigError("model.ffn_hidden must be positive")
        if self.D % self.heads:
            raise ConfigError(f"model.D={self.D} is not divisible by heads={self.heads}")
        if self.D % 4:
            raise ConfigError(f"model.D={self.D} must be divisible by 4 for the FAN split")
        if self.decomposition_kernel % 2 == 0:
            raise ConfigError("model.decomposition_kernel must be odd")
        if self.enable_tfr and self.decomposition_kernel > self.L:
            raise ConfigError(
                f"model.decomposition_kernel={self.decomposition_kernel} exceeds L={self.L}")

    @property
    def sia_hidden(self):
        return self.ffn_hidden if self.ffn_hidden is not None else 2 * self.D

    @property
    def tfr_hidden(self):
        return self.ffn_hidden if self.ffn_hidden is not None else self.D

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# parameter registry ------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    kind: str  # weight | bias | gain | cweight | cbias
    fan_in: int = 0

    @property
    def is_complex(self):
        return self.kind in ("cweight", "cbias")


def param_specs(cfg: ModelConfig) -> list[ParamSpec]:
    """Ordered list of every learnable array the configuration needs."""
    D, L, T = cfg.D, cfg.L, cfg.T
    specs = []

    def affine(prefix, n_in, n_out):
        specs.append(ParamSpec(f"{prefix}.weight", (n_in, n_out), "weight", n_in))
        specs.append(ParamSpec(f"{prefix}.bias", (n_out,), "bias"))

    affine("embed", L, D)
    if cfg.enable_sia:
        h = cfg.sia_hidden
        for g in range(cfg.G):
            p = f"sia.{g}"
            for which in ("q", "k", "v"):
                f = f"{p}.fan_{which}"
                specs.append(ParamSpec(f"{f}.periodic", (D, D // 4), "weight", D))
                specs.append(ParamSpec(f"{f}.gate_weight", (D, D // 2), "weight", D))
                specs.append(ParamSpec(f"{f}.gate_bias", (D // 2,), "bias"))
            affine(f"{p}.ffn1", D, h)
            affine(f"{p}.ffn2", h, D)
            for ln in ("ln1", "ln2"):
                specs.append(ParamSpec(f"{p}.{ln}.gain", (D,), "gain"))
                specs.append(ParamSpec(f"{p}.{ln}.bias", (D,), "bias"))
    if cfg.enable_tfr:
        h = cfg.tfr_hidden
        for branch in ("trend", "season"):
            affine(f"tfr.{branch}1", L, h)
            affine(f"tfr.{branch}2", h, D)
        specs.append(ParamSpec("tfr.spec_weight", (L, D), "cweight", L))
        specs.append(ParamSpec("tfr.spec_bias", (D,), "cbias"))
    if cfg.enable_spa:
        for proj in ("psi_q", "psi_k", "psi_v", "omega"):
            affine(f"spa.{proj}", D, D)
    affine("head", D, T)
    return specs


def init_params(cfg: ModelConfig, rng: numerics.Rng, dtype=np.float64) -> dict:
    """Draw a fresh parameter registry.

    Real weights are uniform in +-sqrt(1/fan_in); complex weights draw real
    and imaginary parts uniform in +-sqrt(1/(2 fan_in)); biases start at zero
    and layer-norm gains at one. Each array comes from its own named
    substream, so a parameter's initial value does not depend on which other
    modules are enabled.
    """
    dtype = np.dtype(dtype)
    cdtype = np.result_type(dtype, np.complex64)
    params = {}
    for s in param_specs(cfg):
        if s.kind == "weight":
            a = np.sqrt(1.0 / s.fan_in)
            arr = rng.substream(s.name).uniform(-a, a, size=s.shape).astype(dtype)
        elif s.kind == "cweight":
            a = np.sqrt(1.0 / (2.0 * s.fan_in))
            gen = rng.substream(s.name)
            re = gen.uniform(-a, a, size=s.shape)
            im = gen.uniform(-a, a, size=s.shape)
            arr = (re + 1j * im).astype(cdtype)
        elif s.kind == "gain":
            arr = np.ones(s.shape, dtype=dtype)
        elif s.kind == "cbias":
            arr = np.zeros(s.shape, dtype=cdtype)
        else:
            arr = np.zeros(s.shape, dtype=dtype)
        params[s.name] = arr
    return params


def count_params(cfg: ModelConfig) -> int:
    """Number of real coordinates (complex entries count twice)."""
    return sum(int(np.prod(s.shape)) * (2 if s.is_complex else 1) for s in param_specs(cfg))


def check_params(params: dict, cfg: ModelConfig):
    specs = param_specs(cfg)
    missing = [s.name for s in specs if s.name not in params]
    if missing:
        raise ConfigError(f"parameter registry lacks {missing[:5]} for this config")
    for s in specs:
        if params[s.name].shape != s.shape:
            raise ConfigError(
                f"parameter {s.name} has shape {params[s.name].shape}, expected {s.shape}")


# differentiable building blocks --------------------------------------------------

def _affine(x, P, prefix):
    return ag.add(ag.matmul(x, P[f"{prefix}.weight"]), P[f"{prefix}.bias"])


def _ffn(x, P, first, second):
    return _affine(ag.gelu(_affine(x, P, first)), P, second)


def _fan(x, P, prefix):
    z = ag.matmul(x, P[f"{prefix}.periodic"])
    gate = ag.gelu(ag.add(ag.matmul(x, P[f"{prefix}.gate_weight"]), P[f"{prefix}.gate_bias"]))
    return ag.concat([ag.cos(z), ag.sin(z), gate], axis=-1)


def _split_heads(x, heads):
    B, N, D = x.shape
    return ag.transpose(ag.reshape(x, (B, N, heads, D // heads)), (0, 2, 1, 3))


def _attention(Q, K, V, heads):
    B, N, D = Q.shape
    dh = D // heads
    q, k, v = (_split_heads(t, heads) for t in (Q, K, V))
    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    A = ag.softmax(scores)
    H = ag.matmul(A, v)
    H = ag.reshape(ag.transpose(H, (0, 2, 1, 3)), (B, N, D))
    return H, A


def _siaformer_layer(Z, P, g, cfg):
    p = f"sia.{g}"
    Q, K, V = (_fan(Z, P, f"{p}.fan_{w}") for w in ("q", "k", "v"))
    H, A = _attention(Q, K, V, cfg.heads)
    inner = ag.layer_norm(ag.add(H, Z), P[f"{p}.ln1.gain"], P[f"{p}.ln1.bias"], cfg.ln_eps)
    ffn = _ffn(H, P, f"{p}.ffn1", f"{p}.ffn2")
    out = ag.layer_norm(ag.add(ffn, inner), P[f"{p}.ln2.gain"], P[f"{p}.ln2.bias"], cfg.ln_eps)
    return out, A


def _constants(L, D, kernel, dtype):
    cdtype = np.result_type(dtype, np.complex64)
    return {
        "dft_L": numerics.dft_matrix(L).astype(cdtype, copy=False),
        "idft_L": numerics.idft_matrix(L).astype(cdtype, copy=False),
        "dft_D": numerics.dft_matrix(D).astype(cdtype, copy=False),
        "idft_D": numerics.idft_matrix(D).astype(cdtype, copy=False),
        "avg": numerics.moving_avg_matrix(L, kernel).astype(dtype, copy=False),
        "flip": numerics.flip_index(L),
    }


def _tfr(XP, P, cfg, keep=None):
    c = _constants(cfg.L, cfg.D, cfg.decomposition_kernel, XP.data.dtype)
    spec = ag.matmul(XP, c["dft_L"])
    flipped = ag.take_last(spec, c["flip"])
    x_eq = ag.real(ag.matmul(ag.add(spec, flipped), c["idft_L"]))
    trend = ag.matmul(x_eq, c["avg"])
    season = ag.sub(x_eq, trend)
    x_ts = ag.add(_ffn(trend, P, "tfr.trend1", "tfr.trend2"),
                  _ffn(season, P, "tfr.season1", "tfr.season2"))
    proj = ag.add(ag.matmul(flipped, P["tfr.spec_weight"]), P["tfr.spec_bias"])
    ts_spec = ag.matmul(x_ts, c["dft_D"])
    h_temp = ag.real(ag.matmul(ag.sub(ts_spec, proj), c["idft_D"]))
    if keep is not None:
        keep.update(x_eq=x_eq, trend=trend, season=season, x_ts=x_ts)
    return h_temp


def _spa(Hs, Ht, P):
    q = _affine(Hs, P, "spa.psi_q")
    k = _affine(Ht, P, "spa.psi_k")
    v = _affine(Ht, P, "spa.psi_v")
    M = ag.softmax(ag.matmul(q, ag.transpose(k, (0, 2, 1))))
    Hg = ag.add(_affine(ag.matmul(M, v), P, "spa.omega"), Hs)
    return Hg, M


def forward_graph(XP, P, cfg: ModelConfig):
    """Run the model on tensors; returns a dict of intermediate tensors.

    ``XP`` is a (B, N, L) tensor and ``P`` maps parameter names to tensors.
    """
    out = {}
    XE = _affine(XP, P, "embed")
    out["x_embed"] = XE
    attn = []
    if cfg.enable_sia:
        Z = XE
        for g in range(cfg.G):
            Z, A = _siaformer_layer(Z, P, g, cfg)
            attn.append(A)
        Hs = Z
    else:
        Hs = XE
    Ht = _tfr(XP, P, cfg, keep=out) if cfg.enable_tfr else XE
    if cfg.enable_spa:
        Hg, M = _spa(Hs, Ht, P)
    else:
        B, N = XP.shape[0], XP.shape[1]
        Hg = ag.add(Hs, Ht)
        M = ag.Tensor(np.full((B, N, N), 1.0 / N, dtype=XP.data.dtype))
    out.update(attention=attn, h_spat=Hs, h_temp=Ht, h_global=Hg, spa_scores=M)
    out["prediction"] = _affine(Hg, P, "head")
    return out


# public numpy entry points ------------------------------------------------------------

def _batched(x):
    x = np.asarray(x)
    return (x[None], True) if x.ndim == 2 else (x, False)


def _unbatch(x, squeeze):
    return x[0] if squeeze else x


def _consts(params):
    return {k: ag.Tensor(v) for k, v in params.items()}


def embed_variates(X_P, params):
    """Shared affine map of every variate's look-back row: ``X_P @ W + b``."""
    X_P = np.asarray(X_P)
    W = params["embed.weight"]
    if X_P.shape[-1] != W.shape[0]:
        raise ConfigError(f"look-back length {X_P.shape[-1]} does not match embedding {W.shape}")
    return X_P @ W + params["embed.bias"]


def fan_forward(X_E, params, prefix):
    """FAN projection ``[cos(X Wp) | sin(X Wp) | gelu(X Wg + bg)]`` for one of Q/K/V."""
    x, sq = _batched(X_E)
    return _unbatch(_fan(ag.Tensor(x), _consts(params), prefix).data, sq)


def sia_attention(Q, K, V, heads):
    """Multi-head scaled dot-product attention across variate tokens.

    Returns ``(H, A)`` with ``A`` of shape (heads, N, N) (batched inputs get a
    leading batch axis).
    """
    q, sq = _batched(Q)
    k, _ = _batched(K)
    v, _ = _batched(V)
    if q.shape[-1] % heads:
        raise ConfigError(f"width {q.shape[-1]} not divisible by {heads} heads")
    H, A = _attention(ag.Tensor(q), ag.Tensor(k), ag.Tensor(v), heads)
    return _unbatch(H.data, sq), _unbatch(A.data, sq)


def siaformer_layer(Z_in, params, layer, cfg: ModelConfig):
    z, sq = _batched(Z_in)
    out, A = _siaformer_layer(ag.Tensor(z), _consts(params), layer, cfg)
    return _unbatch(out.data, sq), _unbatch(A.data, sq)


def sia_forward(X_E, params, cfg: ModelConfig):
    """Stack of ``cfg.G`` SIAformer layers; returns (H_spat, per-layer maps)."""
    z, sq = _batched(X_E)
    Z = ag.Tensor(z)
    P = _consts(params)
    maps = []
    for g in range(cfg.G):
        Z, A = _siaformer_layer(Z, P, g, cfg)
        maps.append(_unbatch(A.data, sq))
    return _unbatch(Z.data, sq), maps


def energy_equalize(X_P):
    """Real part of the IDFT of (spectrum + flipped spectrum), row-wise."""
    spec = numerics.dft_rows(X_P)
    return numerics.idft_rows(spec + numerics.flip_spectrum(spec)).real


def tfr_forward(X_P, params, cfg: ModelConfig):
    x, sq = _batched(X_P)
    return _unbatch(_tfr(ag.Tensor(x), _consts(params), cfg).data, sq)


def spa_align(H_spat, H_temp, params):
    """Cross-attention alignment; returns ``(H_global, M)``."""
    hs, sq = _batched(H_spat)
    ht, _ = _batched(H_temp)
    Hg, M = _spa(ag.Tensor(hs), ag.Tensor(ht), _consts(params))
    return _unbatch(Hg.data, sq), _unbatch(M.data, sq)


def forecast_head(H_global, params):
    return np.asarray(H_global) @ params["head.weight"] + params["head.bias"]


@dataclass
class ForwardTrace:
    prediction: np.ndarray
    attention: list = field(default_factory=list)
    spa_scores: np.ndarray | None = None
    h_spat: np.ndarray | None = None
    h_temp: np.ndarray | None = None
    h_global: np.ndarray | None = None
    x_embed: np.ndarray | None = None
    x_eq: np.ndarray | None = None
    sia_enabled: bool = True
    spa_enabled: bool = True


def _check_input(X_P, cfg):
    if X_P.ndim not in (2, 3) or X_P.shape[-2:] != (cfg.N, cfg.L):
        raise ConfigError(f"look-back block has shape {X_P.shape}, expected (..., {cfg.N}, {cfg.L})")
    numerics.check_finite(X_P, "look-back block")


def model_forward(X_P, params, cfg: ModelConfig) -> ForwardTrace:
    """Full forward pass with every intermediate recorded."""
    x, sq = _batched(X_P)
    _check_input(x, cfg)
    check_params(params, cfg)
    out = forward_graph(ag.Tensor(x.astype(params["embed.weight"].dtype, copy=False)),
                        _consts(params), cfg)
    get = lambda k: _unbatch(out[k].data, sq) if k in out else None  # noqa: E731
    return ForwardTrace(
        prediction=get("prediction"),
        attention=[_unbatch(A.data, sq) for A in out["attention"]],
        spa_scores=get("spa_scores"),
        h_spat=get("h_spat"),
        h_temp=get("h_temp"),
        h_global=get("h_global"),
        x_embed=get("x_embed"),
        x_eq=get("x_eq"),
        sia_enabled=cfg.enable_sia,
        spa_enabled=cfg.enable_spa,
    )


def predict(X, params, cfg: ModelConfig, batch_size=256):
    """Predictions for a stack of look-back blocks (S, N, L), in chunks."""
    X = np.asarray(X)
    _check_input(X, cfg)
    check_params(params, cfg)
    P = _consts(params)
    dtype = params["embed.weight"].dtype
    chunks = [forward_graph(ag.Tensor(X[i:i + batch_size].astype(dtype, copy=False)), P, cfg)
              ["prediction"].data for i in range(0, len(X), batch_size)]
    if not chunks:
        return np.zeros((0, cfg.N, cfg.T), dtype=dtype)
    return np.concatenate(chunks, axis=0)
