"""Deterministic numerical primitives shared by the whole package.

All transforms act on the last axis ("rows" of an N x K matrix), so they
accept stacked inputs of shape (..., K) as well.

Transform convention: forward DFT uses the negative exponent and no scaling,
the inverse carries the 1/K factor.
"""

from __future__ import annotations

import functools
import math
import zlib

import numpy as np
from scipy.special import erf

from .errors import NumericalError

__all__ = [
    "Rng",
    "check_finite",
    "dft_matrix",
    "idft_matrix",
    "dft_rows",
    "idft_rows",
    "flip_index",
    "flip_spectrum",
    "softmax_rows",
    "layer_norm",
    "gelu",
    "gelu_grad",
    "moving_avg_matrix",
    "moving_avg_decompose",
    "finite_diff_grad",
]


class Rng:
    """Seeded generator with named, independent substreams.

    Substreams are derived from ``(seed, crc32(name))`` through numpy's
    ``SeedSequence`` and drive a PCG64 bit generator, so a name always yields
    the same draws regardless of which other substreams were requested before.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def substream(self, name: str) -> np.random.Generator:
        key = zlib.crc32(name.encode("utf-8"))
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, name: str) -> "Rng":
        # 63-bit child seed drawn from the named substream
        return Rng(int(self.substream(name).integers(0, 2**63 - 1)))

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def check_finite(x, what="input"):
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        if x.ndim >= 2:
            loc = f"row {int(bad[-2])}, col {int(bad[-1])}"
        else:
            loc = f"index {tuple(int(i) for i in bad)}"
        raise NumericalError(f"non-finite value in {what} at {loc}")
    return x


@functools.lru_cache(maxsize=64)
def _dft_matrix(k: int) -> np.ndarray:
    n = np.arange(k)
    # reduce kn modulo K before scaling so large K keeps full phase accuracy
    phase = (np.outer(n, n) % k) * (-2.0 * np.pi / k)
    m = np.exp(1j * phase)
    m.setflags(write=False)
    return m


def dft_matrix(k: int) -> np.ndarray:
    """K x K matrix F with ``x @ F`` the forward DFT of each row of x."""
    return _dft_matrix(int(k))


def idft_matrix(k: int) -> np.ndarray:
    """K x K matrix with ``X @ idft_matrix(K)`` the inverse DFT of each row."""
    return _idft_matrix(int(k))


@functools.lru_cache(maxsize=64)
def _idft_matrix(k: int) -> np.ndarray:
    m = np.conj(_dft_matrix(k)) / k
    m.setflags(write=False)
    return m


def dft_rows(x, method: str = "direct") -> np.ndarray:
    """Forward DFT of every row: ``X[k] = sum_n x[n] exp(-2 pi i k n / K)``.

    ``method="direct"`` evaluates the defining sum as a product with the DFT
    matrix; ``method="fft"`` uses numpy's FFT.
    """
    x = check_finite(np.asarray(x), "dft_rows input")
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ValueError("dft_rows needs at least one column")
    if method == "fft":
        return np.fft.fft(x, axis=-1)
    if method != "direct":
        raise ValueError(f"unknown DFT method {method!r}")
    return x @ dft_matrix(x.shape[-1])


def idft_rows(X, method: str = "direct") -> np.ndarray:
    """Inverse DFT of every row, scaled by 1/K."""
    X = check_finite(np.asarray(X), "idft_rows input")
    if X.ndim == 0 or X.shape[-1] < 1:
        raise ValueError("idft_rows needs at least one column")
    if method == "fft":
        return np.fft.ifft(X, axis=-1)
    if method != "direct":
        raise ValueError(f"unknown DFT method {method!r}")
    return X @ idft_matrix(X.shape[-1])


def flip_index(k: int) -> np.ndarray:
    """Permutation ``k -> (K - k) mod K``; it is its own inverse."""
    return (-np.arange(k)) % k


def flip_spectrum(X) -> np.ndarray:
    """Reverse the frequency bins of each row, keeping bin 0 in place."""
    X = np.asarray(X)
    return X[..., flip_index(X.shape[-1])]


def softmax_rows(x) -> np.ndarray:
    x = np.asarray(x)
    if np.iscomplexobj(x):
        raise TypeError("softmax_rows expects real input")
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Normalize each row by its mean and population variance, then scale."""
    x = np.asarray(x)
    if x.shape[-1] < 2:
        raise ValueError("layer_norm needs at least two columns")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gain + bias


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(x):
    return 0.5 * (1.0 + erf(x * _INV_SQRT2))


def normal_pdf(x):
    return _INV_SQRT2PI * np.exp(-0.5 * x * x)


def gelu(x):
    """Exact (erf-based) GELU, ``x * Phi(x)``."""
    return x * normal_cdf(x)


def gelu_grad(x):
    return normal_cdf(x) + x * normal_pdf(x)


def _check_kernel(kernel: int, k: int):
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"moving-average kernel must be odd and positive, got {kernel}")
    if kernel > k:
        raise ValueError(f"moving-average kernel {kernel} exceeds series length {k}")


@functools.lru_cache(maxsize=64)
def _moving_avg_matrix(k: int, kernel: int) -> np.ndarray:
    half = (kernel - 1) // 2
    m = np.zeros((k, k))
    for out in range(k):
        for j in range(out - half, out + half + 1):
            m[min(max(j, 0), k - 1), out] += 1.0 / kernel
    m.setflags(write=False)
    return m


def moving_avg_matrix(k: int, kernel: int) -> np.ndarray:
    """K x K matrix M such that ``x @ M`` is the edge-replicated moving average."""
    _check_kernel(kernel, k)
    return _moving_avg_matrix(int(k), int(kernel))


def moving_avg_decompose(x, kernel: int = 25):
    """Split rows into (trend, seasonal) with a centered moving average.

    Each row is padded with ``(kernel - 1) // 2`` copies of its first and
    last value before averaging; ``seasonal = x - trend``.
    """
    x = np.asarray(x, dtype=float)
    k = x.shape[-1]
    _check_kernel(kernel, k)
    half = (kernel - 1) // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    xp = np.pad(x, pad, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=-1)
    trend = windows.mean(axis=-1)
    return trend, x - trend


def finite_diff_grad(f, p, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function ``f`` at ``p``."""
    p = np.array(p, dtype=float)
    flat = p.reshape(-1)
    g = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(p)
        flat[i] = orig - h
        fm = f(p)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"objective is non-finite around coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return g.reshape(p.shape)
