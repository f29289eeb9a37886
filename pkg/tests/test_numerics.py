import cmath
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from braincast import numerics as nu
from braincast.errors import NumericalError


def direct_dft(row):
    K = len(row)
    return np.array([sum(row[n] * cmath.exp(-2j * math.pi * k * n / K) for n in range(K))
                     for k in range(K)])


finite_rows = arrays(np.float64, st.integers(1, 40),
                     elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False))


class TestDFT:
    def test_constant_concentrates_at_zero(self):
        np.testing.assert_allclose(nu.dft_rows([[1, 1, 1, 1]]), [[4, 0, 0, 0]], atol=1e-12)

    def test_impulse_is_flat(self):
        np.testing.assert_allclose(nu.dft_rows([[1, 0, 0, 0]]), [[1, 1, 1, 1]], atol=1e-12)

    def test_matches_double_loop(self, rng):
        x = rng.standard_normal((3, 16))
        ref = np.array([direct_dft(r) for r in x])
        got = nu.dft_rows(x)
        assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) < 1e-10

    def test_fft_method_agrees(self, rng):
        x = rng.standard_normal((2, 140))
        np.testing.assert_allclose(nu.dft_rows(x, method="fft"), nu.dft_rows(x), atol=1e-9)

    def test_inverse_examples(self):
        np.testing.assert_allclose(nu.idft_rows([[4, 0, 0, 0]]), [[1, 1, 1, 1]], atol=1e-12)
        np.testing.assert_array_equal(nu.idft_rows(np.zeros((1, 4))), np.zeros((1, 4)))

    @pytest.mark.parametrize("K", [4, 16, 64, 140, 512])
    def test_round_trip(self, rng, K):
        x = rng.standard_normal((5, K))
        back = nu.idft_rows(nu.dft_rows(x))
        assert np.max(np.abs(back - x)) / max(1.0, np.max(np.abs(x))) < 1e-10
        X = rng.standard_normal((5, K)) + 1j * rng.standard_normal((5, K))
        back = nu.dft_rows(nu.idft_rows(X))
        assert np.max(np.abs(back - X)) / max(1.0, np.max(np.abs(X))) < 1e-10

    def test_non_finite_rejected_with_location(self):
        x = np.ones((2, 5))
        x[1, 3] = np.nan
        with pytest.raises(NumericalError, match="row 1, col 3"):
            nu.dft_rows(x)
        with pytest.raises(NumericalError):
            nu.idft_rows(np.array([[np.inf, 0]]))

    @settings(max_examples=60, deadline=None)
    @given(finite_rows)
    def test_parseval(self, x):
        X = nu.dft_rows(x[None])[0]
        lhs = np.sum(np.abs(X) ** 2)
        rhs = len(x) * np.sum(x * x)
        assert abs(lhs - rhs) <= 1e-8 * max(rhs, 1e-300) + 1e-12


class TestFlip:
    def test_constant_spectrum_invariant(self):
        np.testing.assert_array_equal(nu.flip_spectrum([[4, 0, 0, 0]]), [[4, 0, 0, 0]])

    def test_index_permutation(self):
        assert list(nu.flip_spectrum(np.array(["a", "b", "c", "d"]))) == ["a", "d", "c", "b"]

    def test_involution(self, rng):
        X = rng.standard_normal((3, 9)) + 1j * rng.standard_normal((3, 9))
        np.testing.assert_array_equal(nu.flip_spectrum(nu.flip_spectrum(X)), X)

    @pytest.mark.parametrize("K", [4, 7, 16, 140])
    def test_time_reversal(self, rng, K):
        x = rng.standard_normal((4, K))
        got = nu.idft_rows(nu.flip_spectrum(nu.dft_rows(x)))
        expected = np.array([[r[(K - n) % K] for n in range(K)] for r in x])
        assert np.max(np.abs(got - expected)) < 1e-10 * max(1, np.max(np.abs(x)))

    def test_flip_equals_conjugate_for_real(self, rng):
        X = nu.dft_rows(rng.standard_normal((3, 32)))
        assert np.max(np.abs(nu.flip_spectrum(X) - np.conj(X))) < 1e-10


class TestSoftmax:
    def test_examples(self):
        np.testing.assert_allclose(nu.softmax_rows([[0.0, 0.0]]), [[0.5, 0.5]])
        np.testing.assert_allclose(nu.softmax_rows([[1000.0, 1000.0]]), [[0.5, 0.5]])
        np.testing.assert_allclose(nu.softmax_rows([[0.0, math.log(3)]]), [[0.25, 0.75]], rtol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_rows_stochastic_and_shift_invariant(self, x, c):
        s = nu.softmax_rows(x)
        assert np.all(np.abs(s.sum(axis=1) - 1) < 1e-9)
        assert np.all((s >= 0) & (s <= 1))
        np.testing.assert_allclose(nu.softmax_rows(x + c), s, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (2, 6), elements=st.floats(-15, 15)))
    def test_entries_strictly_inside_unit_interval(self, x):
        # logit spread below ~36 keeps every entry away from 0 and 1 in float64
        s = nu.softmax_rows(x)
        assert np.all((s > 0) & (s < 1))


class TestLayerNorm:
    def test_two_points(self):
        np.testing.assert_allclose(nu.layer_norm(np.array([[2.0, 4.0]]), 1.0, 0.0, eps=0.0), [[-1, 1]])

    def test_constant_row_is_zero(self):
        np.testing.assert_array_equal(nu.layer_norm(np.full((1, 5), 3.0), 1.0, 0.0), np.zeros((1, 5)))

    def test_moments(self, rng):
        x = 5 + 3 * rng.standard_normal((1, 64))
        y = nu.layer_norm(x, np.ones(64), np.zeros(64), eps=1e-5)
        assert abs(y.mean()) < 1e-6
        # eps shifts the variance by eps/(var+eps) ~ 1e-6 here
        assert abs(y.var() - 1) < 1e-5 / x.var() + 1e-9


class TestMovingAverage:
    def test_constant(self):
        trend, season = nu.moving_avg_decompose(np.full((2, 10), 7.0), 5)
        np.testing.assert_allclose(trend, 7.0)
        np.testing.assert_array_equal(season, 0.0)

    def test_hand_example(self):
        x = np.array([[0, 3, 0, 3, 0, 3]], dtype=float)
        trend, season = nu.moving_avg_decompose(x, 3)
        np.testing.assert_allclose(trend, [[1, 1, 2, 1, 2, 2]], atol=1e-15)
        np.testing.assert_allclose(season, x - trend)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            nu.moving_avg_decompose(np.zeros((1, 8)), 4)

    def test_reconstruction(self, rng):
        x = rng.standard_normal((8, 140))
        trend, season = nu.moving_avg_decompose(x, 25)
        # one rounding in x - trend and one in the sum: within a couple of ulps
        err = np.abs(trend + season - x)
        assert np.all(err <= 2 * np.spacing(np.maximum(np.abs(x), np.abs(trend))))

    def test_ramp_interior(self):
        x = np.arange(50, dtype=float)[None]
        trend, _ = nu.moving_avg_decompose(x, 7)
        np.testing.assert_allclose(trend[0, 3:-3], x[0, 3:-3], atol=1e-12)

    def test_matrix_form_agrees(self, rng):
        x = rng.standard_normal((3, 30))
        trend, _ = nu.moving_avg_decompose(x, 9)
        np.testing.assert_allclose(x @ nu.moving_avg_matrix(30, 9), trend, atol=1e-13)


class TestFiniteDiff:
    def test_quadratic(self):
        g = nu.finite_diff_grad(lambda w: float(w[0] ** 2), [3.0], h=1e-5)
        assert abs(g[0] - 6.0) < 1e-8

    def test_constant(self):
        np.testing.assert_array_equal(nu.finite_diff_grad(lambda w: 2.5, np.ones(4)), np.zeros(4))

    def test_linear_model_mse(self, rng):
        X = rng.standard_normal((20, 3))
        y = rng.standard_normal(20)
        w0 = rng.standard_normal(3)
        f = lambda w: float(np.mean((X @ w - y) ** 2))  # noqa: E731
        analytic = 2 * X.T @ (X @ w0 - y) / len(y)
        num = nu.finite_diff_grad(f, w0)
        np.testing.assert_allclose(num, analytic, rtol=1e-6)

    def test_non_finite_reports_coordinate(self):
        f = lambda w: float("nan") if w[1] > 0.5 else 0.0  # noqa: E731
        with pytest.raises(NumericalError, match="coordinate 1"):
            nu.finite_diff_grad(f, [0.0, 0.5])


class TestRng:
    def test_substreams_are_stable(self):
        a = nu.Rng(3).substream("w").standard_normal(5)
        r = nu.Rng(3)
        r.substream("other").standard_normal(100)
        np.testing.assert_array_equal(r.substream("w").standard_normal(5), a)
        assert not np.array_equal(nu.Rng(3).substream("v").standard_normal(5), a)

    def test_identical_across_processes(self):
        code = ("from braincast.numerics import Rng;"
                "print(Rng(42).substream('embed.weight').standard_normal(4).tolist())")
        outs = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                               check=True).stdout for _ in range(2)]
        assert outs[0] == outs[1]
        assert outs[0].strip() == str(nu.Rng(42).substream("embed.weight").standard_normal(4).tolist())
