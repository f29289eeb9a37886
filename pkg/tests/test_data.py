import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from braincast import data as d
from braincast.errors import DataError
from braincast.numerics import Rng


def _records(n, N=2, length=50):
    g = np.random.default_rng(n)
    return [d.SeriesRecord(f"s{i}", g.standard_normal((N, length))) for i in range(n)]


class TestCSV:
    def test_shape(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("t,v0,v1\n" + "".join(f"{i},{i}.5,{-i}\n" for i in range(5)))
        rec = d.load_series_csv(p)
        assert (rec.variates, rec.length) == (2, 5)
        assert rec.subject_id == "a"
        np.testing.assert_array_equal(rec.values[1], [0, -1, -2, -3, -4])

    def test_nan_names_line(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("t,v0,v1\n0,1,2\n1,NaN,3\n2,1,1\n")
        with pytest.raises(DataError, match="line 3"):
            d.load_series_csv(p)

    @pytest.mark.parametrize("body,line", [("0,1,2\n1,2\n", "line 3"), ("0,1,x\n", "line 2")])
    def test_ragged_and_non_numeric(self, tmp_path, body, line):
        p = tmp_path / "c.csv"
        p.write_text("t,v0,v1\n" + body)
        with pytest.raises(DataError, match=line):
            d.load_series_csv(p)

    def test_empty_and_bad_header(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        with pytest.raises(DataError, match="empty"):
            d.load_series_csv(p)
        p.write_text("time,a\n0,1\n")
        with pytest.raises(DataError, match="header"):
            d.load_series_csv(p)
        p.write_text("t,v0\n")
        with pytest.raises(DataError, match="no data"):
            d.load_series_csv(p)

    def test_round_trip(self, tmp_path, rng):
        vals = rng.standard_normal((3, 40)) * 10.0 ** rng.integers(-8, 8, size=(3, 40))
        p = tmp_path / "r.csv"
        d.write_series_csv(p, vals)
        assert d.load_series_csv(p).values.tobytes() == vals.tobytes()


class TestSplit:
    def test_ten_subjects(self):
        m = d.split_subjects(_records(10), rng=Rng(0))
        assert [len(m.split[k]) for k in ("train", "val", "test")] == [8, 1, 1]

    def test_three_subjects(self):
        m = d.split_subjects(_records(3), rng=Rng(0))
        assert [len(m.split[k]) for k in ("train", "val", "test")] == [1, 1, 1]

    def test_counts_rule(self):
        assert d.split_counts(12, (0.8, 0.1, 0.1)) == (10, 1, 1)
        assert d.split_counts(20, (0.8, 0.1, 0.1)) == (16, 2, 2)
        assert d.split_counts(25, (0.8, 0.1, 0.1)) == (21, 2, 2)

    def test_deterministic_and_seed_sensitive(self):
        a = d.split_subjects(_records(10), rng=Rng(5)).split
        b = d.split_subjects(_records(10), rng=Rng(5)).split
        assert a == b
        assert any(d.split_subjects(_records(10), rng=Rng(s)).split != a for s in range(6, 10))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(3, 40), st.integers(0, 1000))
    def test_disjoint_partition(self, n, seed):
        m = d.split_subjects(_records(n, length=2), rng=Rng(seed))
        ids = m.split["train"] + m.split["val"] + m.split["test"]
        assert sorted(ids) == sorted(f"s{i}" for i in range(n))

    def test_rejections(self):
        with pytest.raises(DataError, match="sum"):
            d.split_subjects(_records(10), fractions=(0.8, 0.1, 0.2))
        with pytest.raises(DataError, match="3 subjects"):
            d.split_subjects(_records(2))

    def test_manifest_rejects_overlap(self):
        with pytest.raises(DataError, match="both"):
            d.DatasetManifest([], {"train": ["a"], "val": ["a"], "test": []}, {"L": 4, "T": 2, "s": 1})

    def test_manifest_round_trip_and_missing_file(self, tmp_path):
        recs = _records(3)
        m = d.split_subjects(recs, rng=Rng(1), window={"L": 8, "T": 2, "s": 4})
        for r in recs:
            d.write_series_csv(tmp_path / f"{r.subject_id}.csv", r.values)
        path = tmp_path / "manifest.json"
        m.save(path)
        loaded = d.DatasetManifest.load(path)
        assert loaded.split == m.split and loaded.window == m.window
        assert set(loaded.load_records()) == {"s0", "s1", "s2"}
        (tmp_path / "s1.csv").unlink()
        with pytest.raises(DataError, match="s1.csv"):
            d.DatasetManifest.load(path)
        assert json.loads(path.read_text())["normalization"] == "lookback_zscore"


class TestWindows:
    def test_fifty_three(self):
        rec = d.SeriesRecord("x", np.zeros((1, 1200)))
        ws = d.make_windows(rec, 140, 20, 20)
        assert len(ws) == 53
        assert [w.offset for w in ws] == list(range(0, 1200 - 160 + 1, 20))

    def test_small_examples(self):
        assert [w.offset for w in d.make_windows(d.SeriesRecord("x", np.zeros((1, 160))), 140, 20, 20)] == [0]
        assert [w.offset for w in d.make_windows(d.SeriesRecord("x", np.zeros((1, 200))), 140, 20, 20)] == [0, 20, 40]

    def test_too_short_warns(self):
        with pytest.warns(UserWarning, match="no windows"):
            assert d.make_windows(d.SeriesRecord("x", np.zeros((1, 10))), 8, 4, 1) == []

    def test_count_formula_exhaustive(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for length in range(2, 501, 7):
                for L, T, s in [(1, 1, 1), (5, 3, 2), (17, 4, 5), (64, 16, 9), (140, 20, 20)]:
                    got = len(d.window_offsets(length, L, T, s))
                    enum = len([o for o in range(length) if o % s == 0 and o + L + T <= length])
                    assert got == enum
                    if length >= L + T:
                        assert got == (length - L - T) // s + 1

    def test_window_content(self, rng):
        vals = rng.standard_normal((2, 30))
        w = d.make_windows(d.SeriesRecord("x", vals), 10, 5, 7)[2]
        np.testing.assert_array_equal(w.lookback, vals[:, 14:24])
        np.testing.assert_array_equal(w.horizon, vals[:, 24:29])
        assert w.source == "x@14"


class TestNormalize:
    def _window(self, rng, scale=3.0, shift=2.0):
        return d.WindowSample(rng.standard_normal((3, 20)) * scale + shift,
                              rng.standard_normal((3, 5)) * scale + shift, np.zeros(3), np.ones(3))

    def test_moments(self, rng):
        n = d.normalize_window(self._window(rng))
        assert np.all(np.abs(n.lookback.mean(axis=1)) < 1e-9)
        assert np.all(np.abs(n.lookback.std(axis=1) - 1) < 1e-6)

    def test_uses_lookback_stats_only(self, rng):
        w = self._window(rng)
        n = d.normalize_window(w)
        mu, sd = w.lookback.mean(axis=1), w.lookback.std(axis=1)
        np.testing.assert_allclose(n.horizon, (w.horizon - mu[:, None]) / sd[:, None], rtol=1e-12)

    def test_constant_variate(self):
        w = d.WindowSample(np.full((1, 8), 4.0), np.full((1, 2), 4.0), np.zeros(1), np.ones(1))
        n = d.normalize_window(w)
        assert not np.any(n.lookback) and not np.any(n.horizon)
        assert n.norm_std[0] == d.STD_FLOOR

    def test_inverse(self, rng):
        w = self._window(rng)
        n = d.normalize_window(w)
        np.testing.assert_allclose(d.denormalize_forecast(n.horizon, n), w.horizon, rtol=1e-9)
        np.testing.assert_allclose(d.denormalize_forecast(np.zeros((3, 5)), n),
                                   np.tile(w.lookback.mean(axis=1)[:, None], (1, 5)), rtol=1e-12)

    def test_idempotent(self, rng):
        n = d.normalize_window(self._window(rng))
        nn = d.normalize_window(n)
        np.testing.assert_allclose(nn.lookback, n.lookback, atol=1e-9)
        np.testing.assert_allclose(d.denormalize_forecast(nn.horizon, nn),
                                   d.denormalize_forecast(n.horizon, n), rtol=1e-9)

    def test_denormalize_formula(self, rng):
        w = d.WindowSample(np.zeros((2, 4)), np.zeros((2, 3)), np.full(2, 2.0), np.full(2, 3.0))
        pred = rng.standard_normal((2, 3))
        np.testing.assert_allclose(d.denormalize_forecast(pred, w), 3 * pred + 2)
        with pytest.raises(DataError):
            d.denormalize_forecast(np.zeros((3, 3)), w)

    def test_build_split_shapes(self):
        recs = {r.subject_id: r for r in _records(4, N=3, length=60)}
        m = d.DatasetManifest([], {"train": ["s0", "s1"], "val": ["s2"], "test": ["s3"]},
                              {"L": 20, "T": 5, "s": 10})
        tr = d.build_split(m, recs, "train")
        assert tr.X.shape == (8, 3, 20) and tr.Y.shape == (8, 3, 5)
        assert tr.sources[0] == "s0@0" and tr.sources[-1] == "s1@30"


class TestSynthetic:
    def test_deterministic(self):
        a = d.generate_synthetic(3, 4, 100, 2, 0.8, 0.3, Rng(7))
        b = d.generate_synthetic(3, 4, 100, 2, 0.8, 0.3, Rng(7))
        for x, y in zip(a, b):
            assert x.subject_id == y.subject_id and x.values.tobytes() == y.values.tobytes()
        assert [r.subject_id for r in a] == ["sub-000", "sub-001", "sub-002"]

    def test_rank_one(self):
        (rec,) = d.generate_synthetic(1, 5, 500, 1, 0.8, 0.0, Rng(3))
        C = np.corrcoef(rec.values)
        assert np.all(np.abs(np.abs(C) - 1) < 1e-9)

    def test_noise_autocorrelation(self):
        g = Rng(0).substream("t")
        e = d.ar1_noise(g, (4096,), 0.8, 0.3)
        ec = e - e.mean()
        assert abs((ec[1:] @ ec[:-1]) / (ec @ ec) - 0.8) < 0.05

    def test_generated_residual_autocorrelation(self):
        clean = d.generate_synthetic(1, 2, 4096, 2, 0.8, 0.0, Rng(9))[0].values
        noisy = d.generate_synthetic(1, 2, 4096, 2, 0.8, 0.3, Rng(9))[0].values
        r = (noisy - clean)[0]
        r = r - r.mean()
        assert abs((r[1:] @ r[:-1]) / (r @ r) - 0.8) < 0.05

    def test_distinct_frequencies_shared_population(self):
        a, b = d.generate_synthetic(2, 3, 256, 3, 0.0, 0.0, Rng(1))
        assert not np.allclose(a.values, b.values)
        # same mixing and offsets: the variate means over whole periods agree closely
        assert np.allclose(a.values.mean(axis=1), b.values.mean(axis=1), atol=0.5)

    def test_rejects_too_many_latents(self):
        with pytest.raises(DataError):
            d.generate_synthetic(1, 2, 10, 3, 0.0, 0.0, Rng(0))
