import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrofriction.errors import (DegenerateFeature, InsufficientData, InvalidArgument,
                                  OrderingError, RateError)
from hydrofriction.signals import (SAMPLE_DT, StandardizationStats, StreamingPreprocessor,
                                   TimeSeries, apply_standardization, differentiate,
                                   fit_standardization, moving_average, preprocess)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def _series(x, p1=None, p2=None, dt=SAMPLE_DT):
    n = len(x)
    t = np.arange(n) * dt
    p1 = np.full(n, 2e6) if p1 is None else p1
    p2 = np.full(n, 1e6) if p2 is None else p2
    return TimeSeries(t, x, p1, p2)


def _trailing_mean_loop(x, w):
    out = []
    for k in range(len(x)):
        lo = max(0, k - w + 1)
        out.append(sum(x[lo:k + 1]) / (k + 1 - lo))
    return np.array(out)


class TestMovingAverage:
    def test_constant(self):
        assert moving_average([5, 5, 5, 5], 3).tolist() == [5, 5, 5, 5]

    def test_window_one_is_identity(self):
        x = np.random.default_rng(1).normal(size=17)
        assert np.array_equal(moving_average(x, 1), x)

    def test_hand_values(self):
        assert moving_average([1, 2, 3, 4], 2).tolist() == [1, 1.5, 2.5, 3.5]

    def test_zero_window(self):
        with pytest.raises(InvalidArgument):
            moving_average([1.0, 2.0], 0)

    @given(st.lists(finite, min_size=1, max_size=60), st.integers(1, 12))
    def test_matches_loop(self, xs, w):
        np.testing.assert_allclose(moving_average(xs, w), _trailing_mean_loop(xs, w),
                                   rtol=1e-12, atol=1e-6)

    @given(st.lists(finite, min_size=2, max_size=60), st.integers(1, 12), st.data())
    def test_causal_prefix(self, xs, w, data):
        k = data.draw(st.integers(1, len(xs)))
        assert np.array_equal(moving_average(xs, w)[:k], moving_average(xs[:k], w))

    @given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(1, 50), st.integers(1, 15))
    def test_constant_exact(self, c, n, w):
        assert np.all(moving_average([c] * n, w) == c)


class TestDifferentiate:
    def test_ramp(self):
        dt = 0.005
        x = 0.01 * np.arange(50) * dt
        np.testing.assert_allclose(differentiate(x, dt), 0.01, rtol=1e-9)

    def test_constant(self):
        assert np.all(differentiate(np.full(8, 3.0), 0.005) == 0)

    def test_hand_values(self):
        np.testing.assert_allclose(differentiate([0, 0.005, 0.020], 0.005), [1.0, 1.0, 3.0])

    def test_bad_dt(self):
        with pytest.raises(InvalidArgument):
            differentiate([0.0, 1.0], 0.0)


class TestPreprocess:
    def test_constant_velocity(self):
        v0 = 0.05
        x = 0.01 + v0 * np.arange(200) * SAMPLE_DT
        fr = preprocess(_series(x))
        assert len(fr) == 200
        np.testing.assert_allclose(fr.v[10:], v0, rtol=0, atol=1e-9)
        np.testing.assert_allclose(fr.a[40:], 0, atol=1e-9)

    def test_too_short(self):
        with pytest.raises(InsufficientData):
            preprocess(_series(np.zeros(30)))
        preprocess(_series(np.zeros(31)))

    def test_nonuniform_rejected(self):
        s = _series(np.zeros(50))
        s.t[20] += 1e-4
        with pytest.raises(RateError):
            preprocess(s)

    def test_sinusoid_frequency_response(self):
        # steady-state sinusoid through linear filters: out = Im(A H(w) e^{iwt})
        A, w, dt = 0.05, 2 * np.pi * 0.7, SAMPLE_DT
        n = 600
        k = np.arange(n)
        fr = preprocess(_series(A * np.sin(w * k * dt)))
        zk = np.exp(-1j * w * dt)

        def ma(window):
            return sum(zk ** j for j in range(window)) / window

        diff = (1 - zk) / dt
        a_pred = np.imag(A * ma(10) * diff ** 2 * ma(30) * np.exp(1j * w * k * dt))
        tail = slice(45, None)
        np.testing.assert_allclose(fr.a[tail], a_pred[tail], atol=1e-9 * A * w ** 2)
        # lag error against the analytic acceleration is bounded by |H - (iw)^2| A
        err = np.max(np.abs(fr.a[tail] + A * w ** 2 * np.sin(w * k[tail] * dt)))
        bound = A * abs(ma(10) * diff ** 2 * ma(30) - (1j * w) ** 2)
        assert err <= bound * (1 + 1e-6)
        assert bound < 0.5 * A * w ** 2

    def test_deterministic(self):
        x = np.random.default_rng(3).normal(size=100)
        a, b = preprocess(_series(x)), preprocess(_series(x.copy()))
        for name in ("x_p", "v", "a", "p1", "p2"):
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(31, 120), st.integers(0, 2 ** 32 - 1), st.data())
    def test_causal(self, n, seed, data):
        x = np.random.default_rng(seed).normal(size=n)
        k = data.draw(st.integers(31, n))
        full, part = preprocess(_series(x)), preprocess(_series(x[:k]))
        # sample 0 velocity is back-filled from sample 1; compare from there
        assert np.array_equal(full.v[:k], part.v)
        assert np.array_equal(full.a[:k], part.a)


class TestStreaming:
    def test_matches_batch_exactly(self):
        rng = np.random.default_rng(7)
        n = 300
        s = _series(np.cumsum(rng.normal(size=n)) * 1e-3, rng.normal(5e6, 1e5, n),
                    rng.normal(3e6, 1e5, n))
        fr = preprocess(s)
        sp = StreamingPreprocessor(SAMPLE_DT)
        outs = [sp.push(*row) for row in zip(s.t, s.x_p, s.p1, s.p2)]
        assert outs[0] is None
        got = np.array(outs[1:])
        for j, name in enumerate(("x_p", "v", "a", "p1", "p2")):
            assert np.array_equal(got[:, j], getattr(fr, name)[1:]), name

    def test_ordering_and_rate(self):
        sp = StreamingPreprocessor(SAMPLE_DT)
        sp.push(0.0, 0, 0, 0)
        with pytest.raises(OrderingError):
            sp.push(0.0, 0, 0, 0)
        with pytest.raises(RateError):
            sp.push(0.0052, 0, 0, 0)
        sp.push(0.00504, 0, 0, 0)  # within 1 %


class TestStandardization:
    def test_hand_values(self):
        st_ = fit_standardization(np.array([[1.0], [3.0]]))
        assert st_.mean.tolist() == [2.0] and st_.std.tolist() == [1.0]
        assert apply_standardization(np.array([[1.0], [3.0]]), st_).ravel().tolist() == [-1, 1]

    def test_degenerate(self):
        with pytest.raises(DegenerateFeature) as exc:
            fit_standardization(np.array([[1.0, 2.0], [1.0, 3.0]]), ["p1", "p2"])
        assert exc.value.column == "p1"

    @settings(max_examples=30)
    @given(st.integers(2, 40), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
    def test_unit_moments(self, n, m, seed):
        X = np.random.default_rng(seed).normal(3.0, 7.0, (n, m))
        Z = apply_standardization(X, fit_standardization(X))
        assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(Z.std(axis=0) - 1) < 1e-9)
        again = apply_standardization(Z, fit_standardization(Z))
        np.testing.assert_allclose(again, Z, atol=1e-9)

    def test_roundtrip_dict(self):
        s = StandardizationStats(np.array([0.1, 2.0]), np.array([3.0, 0.7]))
        r = StandardizationStats.from_dict(s.to_dict())
        assert r.mean.tobytes() == s.mean.tobytes() and r.std.tobytes() == s.std.tobytes()
