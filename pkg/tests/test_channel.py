import math

import numpy as np
import pytest

from ncspower import ChannelState, FadingChannel, sample_outcome, ser, step_channel
from ncspower.channel import stationary_state


def bench_channel(rate=4):
    return FadingChannel(a_tilde=5.0, tau=0.05, b_w=1.0, rate_total=rate)


class TestFadingChannel:
    def test_correlation_constants(self):
        ch = bench_channel()
        assert abs(ch.a - 0.778801) < 1e-6
        assert abs(ch.innovation_var - 0.393469) < 1e-6

    def test_unit_stationary_variance_exact(self):
        for a_tilde in (0.5, 5.0, 20.0):
            ch = FadingChannel(a_tilde=a_tilde, tau=0.05, b_w=1.0, rate_total=4)
            assert ch.a**2 + ch.innovation_var == 1.0

    def test_positive_correlation_required(self):
        with pytest.raises(ValueError):
            FadingChannel(a_tilde=0.0, tau=0.05, b_w=1.0, rate_total=4)

    def test_kappa(self):
        assert bench_channel(rate=4).kappa == 10.0


class TestStepChannel:
    def test_stationary_power(self):
        ch = bench_channel()
        rng = np.random.default_rng(0)
        n = 1_000_000
        z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) \
            * math.sqrt(ch.innovation_var / 2.0)
        h = np.empty(n, dtype=complex)
        h[0] = 0.0
        for t in range(1, n):
            h[t] = ch.a * h[t - 1] + z[t]
        power = np.mean(np.abs(h[1000:]) ** 2)
        assert abs(power - 1.0) < 0.02

    def test_autocorrelation_decay(self):
        ch = bench_channel()
        rng = np.random.default_rng(1)
        n = 400_000
        h = np.empty(n, dtype=complex)
        state = stationary_state(rng)
        h[0] = state.h
        for t in range(1, n):
            state = step_channel(state, ch, rng)
            h[t] = state.h
        for k in range(1, 6):
            corr = np.mean(h[k:] * np.conj(h[:-k])).real
            assert abs(corr - ch.a**k) < 0.03 * max(ch.a**k, 0.1)

    def test_single_step_law(self):
        ch = bench_channel()
        rng = np.random.default_rng(2)
        start = ChannelState(h=1.0 + 0.0j)
        nxt = np.array([step_channel(start, ch, rng).h for _ in range(200_000)])
        assert abs(nxt.mean() - ch.a) < 0.005
        assert abs(np.var(nxt.real) + np.var(nxt.imag) - ch.innovation_var) < 0.01


class TestSer:
    def test_zero_power_always_fails(self):
        assert ser(0.0, 1.0, bench_channel()) == 1.0

    def test_benchmark_point(self):
        got = ser(160.0, 1.0, bench_channel())
        assert abs(got - math.exp(-0.8)) < 1e-15
        assert abs(got - 0.449329) < 1e-6

    def test_monotone(self):
        ch = bench_channel()
        ps = np.linspace(0.0, 300.0, 40)
        vals = [ser(p, 1.0, ch) for p in ps]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        alphas = np.linspace(0.01, 10.0, 40)
        vals = [ser(50.0, a, ch) for a in alphas]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_negative_power_rejected(self):
        with pytest.raises(ValueError):
            ser(-1.0, 1.0, bench_channel())


class TestSampleOutcome:
    def test_zero_power_never_succeeds(self):
        ch = bench_channel()
        rng = np.random.default_rng(0)
        assert all(sample_outcome(0.0, 1.0, ch, rng) == 0 for _ in range(100))

    def test_huge_power_succeeds(self):
        ch = bench_channel()
        rng = np.random.default_rng(0)
        got = [sample_outcome(1e9, 1.0, ch, rng) for _ in range(1000)]
        assert np.mean(got) > 0.999

    def test_empirical_rate(self):
        ch = bench_channel()
        rng = np.random.default_rng(7)
        p, alpha = 160.0, 1.0
        want = 1.0 - ser(p, alpha, ch)
        got = np.mean([sample_outcome(p, alpha, ch, rng) for _ in range(1_000_000)])
        assert abs(got - want) < 0.005
