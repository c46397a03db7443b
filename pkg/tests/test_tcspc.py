import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qjthermo import DegenerateModelError, DomainError, HistogramParseError
from qjthermo.tcspc import (
    TcspcHistogram,
    cumulative_emission,
    estimate_swap,
    fit_decay,
    fit_lifetime,
    parse_histogram,
    read_histogram,
    synth_histogram,
    write_histogram,
)

from conftest import EXP_M02, FIRST_BIN_1NS, TRUNC_MASS_2P5

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def reference_run():
    return synth_histogram(tau_ns=5.0, rep_rate_mhz=80.0, n_cycles=1_000_000, seed=7)


class TestSynth:
    def test_zero_efficiency(self):
        h = synth_histogram(detection_efficiency=0.0, n_cycles=10_000, seed=1)
        assert sum(h.counts) == 0 and h.n_bins == 125

    def test_first_nanosecond_fraction(self):
        # 0.5 ns bins tile the 12.5 ns period exactly; the first two make up the first ns
        h = synth_histogram(n_cycles=1_000_000, bin_width_ns=0.5, seed=3)
        n = sum(h.counts)
        frac = (h.counts[0] + h.counts[1]) / n
        sigma = math.sqrt(FIRST_BIN_1NS * (1 - FIRST_BIN_1NS) / n)
        assert abs(frac - FIRST_BIN_1NS) < 3 * sigma

    @pytest.mark.parametrize("eff", [1.0, 0.4])
    def test_total_counts(self, eff):
        n = 1_000_000
        h = synth_histogram(n_cycles=n, detection_efficiency=eff, seed=4)
        p = TRUNC_MASS_2P5 * eff
        assert abs(sum(h.counts) - n * p) < 3 * math.sqrt(n * p * (1 - p))

    def test_deterministic_per_seed_and_workers(self):
        a = synth_histogram(n_cycles=50_000, seed=9, workers=3)
        b = synth_histogram(n_cycles=50_000, seed=9, workers=3)
        c = synth_histogram(n_cycles=50_000, seed=10, workers=3)
        assert a == b and a != c

    def test_golden_reproduced(self):
        h = synth_histogram(tau_ns=5.0, rep_rate_mhz=80.0, n_cycles=1_000_000, seed=20161016)
        assert write_histogram(h) == (GOLDEN / "synthetic_tau5.tcspc").read_text()

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.5, 20), st.floats(0, 1), st.floats(0, 1e6), st.integers(0, 2**32))
    def test_count_conservation(self, tau, eff, dark, seed):
        h = synth_histogram(tau_ns=tau, rep_rate_mhz=20.0, n_cycles=20_000, detection_efficiency=eff, dark_rate_hz=dark, seed=seed)
        assert sum(h.counts) <= h.n_cycles

    def test_bin_wider_than_period(self):
        with pytest.raises(DomainError):
            synth_histogram(bin_width_ns=20.0)

    def test_short_period_warns(self):
        with pytest.warns(UserWarning):
            synth_histogram(tau_ns=10.0, n_cycles=10, seed=0)


class TestFormat:
    def test_minimal(self):
        h = read_histogram(GOLDEN / "minimal.tcspc")
        assert h.counts == (7, 3) and h.bin_width_ns == 0.5 and h.n_cycles == 100
        assert h.dark_rate_hz is None

    def test_roundtrip(self, reference_run):
        assert parse_histogram(write_histogram(reference_run)) == reference_run

    @settings(max_examples=50)
    @given(st.lists(st.integers(0, 1000), min_size=1, max_size=50), st.floats(0.01, 0.25), st.none() | st.floats(0, 1e4))
    def test_roundtrip_property(self, counts, bw, dark):
        h = TcspcHistogram(bw, tuple(counts), 80.0, sum(counts) + 5, dark)
        text = write_histogram(h)
        assert parse_histogram(text) == h
        assert write_histogram(parse_histogram(text)) == text

    def test_overrun_rejected(self):
        with pytest.raises(HistogramParseError) as exc:
            read_histogram(GOLDEN / "overrun.tcspc")
        assert exc.value.lineno == 6 and "overruns" in str(exc.value)

    def test_truncated_rejected(self):
        with pytest.raises(HistogramParseError):
            read_histogram(GOLDEN / "truncated.tcspc")

    @pytest.mark.parametrize(
        "text,line",
        [
            ("#bin_width_ns=0.1\n#rep_rate_mhz=80\n0,5\n", 3),
            ("#bin_width_ns=0.1\n#rep_rate_mhz=80\n#n_cycles=10\n0,-1\n", 4),
            ("#bin_width_ns=0.1\n#rep_rate_mhz=80\n#n_cycles=10\n1,1\n", 4),
            ("#bin_width_ns=abc\n", 1),
            ("#colour=blue\n", 1),
            ("#bin_width_ns=0.1\n#rep_rate_mhz=80\n#n_cycles=10\n0,1\n#n_cycles=3\n", 5),
            ("#bin_width_ns=0.1\n#rep_rate_mhz=80\n#n_cycles=10\n0;1\n", 4),
        ],
    )
    def test_malformed_with_line_numbers(self, text, line):
        with pytest.raises(HistogramParseError) as exc:
            parse_histogram(text)
        assert exc.value.lineno == line

    def test_counts_exceeding_cycles(self):
        with pytest.raises(HistogramParseError):
            parse_histogram("#bin_width_ns=0.1\n#rep_rate_mhz=80\n#n_cycles=1\n0,5\n")


class TestFit:
    def test_noiseless_exact(self):
        t = np.arange(125) * 0.1
        fit = fit_decay(t, 1000 * np.exp(-t / 5.0))
        assert fit.tau_ns == pytest.approx(5.0, rel=1e-6)
        assert fit.amplitude == pytest.approx(1000, rel=1e-6)
        assert abs(fit.background) < 1e-6

    def test_synthetic_lifetime(self, reference_run):
        fit = fit_lifetime(reference_run)
        assert abs(fit.tau_ns - 5.0) < 0.02 * 5.0
        assert 0 < fit.stderr_tau_ns < 0.1

    def test_dark_background(self):
        h = synth_histogram(n_cycles=1_000_000, dark_rate_hz=2e5, seed=12)
        fit = fit_lifetime(h)
        injected = h.dark_counts_per_bin
        assert abs(fit.background - injected) < 3 * fit.stderr_background

    def test_flat_rejected(self):
        with pytest.raises(DegenerateModelError):
            fit_decay(np.arange(20.0), np.full(20, 10.0))

    def test_too_few_bins(self):
        h = TcspcHistogram(0.1, (5, 3, 1, 0, 0, 0, 0), 80.0, 100)
        with pytest.raises(DegenerateModelError):
            fit_lifetime(h)

    def test_window(self, reference_run):
        fit = fit_lifetime(reference_run, fit_window=(10, 100))
        assert fit.window == (10, 100) and abs(fit.tau_ns - 5) < 0.2


class TestCumulative:
    def test_zero(self):
        h = TcspcHistogram(0.1, (0,) * 10, 80.0, 100)
        assert np.all(cumulative_emission(h) == 0)

    def test_exponential_cdf(self, reference_run):
        c = cumulative_emission(reference_run)
        t = (np.arange(reference_run.n_bins) + 1) * reference_run.bin_width_ns
        want = -np.expm1(-t / 5.0)
        sigma = np.sqrt(want * (1 - want) / reference_run.n_cycles)
        assert np.all(np.abs(c - want) < 3.5 * sigma + 1e-12)
        assert np.all(np.diff(c) >= 0)

    def test_efficiency_scaling(self, reference_run):
        raw = np.cumsum(reference_run.counts) / reference_run.n_cycles
        assert np.allclose(cumulative_emission(reference_run, 0.5), np.clip(2 * raw, 0, 1))

    def test_dark_subtraction_monotone(self):
        h = synth_histogram(n_cycles=20_000, dark_rate_hz=5e5, seed=2)
        c = cumulative_emission(h)
        assert np.all(np.diff(c) >= 0) and c.min() >= 0 and c.max() <= 1

    def test_zero_cycles(self):
        with pytest.raises(DomainError):
            cumulative_emission(TcspcHistogram(0.1, (0, 0), 80.0, 0))


class TestEstimateSwap:
    def test_exact_series(self):
        n = np.arange(1, 41)
        est = estimate_swap(-np.expm1(-0.2 * n), dt_ns=1.0)
        assert est.beta_occ_hat == pytest.approx(1.0, abs=1e-9)
        assert est.s_hat == pytest.approx(EXP_M02, rel=1e-9)
        per = est.per_bin_array()
        finite = per[np.isfinite(per)]
        assert finite.size > 20 and np.allclose(finite, EXP_M02, rtol=1e-9)

    def test_partial_occupation(self):
        n = np.arange(1, 60)
        est = estimate_swap(0.37 * (1 - 0.9**n), dt_ns=0.5)
        assert est.beta_occ_hat == pytest.approx(0.37, rel=1e-8)
        assert est.s_hat == pytest.approx(0.9, rel=1e-8)
        assert est.tau_ns == pytest.approx(-0.5 / math.log(0.9), rel=1e-8)

    def test_degenerate(self):
        with pytest.raises(DegenerateModelError):
            estimate_swap(np.zeros(30), 1.0)

    def test_saturation_marks_absent(self):
        est = estimate_swap(-np.expm1(-0.9 * np.arange(1, 40)), 1.0)
        per = est.per_bin_array()
        first_nan = np.argmax(~np.isfinite(per))
        assert first_nan > 0 and np.all(~np.isfinite(per[first_nan:]))

    def test_isotonic_warning(self):
        c = -np.expm1(-0.1 * np.arange(1, 30))
        c[10] -= 0.05
        with pytest.warns(UserWarning, match="isotonic"):
            estimate_swap(c, 1.0)

    def test_noisy_synthetic(self, reference_run):
        est = estimate_swap(cumulative_emission(reference_run), reference_run.bin_width_ns)
        target = math.exp(-reference_run.bin_width_ns / 5.0)
        assert abs(est.s_hat - target) < 0.01 * target
        assert est.stability(100) < 0.05

    def test_closure_with_lifetime_fit(self, reference_run):
        fit = fit_lifetime(reference_run)
        est = estimate_swap(cumulative_emission(reference_run), reference_run.bin_width_ns)
        implied = math.exp(-reference_run.bin_width_ns / fit.tau_ns)
        d_implied = implied * reference_run.bin_width_ns * fit.stderr_tau_ns / fit.tau_ns**2
        assert abs(est.s_hat - implied) < 3 * math.hypot(d_implied, est.stderr_s)
