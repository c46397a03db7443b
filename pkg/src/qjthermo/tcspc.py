"""Time-correlated single photon counting histograms.

Synthesis, a small text format, exponential lifetime fitting and estimation
of the per-bin survival probability from the cumulative emission curve.

Histogram text format (UTF-8)::

    #bin_width_ns=0.1
    #rep_rate_mhz=80.0
    #n_cycles=1000000
    #dark_rate_hz=0.0          (optional)
    0,19761
    1,19395
    ...

Header lines come first, one ``#key=value`` each. Data lines are
``bin_index,counts`` with indices contiguous from 0 and the file ends with a
newline (a missing final newline is reported as truncation). Floats are
written with ``repr`` so that parse(write(h)) == h exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression, least_squares

from ._parallel import run_chunks
from .errors import DegenerateModelError, DomainError, FitError, HistogramParseError

_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class TcspcHistogram:
    bin_width_ns: float
    counts: tuple
    rep_rate_mhz: float
    n_cycles: int
    dark_rate_hz: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if not self.bin_width_ns > 0:
            raise DomainError("bin width must be positive")
        if not self.rep_rate_mhz > 0:
            raise DomainError("repetition rate must be positive")
        if self.n_cycles < 0:
            raise DomainError("n_cycles must be non-negative")
        if self.dark_rate_hz is not None and self.dark_rate_hz < 0:
            raise DomainError("dark rate must be non-negative")
        if any(c < 0 for c in self.counts):
            raise DomainError("counts must be non-negative")
        if self.bin_width_ns * len(self.counts) > self.period_ns * (1 + _EDGE_TOL):
            raise DomainError(
                f"{len(self.counts)} bins of {self.bin_width_ns} ns overrun the "
                f"{self.period_ns} ns repetition period"
            )
        if sum(self.counts) > self.n_cycles:
            raise DomainError("more counts than excitation cycles")

    @property
    def period_ns(self) -> float:
        return 1000.0 / self.rep_rate_mhz

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def bin_starts(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_width_ns

    @property
    def bin_centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) * self.bin_width_ns

    @property
    def dark_counts_per_bin(self) -> float:
        """Expected dark counts per bin over all cycles."""
        rate = self.dark_rate_hz or 0.0
        return rate * self.bin_width_ns * 1e-9 * self.n_cycles

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)


def bins_per_period(period_ns, bin_width_ns):
    return int(math.floor(period_ns / bin_width_ns + _EDGE_TOL))


def synth_histogram(
    tau_ns=5.0,
    rep_rate_mhz=80.0,
    n_cycles=1_000_000,
    excitation_prob=1.0,
    detection_efficiency=1.0,
    dark_rate_hz=0.0,
    bin_width_ns=0.1,
    seed=0,
    workers=1,
) -> TcspcHistogram:
    """Simulated arrival-time histogram, at most one photon per excitation cycle.

    Each cycle yields a detected photon with probability
    excitation_prob * detection_efficiency * (1 - exp(-period/tau)); its
    arrival time follows Exp(tau) truncated to the period. Dark counts are
    Poisson per bin.
    """
    if not tau_ns > 0:
        raise DomainError("lifetime must be positive")
    for name, p in (("excitation_prob", excitation_prob), ("detection_efficiency", detection_efficiency)):
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"{name}={p} outside [0, 1]")
    if not rep_rate_mhz > 0:
        raise DomainError("repetition rate must be positive")
    if n_cycles < 0 or dark_rate_hz < 0:
        raise DomainError("n_cycles and dark rate must be non-negative")
    period = 1000.0 / rep_rate_mhz
    if not 0 < bin_width_ns < period:
        raise DomainError(f"bin width {bin_width_ns} ns must lie in (0, period={period} ns)")
    if period < 2 * tau_ns:
        warnings.warn(
            f"period {period:.4g} ns is shorter than 2 lifetimes; a large part of the decay is cut",
            stacklevel=2,
        )
    n_bins = bins_per_period(period, bin_width_ns)
    trunc_mass = -math.expm1(-period / tau_ns)
    p_detect = excitation_prob * detection_efficiency * trunc_mass
    dark_per_cycle_bin = dark_rate_hz * bin_width_ns * 1e-9

    def chunk(rng, n):
        k = rng.binomial(n, p_detect)
        u = rng.random(k)
        t = -tau_ns * np.log1p(-u * trunc_mass)
        idx = np.floor(t / bin_width_ns).astype(np.int64)
        idx = idx[idx < n_bins]
        hist = np.bincount(idx, minlength=n_bins)
        if dark_per_cycle_bin > 0:
            hist = hist + rng.poisson(dark_per_cycle_bin * n, n_bins)
        return hist

    counts = np.sum(run_chunks(chunk, int(n_cycles), seed, workers), axis=0)
    return TcspcHistogram(
        float(bin_width_ns),
        tuple(int(c) for c in counts),
        float(rep_rate_mhz),
        int(n_cycles),
        float(dark_rate_hz),
    )


_HEADER_KEYS = ("bin_width_ns", "rep_rate_mhz", "n_cycles", "dark_rate_hz")
_REQUIRED = ("bin_width_ns", "rep_rate_mhz", "n_cycles")


def write_histogram(hist: TcspcHistogram) -> str:
    lines = [
        f"#bin_width_ns={hist.bin_width_ns!r}",
        f"#rep_rate_mhz={hist.rep_rate_mhz!r}",
        f"#n_cycles={hist.n_cycles}",
    ]
    if hist.dark_rate_hz is not None:
        lines.append(f"#dark_rate_hz={hist.dark_rate_hz!r}")
    lines.extend(f"{i},{c}" for i, c in enumerate(hist.counts))
    return "\n".join(lines) + "\n"


def _parse_float(value, key, lineno):
    try:
        x = float(value)
    except ValueError:
        raise HistogramParseError(f"{key}: not a number: {value!r}", lineno) from None
    if not math.isfinite(x):
        raise HistogramParseError(f"{key}: not finite", lineno)
    return x


def _parse_int(value, what, lineno):
    try:
        return int(value)
    except ValueError:
        raise HistogramParseError(f"{what}: not an integer: {value!r}", lineno) from None


def parse_histogram(text: str) -> TcspcHistogram:
    header = {}
    counts = []
    seen_data = False
    last_line = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        last_line = lineno
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if seen_data:
                raise HistogramParseError("header line after bin data", lineno)
            key, sep, value = line[1:].partition("=")
            key = key.strip()
            if not sep:
                raise HistogramParseError(f"header {line!r} lacks '='", lineno)
            if key not in _HEADER_KEYS:
                raise HistogramParseError(f"unknown header key {key!r}", lineno)
            if key in header:
                raise HistogramParseError(f"duplicate header key {key!r}", lineno)
            if key == "n_cycles":
                header[key] = _parse_int(value.strip(), key, lineno)
            else:
                header[key] = _parse_float(value.strip(), key, lineno)
            continue
        if not seen_data:
            missing = [k for k in _REQUIRED if k not in header]
            if missing:
                raise HistogramParseError(f"missing header keys {missing}", lineno)
            period = 1000.0 / header["rep_rate_mhz"] if header["rep_rate_mhz"] > 0 else 0.0
            if header["bin_width_ns"] <= 0 or period <= 0:
                raise HistogramParseError("bin width and repetition rate must be positive", lineno)
            max_bins = bins_per_period(period, header["bin_width_ns"])
        seen_data = True
        parts = line.split(",")
        if len(parts) != 2:
            raise HistogramParseError(f"expected 'bin_index,counts', got {line!r}", lineno)
        idx = _parse_int(parts[0].strip(), "bin index", lineno)
        c = _parse_int(parts[1].strip(), "counts", lineno)
        if idx != len(counts):
            raise HistogramParseError(f"bin index {idx}, expected {len(counts)}", lineno)
        if c < 0:
            raise HistogramParseError(f"negative counts {c}", lineno)
        if idx >= max_bins:
            raise HistogramParseError(
                f"bin {idx} overruns the {period} ns repetition period "
                f"({max_bins} bins of {header['bin_width_ns']} ns)",
                lineno,
            )
        counts.append(c)
    if not seen_data:
        missing = [k for k in _REQUIRED if k not in header]
        if missing:
            raise HistogramParseError(f"missing header keys {missing}", last_line or None)
        raise HistogramParseError("no bin data", last_line or None)
    if not text.endswith("\n"):
        raise HistogramParseError("file truncated (no final newline)", last_line)
    try:
        return TcspcHistogram(
            header["bin_width_ns"],
            tuple(counts),
            header["rep_rate_mhz"],
            header["n_cycles"],
            header.get("dark_rate_hz"),
        )
    except DomainError as exc:
        raise HistogramParseError(str(exc), last_line) from None


def read_histogram(path) -> TcspcHistogram:
    with open(path, encoding="utf-8") as fh:
        return parse_histogram(fh.read())


@dataclass(frozen=True)
class DecayFit:
    """Single-exponential fit ``A exp(-t/tau) + B`` (counts per bin, t from the window start).

    ``residual_norm`` is sqrt(chi^2 / dof) of the Poisson-weighted residuals.
    """

    tau_ns: float
    amplitude: float
    background: float
    residual_norm: float
    stderr_tau_ns: float
    stderr_amplitude: float = math.nan
    stderr_background: float = math.nan
    window: tuple = (0, 0)

    def model(self, t) -> np.ndarray:
        return self.amplitude * np.exp(-np.asarray(t) / self.tau_ns) + self.background

    def as_dict(self):
        return {
            "tau_ns": self.tau_ns,
            "stderr_tau_ns": self.stderr_tau_ns,
            "amplitude": self.amplitude,
            "stderr_amplitude": self.stderr_amplitude,
            "background": self.background,
            "stderr_background": self.stderr_background,
            "residual_norm": self.residual_norm,
            "window": list(self.window),
        }


def _initial_guess(t, y):
    """Log-linear regression on background-subtracted counts."""
    background = max(0.0, float(np.min(y)))
    excess = y - background
    ok = excess > 0
    if np.count_nonzero(ok) < 3:
        background = 0.0
        excess = y
        ok = excess > 0
    slope, intercept = np.polyfit(t[ok], np.log(excess[ok]), 1, w=np.sqrt(excess[ok]))
    if not slope < 0:
        raise DegenerateModelError("counts do not decay; no lifetime can be fitted")
    return math.exp(intercept), -1.0 / slope, background


def fit_decay(t, y, max_nfev=200) -> DecayFit:
    """Poisson-weighted least-squares fit of ``y ~ A exp(-t/tau) + B``.

    ``y`` may be non-integer (e.g. noiseless model curves). Uncertainties come
    from the inverse curvature (J^T J)^-1 at the optimum.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.count_nonzero(y > 0) < 5:
        raise DegenerateModelError("need at least 5 non-zero bins to fit a lifetime")
    if np.ptp(y) == 0:
        raise DegenerateModelError("flat data")
    a0, tau0, b0 = _initial_guess(t, y)
    sigma = np.sqrt(np.maximum(y, 1.0))
    scale = max(float(np.max(y)), 1.0)

    def resid(p):
        a, tau, b = p
        return (a * np.exp(-t / tau) + b - y) / sigma

    span = float(t[-1] - t[0]) or 1.0
    res = least_squares(
        resid,
        x0=[a0, tau0, b0],
        bounds=([0.0, 1e-9 * span, -np.inf], [np.inf, np.inf, np.inf]),
        x_scale=[scale, span, scale],
        xtol=1e-14,
        ftol=1e-14,
        gtol=1e-14,
        max_nfev=max_nfev,
        method="trf",
    )
    a, tau, b = (float(v) for v in res.x)
    best = {"tau_ns": tau, "amplitude": a, "background": b}
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitError(f"lifetime fit did not converge: {res.message}", best=best)
    jac = res.jac
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jac.T @ jac)
    err = np.sqrt(np.abs(np.diag(cov)))
    dof = max(len(y) - 3, 1)
    chi2 = float(np.sum(res.fun**2))
    return DecayFit(tau, a, b, math.sqrt(chi2 / dof), float(err[1]), float(err[0]), float(err[2]))


def fit_lifetime(hist: TcspcHistogram, fit_window=None) -> DecayFit:
    """Fit the decay in bins ``fit_window = (start, stop)``; default is peak to end."""
    y = hist.as_array().astype(float)
    if fit_window is None:
        if y.size == 0 or y.max() <= 0:
            raise DegenerateModelError("histogram has no counts")
        fit_window = (int(np.argmax(y)), hist.n_bins)
    start, stop = fit_window
    if not 0 <= start < stop <= hist.n_bins:
        raise DomainError(f"fit window {fit_window} outside 0..{hist.n_bins}")
    t = hist.bin_centers[start:stop] - hist.bin_centers[start]
    fit = fit_decay(t, y[start:stop])
    return DecayFit(
        fit.tau_ns,
        fit.amplitude,
        fit.background,
        fit.residual_norm,
        fit.stderr_tau_ns,
        fit.stderr_amplitude,
        fit.stderr_background,
        (start, stop),
    )


def cumulative_emission(hist: TcspcHistogram, detection_efficiency=1.0) -> np.ndarray:
    """Cumulative emission probability after each bin, c_1..c_N.

    Expected dark counts are subtracted first when the histogram records a
    dark rate; the result is made monotone and clipped to [0, 1].
    """
    if not 0.0 < detection_efficiency <= 1.0:
        raise DomainError(f"detection efficiency {detection_efficiency} outside (0, 1]")
    if hist.n_cycles <= 0:
        raise DomainError("histogram has zero excitation cycles")
    y = hist.as_array().astype(float)
    if hist.dark_rate_hz:
        y = y - hist.dark_counts_per_bin
    c = np.cumsum(y) / (hist.n_cycles * detection_efficiency)
    if np.any(np.diff(c) < 0):
        c = isotonic_regression(c).x
    return np.clip(c, 0.0, 1.0)


@dataclass(frozen=True)
class SwapEstimate:
    """Fitted c_n = beta_occ (1 - s^n) plus the per-bin survival series.

    ``per_bin_s[n]`` estimates the survival over bin n+1 given no emission by
    bin n; NaN marks bins where the remaining population is too small.
    """

    beta_occ_hat: float
    s_hat: float
    per_bin_s: tuple
    detection_efficiency: float = 1.0
    dt_ns: float = 1.0
    stderr_s: float = math.nan
    stderr_beta: float = math.nan

    @property
    def tau_ns(self) -> float:
        if not 0 < self.s_hat < 1:
            return math.inf if self.s_hat >= 1 else 0.0
        return -self.dt_ns / math.log(self.s_hat)

    def per_bin_array(self) -> np.ndarray:
        return np.asarray(self.per_bin_s, dtype=float)

    def stability(self, n_bins=None) -> float:
        """Relative standard deviation of the per-bin survival over the first ``n_bins`` bins."""
        s = self.per_bin_array()[:n_bins]
        s = s[np.isfinite(s)]
        if s.size < 2:
            return math.nan
        return float(np.std(s, ddof=1) / np.mean(s))

    def as_dict(self):
        return {
            "beta_occ_hat": self.beta_occ_hat,
            "stderr_beta": self.stderr_beta,
            "s_hat": self.s_hat,
            "stderr_s": self.stderr_s,
            "tau_ns": self.tau_ns,
            "dt_ns": self.dt_ns,
            "detection_efficiency": self.detection_efficiency,
            "per_bin_s": [None if not math.isfinite(v) else v for v in self.per_bin_s],
        }


def estimate_swap(series, dt_ns, detection_efficiency=1.0, threshold=1e-3) -> SwapEstimate:
    """Estimate (beta_occ, s) from a cumulative emission series c_1..c_N."""
    c = np.asarray(series, dtype=float)
    if c.ndim != 1 or c.size < 2:
        raise DomainError("need at least two cumulative points")
    if not dt_ns > 0:
        raise DomainError("dt_ns must be positive")
    if np.any(np.diff(c) < 0):
        warnings.warn("cumulative series not monotone; applying isotonic regression", stacklevel=2)
        c = isotonic_regression(c).x
    if not c[-1] > 0:
        raise DegenerateModelError("no emission signal: survival parameter is indeterminate")

    n = np.arange(1, c.size + 1)
    inc = np.diff(np.concatenate([[0.0], c]))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = inc[1:] / inc[:-1]
    ratios = ratios[np.isfinite(ratios) & (inc[:-1] > 0) & (ratios > 0) & (ratios < 1)]
    s0 = float(np.median(ratios)) if ratios.size else 0.5
    b0 = min(1.0, c[-1] / max(1.0 - s0 ** c.size, 1e-12))

    def resid(p):
        b, s = p
        return b * -np.expm1(n * np.log(s)) - c

    res = least_squares(
        resid,
        x0=[b0, s0],
        bounds=([0.0, 1e-12], [1.0, 1.0 - 1e-15]),
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        method="trf",
    )
    beta_hat, s_hat = (float(v) for v in res.x)
    if res.status <= 0:
        raise FitError(f"swap fit did not converge: {res.message}",
                       best={"beta_occ_hat": beta_hat, "s_hat": s_hat})
    dof = max(c.size - 2, 1)
    sigma2 = float(np.sum(res.fun**2)) / dof
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac) * sigma2
        err_b, err_s = (float(v) for v in np.sqrt(np.abs(np.diag(cov))))
    except np.linalg.LinAlgError:
        err_b = err_s = math.nan

    prev = np.concatenate([[0.0], c[:-1]])
    remaining = beta_hat - prev
    per_bin = np.full(c.size, np.nan)
    valid = np.cumprod(remaining > threshold).astype(bool)
    per_bin[valid] = 1.0 - inc[valid] / remaining[valid]
    return SwapEstimate(
        beta_hat,
        s_hat,
        tuple(float(v) for v in per_bin),
        float(detection_efficiency),
        float(dt_ns),
        err_s,
        err_b,
    )
