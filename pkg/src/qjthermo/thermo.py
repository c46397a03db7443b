"""Heat/work statistics, the Jarzynski functional and free-energy shift inference.

Heat Q is energy into the molecule (emission is -gap). The Jarzynski
functional ``<exp(-(dU - Q)/kT)>`` is always evaluated in log domain, so a
785 nm gap at 4 K (gap/kT ~ 4582) gives exactly 1 instead of 0 * inf.

Two free-energy sign conventions meet here and are kept apart explicitly:

* ``"partition_ratio"``: kT ln(Z_f / Z_i). The level-shift relation is
  written in this form, ``-delta + kT ln((1 + e^{-gap'/kT}) / (1 + e^{-gap/kT}))``.
* ``"free_energy"``: F_f - F_i = -kT ln(Z_f / Z_i), what the exponential
  work average ``-kT ln <e^{-W/kT}>`` estimates.

:class:`FreeEnergyDelta` records which one it holds and converts on demand.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._parallel import run_chunks
from .constants import kT
from .errors import DomainError
from .model import (
    EnergyShift,
    ThermalOccupation,
    TwoLevelMolecule,
    reduced_gap,
    shift_levels,
    thermal_state,
)
from .trajectories import SAMPLED, TrajectoryEnsemble

# Above this gap/kT the +gap work branch is essentially never sampled.
MC_JARZYNSKI_LIMIT = 20.0

PARTITION_RATIO = "partition_ratio"
FREE_ENERGY = "free_energy"


class SamplingRegimeError(DomainError):
    """Monte Carlo estimate requested where the dominant branch cannot be sampled."""


@dataclass(frozen=True)
class HeatDistribution:
    """Probabilities of Q = -gap, 0, +gap after ``round_index`` rounds."""

    gap_ev: float
    p_minus: float
    p_zero: float
    p_plus: float
    round_index: int

    def __post_init__(self):
        for p in (self.p_minus, self.p_zero, self.p_plus):
            if not (-1e-15 <= p <= 1 + 1e-15):
                raise DomainError(f"probability {p} outside [0, 1]")

    @property
    def total(self) -> float:
        return math.fsum((self.p_minus, self.p_zero, self.p_plus))

    def two_bucket(self):
        """(P(no emission), P(emission)): the two-outcome form that lumps Q=0 with Q=+gap."""
        return self.p_plus + self.p_zero, self.p_minus


@dataclass(frozen=True)
class WorkDistribution:
    support: tuple  # ((work_ev, probability), ...)

    def __post_init__(self):
        total = math.fsum(p for _, p in self.support)
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"work probabilities sum to {total}")


@dataclass(frozen=True)
class JarzynskiSeries:
    """Per-round values of <exp(-(dU - Q)/kT)>, index = round."""

    values: tuple
    log_values: tuple
    temperature_k: float
    log_domain: bool = True

    def __len__(self):
        return len(self.values)

    @property
    def spread(self) -> float:
        v = np.asarray(self.values)
        return float(v.max() - v.min()) if v.size else 0.0


@dataclass(frozen=True)
class FreeEnergyDelta:
    delta_f_ev: float
    temperature_k: float
    convention: str = PARTITION_RATIO

    def __post_init__(self):
        if self.convention not in (PARTITION_RATIO, FREE_ENERGY):
            raise DomainError(f"unknown free-energy convention {self.convention!r}")

    def as_partition_ratio(self) -> float:
        """kT ln(Z_f / Z_i) in eV."""
        return self.delta_f_ev if self.convention == PARTITION_RATIO else -self.delta_f_ev

    def as_free_energy(self) -> float:
        """F_f - F_i in eV."""
        return -self.as_partition_ratio()


def _check_prob(name, p):
    if not (0.0 <= p <= 1.0):
        raise DomainError(f"{name}={p} outside [0, 1]")


def heat_distribution_closed_form(alpha, beta_occ, s, n, gap_ev=1.0) -> HeatDistribution:
    """Heat distribution after ``n`` rounds for excited/ground initial occupations alpha/beta_occ.

    P(Q=-gap) = beta_occ (1 - s^n); the complement alpha + beta_occ s^n sits
    entirely in Q=0 for an empty bath.
    """
    for name, p in (("alpha", alpha), ("beta_occ", beta_occ), ("s", s)):
        _check_prob(name, p)
    if abs(alpha + beta_occ - 1.0) > 1e-9:
        raise DomainError("alpha + beta_occ must equal 1")
    if n < 0:
        raise DomainError("n must be non-negative")
    decay = beta_occ * (1.0 - s**n)
    return HeatDistribution(gap_ev, decay, beta_occ * s**n + alpha, 0.0, int(n))


def heat_distribution_from_ensemble(ensemble: TrajectoryEnsemble, n=None) -> HeatDistribution:
    """Bin heat values onto {-gap, 0, +gap}, optionally as seen after round ``n``."""
    if len(ensemble) == 0:
        raise DomainError("empty ensemble")
    gaps = {t.gap_ev for t in ensemble}
    if len(gaps) > 1:
        raise DomainError(f"ensemble mixes gaps {sorted(gaps)}")
    gap = ensemble.gap_ev
    if gap <= 0:
        raise DomainError("heat binning needs a positive gap")
    n = ensemble.n_rounds if n is None else n
    heat, _ = ensemble.truncated_labels(n)
    units = np.rint(heat / gap).astype(int)
    w = ensemble.arrays["weight"]
    p = [math.fsum(w[units == u]) for u in (-1, 0, 1)]
    return HeatDistribution(gap, p[0], p[1], p[2], int(n))


def heat_series(ensemble: TrajectoryEnsemble):
    return [heat_distribution_from_ensemble(ensemble, n) for n in range(ensemble.n_rounds + 1)]


def work_distribution(ensemble: TrajectoryEnsemble) -> WorkDistribution:
    w = ensemble.arrays["work"]
    p = ensemble.arrays["weight"]
    support = tuple((float(v), math.fsum(p[w == v])) for v in np.unique(w))
    return WorkDistribution(support)


def jarzynski_functional(ensemble: TrajectoryEnsemble, temperature_k) -> JarzynskiSeries:
    """<exp(-(dU - Q)/kT)> over the ensemble truncated at each round 0..n_rounds."""
    x = reduced_gap(ensemble.gap_ev, temperature_k)
    if ensemble.kind == SAMPLED and x > MC_JARZYNSKI_LIMIT:
        raise SamplingRegimeError(
            f"gap/kT = {x:.4g} exceeds {MC_JARZYNSKI_LIMIT}; the excited-start branch is "
            "never sampled, use the exact ensemble"
        )
    beta = 1.0 / kT(temperature_k)
    a = ensemble.arrays
    rounds = np.arange(ensemble.n_rounds + 1)
    done = (a["jump_round"][None, :] > 0) & (a["jump_round"][None, :] <= rounds[:, None])
    q = np.where(done, a["heat"], a["pending_heat"])
    du = np.where(done, a["delta_u"], a["pending_delta_u"])
    with np.errstate(invalid="ignore"):
        log_terms = a["log_weight"][None, :] - beta * (du - q)
    log_terms = np.where(np.isneginf(a["log_weight"])[None, :], -np.inf, log_terms)
    log_values = logsumexp(log_terms, axis=1)
    return JarzynskiSeries(
        tuple(float(v) for v in np.exp(log_values)),
        tuple(float(v) for v in log_values),
        float(temperature_k),
    )


def jarzynski_closed_form(occupation: ThermalOccupation, gap_ev, temperature_k, log=False):
    """Pulse-protocol value p_g e^{-gap/kT} + p_e e^{+gap/kT} (round independent)."""
    x = reduced_gap(gap_ev, temperature_k)
    val = float(np.logaddexp(occupation.log_p_ground - x, occupation.log_p_excited + x))
    return val if log else math.exp(val)


def jarzynski_linear(ensemble: TrajectoryEnsemble, temperature_k) -> np.ndarray:
    """Plain float evaluation of the functional; overflows for large gap/kT. Cross-check only."""
    beta = 1.0 / kT(temperature_k)
    w = ensemble.arrays["weight"]
    out = []
    for n in range(ensemble.n_rounds + 1):
        q, du = ensemble.truncated_labels(n)
        out.append(float(np.sum(w * np.exp(-beta * (du - q)))))
    return np.array(out)


def _log_partition_ratio(gap_before, gap_after, temperature_k):
    """ln((1 + e^{-gap'/kT}) / (1 + e^{-gap/kT}))."""
    x0 = reduced_gap(gap_before, temperature_k)
    x1 = reduced_gap(gap_after, temperature_k)
    return float(np.logaddexp(0.0, -x1) - np.logaddexp(0.0, -x0))


def free_energy_difference(
    molecule: TwoLevelMolecule, shift: EnergyShift, temperature_k
) -> FreeEnergyDelta:
    """kT ln(Z_f/Z_i) for the level shift (E1, E2) -> (E1 + delta, E2 + delta + epsilon)."""
    shifted = shift_levels(molecule, shift)
    if not temperature_k > 0:
        raise DomainError(f"temperature must be positive, got {temperature_k}")
    t = kT(temperature_k)
    log_ratio = _log_partition_ratio(molecule.delta_e, shifted.delta_e, temperature_k)
    return FreeEnergyDelta(-shift.delta + t * log_ratio, float(temperature_k), PARTITION_RATIO)


def infer_common_shift(gap_before, gap_after, delta_f: FreeEnergyDelta, temperature_k) -> float:
    """Recover the common shift delta from a measured free-energy change and the two gaps."""
    if not (gap_before > 0 and gap_after > 0):
        raise DomainError("both gaps must be positive")
    if not temperature_k > 0:
        raise DomainError(f"temperature must be positive, got {temperature_k}")
    t = kT(temperature_k)
    return -delta_f.as_partition_ratio() + t * _log_partition_ratio(
        gap_before, gap_after, temperature_k
    )


def estimate_delta_f_from_work(work_samples, temperature_k):
    """Exponential-average estimate of F_f - F_i with a jackknife standard error.

    Returns (FreeEnergyDelta in the ``free_energy`` convention, stderr in eV).
    The estimator is biased at finite sample size; no correction is applied.
    """
    w = np.asarray(work_samples, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise DomainError("need at least 2 work samples")
    if not temperature_k > 0:
        raise DomainError(f"temperature must be positive, got {temperature_k}")
    t = kT(temperature_k)
    n = w.size
    x = -w / t
    m = x.max()
    e = np.exp(x - m)
    total = math.fsum(e)
    estimate = -t * (m + math.log(total) - math.log(n))
    # leave-one-out estimates
    with np.errstate(divide="ignore"):
        loo = -t * (m + np.log(np.maximum(total - e, 0.0)) - math.log(n - 1))
    if not np.all(np.isfinite(loo)):
        stderr = math.inf
    else:
        stderr = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return FreeEnergyDelta(estimate, float(temperature_k), FREE_ENERGY), stderr


def sample_sudden_quench_work(
    molecule: TwoLevelMolecule, shift: EnergyShift, temperature_k, n_samples, seed=0, workers=1
) -> np.ndarray:
    """Work of an instantaneous level shift on thermally drawn initial levels.

    W = delta on the ground level, delta + epsilon on the excited level.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    shift_levels(molecule, shift)
    p_e = thermal_state(molecule, temperature_k).p_excited
    w_g, w_e = shift.delta, shift.delta + shift.epsilon

    def chunk(rng, n):
        return np.where(rng.random(n) < p_e, w_e, w_g)

    return np.concatenate(run_chunks(chunk, n_samples, seed, workers))


def quench_work_distribution(molecule, shift, temperature_k) -> WorkDistribution:
    occ = thermal_state(molecule, temperature_k)
    return WorkDistribution(
        ((shift.delta, occ.p_ground), (shift.delta + shift.epsilon, occ.p_excited))
    )


def quench_log_exp_average(molecule, shift, temperature_k) -> float:
    """ln <exp(-W/kT)> over the exact two-point quench distribution."""
    occ = thermal_state(molecule, temperature_k)
    t = kT(temperature_k)
    return float(
        np.logaddexp(
            occ.log_p_ground - shift.delta / t,
            occ.log_p_excited - (shift.delta + shift.epsilon) / t,
        )
    )


def warn_if_sampling_hopeless(gap_ev, temperature_k):
    x = reduced_gap(gap_ev, temperature_k)
    if x > MC_JARZYNSKI_LIMIT:
        warnings.warn(
            f"gap/kT = {x:.4g} > {MC_JARZYNSKI_LIMIT}: Monte Carlo Jarzynski estimate is "
            "meaningless here, switching to exact enumeration",
            stacklevel=2,
        )
        return True
    return False
