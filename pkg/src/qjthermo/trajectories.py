"""Quantum-jump unravelling of the pulsed two-level emitter.

Protocol: the molecule starts in a thermal mixture of |g> and |e>. A laser
pulse exchanges the two populations (work W = +gap on the ground branch,
-gap on the excited branch). Then, for each round, a fresh bath mode
(photon present with probability ``bath_excitation``) interacts through the
partial swap and is measured in the photon-number basis. The first
excitation exchange with the bath ends the branching: once the photon has
left (or been absorbed) nothing else can happen.

Sign convention: heat Q is energy flowing INTO the molecule, so photon
emission carries Q = -gap. Every trajectory obeys dU = W + Q.

Four trajectory classes exist (gap units):

    start  path        W    Q    dU
    g      g->e->g     +1   -1    0     emission at some round k
    g      g->e->e     +1    0   +1     no emission by the last round
    e      e->g->e     -1   +1    0     bath photon absorbed at round k
    e      e->g->g     -1    0   -1     nothing absorbed

With ``table_variant="printed"`` the Q/dU labels of the two excited-branch
classes are exchanged, which reproduces the commonly printed table whose
endpoints do not match its dU column. Only useful for comparison.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._parallel import run_chunks
from .errors import DomainError
from .model import (
    EXCITED_0,
    GROUND_1,
    JointState,
    PartialSwap,
    ThermalOccupation,
    apply_partial_swap,
)

StateLabel = namedtuple("StateLabel", "molecule photons")

G0 = StateLabel("g", 0)
G1 = StateLabel("g", 1)
E0 = StateLabel("e", 0)
E1 = StateLabel("e", 1)

EXACT = "exact"
SAMPLED = "sampled"
VARIANTS = ("corrected", "printed")

_OUTCOME_FLOOR = 1e-15


@dataclass(frozen=True)
class Trajectory:
    """One branch of the jump tree.

    ``steps`` is a tuple of (round, StateLabel); round 0 holds the state
    before and after the laser pulse. ``emission_round``/``absorption_round``
    are -1 when the event did not happen.
    """

    steps: tuple
    work_ev: float
    heat_ev: float
    delta_u_ev: float
    weight: float
    log_weight: float
    gap_ev: float
    emission_round: int = -1
    absorption_round: int = -1

    @property
    def initial(self) -> str:
        return self.steps[0][1].molecule

    @property
    def final(self) -> str:
        return self.steps[-1][1].molecule

    @property
    def jump_round(self) -> int:
        return max(self.emission_round, self.absorption_round)

    @property
    def n_emissions(self) -> int:
        return sum(
            1
            for (_, a), (_, b) in zip(self.steps, self.steps[1:])
            if a.molecule == "e" and b.molecule == "g" and b.photons == a.photons + 1
        )

    def endpoint_energy_change(self) -> float:
        level = {"g": 0.0, "e": self.gap_ev}
        return level[self.final] - level[self.initial]


def _labels(initial, jumped, gap, variant):
    """(W, Q, dU) for a branch, in eV."""
    if initial == "g":
        work = gap
        heat, du = (-gap, 0.0) if jumped else (0.0, gap)
    else:
        work = -gap
        heat, du = (gap, 0.0) if jumped else (0.0, -gap)
        if variant == "printed":
            heat, du = (0.0, -gap) if jumped else (gap, 0.0)
    return work, heat, du


def _make(initial, jump_round, n_rounds, gap, weight, log_weight, variant):
    jumped = jump_round > 0
    work, heat, du = _labels(initial, jumped, gap, variant)
    if initial == "g":
        steps = [(0, G0), (0, E0)]
        steps.append((jump_round, G1) if jumped else (n_rounds, E0))
        em, ab = (jump_round, -1) if jumped else (-1, -1)
    else:
        steps = [(0, E0), (0, G0)]
        # the absorbed bath photon leaves the mode empty
        steps.append((jump_round, E0) if jumped else (n_rounds, G0))
        em, ab = (-1, jump_round) if jumped else (-1, -1)
    return Trajectory(tuple(steps), work, heat, du, weight, log_weight, gap, em, ab)


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Weighted set of trajectories over ``n_rounds`` measurement rounds.

    Exact ensembles carry the probability of every leaf; sampled ensembles
    carry one entry per distinct observed trajectory, weighted by frequency,
    with raw ``counts`` alongside.
    """

    trajectories: tuple
    kind: str
    n_rounds: int
    gap_ev: float
    provenance: dict = field(default_factory=dict, compare=False)
    counts: tuple = None
    variant: str = "corrected"

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def n_samples(self):
        return None if self.counts is None else int(sum(self.counts))

    @cached_property
    def arrays(self):
        """Columnar view used by the statistics code."""
        t = self.trajectories
        initial_g = np.array([tr.initial == "g" for tr in t], dtype=bool)
        gap = self.gap_ev
        pend_heat = np.empty(len(t))
        pend_du = np.empty(len(t))
        for i, tr in enumerate(t):
            _, q, du = _labels(tr.initial, False, gap, self.variant)
            pend_heat[i], pend_du[i] = q, du
        return {
            "weight": np.array([tr.weight for tr in t], dtype=float),
            "log_weight": np.array([tr.log_weight for tr in t], dtype=float),
            "work": np.array([tr.work_ev for tr in t], dtype=float),
            "heat": np.array([tr.heat_ev for tr in t], dtype=float),
            "delta_u": np.array([tr.delta_u_ev for tr in t], dtype=float),
            "jump_round": np.array([tr.jump_round for tr in t], dtype=int),
            "emission_round": np.array([tr.emission_round for tr in t], dtype=int),
            "initial_ground": initial_g,
            "pending_heat": pend_heat,
            "pending_delta_u": pend_du,
        }

    def truncated_labels(self, n):
        """(heat, delta_u) arrays as seen after round ``n``: later jumps have not happened yet."""
        a = self.arrays
        done = (a["jump_round"] > 0) & (a["jump_round"] <= n)
        return (
            np.where(done, a["heat"], a["pending_heat"]),
            np.where(done, a["delta_u"], a["pending_delta_u"]),
        )

    def truncate(self, n) -> "TrajectoryEnsemble":
        """Ensemble as it stands after round ``n`` (jumps after ``n`` folded into pending leaves)."""
        if not 0 <= n <= self.n_rounds:
            raise DomainError(f"round {n} outside 0..{self.n_rounds}")
        out = [
            _make(
                tr.initial,
                tr.jump_round if 0 < tr.jump_round <= n else -1,
                n,
                self.gap_ev,
                tr.weight,
                tr.log_weight,
                self.variant,
            )
            for tr in self.trajectories
        ]
        return TrajectoryEnsemble(
            tuple(out), self.kind, n, self.gap_ev, dict(self.provenance), self.counts, self.variant
        )


def _validate(occupation, n_rounds, bath_excitation, variant):
    if not isinstance(occupation, ThermalOccupation):
        raise DomainError("occupation must be a ThermalOccupation")
    if n_rounds < 0 or int(n_rounds) != n_rounds:
        raise DomainError(f"n_rounds must be a non-negative integer, got {n_rounds}")
    if not (0.0 <= bath_excitation < 1.0):
        raise DomainError(f"bath_excitation must lie in [0, 1), got {bath_excitation}")
    if variant not in VARIANTS:
        raise DomainError(f"unknown table variant {variant!r}")


def laser_pulse(occupation: ThermalOccupation, gap_ev: float = 1.0):
    """Population-swapping pulse.

    Returns the post-pulse occupation and the work record as a list of
    (starting level, probability, work in eV).
    """
    branches = [
        ("g", occupation.p_ground, gap_ev),
        ("e", occupation.p_excited, -gap_ev),
    ]
    return occupation.swapped(), branches


def measure_environment(state: JointState):
    """Projective photon-number measurement on the bath mode.

    Returns [(photons, collapsed state, probability), ...], dropping outcomes
    below 1e-15.
    """
    amps = state.as_array()
    norm = float(np.sum(np.abs(amps) ** 2))
    if norm <= 0.0:
        raise DomainError("cannot measure a zero-norm state")
    out = []
    for photons, idx in ((0, [0, 2]), (1, [1, 3])):
        proj = np.zeros(4, dtype=complex)
        proj[idx] = amps[idx]
        p = float(np.sum(np.abs(proj) ** 2)) / norm
        if p < _OUTCOME_FLOOR:
            continue
        out.append((photons, JointState.from_array(proj / math.sqrt(p * norm)), p))
    return out


def jump_probabilities(swap: PartialSwap, bath_excitation: float = 0.0):
    """Per-round (emission, absorption) probabilities from the swap matrix.

    Emission needs an empty bath mode and the |e,0> -> |g,1> amplitude;
    absorption needs an occupied mode and the |g,1> -> |e,0> amplitude.
    """
    after_e = apply_partial_swap(JointState.basis(EXCITED_0), swap).probabilities
    after_g = apply_partial_swap(JointState.basis(GROUND_1), swap).probabilities
    return (1.0 - bath_excitation) * after_e[GROUND_1], bath_excitation * after_g[EXCITED_0]


def _geometric_leaves(p_start, log_p_start, q, n_rounds):
    """Weights of first-jump-at-round-k (k = 1..n) and of no jump, for per-round jump prob q."""
    k = np.arange(1, n_rounds + 1)
    r = 1.0 - q
    w = p_start * q * r ** (k - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_q, log_r = np.log(q), np.log(r)
        # (k-1) * log r with 0 * -inf treated as 0
        tail = np.where(k == 1, 0.0, (k - 1) * log_r)
        log_w = log_p_start + log_q + tail
    stay = p_start * r**n_rounds
    log_stay = log_p_start + (0.0 if n_rounds == 0 else n_rounds * log_r)
    if q == 0.0:
        log_w = np.full(n_rounds, -np.inf)
    if p_start == 0.0 and not np.isfinite(log_p_start):
        log_w = np.full(n_rounds, -np.inf)
    return w, log_w, stay, log_stay


def enumerate_trajectories(
    occupation: ThermalOccupation,
    swap: PartialSwap,
    n_rounds: int,
    bath_excitation: float = 0.0,
    gap_ev: float = 1.0,
    variant: str = "corrected",
) -> TrajectoryEnsemble:
    """Exact weighted jump tree after ``n_rounds`` measurement rounds.

    Leaves with probability exactly zero are left out. Leaves whose linear
    weight underflows keep their finite ``log_weight``.
    """
    _validate(occupation, n_rounds, bath_excitation, variant)
    n_rounds = int(n_rounds)
    q_emit, q_abs = jump_probabilities(swap, bath_excitation)
    # after the pulse the ground-start branch is excited and vice versa
    trajs = []
    w, lw, stay, lstay = _geometric_leaves(
        occupation.p_ground, occupation.log_p_ground, q_emit, n_rounds
    )
    for k in range(n_rounds):
        trajs.append(_make("g", k + 1, n_rounds, gap_ev, float(w[k]), float(lw[k]), variant))
    trajs.append(_make("g", -1, n_rounds, gap_ev, float(stay), float(lstay), variant))

    w, lw, stay, lstay = _geometric_leaves(
        occupation.p_excited, occupation.log_p_excited, q_abs, n_rounds
    )
    if bath_excitation > 0:
        for k in range(n_rounds):
            trajs.append(_make("e", k + 1, n_rounds, gap_ev, float(w[k]), float(lw[k]), variant))
    trajs.append(_make("e", -1, n_rounds, gap_ev, float(stay), float(lstay), variant))

    # impossible leaves go; underflowed-but-possible ones (finite log weight) stay
    trajs = [t for t in trajs if t.log_weight > -math.inf]
    provenance = {
        "p_ground": occupation.p_ground,
        "p_excited": occupation.p_excited,
        "survival": swap.survival,
        "bath_excitation": bath_excitation,
        "n_rounds": n_rounds,
    }
    return TrajectoryEnsemble(tuple(trajs), EXACT, n_rounds, gap_ev, provenance, None, variant)


def _sample_chunk(rng, n, p_excited, q_emit, q_abs, n_rounds):
    """Per-sample (starts excited, first jump round or -1)."""
    excited = rng.random(n) < p_excited
    q = np.where(excited, q_abs, q_emit)
    # waiting time of the first successful round of a Bernoulli(q) chain
    rounds = np.full(n, -1, dtype=np.int64)
    active = q > 0
    if np.any(active):
        draws = rng.geometric(q[active])
        rounds[active] = np.where(draws <= n_rounds, draws, -1)
    return excited, rounds


def sample_trajectories(
    occupation: ThermalOccupation,
    swap: PartialSwap,
    n_rounds: int,
    bath_excitation: float = 0.0,
    n_samples: int = 10_000,
    seed: int = 0,
    gap_ev: float = 1.0,
    workers: int = 1,
    variant: str = "corrected",
) -> TrajectoryEnsemble:
    """Monte Carlo unravelling; deterministic for a fixed (seed, workers)."""
    _validate(occupation, n_rounds, bath_excitation, variant)
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    n_rounds = int(n_rounds)
    q_emit, q_abs = jump_probabilities(swap, bath_excitation)

    def chunk(rng, n):
        return _sample_chunk(rng, n, occupation.p_excited, q_emit, q_abs, n_rounds)

    parts = run_chunks(chunk, n_samples, seed, workers)
    excited = np.concatenate([p[0] for p in parts])
    rounds = np.concatenate([p[1] for p in parts])
    # class code: ground branch -> jump round (0 = none); excited -> offset by n_rounds + 1
    codes = np.where(rounds < 0, 0, rounds) + excited * (n_rounds + 1)
    tally = np.bincount(codes, minlength=2 * (n_rounds + 1))

    trajs, counts = [], []
    for code in np.flatnonzero(tally):
        c = int(tally[code])
        initial = "e" if code > n_rounds else "g"
        k = int(code % (n_rounds + 1))
        freq = c / n_samples
        trajs.append(_make(initial, k if k else -1, n_rounds, gap_ev, freq, math.log(freq), variant))
        counts.append(c)
    provenance = {
        "p_ground": occupation.p_ground,
        "p_excited": occupation.p_excited,
        "survival": swap.survival,
        "bath_excitation": bath_excitation,
        "n_rounds": n_rounds,
        "n_samples": n_samples,
        "seed": seed,
        "workers": workers,
    }
    return TrajectoryEnsemble(
        tuple(trajs), SAMPLED, n_rounds, gap_ev, provenance, tuple(counts), variant
    )


def emission_round_distribution(ensemble: TrajectoryEnsemble) -> np.ndarray:
    """Probability of the emission happening at round k, for k = 1..n_rounds (index k-1)."""
    if len(ensemble) == 0:
        raise DomainError("empty ensemble")
    a = ensemble.arrays
    out = np.zeros(ensemble.n_rounds)
    mask = a["emission_round"] > 0
    np.add.at(out, a["emission_round"][mask] - 1, a["weight"][mask])
    return out


def exact_class_weights(ensemble: TrajectoryEnsemble) -> dict:
    """Weights keyed by (initial level, jump round or -1)."""
    return {(t.initial, t.jump_round): t.weight for t in ensemble}


# ---- line-oriented text export --------------------------------------------------

ENSEMBLE_FORMAT = "qjthermo-ensemble/1"
_ENSEMBLE_COLUMNS = "weight,work,heat,delta_u,emission_round,absorption_round,log_weight"


def write_ensemble(ensemble: TrajectoryEnsemble) -> str:
    """Serialize an ensemble; energies are written in units of the gap."""
    gap = ensemble.gap_ev
    scale = gap if gap > 0 else 1.0
    lines = [
        f"#format={ENSEMBLE_FORMAT}",
        f"#kind={ensemble.kind}",
        f"#n_rounds={ensemble.n_rounds}",
        f"#gap_ev={gap!r}",
        f"#variant={ensemble.variant}",
        f"#columns={_ENSEMBLE_COLUMNS}",
    ]
    counts = ensemble.counts
    if counts is not None:
        lines.append(f"#n_samples={sum(counts)}")
    for tr in ensemble:
        lines.append(
            ",".join(
                [
                    repr(tr.weight),
                    repr(tr.work_ev / scale),
                    repr(tr.heat_ev / scale),
                    repr(tr.delta_u_ev / scale),
                    str(tr.emission_round),
                    str(tr.absorption_round),
                    repr(tr.log_weight),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def parse_ensemble(text: str) -> TrajectoryEnsemble:
    """Inverse of :func:`write_ensemble`."""
    header, rows = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if not sep:
                raise DomainError(f"line {lineno}: header without '='")
            header[key.strip()] = value.strip()
            continue
        fields = line.split(",")
        if len(fields) != 7:
            raise DomainError(f"line {lineno}: expected 7 fields, got {len(fields)}")
        try:
            rows.append(
                (
                    float(fields[0]),
                    float(fields[1]),
                    float(fields[2]),
                    float(fields[3]),
                    int(fields[4]),
                    int(fields[5]),
                    float(fields[6]),
                )
            )
        except ValueError as exc:
            raise DomainError(f"line {lineno}: {exc}") from None
    for key in ("format", "kind", "n_rounds", "gap_ev"):
        if key not in header:
            raise DomainError(f"missing header #{key}")
    if header["format"] != ENSEMBLE_FORMAT:
        raise DomainError(f"unsupported format {header['format']!r}")
    kind = header["kind"]
    n_rounds = int(header["n_rounds"])
    gap = float(header["gap_ev"])
    variant = header.get("variant", "corrected")
    scale = gap if gap > 0 else 1.0
    trajs = []
    for weight, work, heat, du, em, ab, logw in rows:
        initial = "g" if work > 0 or (work == 0 and em > 0) else "e"
        jump = max(em, ab)
        tr = _make(initial, jump, n_rounds, gap, weight, logw, variant)
        trajs.append(tr)
    counts = None
    if "n_samples" in header:
        n = int(header["n_samples"])
        counts = tuple(int(round(t.weight * n)) for t in trajs)
    return TrajectoryEnsemble(tuple(trajs), kind, n_rounds, gap, {"source": "file"}, counts, variant)
