"""Command-line front end.

    qjthermo synth        simulated TCSPC histogram
    qjthermo simulate     trajectory ensemble + per-round heat distribution
    qjthermo jarzynski    per-round Jarzynski functional
    qjthermo fit          lifetime fit + swap-parameter estimate of a histogram
    qjthermo infer-shift  common level shift from a free-energy change

Parameters come from an optional JSON config (``--config``) overridden by
flags. Every run writes its data files plus ``report.json`` into ``--out``.
Data files are byte-identical for a fixed config, seed and worker count;
``report.json`` additionally records wall-clock time.

Exit codes: 0 success, 2 usage/config/parse error, 3 numerical or fit failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .constants import kT
from .errors import DegenerateModelError, DomainError, FitError, HistogramParseError
from .model import (
    EnergyShift,
    ThermalOccupation,
    TwoLevelMolecule,
    reduced_gap,
    swap_from_lifetime,
    swap_from_survival,
    thermal_state,
)
from .tcspc import (
    cumulative_emission,
    estimate_swap,
    fit_lifetime,
    read_histogram,
    synth_histogram,
    write_histogram,
)
from .thermo import (
    MC_JARZYNSKI_LIMIT,
    PARTITION_RATIO,
    FreeEnergyDelta,
    estimate_delta_f_from_work,
    free_energy_difference,
    heat_series,
    infer_common_shift,
    jarzynski_functional,
    sample_sudden_quench_work,
)
from .trajectories import (
    emission_round_distribution,
    enumerate_trajectories,
    parse_ensemble,
    sample_trajectories,
    write_ensemble,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

DEFAULT_WAVELENGTH_NM = 785.0
DEFAULT_TAU_NS = 5.0


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """Numerical failure with a partial result to report."""

    def __init__(self, message, results=None):
        super().__init__(message)
        self.results = results or {}


@dataclass
class RunConfig:
    wavelength_nm: float | None = None
    gap_ev: float | None = None
    temperature_k: float | None = None
    tau_ns: float | None = None
    survival: float | None = None
    dt_ns: float = 0.1
    n_rounds: int = 100
    bath_excitation: float = 0.0
    p_excited: float | None = None
    variant: str = "corrected"
    n_samples: int | None = None
    mc_jarzynski: bool = False
    seed: int = 0
    workers: int = 1
    delta_ev: float = 0.0
    epsilon_ev: float = 0.0
    gap_after_ev: float | None = None
    delta_f_ev: float | None = None
    rep_rate_mhz: float = 80.0
    n_cycles: int = 1_000_000
    excitation_prob: float = 1.0
    detection_efficiency: float = 1.0
    dark_rate_hz: float = 0.0
    bin_width_ns: float = 0.1
    histogram: str | None = None
    ensemble: str | None = None
    work_file: str | None = None
    out: str = "."
    format: str = "csv"

    @classmethod
    def from_sources(cls, config_path=None, overrides=None) -> "RunConfig":
        data = {}
        if config_path:
            try:
                data = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {config_path}: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**data)

    def validate(self):
        if self.wavelength_nm is not None and self.gap_ev is not None:
            raise ConfigError("give either wavelength_nm or gap_ev, not both")
        if self.tau_ns is not None and self.survival is not None:
            raise ConfigError("give either tau_ns or survival, not both")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.n_rounds < 0:
            raise ConfigError("n_rounds must be >= 0")
        if self.n_samples is not None and self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.variant not in ("corrected", "printed"):
            raise ConfigError("variant must be corrected or printed")

    def molecule(self) -> TwoLevelMolecule:
        if self.gap_ev is not None:
            return TwoLevelMolecule.from_gap(self.gap_ev)
        return TwoLevelMolecule.from_wavelength(self.wavelength_nm or DEFAULT_WAVELENGTH_NM)

    def swap(self):
        if self.survival is not None:
            return swap_from_survival(self.survival)
        return swap_from_lifetime(self.tau_ns or DEFAULT_TAU_NS, self.dt_ns)

    def require_temperature(self) -> float:
        if self.temperature_k is None:
            raise ConfigError("temperature_k is required for this command")
        return self.temperature_k

    def occupation(self) -> ThermalOccupation:
        if self.p_excited is not None:
            return ThermalOccupation.from_excited(self.p_excited)
        return thermal_state(self.molecule(), self.require_temperature())

    def as_dict(self):
        return dataclasses.asdict(self)


# ---- output helpers ---------------------------------------------------------------


def _num(x):
    """Shortest round-tripping text for a number (deterministic)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _table_text(header, rows, fmt):
    if fmt == "json":
        doc = {"columns": list(header), "rows": [[_json_num(v) for v in r] for r in rows]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) for v in r])
    return buf.getvalue()


def _json_num(x):
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return None if not math.isfinite(x) else x


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_num) + "\n"


class _Outputs:
    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files = []

    def write(self, name, text):
        path = self.dir / name
        data = text.encode("utf-8")
        path.write_bytes(data)
        self.files.append({"path": name, "sha256": hashlib.sha256(data).hexdigest()})
        return path


def _ext(cfg):
    return "json" if cfg.format == "json" else "csv"


# ---- commands -----------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, out: _Outputs):
    hist = synth_histogram(
        tau_ns=cfg.tau_ns or DEFAULT_TAU_NS,
        rep_rate_mhz=cfg.rep_rate_mhz,
        n_cycles=cfg.n_cycles,
        excitation_prob=cfg.excitation_prob,
        detection_efficiency=cfg.detection_efficiency,
        dark_rate_hz=cfg.dark_rate_hz,
        bin_width_ns=cfg.bin_width_ns,
        seed=cfg.seed,
        workers=cfg.workers,
    )
    out.write("histogram.tcspc", write_histogram(hist))
    return {"total_counts": sum(hist.counts), "n_bins": hist.n_bins, "n_cycles": hist.n_cycles}


def _build_ensemble(cfg: RunConfig, sampled: bool):
    mol = cfg.molecule()
    args = dict(
        occupation=cfg.occupation(),
        swap=cfg.swap(),
        n_rounds=cfg.n_rounds,
        bath_excitation=cfg.bath_excitation,
        gap_ev=mol.delta_e,
        variant=cfg.variant,
    )
    if sampled:
        return sample_trajectories(
            n_samples=cfg.n_samples, seed=cfg.seed, workers=cfg.workers, **args
        )
    return enumerate_trajectories(**args)


def _jarzynski_rows(series):
    return [(n, v, lv) for n, (v, lv) in enumerate(zip(series.values, series.log_values))]


def cmd_simulate(cfg: RunConfig, out: _Outputs):
    sampled = cfg.n_samples is not None
    if sampled and cfg.mc_jarzynski:
        x = reduced_gap(cfg.molecule().delta_e, cfg.require_temperature())
        if x > MC_JARZYNSKI_LIMIT:
            raise ConfigError(
                f"gap/kT = {x:.4g} > {MC_JARZYNSKI_LIMIT}: a Monte Carlo Jarzynski estimate "
                "cannot sample the excited-start branch; drop n_samples to use exact enumeration"
            )
    ens = _build_ensemble(cfg, sampled)
    out.write("ensemble.txt", write_ensemble(ens))
    series = heat_series(ens)
    emission = emission_round_distribution(ens)
    rows = []
    for h in series:
        no_emit, emit = h.two_bucket()
        mass = emission[h.round_index - 1] if h.round_index > 0 else 0.0
        rows.append((h.round_index, h.p_minus, h.p_zero, h.p_plus, no_emit, emit, mass))
    header = ("round", "p_minus", "p_zero", "p_plus", "p_no_emission", "p_emission", "emission_mass")
    out.write(f"heat_distribution.{_ext(cfg)}", _table_text(header, rows, cfg.format))
    result = {"kind": ens.kind, "n_trajectories": len(ens), "final_p_emission": series[-1].p_minus}
    if sampled and cfg.mc_jarzynski:
        js = jarzynski_functional(ens, cfg.temperature_k)
        out.write(
            f"jarzynski.{_ext(cfg)}",
            _table_text(("round", "value", "log_value"), _jarzynski_rows(js), cfg.format),
        )
    return result


def cmd_jarzynski(cfg: RunConfig, out: _Outputs, warn):
    temperature = cfg.require_temperature()
    if cfg.ensemble:
        try:
            ens = parse_ensemble(Path(cfg.ensemble).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read ensemble {cfg.ensemble}: {exc}") from None
        if ens.kind == "sampled" and reduced_gap(ens.gap_ev, temperature) > MC_JARZYNSKI_LIMIT:
            raise ConfigError("sampled ensemble file with gap/kT > 20 cannot estimate Jarzynski")
    else:
        sampled = cfg.n_samples is not None
        if sampled and reduced_gap(cfg.molecule().delta_e, temperature) > MC_JARZYNSKI_LIMIT:
            warn(
                f"gap/kT > {MC_JARZYNSKI_LIMIT}: Monte Carlo Jarzynski is meaningless here, "
                "using exact enumeration"
            )
            sampled = False
        ens = _build_ensemble(cfg, sampled)
    js = jarzynski_functional(ens, temperature)
    if not all(math.isfinite(v) for v in js.log_values):
        raise NumericalFailure("non-finite Jarzynski value")
    out.write(
        f"jarzynski.{_ext(cfg)}",
        _table_text(("round", "value", "log_value"), _jarzynski_rows(js), cfg.format),
    )
    return {
        "kind": ens.kind,
        "rounds": len(js),
        "min": min(js.values),
        "max": max(js.values),
        "reduced_gap": reduced_gap(ens.gap_ev, temperature),
    }


def cmd_fit(cfg: RunConfig, out: _Outputs):
    if not cfg.histogram:
        raise ConfigError("fit needs --histogram")
    try:
        hist = read_histogram(cfg.histogram)
    except OSError as exc:
        raise ConfigError(f"cannot read histogram {cfg.histogram}: {exc}") from None
    report = {"histogram": {"n_bins": hist.n_bins, "n_cycles": hist.n_cycles,
                            "total_counts": sum(hist.counts), "bin_width_ns": hist.bin_width_ns}}
    if sum(hist.counts) == 0:
        report["status"] = "no_signal"
        out.write("fit.json", _json_text(report))
        raise NumericalFailure("histogram contains no counts", report)
    try:
        decay = fit_lifetime(hist)
    except FitError as exc:
        report["status"] = "no_signal" if isinstance(exc, DegenerateModelError) else "fit_failed"
        report["best_iterate"] = exc.best
        report["message"] = str(exc)
        out.write("fit.json", _json_text(report))
        raise NumericalFailure(str(exc), report) from None
    report["decay_fit"] = decay.as_dict()
    report["implied_survival"] = math.exp(-hist.bin_width_ns / decay.tau_ns)
    t = hist.bin_starts
    model = np.full(hist.n_bins, np.nan)
    start, stop = decay.window
    model[start:stop] = decay.model(hist.bin_centers[start:stop] - hist.bin_centers[start])
    out.write(
        f"decay.{_ext(cfg)}",
        _table_text(("time_ns", "counts", "model"), list(zip(t, hist.counts, model)), cfg.format),
    )
    series = cumulative_emission(hist, cfg.detection_efficiency)
    try:
        swap = estimate_swap(series, hist.bin_width_ns, cfg.detection_efficiency)
    except FitError as exc:
        report["status"] = "swap_failed"
        report["message"] = str(exc)
        report["best_iterate"] = exc.best
        out.write("fit.json", _json_text(report))
        raise NumericalFailure(str(exc), report) from None
    report["swap_estimate"] = swap.as_dict()
    two_tau_bins = int(round(2 * decay.tau_ns / hist.bin_width_ns))
    report["per_bin_relative_std_2tau"] = swap.stability(two_tau_bins)
    report["status"] = "ok"
    rows = [
        (n + 1, (n + 1) * hist.bin_width_ns, c, s)
        for n, (c, s) in enumerate(zip(series, swap.per_bin_s))
    ]
    out.write(
        f"swap.{_ext(cfg)}",
        _table_text(("bin", "time_ns", "cumulative_emission", "per_bin_s"), rows, cfg.format),
    )
    out.write("fit.json", _json_text(report))
    return {"tau_ns": decay.tau_ns, "s_hat": swap.s_hat, "beta_occ_hat": swap.beta_occ_hat}


def _read_work_file(path):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read work file {path}: {exc}") from None
    values = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: not a number: {line!r}") from None
    return np.array(values)


def cmd_infer_shift(cfg: RunConfig, out: _Outputs):
    temperature = cfg.require_temperature()
    mol = cfg.molecule()
    gap_after = cfg.gap_after_ev if cfg.gap_after_ev is not None else mol.delta_e + cfg.epsilon_ev
    result = {"gap_before_ev": mol.delta_e, "gap_after_ev": gap_after, "temperature_k": temperature}
    if cfg.delta_f_ev is not None:
        delta_f = FreeEnergyDelta(cfg.delta_f_ev, temperature, PARTITION_RATIO)
        stderr = 0.0
        result["source"] = "given"
    else:
        if cfg.work_file:
            work = _read_work_file(cfg.work_file)
            result["source"] = "work_file"
        else:
            n = cfg.n_samples if cfg.n_samples is not None else 100_000
            work = sample_sudden_quench_work(
                mol, EnergyShift(cfg.delta_ev, cfg.epsilon_ev), temperature, n, cfg.seed, cfg.workers
            )
            result["source"] = "sudden_quench"
            result["exact_delta_f_ev"] = free_energy_difference(
                mol, EnergyShift(cfg.delta_ev, cfg.epsilon_ev), temperature
            ).delta_f_ev
            out.write("work_samples.txt", "".join(f"{_num(w)}\n" for w in work))
        if work.size < 2:
            raise ConfigError("need at least 2 work samples")
        delta_f, stderr = estimate_delta_f_from_work(work, temperature)
        result["n_samples"] = int(work.size)
    delta = infer_common_shift(mol.delta_e, gap_after, delta_f, temperature)
    result.update(
        {
            "delta_f_ev": delta_f.as_partition_ratio(),
            "delta_f_convention": PARTITION_RATIO,
            "delta_ev": delta,
            "stderr_ev": stderr,
            "interval_1se_ev": [delta - stderr, delta + stderr],
            "interval_3se_ev": [delta - 3 * stderr, delta + 3 * stderr],
            "kT_ev": kT(temperature),
        }
    )
    out.write("shift.json", _json_text(result))
    return {"delta_ev": delta, "stderr_ev": stderr}


# ---- argument parsing -----------------------------------------------------------------

def _count(text):
    """Integer flag that also takes integral scientific notation such as 1e6."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid count {text!r}") from None
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"count must be a whole number, got {text!r}")
    return int(value)


_PARAM_FLAGS = [
    ("--wavelength-nm", float), ("--gap-ev", float), ("--temperature-k", float),
    ("--tau-ns", float), ("--survival", float), ("--dt-ns", float), ("--n-rounds", _count),
    ("--bath-excitation", float), ("--p-excited", float), ("--n-samples", _count),
    ("--delta-ev", float), ("--epsilon-ev", float), ("--gap-after-ev", float),
    ("--delta-f-ev", float), ("--rep-rate-mhz", float), ("--n-cycles", _count),
    ("--excitation-prob", float), ("--detection-efficiency", float),
    ("--dark-rate-hz", float), ("--bin-width-ns", float),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (created if missing)")
    common.add_argument("--workers", type=int)
    common.add_argument("--format", choices=("csv", "json"))
    for flag, typ in _PARAM_FLAGS:
        common.add_argument(flag, type=typ)

    parser = _Parser(prog="qjthermo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qjthermo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="simulate a TCSPC histogram")
    p = sub.add_parser("simulate", parents=[common], help="trajectory ensemble and heat series")
    p.add_argument("--variant", choices=("corrected", "printed"))
    p.add_argument("--mc-jarzynski", action="store_true", default=None)
    p = sub.add_parser("jarzynski", parents=[common], help="per-round Jarzynski functional")
    p.add_argument("--ensemble", help="ensemble file written by 'simulate'")
    p.add_argument("--variant", choices=("corrected", "printed"))
    p = sub.add_parser("fit", parents=[common], help="fit lifetime and swap parameter")
    p.add_argument("--histogram", help="histogram file")
    sub.add_parser("infer-shift", parents=[common], help="infer the common level shift")
    sub.choices["infer-shift"].add_argument("--work-file", help="one work value (eV) per line")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "jarzynski": cmd_jarzynski,
    "fit": cmd_fit,
    "infer-shift": cmd_infer_shift,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    started = time.perf_counter()
    warnings_seen = []

    def warn(msg):
        warnings_seen.append(msg)
        print(f"warning: {msg}", file=sys.stderr)

    try:
        cfg = RunConfig.from_sources(args.config, overrides)
        cfg.validate()
    except (ConfigError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = _Outputs(out_dir)
    code, results, error = EXIT_OK, {}, None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            fn = _COMMANDS[args.command]
            results = fn(cfg, out, warn) if args.command == "jarzynski" else fn(cfg, out)
        except (ConfigError, HistogramParseError, DomainError) as exc:
            code, error = EXIT_USAGE, str(exc)
        except NumericalFailure as exc:
            code, error, results = EXIT_NUMERIC, str(exc), exc.results
        except FitError as exc:
            code, error = EXIT_NUMERIC, str(exc)
    for w in caught:
        warn(str(w.message))
    if error:
        print(f"error: {error}", file=sys.stderr)

    report = {
        "command": args.command,
        "version": __version__,
        "config": cfg.as_dict(),
        "workers": cfg.workers,
        "outputs": out.files,
        "results": results,
        "warnings": warnings_seen,
        "exit_code": code,
        "error": error,
        "wall_clock_s": time.perf_counter() - started,
    }
    (out_dir / "report.json").write_text(_json_text(report), encoding="utf-8")
    return code


if __name__ == "__main__":
    sys.exit(main())
