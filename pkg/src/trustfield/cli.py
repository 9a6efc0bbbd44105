"""Command-line entry point: ``trustfield <subcommand> [flags]``.

Settings resolve as built-in defaults < ``--config`` file < flags.  The
config file is TOML; tables are flattened and every key is spelled like
the flag that overrides it (``malicious-frac`` or ``malicious_frac``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, DataError, TrustFieldError
from .logittrust import TrustParams, TrustTracker, write_trust_csv
from .netsim import (SimConfig, assign_policies, read_metrics_csv, run_all_windows,
                     write_events_csv, write_metrics_csv, write_policies_csv)
from .pipeline import (PipelineConfig, derive_seed, fields_from_files, run_pipeline,
                       vehicle_trust_from_log, write_vehicle_trust_csv)
from .trajdata import (SynthConfig, generate_synthetic, parse_trajectory_csv,
                       resample_uniform, write_trajectory_csv)

log = logging.getLogger("trustfield")


@dataclass(frozen=True)
class Opt:
    flag: str
    type: type
    default: object
    help: str
    choices: tuple | None = None


# every setting that a config file may carry
OPTIONS = {o.flag.replace("-", "_"): o for o in (
    Opt("seed", int, 0, "global seed; all stage seeds derive from it"),
    Opt("dx", float, 80.0, "bin width in space (ft)"),
    Opt("dt", float, 15.0, "bin width in time (s)"),
    Opt("window", float, 1.0, "sensing window (s)"),
    Opt("range", float, 300.0, "radio range (ft)"),
    Opt("hops", int, 3, "maximum flooding hops"),
    Opt("malicious-frac", float, 0.10, "fraction of malicious vehicles"),
    Opt("drop-prob", float, 0.9, "drop probability of a malicious relay"),
    Opt("nu0", float, 5.0, "Student-t degrees of freedom"),
    Opt("threshold", float, 0.5, "trust classification threshold"),
    Opt("kappa", float, 100.0, "delay-metric normalization scale"),
    Opt("capacity", int, 50, "evidence records kept per pair"),
    Opt("ridge", float, 1e-6, "ridge term of the weighted solve"),
    Opt("max-iter", int, 100, "IRLS iteration cap"),
    Opt("tol", float, 1e-6, "IRLS convergence tolerance on beta"),
    Opt("labeler", str, "self", "evidence labels: self-classification or pfr", ("self", "pfr")),
    Opt("mode", str, "dynamic", "trust source for the trust field", ("static", "dynamic")),
    Opt("vehicles", int, 100, "synthetic vehicle count"),
    Opt("duration", float, 900.0, "synthetic horizon (s)"),
    Opt("length", float, 2080.0, "synthetic corridor length (ft)"),
    Opt("speed-mean", float, 45.0, "synthetic mean speed (ft/s)"),
    Opt("speed-jitter", float, 10.0, "synthetic speed half-range (ft/s)"),
    Opt("entry-rate", float, None, "synthetic entries per second; unset means vehicles/duration"),
    Opt("lanes", int, 5, "synthetic lane count"),
    Opt("period", float, 0.1, "synthetic sampling period (s)"),
    Opt("input", str, None, "trajectory CSV to ingest instead of synthesizing"),
    Opt("out", str, None, "output directory"),
    Opt("per-vehicle", bool, False, "average trust per vehicle before averaging per bin"),
    Opt("events", bool, False, "also write the per-packet event log"),
    Opt("binary", bool, False, "write binary (P5) heatmaps"),
)}

COMMON = ("seed", "out", "dx", "dt", "window", "range", "hops", "malicious_frac", "nu0",
          "threshold", "mode")
SYNTH = ("vehicles", "duration", "length", "speed_mean", "speed_jitter", "entry_rate",
         "lanes", "period")
SIM = ("drop_prob", "events")
TRUST = ("kappa", "capacity", "ridge", "max_iter", "tol", "labeler")
FIELDS = ("per_vehicle", "binary")


def load_config(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    flat = {}

    def walk(d):
        for k, v in d.items():
            if isinstance(v, dict):
                walk(v)
                continue
            key = k.replace("-", "_")
            if key not in OPTIONS:
                raise ConfigError(f"{path}: unknown key {k!r}")
            if key in flat:
                raise ConfigError(f"{path}: key {k!r} given twice")
            flat[key] = v
    walk(raw)
    return flat


def _coerce(key, value):
    opt = OPTIONS[key]
    if value is None:
        return None
    if opt.type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    try:
        if opt.type is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        out = opt.type(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {opt.type.__name__}") from None
    if opt.choices and out not in opt.choices:
        raise ConfigError(f"{key} must be one of {opt.choices}, got {out!r}")
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file, and explicit flags."""
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for key, opt in OPTIONS.items():
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            out[key] = flag
        elif key in cfg:
            out[key] = _coerce(key, cfg[key])
        else:
            out[key] = opt.default
    return out


def sim_config(o: dict) -> SimConfig:
    return SimConfig(window_s=o["window"], radio_range_ft=o["range"], max_hops=o["hops"],
                     malicious_fraction=o["malicious_frac"],
                     malicious_drop_probability=o["drop_prob"], seed=o["seed"])


def trust_params(o: dict) -> TrustParams:
    return TrustParams(nu0=o["nu0"], threshold=o["threshold"], max_iterations=o["max_iter"],
                       convergence_tol=o["tol"], ridge=o["ridge"], history_capacity=o["capacity"],
                       kappa=o["kappa"], labeler=o["labeler"])


def synth_config(o: dict) -> SynthConfig:
    return SynthConfig(n_vehicles=o["vehicles"], duration_s=o["duration"],
                       corridor_length_ft=o["length"], speed_mean_ftps=o["speed_mean"],
                       speed_jitter_ftps=o["speed_jitter"], entry_rate_veh_per_s=o["entry_rate"],
                       seed=o["seed"], sample_period_s=o["period"], n_lanes=o["lanes"])


def pipeline_config(o: dict) -> PipelineConfig:
    return PipelineConfig(
        out_dir=Path(o["out"] or "out"),
        input_path=Path(o["input"]) if o["input"] else None,
        synth=None if o["input"] else synth_config(o),
        sim=sim_config(o), trust=trust_params(o), dx_ft=o["dx"], dt_s=o["dt"],
        mode=o["mode"], seed=o["seed"], per_vehicle=o["per_vehicle"],
        record_events=o["events"], binary_pgm=o["binary"])


def _out_dir(o: dict) -> Path:
    out = Path(o["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- subcommands


def cmd_synth(o: dict) -> int:
    """Write a synthetic trajectory file (``trajectory.csv``)."""
    # same stage seed as a pipeline run, so both produce the same trajectories
    ds = generate_synthetic(synth_config({**o, "seed": derive_seed(o["seed"], "synth")}))
    if len(ds) == 0:
        log.warning("no vehicles requested; writing a header-only trajectory file")
    path = write_trajectory_csv(ds, _out_dir(o) / "trajectory.csv")
    print(path)
    return 0


def cmd_simulate(o: dict) -> int:
    """Flood messages over a trajectory file; writes policies.csv and metrics.csv."""
    if not o["input"]:
        raise ConfigError("simulate needs --input TRAJECTORY_CSV")
    ds = parse_trajectory_csv(o["input"])
    ds = resample_uniform(ds, ds.sample_period_s)
    sim = sim_config({**o, "seed": derive_seed(o["seed"], "flood")})
    policies = assign_policies(ds, sim)
    out = _out_dir(o)
    write_policies_csv(policies, out / "policies.csv")
    events = [] if o["events"] else None
    rows = [m for _, ms in run_all_windows(ds, policies, sim, events) for m in ms]
    print(write_metrics_csv(rows, out / "metrics.csv"))
    if events is not None:
        write_events_csv(events, out / "events.csv")
    return 0


def cmd_trust(o: dict, metrics_path: str | None) -> int:
    """Run LogitTrust over a metrics log; writes trust.csv and vehicle_trust.csv."""
    if not metrics_path:
        raise ConfigError("trust needs --metrics METRICS_CSV")
    if not Path(metrics_path).is_file():
        raise FileNotFoundError(f"{metrics_path} not found (run `trustfield simulate` first)")
    tracker = TrustTracker(trust_params(o))
    rows = list(tracker.run(read_metrics_csv(metrics_path)))
    out = _out_dir(o)
    print(write_trust_csv(rows, out / "trust.csv"))
    write_vehicle_trust_csv(vehicle_trust_from_log(rows), out / "vehicle_trust.csv")
    return 0


def cmd_fields(o: dict, run: str | None, trajectory: str | None, trust: str | None,
               explicit: set) -> int:
    """Recompute the four fields from stored logs.

    With ``--run DIR`` the trajectory, trust log and extents come from a
    pipeline output directory, so identical grid flags reproduce its field
    files byte for byte.
    """
    length = duration = None
    window = o["window"]
    if run:
        run = Path(run)
        manifest = run / "manifest.json"
        if manifest.is_file():
            meta = json.loads(manifest.read_text())
            length = meta["dataset"]["corridor_length_ft"]
            duration = meta["dataset"]["duration_s"]
            if "window" not in explicit:
                window = meta["config"]["sim"]["window_s"]
        trajectory = trajectory or run / "trajectory.csv"
        if trust is None:
            trust = run / "trust.csv"
            if not trust.is_file() and (run / "vehicle_trust.csv").is_file():
                trust = run / "vehicle_trust.csv"
    if not trajectory or not trust:
        raise ConfigError("fields needs --run DIR or both --trajectory and --trust")
    if "length" in explicit:
        length = o["length"]
    if "duration" in explicit:
        duration = o["duration"]
    out = _out_dir(o)
    for name in fields_from_files(trajectory, trust, out, dx_ft=o["dx"], dt_s=o["dt"],
                                  window_s=window, corridor_length_ft=length,
                                  duration_s=duration, per_vehicle=o["per_vehicle"],
                                  binary=o["binary"]):
        print(out / name)
    return 0


def cmd_pipeline(o: dict) -> int:
    """Run every stage into ``--out``."""
    print(run_pipeline(pipeline_config(o)))
    return 0


# ---------------------------------------------------------------- parser


def _add(p: argparse.ArgumentParser, keys):
    for key in keys:
        opt = OPTIONS[key]
        if opt.type is bool:
            p.add_argument("--" + opt.flag, dest=key, action="store_true", default=None,
                           help=opt.help)
        else:
            shown = "" if opt.default is None else f" (default {opt.default})"
            p.add_argument("--" + opt.flag, dest=key, type=opt.type, default=None,
                           choices=opt.choices, help=opt.help + shown)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trustfield", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help, keys):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", metavar="PATH", help="TOML settings file")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
        _add(p, COMMON)
        _add(p, keys)
        return p

    command("synth", "generate synthetic trajectories", SYNTH)
    command("simulate", "simulate packet flooding over trajectories", ("input",) + SIM)
    p = command("trust", "estimate trust from forwarding metrics", TRUST)
    p.add_argument("--metrics", metavar="CSV", help="metrics log from `simulate`")
    p = command("fields", "bin trajectories and trust into fields",
                FIELDS + ("length", "duration"))
    p.add_argument("--run", metavar="DIR", help="pipeline output directory")
    p.add_argument("--trajectory", metavar="CSV")
    p.add_argument("--trust", metavar="CSV", help="trust.csv or vehicle_trust.csv")
    command("pipeline", "run every stage end to end", ("input",) + SYNTH + SIM + TRUST + FIELDS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        o = resolve(args)
        explicit = {k for k in OPTIONS if getattr(args, k, None) not in (None, False)}
        if args.command == "synth":
            return cmd_synth(o)
        if args.command == "simulate":
            return cmd_simulate(o)
        if args.command == "trust":
            return cmd_trust(o, args.metrics)
        if args.command == "fields":
            return cmd_fields(o, args.run, args.trajectory, args.trust, explicit)
        return cmd_pipeline(o)
    except TrustFieldError as exc:
        print(f"trustfield: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"trustfield: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
