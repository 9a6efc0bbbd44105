"""End-to-end runs: trajectories -> forwarding metrics -> trust -> fields.

Every output of a run is a pure function of the input trajectory and the
:class:`PipelineConfig`; one global seed derives the seeds of all random
stages.  Outputs are staged in a scratch directory and only moved into
place when every stage has succeeded.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import shutil
import tempfile
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from ._backend import BACKEND
from .errors import ConfigError, FormatError, ParseError, StageError, TrustFieldError
from .fields import (GridSpec, ScalarField, TrustTraces, compute_density_field,
                     compute_flow_field, compute_speed_field, compute_trust_field,
                     export_field_csv, export_heatmap)
from .logittrust import TrustLogRow, TrustParams, TrustTracker, read_trust_csv, TRUST_HEADER
from .netsim import (METRICS_HEADER, SimConfig, assign_policies, run_all_windows,
                     write_events_csv, write_policies_csv)
from .trajdata import (SynthConfig, TrajectoryDataset, generate_synthetic,
                       parse_trajectory_csv, resample_uniform, write_trajectory_csv)

log = logging.getLogger(__name__)

STAGES = ("synth", "policy", "flood", "static_trust")
MODES = ("static", "dynamic")
FIELD_QUANTITIES = ("density", "speed", "flow", "trust")
AGGREGATION_NOTE = ("vehicle trust per window = mean theta over all observers that scored it "
                    "in that window; carried forward to later samples until the next estimate")


def derive_seed(seed: int, stage: str) -> int:
    """Stage seed from the global seed (stable across numpy versions)."""
    state = np.random.SeedSequence([int(seed), STAGES.index(stage)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass(frozen=True)
class PipelineConfig:
    out_dir: Path = Path("out")
    input_path: Path | None = None
    synth: SynthConfig | None = field(default_factory=SynthConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    trust: TrustParams = field(default_factory=TrustParams)
    dx_ft: float = 80.0
    dt_s: float = 15.0
    mode: str = "dynamic"
    seed: int = 0
    per_vehicle: bool = False
    record_events: bool = False
    binary_pgm: bool = False

    def __post_init__(self):
        if (self.input_path is None) == (self.synth is None):
            raise ConfigError("exactly one of an input trajectory file or synthetic "
                              "parameters must be given")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        GridSpec(1.0, 1.0, self.dx_ft, self.dt_s)

    def seeds(self) -> dict[str, int]:
        return {stage: derive_seed(self.seed, stage) for stage in STAGES}

    def manifest(self) -> dict:
        def plain(v):
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            return v
        # the output location is deliberately left out: it does not affect any output byte
        return plain({
            "input_path": self.input_path,
            "synth": asdict(self.synth) if self.synth is not None else None,
            "sim": asdict(self.sim),
            "trust": asdict(self.trust),
            "grid": {"dx_ft": self.dx_ft, "dt_s": self.dt_s},
            "mode": self.mode,
            "seed": self.seed,
            "per_vehicle": self.per_vehicle,
            "record_events": self.record_events,
        })


# --------------------------------------------------------------------- stages


def load_dataset(config: PipelineConfig) -> TrajectoryDataset:
    if config.input_path is not None:
        ds = parse_trajectory_csv(config.input_path)
        return resample_uniform(ds, ds.sample_period_s)
    synth = replace(config.synth, seed=config.seeds()["synth"])
    return generate_synthetic(synth)


def run_dynamic(dataset: TrajectoryDataset, sim: SimConfig, params: TrustParams, out: Path,
                record_events: bool = False) -> None:
    """Simulate forwarding and LogitTrust window by window, streaming the logs."""
    policies = assign_policies(dataset, sim)
    write_policies_csv(policies, out / "policies.csv")
    tracker = TrustTracker(params)
    events = [] if record_events else None
    with (out / "metrics.csv").open("w", newline="") as mf, \
            (out / "trust.csv").open("w", newline="") as tf:
        mw = csv.writer(mf, lineterminator="\n")
        tw = csv.writer(tf, lineterminator="\n")
        mw.writerow(METRICS_HEADER)
        tw.writerow(TRUST_HEADER)
        for _, rows in run_all_windows(dataset, policies, sim, events):
            for m in rows:
                mw.writerow((m.window_index, m.observer_id, m.subject_id, m.packets_received,
                             m.packets_forwarded, repr(m.pfr), repr(m.pfd)))
                r = tracker.observe(m)
                if r is not None:
                    tw.writerow((r.window_index, r.observer_id, r.subject_id, repr(r.theta),
                                 r.s, int(r.converged), r.iterations_used))
    if events is not None:
        write_events_csv(events, out / "events.csv")


def vehicle_trust_from_log(rows: Iterable[TrustLogRow]) -> list[tuple[int, int, float, int]]:
    """``(window_index, vehicle_id, mean theta, n_observers)`` sorted by window, vehicle."""
    acc = defaultdict(list)
    for r in rows:
        acc[(r.window_index, r.subject_id)].append(r.theta)
    return [(w, v, math.fsum(th) / len(th), len(th)) for (w, v), th in sorted(acc.items())]


def static_vehicle_trust(dataset: TrajectoryDataset, seed: int) -> list[tuple[int, int, float, int]]:
    """One U[0, 1] trust per vehicle, held for the whole run (window 0, carried forward)."""
    rng = np.random.default_rng(seed)
    draws = rng.uniform(0.0, 1.0, size=len(dataset))
    return [(0, v, float(d), 0) for v, d in zip(dataset.vehicle_ids, draws)]


VEHICLE_TRUST_HEADER = ("window_index", "vehicle_id", "trust", "n_observers")


def write_vehicle_trust_csv(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VEHICLE_TRUST_HEADER)
        for win, vid, th, n in rows:
            w.writerow((win, vid, repr(th), n))
    return path


def read_vehicle_trust_csv(path) -> list[tuple[int, int, float, int]]:
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in VEHICLE_TRUST_HEADER if c not in (reader.fieldnames or ())]
        if missing:
            raise FormatError(f"{path}: missing column {missing[0]!r}")
        for rownum, row in enumerate(reader, start=2):
            try:
                out.append((int(row["window_index"]), int(row["vehicle_id"]),
                            float(row["trust"]), int(row["n_observers"])))
            except (TypeError, ValueError):
                raise ParseError(f"{path}: row {rownum} is malformed") from None
    return out


def trust_traces(dataset: TrajectoryDataset, vehicle_trust, window_s: float) -> TrustTraces:
    """Attach to each trajectory sample its vehicle's latest trust estimate.

    Samples earlier than a vehicle's first estimate carry no trust and are
    left out.
    """
    per_vehicle = defaultdict(list)
    for win, vid, th, _ in vehicle_trust:
        per_vehicle[vid].append((win, th))
    cols = {"vehicle_id": [], "time_s": [], "position_ft": [], "trust": []}
    for vid, tr in dataset.traces.items():
        est = per_vehicle.get(vid)
        if not est:
            continue
        est.sort()
        wins = np.array([w for w, _ in est])
        vals = np.array([th for _, th in est])
        sample_win = np.floor(tr.times / window_s + 1e-9).astype(np.int64)
        k = np.searchsorted(wins, sample_win, side="right") - 1
        ok = k >= 0
        cols["vehicle_id"].append(np.full(int(ok.sum()), vid, dtype=np.int64))
        cols["time_s"].append(tr.times[ok])
        cols["position_ft"].append(tr.positions[ok])
        cols["trust"].append(vals[k[ok]])
    if not cols["trust"]:
        return TrustTraces(np.empty(0, dtype=np.int64), np.empty(0), np.empty(0), np.empty(0))
    return TrustTraces(*(np.concatenate(cols[k]) for k in
                         ("vehicle_id", "time_s", "position_ft", "trust")))


def compute_fields(dataset: TrajectoryDataset, traces: TrustTraces, grid: GridSpec,
                   per_vehicle: bool = False) -> dict[str, ScalarField]:
    density = compute_density_field(dataset, grid)
    speed = compute_speed_field(dataset, grid)
    return {
        "density": density,
        "speed": speed,
        "flow": compute_flow_field(density, speed),
        "trust": compute_trust_field(traces, grid, per_vehicle=per_vehicle),
    }


def export_fields(fields: dict[str, ScalarField], out: Path, binary: bool = False) -> list[str]:
    written = []
    for q in FIELD_QUANTITIES:
        f = fields[q]
        export_field_csv(f, out / f"{q}_field.csv")
        written.append(f"{q}_field.csv")
        if f.present.any():
            export_heatmap(f, out / f"{q}_field.pgm", binary=binary)
            written.append(f"{q}_field.pgm")
        else:
            log.warning("%s field is empty; heatmap skipped", q)
    return written


def fields_from_files(trajectory_path, trust_path, out: Path, *, dx_ft: float, dt_s: float,
                      window_s: float, corridor_length_ft: float | None = None,
                      duration_s: float | None = None, per_vehicle: bool = False,
                      binary: bool = False) -> list[str]:
    """Re-bin stored logs without re-simulating.

    ``trust_path`` is either a pairwise trust log (trust.csv) or a
    per-vehicle trust table (vehicle_trust.csv); the header decides.
    """
    trajectory_path, trust_path = Path(trajectory_path), Path(trust_path)
    for p, hint in ((trajectory_path, "write one with `trustfield synth` or a pipeline run"),
                    (trust_path, "run `trustfield pipeline` or `trustfield trust` first")):
        if not p.is_file():
            raise FileNotFoundError(f"{p} not found ({hint})")
    ds = parse_trajectory_csv(trajectory_path)
    with trust_path.open(newline="") as fh:
        header = next(csv.reader(fh), [])
    if "observer_id" in header:
        vt = vehicle_trust_from_log(read_trust_csv(trust_path))
    else:
        vt = read_vehicle_trust_csv(trust_path)
    grid = GridSpec(corridor_length_ft if corridor_length_ft is not None else ds.corridor_length_ft,
                    duration_s if duration_s is not None else ds.duration_s, dx_ft, dt_s)
    fields = compute_fields(ds, trust_traces(ds, vt, window_s), grid, per_vehicle)
    return export_fields(fields, out, binary)


def _versions() -> dict:
    return {"trustfield": __version__, "kernel_backend": BACKEND,
            "python": platform.python_version(), "numpy": np.__version__}


def run_pipeline(config: PipelineConfig) -> Path:
    """Run every stage; returns the populated output directory."""
    out = Path(config.out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".trustfield-", dir=out.parent))
    seeds = config.seeds()
    stage = "load"
    try:
        ds = load_dataset(config)
        write_trajectory_csv(ds, tmp / "trajectory.csv")
        written = ["trajectory.csv"]
        if config.mode == "dynamic":
            stage = "simulate+trust"
            sim = replace(config.sim, seed=seeds["flood"])
            run_dynamic(ds, sim, config.trust, tmp, config.record_events)
            written += ["policies.csv", "metrics.csv", "trust.csv"]
            if config.record_events:
                written.append("events.csv")
            trust_file = tmp / "trust.csv"
        else:
            stage = "static-trust"
            trust_file = write_vehicle_trust_csv(
                static_vehicle_trust(ds, seeds["static_trust"]), tmp / "vehicle_trust.csv")
            written.append("vehicle_trust.csv")
        stage = "fields"
        written += fields_from_files(
            tmp / "trajectory.csv", trust_file, tmp, dx_ft=config.dx_ft, dt_s=config.dt_s,
            window_s=config.sim.window_s, corridor_length_ft=ds.corridor_length_ft,
            duration_s=ds.duration_s, per_vehicle=config.per_vehicle, binary=config.binary_pgm)
        stage = "manifest"
        manifest = {
            "config": config.manifest(),
            "seeds": seeds,
            "dataset": {"corridor_length_ft": ds.corridor_length_ft, "duration_s": ds.duration_s,
                        "sample_period_s": ds.sample_period_s, "n_vehicles": len(ds),
                        "warnings": list(ds.warnings)},
            "aggregation": AGGREGATION_NOTE,
            "versions": _versions(),
            "outputs": sorted(written),
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append("manifest.json")
        out.mkdir(parents=True, exist_ok=True)
        for name in written:
            (tmp / name).replace(out / name)
    except TrustFieldError as exc:
        raise StageError(stage, exc) from exc
    except (OSError, ValueError, ArithmeticError) as exc:
        raise StageError(stage, exc) from exc
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return out
