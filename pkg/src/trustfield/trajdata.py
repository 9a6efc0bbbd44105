"""Microscopic trajectory data: NGSIM-style CSV I/O, resampling, synthetic
corridors and neighbor queries along the longitudinal axis.

Units are NGSIM-native throughout: feet and seconds.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import ConfigError, EmptyDatasetError, FormatError, ParseError

log = logging.getLogger(__name__)

NGSIM_PERIOD_S = 0.1

# raw-unit -> seconds for the recognised time columns
_TIME_SCALES = {"Global_Time": 1e-3, "Frame_ID": NGSIM_PERIOD_S}


@dataclass(frozen=True)
class TraceSample:
    vehicle_id: int
    time_s: float
    position_ft: float
    lane: int
    speed_ftps: float


@dataclass(frozen=True, eq=False)
class VehicleTrace:
    """Time-ordered samples of one vehicle, stored column-wise."""

    vehicle_id: int
    times: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray
    lanes: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if n == 0:
            raise EmptyDatasetError(f"vehicle {self.vehicle_id}: empty trace")
        for name in ("positions", "speeds", "lanes"):
            if len(getattr(self, name)) != n:
                raise FormatError(f"vehicle {self.vehicle_id}: column {name} length mismatch")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ParseError(f"vehicle {self.vehicle_id}: times not strictly increasing")
        for name in ("times", "positions", "speeds", "lanes"):
            getattr(self, name).setflags(write=False)

    def __len__(self):
        return len(self.times)

    @property
    def start_s(self) -> float:
        return float(self.times[0])

    @property
    def end_s(self) -> float:
        return float(self.times[-1])

    @property
    def samples(self) -> list[TraceSample]:
        return [
            TraceSample(self.vehicle_id, float(t), float(p), int(ln), float(v))
            for t, p, v, ln in zip(self.times, self.positions, self.speeds, self.lanes)
        ]

    def is_active(self, time_s: float) -> bool:
        return self.start_s <= time_s <= self.end_s

    def position_at(self, time_s: float) -> float:
        return float(np.interp(time_s, self.times, self.positions))

    def equals(self, other: "VehicleTrace", tol: float = 1e-9) -> bool:
        return (
            self.vehicle_id == other.vehicle_id
            and len(self) == len(other)
            and np.allclose(self.times, other.times, rtol=0, atol=tol)
            and np.allclose(self.positions, other.positions, rtol=0, atol=tol)
            and np.allclose(self.speeds, other.speeds, rtol=0, atol=tol)
            and np.array_equal(self.lanes, other.lanes)
        )


def make_trace(vehicle_id, times, positions, speeds, lanes=None) -> VehicleTrace:
    times = np.asarray(times, dtype=float)
    if lanes is None:
        lanes = np.ones(len(times), dtype=np.int64)
    return VehicleTrace(
        int(vehicle_id),
        times.copy(),
        np.asarray(positions, dtype=float).copy(),
        np.asarray(speeds, dtype=float).copy(),
        np.asarray(lanes, dtype=np.int64).copy(),
    )


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    traces: Mapping[int, VehicleTrace]
    corridor_length_ft: float
    duration_s: float
    sample_period_s: float = NGSIM_PERIOD_S
    warnings: tuple[str, ...] = ()
    _spans: np.ndarray = field(init=False, repr=False)
    _ids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ordered = dict(sorted(self.traces.items()))
        object.__setattr__(self, "traces", ordered)
        ids = np.fromiter(ordered, dtype=np.int64, count=len(ordered))
        spans = np.array([[tr.start_s, tr.end_s] for tr in ordered.values()], dtype=float)
        object.__setattr__(self, "_ids", ids)
        object.__setattr__(self, "_spans", spans.reshape(-1, 2))

    def __len__(self):
        return len(self.traces)

    @property
    def vehicle_ids(self) -> list[int]:
        return list(self.traces)

    @property
    def n_samples(self) -> int:
        return sum(len(tr) for tr in self.traces.values())

    def snapshot(self, time_s: float) -> tuple[np.ndarray, np.ndarray]:
        """Ids (ascending) and interpolated positions of vehicles active at ``time_s``."""
        if not len(self._ids):
            return self._ids, np.empty(0)
        active = (self._spans[:, 0] <= time_s) & (time_s <= self._spans[:, 1])
        ids = self._ids[active]
        pos = np.array([self.traces[int(v)].position_at(time_s) for v in ids], dtype=float)
        return ids, pos

    def columns(self) -> dict[str, np.ndarray]:
        """All samples flattened into parallel arrays (vehicle, time, position, speed, lane)."""
        trs = list(self.traces.values())
        if not trs:
            empty = np.empty(0)
            return {"vehicle_id": np.empty(0, dtype=np.int64), "time_s": empty,
                    "position_ft": empty, "speed_ftps": empty, "lane": np.empty(0, dtype=np.int64)}
        return {
            "vehicle_id": np.concatenate([np.full(len(tr), tr.vehicle_id, dtype=np.int64) for tr in trs]),
            "time_s": np.concatenate([tr.times for tr in trs]),
            "position_ft": np.concatenate([tr.positions for tr in trs]),
            "speed_ftps": np.concatenate([tr.speeds for tr in trs]),
            "lane": np.concatenate([tr.lanes for tr in trs]),
        }

    def equals(self, other: "TrajectoryDataset", tol: float = 1e-9) -> bool:
        return (
            self.vehicle_ids == other.vehicle_ids
            and abs(self.corridor_length_ft - other.corridor_length_ft) <= tol
            and abs(self.duration_s - other.duration_s) <= tol
            and abs(self.sample_period_s - other.sample_period_s) <= tol
            and all(a.equals(b, tol) for a, b in zip(self.traces.values(), other.traces.values()))
        )


# --------------------------------------------------------------------- CSV I/O


@dataclass(frozen=True)
class ColumnMap:
    """Header names for the five required fields.

    ``time`` defaults to whichever of Global_Time (ms) or Frame_ID (0.1 s
    ticks) is present.  ``time_scale`` converts raw time units to seconds and
    is inferred from the column name when left as None.
    """

    vehicle_id: str = "Vehicle_ID"
    time: str | None = None
    position: str = "Local_Y"
    speed: str = "v_Vel"
    lane: str = "Lane_ID"
    time_scale: float | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object] | None) -> "ColumnMap":
        if mapping is None:
            return cls()
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown column_map keys: {sorted(unknown)}")
        return cls(**mapping)


def _cell(row, idx, rownum, col, conv=float):
    raw = row[idx].strip() if idx < len(row) else ""
    try:
        value = conv(raw)
    except ValueError:
        raise ParseError(f"row {rownum}: column {col!r} has non-numeric value {raw!r}") from None
    if conv is float and not math.isfinite(value):
        raise ParseError(f"row {rownum}: column {col!r} is not finite ({raw!r})")
    return value


def _int_cell(raw: str) -> int:
    f = float(raw)
    if not f.is_integer():
        raise ValueError(raw)
    return int(f)


def parse_trajectory_csv(
    path, column_map: Mapping[str, object] | ColumnMap | None = None,
    default_period_s: float = NGSIM_PERIOD_S,
) -> TrajectoryDataset:
    """Load an NGSIM-style trajectory CSV.

    Times are rebased so the earliest row is t=0.  Rows repeating a
    (vehicle, time) pair are dropped after the first.  The corridor length
    and duration are the maxima observed in the file.
    """
    cmap = column_map if isinstance(column_map, ColumnMap) else ColumnMap.from_mapping(column_map)
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDatasetError(f"{path}: empty file")
        header = [h.strip() for h in header]
        time_col = cmap.time
        if time_col is None:
            time_col = next((c for c in _TIME_SCALES if c in header), "Global_Time")
        scale = cmap.time_scale if cmap.time_scale is not None else _TIME_SCALES.get(time_col, 1.0)
        cols = {"vehicle_id": cmap.vehicle_id, "time": time_col, "position": cmap.position,
                "speed": cmap.speed, "lane": cmap.lane}
        idx = {}
        for key, name in cols.items():
            if name not in header:
                raise FormatError(f"{path}: missing column {name!r} ({key})")
            idx[key] = header.index(name)

        vids, raw_t, pos, spd, lanes = [], [], [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            vids.append(_cell(row, idx["vehicle_id"], rownum, cols["vehicle_id"], _int_cell))
            raw_t.append(_cell(row, idx["time"], rownum, cols["time"]))
            p = _cell(row, idx["position"], rownum, cols["position"])
            v = _cell(row, idx["speed"], rownum, cols["speed"])
            if p < 0 or v < 0:
                raise ParseError(f"row {rownum}: negative position or speed")
            pos.append(p)
            spd.append(v)
            lanes.append(_cell(row, idx["lane"], rownum, cols["lane"], _int_cell))
    if not vids:
        raise EmptyDatasetError(f"{path}: no data rows")

    vids_a = np.asarray(vids, dtype=np.int64)
    raw_a = np.asarray(raw_t, dtype=float)
    times = (raw_a - raw_a.min()) * scale
    # 1e-9 s rounding strips representation noise from the unit conversion
    times = np.round(times, 9)
    return _from_columns(vids_a, times, np.asarray(pos), np.asarray(spd),
                         np.asarray(lanes, dtype=np.int64), default_period_s)


def _from_columns(vids, times, pos, spd, lanes, default_period_s, corridor=None, duration=None):
    # stable sort keeps file order among duplicates, so keep-first is well defined
    order = np.lexsort((times, vids))
    vids, times, pos, spd, lanes = vids[order], times[order], pos[order], spd[order], lanes[order]
    keep = np.ones(len(vids), dtype=bool)
    keep[1:] = (vids[1:] != vids[:-1]) | (times[1:] != times[:-1])
    if not keep.all():
        log.info("dropped %d duplicate (vehicle, time) rows", int((~keep).sum()))
    vids, times, pos, spd, lanes = vids[keep], times[keep], pos[keep], spd[keep], lanes[keep]

    bounds = np.flatnonzero(np.diff(vids)) + 1
    traces = {}
    diffs = []
    for chunk in np.split(np.arange(len(vids)), bounds):
        vid = int(vids[chunk[0]])
        traces[vid] = make_trace(vid, times[chunk], pos[chunk], spd[chunk], lanes[chunk])
        if len(chunk) > 1:
            diffs.append(np.diff(times[chunk]))
    period = default_period_s
    if diffs:
        period = float(np.round(np.median(np.concatenate(diffs)), 9))
    return TrajectoryDataset(
        traces,
        corridor_length_ft=float(pos.max()) if corridor is None else corridor,
        duration_s=float(times.max()) if duration is None else duration,
        sample_period_s=period,
    )


TRAJECTORY_HEADER = ("Vehicle_ID", "Global_Time", "Local_Y", "v_Vel", "Lane_ID")


def write_trajectory_csv(dataset: TrajectoryDataset, path) -> Path:
    """Write the NGSIM-shaped subset of columns; Global_Time is in ms from t=0."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for tr in dataset.traces.values():
            for t, p, v, ln in zip(tr.times, tr.positions, tr.speeds, tr.lanes):
                w.writerow((tr.vehicle_id, repr(float(t) * 1000.0), repr(float(p)),
                            repr(float(v)), int(ln)))
    return path


# ------------------------------------------------------------------ resampling


def resample_uniform(dataset: TrajectoryDataset, period_s: float) -> TrajectoryDataset:
    """Linearly interpolate every trace onto the global grid k * period_s.

    Only grid points inside each trace's own time span are kept.  A
    single-sample trace is passed through unchanged and reported in the
    returned dataset's ``warnings``.
    """
    if not period_s > 0:
        raise ConfigError("period_s must be > 0")
    eps = 1e-9
    traces = {}
    warnings = list(dataset.warnings)
    for vid, tr in dataset.traces.items():
        if len(tr) == 1:
            warnings.append(f"vehicle {vid}: single sample, not resampled")
            traces[vid] = tr
            continue
        k0 = math.ceil(tr.start_s / period_s - eps)
        k1 = math.floor(tr.end_s / period_s + eps)
        if k1 < k0:
            warnings.append(f"vehicle {vid}: span shorter than one period, not resampled")
            traces[vid] = tr
            continue
        grid = np.round(np.arange(k0, k1 + 1) * period_s, 9)
        grid = np.clip(grid, tr.start_s, tr.end_s)
        traces[vid] = make_trace(
            vid, grid,
            np.interp(grid, tr.times, tr.positions),
            np.interp(grid, tr.times, tr.speeds),
            # lanes are categorical: take the lane of the latest sample at or before t
            tr.lanes[np.clip(np.searchsorted(tr.times, grid, side="right") - 1, 0, len(tr) - 1)],
        )
    return TrajectoryDataset(traces, dataset.corridor_length_ft, dataset.duration_s,
                             period_s, tuple(warnings))


# ------------------------------------------------------------------- neighbors


class Neighbors(NamedTuple):
    present: bool
    ids: list[int]


def neighbor_matrix(positions: np.ndarray, range_ft: float) -> np.ndarray:
    """Boolean adjacency |p_i - p_j| <= range with an empty diagonal."""
    adj = np.abs(positions[:, None] - positions[None, :]) <= range_ft
    np.fill_diagonal(adj, False)
    return adj


def neighbors_within_range(dataset: TrajectoryDataset, vehicle_id: int, time_s: float,
                           range_ft: float) -> Neighbors:
    if not range_ft > 0:
        raise ConfigError("range_ft must be > 0")
    tr = dataset.traces.get(vehicle_id)
    if tr is None or not tr.is_active(time_s):
        return Neighbors(False, [])
    ids, pos = dataset.snapshot(time_s)
    me = int(np.searchsorted(ids, vehicle_id))
    near = np.abs(pos - pos[me]) <= range_ft
    near[me] = False
    return Neighbors(True, [int(v) for v in ids[near]])


# ------------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SynthConfig:
    n_vehicles: int = 100
    duration_s: float = 900.0
    corridor_length_ft: float = 2080.0
    speed_mean_ftps: float = 45.0
    speed_jitter_ftps: float = 10.0
    entry_rate_veh_per_s: float | None = None  # None: n_vehicles / duration_s
    seed: int = 0
    sample_period_s: float = NGSIM_PERIOD_S
    n_lanes: int = 5

    def __post_init__(self):
        if self.n_vehicles < 0:
            raise ConfigError("n_vehicles must be >= 0")
        if self.entry_rate_veh_per_s is not None and not self.entry_rate_veh_per_s > 0:
            raise ConfigError("entry_rate_veh_per_s must be > 0")
        for name in ("duration_s", "corridor_length_ft", "speed_mean_ftps", "sample_period_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0 <= self.speed_jitter_ftps < self.speed_mean_ftps:
            raise ConfigError("speed_jitter_ftps must lie in [0, speed_mean_ftps)")
        if self.n_lanes < 1:
            raise ConfigError("n_lanes must be >= 1")


def generate_synthetic(config: SynthConfig) -> TrajectoryDataset:
    """Seeded one-directional corridor traffic.

    Vehicles enter at position 0 at exponential inter-arrival gaps (rate
    ``entry_rate_veh_per_s``, by default n_vehicles / duration_s) on the
    sampling grid, hold a constant speed drawn uniformly from mean +/-
    jitter, and leave at the corridor end or
    at ``duration_s``.  When the arrivals would overrun the horizon they
    are compressed onto it so that every requested vehicle appears.
    """
    L, T, dt = config.corridor_length_ft, config.duration_s, config.sample_period_s
    if config.n_vehicles == 0:
        return TrajectoryDataset({}, L, T, dt)
    rng = np.random.default_rng(config.seed)
    n = config.n_vehicles
    rate = config.entry_rate_veh_per_s or n / T
    arrivals = np.cumsum(rng.exponential(1.0 / rate, size=n))
    arrivals -= arrivals[0]
    last_entry = T * (1.0 - 1.0 / (n + 1))
    if arrivals[-1] > last_entry:
        arrivals *= last_entry / arrivals[-1]
    entry_k = np.round(arrivals / dt).astype(np.int64)
    speeds = rng.uniform(config.speed_mean_ftps - config.speed_jitter_ftps,
                         config.speed_mean_ftps + config.speed_jitter_ftps, size=n)
    lanes = rng.integers(1, config.n_lanes + 1, size=n)
    k_end = math.floor(T / dt + 1e-9)

    traces = {}
    for i in range(n):
        vid = i + 1
        # last step m with m*dt*v <= L, then truncated at the horizon
        m_exit = math.floor(L / (speeds[i] * dt) + 1e-9)
        m_max = min(m_exit, k_end - entry_k[i])
        m = np.arange(m_max + 1)
        times = np.round((entry_k[i] + m) * dt, 9)
        pos = np.minimum(speeds[i] * dt * m, L)
        traces[vid] = make_trace(vid, times, pos, np.full(len(m), speeds[i]),
                                 np.full(len(m), lanes[i]))
    return TrajectoryDataset(traces, L, T, dt)


def iter_samples(dataset: TrajectoryDataset) -> Iterable[TraceSample]:
    for tr in dataset.traces.values():
        yield from tr.samples
