"""Spatiotemporal binning of microscopic traces into macroscopic fields.

The domain [0, L] x [0, T] is cut into bins of dx_ft x dt_s; bin (i, j)
covers [i dx, (i+1) dx) x [j dt, (j+1) dt) with the upper edges of the
domain folded into the last bin.  Density and speed follow Edie's
generalized definitions (time occupancy and distance travelled per bin
area), flow is their product, and trust is the plain mean of the trust
values of all trace points inside a bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError, RangeError
from .trajdata import TrajectoryDataset

QUANTITIES = ("density", "speed", "flow", "trust")


@dataclass(frozen=True)
class GridSpec:
    corridor_length_ft: float
    duration_s: float
    dx_ft: float = 80.0
    dt_s: float = 15.0

    def __post_init__(self):
        if not (self.dx_ft > 0 and self.dt_s > 0):
            raise ConfigError("bin sizes dx_ft and dt_s must be > 0")
        if not (self.corridor_length_ft >= 0 and self.duration_s >= 0):
            raise ConfigError("grid extent must be non-negative")

    @property
    def n_x(self) -> int:
        return max(1, math.ceil(self.corridor_length_ft / self.dx_ft - 1e-9))

    @property
    def n_t(self) -> int:
        return max(1, math.ceil(self.duration_s / self.dt_s - 1e-9))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_t)

    @classmethod
    def for_dataset(cls, dataset: TrajectoryDataset, dx_ft: float = 80.0,
                    dt_s: float = 15.0) -> "GridSpec":
        return cls(dataset.corridor_length_ft, dataset.duration_s, dx_ft, dt_s)


def bin_indices(positions, times, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`bin_index`."""
    p = np.asarray(positions, dtype=float)
    t = np.asarray(times, dtype=float)
    bad = (p < 0) | (p > grid.corridor_length_ft) | (t < 0) | (t > grid.duration_s)
    bad |= ~np.isfinite(p) | ~np.isfinite(t)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise RangeError(f"point (position={p[k]!r} ft, time={t[k]!r} s) outside "
                         f"[0, {grid.corridor_length_ft}] x [0, {grid.duration_s}]")
    i = np.minimum(np.floor(p / grid.dx_ft).astype(np.int64), grid.n_x - 1)
    j = np.minimum(np.floor(t / grid.dt_s).astype(np.int64), grid.n_t - 1)
    return i, j


def bin_index(position_ft: float, time_s: float, grid: GridSpec) -> tuple[int, int]:
    i, j = bin_indices([position_ft], [time_s], grid)
    return int(i[0]), int(j[0])


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray
    present: np.ndarray
    quantity: str

    def __post_init__(self):
        if self.quantity not in QUANTITIES:
            raise ConfigError(f"unknown field quantity {self.quantity!r}")
        if self.values.shape != self.grid.shape or self.present.shape != self.grid.shape:
            raise FormatError(f"field arrays must have shape {self.grid.shape}")

    def masked(self) -> np.ndarray:
        """Values with absent bins as nan (a copy)."""
        return np.where(self.present, self.values, np.nan)

    def mean(self) -> float:
        return float(self.values[self.present].mean()) if self.present.any() else math.nan


def _flat_keys(dataset: TrajectoryDataset, grid: GridSpec):
    cols = dataset.columns()
    i, j = bin_indices(cols["position_ft"], cols["time_s"], grid)
    return i * grid.n_t + j, cols


def sample_counts(dataset: TrajectoryDataset, grid: GridSpec) -> np.ndarray:
    keys, _ = _flat_keys(dataset, grid)
    return np.bincount(keys, minlength=grid.n_x * grid.n_t).reshape(grid.shape)


def compute_density_field(dataset: TrajectoryDataset, grid: GridSpec) -> ScalarField:
    """Vehicles per foot: total time spent in the bin over the bin's area.

    Each sample stands for one sampling period of presence.
    """
    counts = sample_counts(dataset, grid)
    dwell = counts * dataset.sample_period_s
    values = dwell / (grid.dx_ft * grid.dt_s)
    return ScalarField(grid, values, counts > 0, "density")


def compute_speed_field(dataset: TrajectoryDataset, grid: GridSpec) -> ScalarField:
    """Space-mean speed: distance travelled in the bin over time spent there."""
    keys, cols = _flat_keys(dataset, grid)
    size = grid.n_x * grid.n_t
    period = dataset.sample_period_s
    time_spent = np.bincount(keys, minlength=size) * period
    distance = np.bincount(keys, weights=cols["speed_ftps"] * period, minlength=size)
    present = time_spent > 0
    values = np.zeros(size)
    values[present] = distance[present] / time_spent[present]
    return ScalarField(grid, values.reshape(grid.shape), present.reshape(grid.shape), "speed")


def compute_flow_field(density: ScalarField, speed: ScalarField) -> ScalarField:
    """Vehicles per second, elementwise density x speed on the shared support."""
    if density.grid != speed.grid or density.values.shape != speed.values.shape:
        raise FormatError("density and speed fields are on different grids")
    if density.quantity != "density" or speed.quantity != "speed":
        raise ConfigError("compute_flow_field needs a density field and a speed field")
    present = density.present & speed.present
    values = np.where(present, density.values * speed.values, 0.0)
    return ScalarField(density.grid, values, present, "flow")


@dataclass(frozen=True)
class TrustTracePoint:
    vehicle_id: int
    time_s: float
    position_ft: float
    trust: float

    def __post_init__(self):
        if not 0.0 <= self.trust <= 1.0:
            raise ValueError(f"trust must lie in [0, 1], got {self.trust!r}")


class TrustTraces(NamedTuple):
    """Column form of many :class:`TrustTracePoint`."""

    vehicle_id: np.ndarray
    time_s: np.ndarray
    position_ft: np.ndarray
    trust: np.ndarray

    @classmethod
    def from_points(cls, points: Sequence[TrustTracePoint]) -> "TrustTraces":
        return cls(
            np.array([p.vehicle_id for p in points], dtype=np.int64),
            np.array([p.time_s for p in points], dtype=float),
            np.array([p.position_ft for p in points], dtype=float),
            np.array([p.trust for p in points], dtype=float),
        )


def _group_mean(keys: np.ndarray, vals: np.ndarray, size: int):
    # shift by the group minimum so a constant group reproduces its value exactly
    ref = np.full(size, np.inf)
    np.minimum.at(ref, keys, vals)
    cnt = np.bincount(keys, minlength=size)
    acc = np.bincount(keys, weights=vals - ref[keys], minlength=size)
    out = np.zeros(size)
    hit = cnt > 0
    out[hit] = ref[hit] + acc[hit] / cnt[hit]
    return out, hit


def compute_trust_field(points: Sequence[TrustTracePoint] | TrustTraces, grid: GridSpec,
                        per_vehicle: bool = False) -> ScalarField:
    """Mean trust of the trace points in each bin.

    By default every trace point counts once, so a vehicle lingering in a
    bin weighs more.  ``per_vehicle=True`` first averages each vehicle's
    points within the bin and then averages over vehicles.
    """
    tr = points if isinstance(points, TrustTraces) else TrustTraces.from_points(points)
    trust = np.asarray(tr.trust, dtype=float)
    if len(trust) and not (np.all(trust >= 0.0) and np.all(trust <= 1.0)):
        raise ValueError("trust values must lie in [0, 1]")
    size = grid.n_x * grid.n_t
    if not len(trust):
        return ScalarField(grid, np.zeros(grid.shape), np.zeros(grid.shape, dtype=bool), "trust")
    i, j = bin_indices(tr.position_ft, tr.time_s, grid)
    keys = i * grid.n_t + j
    if per_vehicle:
        vid = np.asarray(tr.vehicle_id, dtype=np.int64)
        pairs, inverse = np.unique(np.stack([keys, vid], axis=1), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        veh_mean, _ = _group_mean(inverse, trust, len(pairs))
        values, present = _group_mean(pairs[:, 0], veh_mean, size)
    else:
        values, present = _group_mean(keys, trust, size)
    values = np.clip(values, 0.0, 1.0)
    return ScalarField(grid, values.reshape(grid.shape), present.reshape(grid.shape), "trust")


# ------------------------------------------------------------------- export


def _header(field: ScalarField) -> str:
    g = field.grid
    return (f"# quantity={field.quantity} dx_ft={g.dx_ft!r} dt_s={g.dt_s!r} "
            f"L_ft={g.corridor_length_ft!r} T_s={g.duration_s!r} n_x={g.n_x} n_t={g.n_t} "
            f"layout=rows:position_bins(row0=lowest_position) cols:time_bins")


def export_field_csv(field: ScalarField, path) -> Path:
    """Write the field as an n_x x n_t matrix; absent bins become ``nan``."""
    path = Path(path)
    lines = [_header(field)]
    for vals, pres in zip(field.values, field.present):
        lines.append(",".join(repr(float(v)) if p else "nan" for v, p in zip(vals, pres)))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write field to {path}: {exc}") from exc
    return path


def read_field_csv(path) -> ScalarField:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise FormatError(f"{path}: missing '#' metadata header")
        meta = dict(tok.split("=", 1) for tok in header[1:].split() if "=" in tok)
        try:
            grid = GridSpec(float(meta["L_ft"]), float(meta["T_s"]), float(meta["dx_ft"]),
                            float(meta["dt_s"]))
            quantity = meta["quantity"]
        except KeyError as exc:
            raise FormatError(f"{path}: header lacks {exc.args[0]!r}") from None
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != grid.shape:
        raise FormatError(f"{path}: matrix shape {data.shape} != grid {grid.shape}")
    present = ~np.isnan(data)
    return ScalarField(grid, np.where(present, data, 0.0), present, quantity)


def heatmap_pixels(field: ScalarField) -> np.ndarray:
    """8-bit image, time across and position up (row 0 = top = last position bin)."""
    if not field.present.any():
        raise DataError(f"{field.quantity} field has no occupied bins to render")
    v = field.values[field.present]
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        scaled = np.rint(255.0 * (field.values - lo) / (hi - lo))
    else:
        scaled = np.full(field.values.shape, 128.0)
    pix = np.where(field.present, np.clip(scaled, 0, 255), 0).astype(np.uint8)
    return pix[::-1, :]


def export_heatmap(field: ScalarField, path, binary: bool = False) -> Path:
    """Write a grayscale portable graymap (P2 text, or P5 with ``binary``)."""
    path = Path(path)
    pix = heatmap_pixels(field)
    rows, cols = pix.shape
    head = f"{'P5' if binary else 'P2'}\n# {_header(field)[2:]}\n{cols} {rows}\n255\n"
    try:
        if binary:
            path.write_bytes(head.encode("ascii") + pix.tobytes())
        else:
            body = "\n".join(" ".join(str(int(p)) for p in row) for row in pix)
            path.write_text(head + body + "\n")
    except OSError as exc:
        raise DataError(f"cannot write heatmap to {path}: {exc}") from exc
    return path


def read_heatmap(path) -> np.ndarray:
    """Read back a P2/P5 file written by :func:`export_heatmap`."""
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a P2/P5 graymap")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        nl = raw.index(b"\n", pos)
        line = raw[pos:nl].split(b"#", 1)[0]
        tokens += line.split()
        pos = nl + 1
    cols, rows, _maxval = (int(t) for t in tokens[:3])
    if magic == b"P5":
        return np.frombuffer(raw[pos:pos + rows * cols], dtype=np.uint8).reshape(rows, cols)
    vals = np.array(raw[pos:].split(), dtype=np.int64)
    return vals.reshape(rows, cols).astype(np.uint8)
