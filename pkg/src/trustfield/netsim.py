"""Per-window multi-hop flooding with honest and black-hole/delay nodes.

Each sensing window freezes vehicle positions at the window midpoint, lets
every active vehicle originate one message, and floods it breadth-first up
to ``max_hops``.  Recipients relay or drop according to their
:class:`NodePolicy`; the outcome is summarised per subject as packet
forwarding ratio (forwarded / received) and packet forwarding delay
(sum of 1/delay over forwarded packets).
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import ConfigError, FormatError, ParseError
from .trajdata import TrajectoryDataset, neighbor_matrix

HONEST = "honest"
MALICIOUS = "malicious"

# stream tags mixed into the seed so stages never share random numbers
_POLICY_STREAM = 0
_FLOOD_STREAM = 1


@dataclass(frozen=True)
class NodePolicy:
    kind: str
    drop_probability: float
    delay_low_s: float
    delay_high_s: float

    def __post_init__(self):
        if self.kind not in (HONEST, MALICIOUS):
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ConfigError("drop_probability must lie in [0, 1]")
        if not 0.0 < self.delay_low_s <= self.delay_high_s:
            raise ConfigError("need 0 < delay_low_s <= delay_high_s")

    @property
    def is_malicious(self) -> bool:
        return self.kind == MALICIOUS


@dataclass(frozen=True)
class SimConfig:
    window_s: float = 1.0
    radio_range_ft: float = 300.0
    max_hops: int = 3
    malicious_fraction: float = 0.10
    honest_delay_low_s: float = 0.001
    honest_delay_high_s: float = 0.020
    malicious_drop_probability: float = 0.9
    malicious_delay_low_s: float = 0.1
    malicious_delay_high_s: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.window_s > 0:
            raise ConfigError("window_s must be > 0")
        if not self.radio_range_ft > 0:
            raise ConfigError("radio_range_ft must be > 0")
        if self.max_hops < 1:
            raise ConfigError("max_hops must be >= 1")
        if not 0.0 <= self.malicious_fraction <= 1.0:
            raise ConfigError("malicious_fraction must lie in [0, 1]")
        # validates the delay bounds
        self.honest_policy()
        self.malicious_policy()

    def honest_policy(self) -> NodePolicy:
        return NodePolicy(HONEST, 0.0, self.honest_delay_low_s, self.honest_delay_high_s)

    def malicious_policy(self) -> NodePolicy:
        return NodePolicy(MALICIOUS, self.malicious_drop_probability,
                          self.malicious_delay_low_s, self.malicious_delay_high_s)

    def n_windows(self, duration_s: float) -> int:
        return max(0, math.floor(duration_s / self.window_s + 1e-9))


@dataclass(frozen=True)
class PacketEvent:
    packet_id: int
    sender_id: int
    receiver_id: int
    hop: int
    received_at_s: float
    forwarded: bool
    forward_delay_s: float | None = None


@dataclass(frozen=True)
class WindowMetrics:
    observer_id: int
    subject_id: int
    window_index: int
    packets_received: int
    packets_forwarded: int
    pfr: float
    pfd: float


def packet_forwarding_ratio(forwarded: int, received: int) -> float:
    return forwarded / received if received > 0 else 0.0


def packet_forwarding_delay(delays) -> float:
    return float(sum(1.0 / d for d in delays))


def assign_policies(dataset: TrajectoryDataset, config: SimConfig) -> dict[int, NodePolicy]:
    """Mark round(fraction * n) vehicles malicious via a seeded shuffle.

    Rounding is half-up so that e.g. 0.5 * 5 gives 3, not banker's 2.
    """
    ids = dataset.vehicle_ids
    if not ids:
        return {}
    n_bad = math.floor(config.malicious_fraction * len(ids) + 0.5)
    rng = np.random.default_rng([config.seed, _POLICY_STREAM])
    bad = {ids[i] for i in rng.permutation(len(ids))[:n_bad]}
    honest, malicious = config.honest_policy(), config.malicious_policy()
    return {v: (malicious if v in bad else honest) for v in ids}


def run_window(dataset: TrajectoryDataset, policies: Mapping[int, NodePolicy], window_index: int,
               config: SimConfig, events: list[PacketEvent] | None = None) -> list[WindowMetrics]:
    """Flood one message per active vehicle and summarise forwarding per subject.

    A reception at hop ``h < max_hops`` is a relay obligation: it counts
    toward P_r and is either dropped or relayed once.  Receptions at the
    final hop are deliveries only.  Every neighbor that handed the subject an
    obligation becomes an observer and gets its own row.  Pass a list as
    ``events`` to collect the per-reception log.
    """
    n_windows = config.n_windows(dataset.duration_s)
    if not 0 <= window_index < max(n_windows, 1):
        raise ConfigError(f"window_index {window_index} outside [0, {n_windows})")
    t_mid = (window_index + 0.5) * config.window_s
    ids, pos = dataset.snapshot(t_mid)
    if len(ids) < 2:
        return []
    adj = neighbor_matrix(pos, config.radio_range_ft)
    nbrs = [np.flatnonzero(row).tolist() for row in adj]
    id_list = ids.tolist()
    pol = [policies[v] for v in id_list]
    drop_p = [p.drop_probability for p in pol]
    lo = [p.delay_low_s for p in pol]
    span = [p.delay_high_s - p.delay_low_s for p in pol]

    rng = np.random.default_rng([config.seed, _FLOOD_STREAM, window_index])
    random = rng.random
    received = [0] * len(ids)
    forwarded = [0] * len(ids)
    pfd = [0.0] * len(ids)
    observers = defaultdict(set)
    max_hops = config.max_hops

    for origin in range(len(ids)):
        if not nbrs[origin]:
            continue
        packet_id = window_index * 1_000_000 + id_list[origin]
        seen = {origin}
        frontier = [(origin, t_mid)]
        for hop in range(1, max_hops + 1):
            relay = hop < max_hops
            nxt = []
            for sender, t_send in frontier:
                for r in nbrs[sender]:
                    if r in seen:
                        # duplicate copy: the sender still watches r relay it
                        if relay and r != origin:
                            observers[r].add(sender)
                        continue
                    seen.add(r)
                    if not relay:
                        if events is not None:
                            events.append(PacketEvent(packet_id, id_list[sender], id_list[r],
                                                      hop, t_send, False))
                        continue
                    observers[r].add(sender)
                    received[r] += 1
                    if random() < drop_p[r]:
                        if events is not None:
                            events.append(PacketEvent(packet_id, id_list[sender], id_list[r],
                                                      hop, t_send, False))
                        continue
                    delay = lo[r] + span[r] * random()
                    forwarded[r] += 1
                    pfd[r] += 1.0 / delay
                    if events is not None:
                        events.append(PacketEvent(packet_id, id_list[sender], id_list[r],
                                                  hop, t_send, True, delay))
                    nxt.append((r, t_send + delay))
            frontier = nxt
            if not frontier:
                break

    rows = []
    for r in range(len(ids)):
        if received[r] == 0:
            continue
        ratio = packet_forwarding_ratio(forwarded[r], received[r])
        for o in sorted(observers[r]):
            rows.append(WindowMetrics(id_list[o], id_list[r], window_index, received[r],
                                      forwarded[r], ratio, pfd[r]))
    rows.sort(key=lambda m: (m.subject_id, m.observer_id))
    return rows


def run_all_windows(dataset: TrajectoryDataset, policies: Mapping[int, NodePolicy],
                    config: SimConfig, events: list[PacketEvent] | None = None,
                    ) -> Iterator[tuple[int, list[WindowMetrics]]]:
    """Yield ``(window_index, rows)`` for every window in ascending order."""
    for w in range(config.n_windows(dataset.duration_s)):
        yield w, run_window(dataset, policies, w, config, events)


# ------------------------------------------------------------------------ I/O

METRICS_HEADER = ("window_index", "observer_id", "subject_id", "packets_received",
                  "packets_forwarded", "pfr", "pfd")
EVENTS_HEADER = tuple(f.name for f in fields(PacketEvent))


def write_metrics_csv(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for m in rows:
            w.writerow((m.window_index, m.observer_id, m.subject_id, m.packets_received,
                        m.packets_forwarded, repr(m.pfr), repr(m.pfd)))
    return path


def read_metrics_csv(path) -> list[WindowMetrics]:
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in METRICS_HEADER if c not in (reader.fieldnames or ())]
        if missing:
            raise FormatError(f"{path}: missing column {missing[0]!r}")
        for rownum, row in enumerate(reader, start=2):
            try:
                out.append(WindowMetrics(
                    observer_id=int(row["observer_id"]), subject_id=int(row["subject_id"]),
                    window_index=int(row["window_index"]),
                    packets_received=int(row["packets_received"]),
                    packets_forwarded=int(row["packets_forwarded"]),
                    pfr=float(row["pfr"]), pfd=float(row["pfd"])))
            except (TypeError, ValueError):
                raise ParseError(f"{path}: row {rownum} is malformed") from None
    return out


def write_events_csv(events, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENTS_HEADER)
        for e in events:
            d = asdict(e)
            d["forwarded"] = int(e.forwarded)
            d["forward_delay_s"] = "" if e.forward_delay_s is None else repr(e.forward_delay_s)
            d["received_at_s"] = repr(e.received_at_s)
            w.writerow([d[k] for k in EVENTS_HEADER])
    return path


def write_policies_csv(policies: Mapping[int, NodePolicy], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("vehicle_id", "kind", "drop_probability", "delay_low_s", "delay_high_s"))
        for v, p in sorted(policies.items()):
            w.writerow((v, p.kind, repr(p.drop_probability), repr(p.delay_low_s),
                        repr(p.delay_high_s)))
    return path


def read_policies_csv(path) -> dict[int, NodePolicy]:
    path = Path(path)
    out = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        for rownum, row in enumerate(reader, start=2):
            try:
                out[int(row["vehicle_id"])] = NodePolicy(
                    row["kind"], float(row["drop_probability"]),
                    float(row["delay_low_s"]), float(row["delay_high_s"]))
            except KeyError as exc:
                raise FormatError(f"{path}: missing column {exc.args[0]!r}") from None
            except ValueError:
                raise ParseError(f"{path}: row {rownum} is malformed") from None
    return out
