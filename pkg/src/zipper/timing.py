"""Cycle-approximate performance and energy model.

Unit laws: the matrix unit is an output-stationary systolic array (fill +
drain overhead per pass), the vector unit a group of SIMD cores with a
load-imbalance model for graph operations, and off-chip transfers pay a
fixed latency plus bandwidth serialization on a single channel. simulate()
replays a functional execution trace through a two-level scheduler /
dispatcher without recomputing any data.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ProtocolError

# Fixed per-instruction front-end cost: 1 scheduler + 1 dispatcher cycle.
ISSUE_OVERHEAD = 2

ELW_LATENCY_FACTOR = {
    "ADD": 1, "SUB": 1, "MUL": 1, "RELU": 1, "MAX": 1,
    "EXP": 4, "DIV": 4, "SIGMOID": 4,
}


@dataclass
class HardwareConfig:
    clock_hz: float = 1e9
    mu_count: int = 1
    mu_rows: int = 32
    mu_cols: int = 128
    vu_count: int = 2
    vu_cores: int = 8
    vu_lanes: int = 32
    uem_bytes: int = 21 * 1024 * 1024
    tilehub_bytes: int = 256 * 1024
    offchip_bw: int = 256           # bytes per cycle
    offchip_latency: int = 100      # cycles
    dispatcher_queue: int = 0       # 0 = size to the stream count

    def validate(self, n_streams=None):
        for name, val in asdict(self).items():
            if name == "dispatcher_queue":
                continue
            if val <= 0:
                raise ValueError(f"hardware parameter {name} must be positive")
        if self.dispatcher_queue == 0 and n_streams:
            self.dispatcher_queue = n_streams
        if n_streams is not None and self.dispatcher_queue < n_streams:
            raise ValueError("dispatcher queue smaller than stream count")

    @classmethod
    def from_dict(cls, d):
        base = cls()
        for k, v in d.items():
            if not hasattr(base, k):
                raise ValueError(f"unknown hardware parameter {k!r}")
            setattr(base, k, type(getattr(base, k))(v))
        return base


@dataclass
class EnergyParams:
    e_mac: float = 0.5       # pJ per MAC (configured placeholder)
    e_onchip: float = 1.0    # pJ per on-chip byte (configured placeholder)
    e_offchip: float = 7.0   # pJ per off-chip bit

    def validate(self):
        if min(self.e_mac, self.e_onchip, self.e_offchip) < 0:
            raise ValueError("energy parameters must be non-negative")


@dataclass
class EnergyReport:
    mac_pj: float
    onchip_pj: float
    offchip_pj: float

    @property
    def total_pj(self):
        return self.mac_pj + self.onchip_pj + self.offchip_pj

    def as_dict(self):
        return {"mac_pj": self.mac_pj, "onchip_pj": self.onchip_pj,
                "offchip_pj": self.offchip_pj, "total_pj": self.total_pj}


@dataclass
class SimStats:
    total_cycles: int = 0
    busy_cycles: dict = field(default_factory=dict)       # unit name -> cycles
    stall_cycles: dict = field(default_factory=dict)      # stream name -> cycles
    offchip_read_bytes: int = 0
    offchip_write_bytes: int = 0
    onchip_bytes: int = 0
    mac_count: int = 0
    instr_histogram: dict = field(default_factory=dict)
    peak_live_bytes: int = 0
    config: dict = field(default_factory=dict)

    def to_json(self, indent=2):
        d = asdict(self)
        d["config"] = {k: v for k, v in d["config"].items() if k != "windows"}
        d["busy_cycles"] = dict(sorted(d["busy_cycles"].items()))
        d["stall_cycles"] = dict(sorted(d["stall_cycles"].items()))
        d["instr_histogram"] = dict(sorted(d["instr_histogram"].items()))
        return json.dumps(d, indent=indent, sort_keys=True)


# -- unit laws ----------------------------------------------------------------


def mu_cycles(n, m, k, hw: HardwareConfig):
    """Systolic GEMM passes: each (rows x cols) output block streams k
    inputs plus fill/drain of the array."""
    if min(n, m, k) < 1:
        raise ValueError("gemm dims must be >= 1")
    passes = math.ceil(n / hw.mu_rows) * math.ceil(m / hw.mu_cols)
    return passes * (k + hw.mu_rows + hw.mu_cols - 1)


def vu_cycles(op, items, dim, hw: HardwareConfig, degree_profile=None, k=None):
    """SIMD cycles for element-wise, matrix-vector, and graph operations.

    Graph operations distribute vertices round-robin over the cores; the
    unit finishes with its most loaded core (imbalance is modeled, idle
    cores do not help).
    """
    lanes_total = hw.vu_cores * hw.vu_lanes
    if op in ELW_LATENCY_FACTOR:
        return math.ceil(items * dim / lanes_total) * ELW_LATENCY_FACTOR[op]
    if op == "GEMV":
        macs = items * dim * (k if k else 1)
        return max(math.ceil(macs / lanes_total), 1)
    if op in ("SCTR.OUTE", "SCTR.INE", "GTHR.DST.SUM", "GTHR.DST.MAX", "INIT"):
        if op == "INIT":
            return max(math.ceil(items * dim / lanes_total), 1)
        if degree_profile is None or len(degree_profile) == 0:
            return 1
        per_vertex = np.asarray(degree_profile, dtype=np.int64) * math.ceil(dim / hw.vu_lanes)
        core_load = np.zeros(hw.vu_cores, dtype=np.int64)
        for i, cost in enumerate(per_vertex):
            core_load[i % hw.vu_cores] += cost
        return int(core_load.max(initial=1))
    raise ValueError(f"no vector-unit model for {op!r}")


def mem_cycles(bytes_moved, hw: HardwareConfig):
    """Off-chip transfer: fixed latency plus bandwidth serialization."""
    if bytes_moved <= 0:
        return 0
    return hw.offchip_latency + math.ceil(bytes_moved / hw.offchip_bw)


def energy(stats: SimStats, params: EnergyParams = None):
    """Itemized energy: MACs, on-chip accesses, off-chip bits."""
    params = params or EnergyParams()
    params.validate()
    offchip_bits = 8 * (stats.offchip_read_bytes + stats.offchip_write_bytes)
    return EnergyReport(
        mac_pj=stats.mac_count * params.e_mac,
        onchip_pj=stats.onchip_bytes * params.e_onchip,
        offchip_pj=offchip_bits * params.e_offchip,
    )


# -- event-driven simulation ---------------------------------------------------


class _Unit:
    def __init__(self, name):
        self.name = name
        self.free_at = 0
        self.busy = 0
        self.windows = []
        self.last_weight = -1   # MU weight-buffer residency

    def reserve(self, earliest, duration):
        start = max(self.free_at, earliest)
        self.free_at = start + duration
        self.busy += duration
        if duration:
            self.windows.append((start, start + duration))
        return start, self.free_at


def simulate(prog, plan, g, feats, weights, cfg, hw: HardwareConfig = None,
             trace=None, record_windows=False):
    """Replay a functional trace under the two-level scheduling model.

    The scheduler picks ready streams first-ready-first-serve (round-robin
    tie-break) and the dispatcher routes instructions to a free unit of the
    required class; data transfers serialize on the off-chip channel; sync
    instructions resolve in the scheduler. Returns SimStats.
    """
    from . import runtime as _runtime

    hw = hw or HardwareConfig()
    hw.validate(n_streams=cfg.n_s + cfg.n_e + 1)
    if trace is None:
        _, trace = _runtime.execute(prog, plan, g, feats, weights, cfg)

    mus = [_Unit(f"mu{i}") for i in range(hw.mu_count)]
    vus = [_Unit(f"vu{i}") for i in range(hw.vu_count)]
    mem = _Unit("mem")

    per_stream = {}
    for ev in trace.events:
        per_stream.setdefault(ev.stream, []).append(ev)

    ready = {s: 0 for s in per_stream}          # next issue time per stream
    idx = {s: 0 for s in per_stream}
    stalls = {s: 0 for s in per_stream}
    signal_done = {}                            # trace event index -> finish time
    hist = Counter()
    stats = SimStats(config={"n_s": cfg.n_s, "n_e": cfg.n_e})
    rr = {s: i for i, s in enumerate(sorted(per_stream))}
    total = 0

    def mu_service(ev, unit):
        """GEMM/BMM duration plus weight-buffer reload when swapping weights."""
        if ev.opcode == "GEMM":
            dur = mu_cycles(max(ev.items, 1), ev.dim, ev.k_dim, hw)
            reload = ev.k_dim if unit.last_weight != ev.weight_region else 0
            unit.last_weight = ev.weight_region
            return dur + reload
        dur = 0
        counts = ev.profile if ev.profile is not None else []
        for n in counts:
            if n:
                dur += mu_cycles(int(n), ev.dim, ev.k_dim, hw) + ev.k_dim
        unit.last_weight = -1  # BMM cycles the buffer through the stack
        return max(dur, 1)

    def service(ev, start):
        op = ev.opcode
        if op in ("LD.SRC", "LD.DST", "LD.EDGE", "ST.DST") or \
                (op == "FCH.TILE" and ev.bytes):
            dur = mem_cycles(ev.bytes, hw)
            _, f = mem.reserve(start, dur)
            return f
        if op in ("GEMM", "BMM"):
            unit = min(mus, key=lambda u: (max(u.free_at, start), u.name))
            _, f = unit.reserve(start, mu_service(ev, unit))
            return f
        if op == "GEMV":
            unit = min(vus, key=lambda u: (max(u.free_at, start), u.name))
            _, f = unit.reserve(start, vu_cycles("GEMV", max(ev.items, 1),
                                                 ev.dim, hw, k=ev.k_dim))
            return f
        if op in ("SCTR.OUTE", "SCTR.INE", "GTHR.DST.SUM", "GTHR.DST.MAX"):
            unit = min(vus, key=lambda u: (max(u.free_at, start), u.name))
            _, f = unit.reserve(start, vu_cycles(op, ev.items, ev.dim, hw,
                                                 degree_profile=ev.profile))
            return f
        if op in ELW_LATENCY_FACTOR:
            unit = min(vus, key=lambda u: (max(u.free_at, start), u.name))
            _, f = unit.reserve(start, vu_cycles(op, max(ev.items, 1), ev.dim, hw))
            return f
        # sync / bookkeeping resolve in the scheduler
        return start + 1

    pending = {s for s in per_stream}
    while pending:
        # first-ready-first-serve with round-robin tie-break
        candidates = []
        for s in pending:
            ev = per_stream[s][idx[s]]
            at = ready[s]
            if ev.wait_on is not None:
                dep = signal_done.get(ev.wait_on)
                if dep is None:
                    continue  # producing signal not yet simulated
                at = max(at, dep)
            candidates.append((at, rr[s], s))
        if not candidates:
            raise ProtocolError("timing replay stuck: wait on unsimulated signal")
        at, _, s = min(candidates)
        ev = per_stream[s][idx[s]]
        start = at + ISSUE_OVERHEAD
        finish = service(ev, start)
        stalls[s] += max(start - ISSUE_OVERHEAD - ready[s], 0)
        signal_done[ev.index] = finish
        ready[s] = finish
        idx[s] += 1
        if idx[s] == len(per_stream[s]):
            pending.discard(s)
        hist[ev.opcode] += 1
        stats.mac_count += ev.macs
        stats.onchip_bytes += ev.onchip_bytes
        if ev.opcode in ("LD.SRC", "LD.DST", "LD.EDGE", "FCH.TILE"):
            stats.offchip_read_bytes += ev.bytes
        elif ev.opcode == "ST.DST":
            stats.offchip_write_bytes += ev.bytes
        total = max(total, finish)

    stats.total_cycles = int(total)
    stats.busy_cycles = {u.name: int(u.busy) for u in [*mus, *vus, mem]}
    stats.stall_cycles = {s: int(v) for s, v in sorted(stalls.items())}
    stats.instr_histogram = dict(hist)
    stats.peak_live_bytes = trace.peak_live_bytes
    stats.config.update({"mu_count": hw.mu_count, "vu_count": hw.vu_count})
    if record_windows:
        stats.config["windows"] = {u.name: u.windows for u in [*mus, *vus, mem]}
    return stats


def utilization_csv(stats: SimStats, bucket=1024):
    """Per-unit busy fraction over time buckets as CSV text.

    Requires stats produced with record_windows=True; falls back to one
    whole-run row per unit otherwise.
    """
    windows = stats.config.get("windows")
    total = max(stats.total_cycles, 1)
    lines = ["unit,bucket_start,bucket_end,utilization"]
    if not windows:
        for name, busy in sorted(stats.busy_cycles.items()):
            lines.append(f"{name},0,{total},{busy / total:.6f}")
        return "\n".join(lines) + "\n"
    for name in sorted(windows):
        spans = windows[name]
        for b0 in range(0, total, bucket):
            b1 = min(b0 + bucket, total)
            busy = sum(max(min(e, b1) - max(s, b0), 0) for s, e in spans)
            lines.append(f"{name},{b0},{b1},{busy / (b1 - b0):.6f}")
    return "\n".join(lines) + "\n"
