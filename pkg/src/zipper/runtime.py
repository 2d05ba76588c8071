"""Functional multi-stream execution of a compiled program over a tiling plan.

One dStream walks partitions; per sweep it wakes sStreams, each of which
claims the next unprocessed tile, loads and scatters its sources, and hands
the tile to an eStream; each eStream runs the per-edge work, commits its
gathers, then checks whether unclaimed tiles remain in the partition
(continue the round) or the partition is done (resume the dStream).

The engine is a deterministic single-threaded interleaving simulator: one
instruction of one stream per step, round-robin over runnable streams.
Gather commits are serialized in ascending tile order per partition, so the
final embeddings are bit-identical for every stream count and match the
dense oracle's ascending-edge-id reduction exactly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .codegen import Program
from .errors import DeadlockError, ProtocolError
from .graph import FeatureSet, Graph
from .ir import GATHER_IDENTITY
from .oracle import matmul_f32
from .tiling import TilingPlan

_ELW = {"ADD", "SUB", "MUL", "DIV", "MAX", "EXP", "RELU", "SIGMOID"}


@dataclass
class StreamConfig:
    n_s: int = 4
    n_e: int = 4

    def __post_init__(self):
        if self.n_s < 1 or self.n_e < 1:
            raise ValueError("stream counts must be >= 1")


@dataclass
class TraceEvent:
    index: int
    stream: str
    opcode: str
    partition: int = -1
    tile: int = -1
    phase: int = 0
    items: int = 0
    dim: int = 0
    k_dim: int = 0
    bytes: int = 0
    macs: int = 0
    onchip_bytes: int = 0
    weight_region: int = -1
    wait_on: int | None = None        # trace index of the satisfying signal/check
    profile: np.ndarray | None = None  # per-vertex edge counts / per-type counts
    note: str = ""

    def line(self):
        parts = [f"{self.index:5d} {self.stream:>3} {self.opcode:<12}"]
        if self.partition >= 0:
            parts.append(f"p{self.partition}")
        if self.tile >= 0:
            parts.append(f"t{self.tile}")
        parts.append(f"ph{self.phase}")
        if self.items:
            parts.append(f"items={self.items}")
        if self.bytes:
            parts.append(f"bytes={self.bytes}")
        if self.wait_on is not None:
            parts.append(f"after={self.wait_on}")
        if self.note:
            parts.append(self.note)
        return " ".join(parts)


class Trace:
    """Append-only event log of one execution."""

    def __init__(self):
        self.events: list[TraceEvent] = []
        self.peak_live_bytes = 0
        self.deadlock_report = None

    def emit(self, **kw):
        ev = TraceEvent(index=len(self.events), **kw)
        self.events.append(ev)
        return ev

    def dump_text(self):
        return "\n".join(ev.line() for ev in self.events) + "\n"


class _Memory:
    """Embedding-memory model: region values per scope with live-byte tracking.

    Weights are resident and excluded from the live-byte accounting; tile
    and partition intermediates are charged while alive.
    """

    def __init__(self, prog: Program, weights):
        self.live = 0
        self.peak = 0
        self.globals = {}
        for name, rid in prog.weight_regions().items():
            if name not in weights:
                raise KeyError(f"missing weight {name!r}")
            self.globals[rid] = np.asarray(weights[name], dtype=np.float32)

    def charge(self, nbytes):
        self.live += nbytes
        self.peak = max(self.peak, self.live)

    def release(self, nbytes):
        self.live -= nbytes

    def free_scope(self, scope):
        self.release(sum(a.nbytes for a in scope.values()))
        scope.clear()

    def write(self, scope, rid, value):
        old = scope.get(rid)
        if old is not None:
            self.release(old.nbytes)
        scope[rid] = value
        self.charge(value.nbytes)

    def read(self, scopes, rid):
        if rid in self.globals:
            return self.globals[rid]
        for scope in scopes:
            if rid in scope:
                return scope[rid]
        raise ProtocolError(f"read of unwritten region r{rid}")


class _DStream:
    def __init__(self):
        self.name = "d"
        self.pc = 0
        self.finished = False


class _SStream:
    def __init__(self, i):
        self.name = f"s{i}"
        self.pc = None               # None = parked, waiting for a tile
        self.round = None            # (part_idx, partition, tile_pos, tile, phase, ctx)


class _EStream:
    def __init__(self, i):
        self.name = f"e{i}"
        self.pc = None
        self.round = None
        self.chk_same = False


class _Exec:
    """Shared execution context: protocol state plus memory."""

    def __init__(self, prog, plan, g, feats, weights, cfg):
        self.prog = prog
        self.plan = plan
        self.g = g
        self.feats = feats
        self.cfg = cfg
        self.mem = _Memory(prog, weights)
        self.trace = Trace()
        self.part_idx = -1
        self.partition = None
        self.sweep = 0
        self.claimed = 0             # tiles handed to sStreams this sweep
        self.announced = 0           # tiles promised via signals this sweep
        self.done = 0                # tile rounds completed this sweep
        self.sem_s = deque()         # pending wakeups: signal event ids
        self.sem_d = deque()
        self.e_queue = deque()       # (part_idx, partition, tile_pos, tile, phase, ctx, sig)
        self.part_scope = {}
        self.commit_next = {}        # gather channel -> next tile_pos to fold
        self.commit_pending = {}
        self.partition_done_event = None
        self.outputs = {rid: np.zeros((g.num_vertices, dim), dtype=np.float32)
                        for rid, dim in prog.outputs}

    def tiles(self):
        return self.partition.tiles if self.partition else []

    def open_sweep(self, phase):
        self.sweep = phase
        self.claimed = 0
        self.announced = 0
        self.done = 0
        for info in self.prog.channels:
            if info.kind in ("gather_sum", "gather_max") and info.phase == phase:
                ident = GATHER_IDENTITY[info.kind]
                rows = self.partition.num_dst
                self.mem.write(self.part_scope, info.acc_region,
                               np.full((rows, info.dim), ident, dtype=np.float32))
                self.commit_next[info.cid] = 0
                self.commit_pending[info.cid] = {}

    def gather_commit(self, cid, tile_pos, values, local_dst, kind):
        """Fold tile payloads into the accumulator in ascending tile order."""
        pending = self.commit_pending[cid]
        pending[tile_pos] = (values, local_dst)
        self.mem.charge(values.nbytes)
        acc = self.part_scope[self.prog.channels[cid].acc_region]
        while self.commit_next[cid] in pending:
            vals, ldst = pending.pop(self.commit_next[cid])
            if kind == "gather_sum":
                np.add.at(acc, ldst, vals)
            else:
                np.maximum.at(acc, ldst, vals)
            self.mem.release(vals.nbytes)
            self.commit_next[cid] += 1


def execute(prog: Program, plan: TilingPlan, g: Graph, feats: FeatureSet,
            weights, cfg: StreamConfig = None):
    """Run the program; returns (FeatureSet, Trace).

    Deterministic for fixed inputs; final embeddings are identical for every
    (n_s, n_e) because tile claims and gather commits are canonically ordered.
    """
    cfg = cfg or StreamConfig()
    feats.check_against(g)
    ex = _Exec(prog, plan, g, feats, weights, cfg)
    d = _DStream()
    streams = [d] + [_SStream(i) for i in range(cfg.n_s)] + \
        [_EStream(i) for i in range(cfg.n_e)]

    budget = 1000 + 30 * max(prog.instruction_count(), 1) * (
        plan.num_tiles * max(prog.n_phases, 1) + plan.num_partitions + len(streams))
    steps = 0
    cursor = 0
    while True:
        progressed = False
        for probe in range(len(streams)):
            st = streams[(cursor + probe) % len(streams)]
            if _step(st, ex):
                cursor = (cursor + probe + 1) % len(streams)
                progressed = True
                break
        if not progressed:
            if d.finished and not ex.sem_s and not ex.e_queue and \
                    all(s.pc is None for s in streams[1:]):
                break
            report = _deadlock_report(streams, ex)
            ex.trace.deadlock_report = report
            ex.trace.emit(stream="-", opcode="DEADLOCK", note=report.replace("\n", " | "))
            raise DeadlockError("no stream can make progress:\n" + report,
                                snapshot=report)
        steps += 1
        if steps > budget:
            raise ProtocolError(f"execution exceeded {budget} steps; liveness bug")

    ex.trace.peak_live_bytes = ex.mem.peak
    rid, _ = prog.outputs[0]
    return FeatureSet(ex.outputs[rid]), ex.trace


def _deadlock_report(streams, ex):
    waits_on = {"d": "an eStream (partition-done signal)",
                "s": "the dStream or an eStream (tile wakeup)",
                "e": "an sStream (tile hand-off)"}
    lines = []
    starved = []
    for st in streams:
        cls = st.name[0]
        if isinstance(st, _DStream):
            state = "finished" if st.finished else f"blocked at pc {st.pc}"
            blocked = not st.finished
        else:
            state = "idle" if st.pc is None else f"in flight at pc {st.pc}"
            blocked = True
        lines.append(f"stream {st.name}: {state}, waits on {waits_on[cls]}")
        if blocked:
            starved.append(st.name)
    lines.append(f"sem_s={len(ex.sem_s)} e_queue={len(ex.e_queue)} "
                 f"sem_d={len(ex.sem_d)} done={ex.done}/{len(ex.tiles())} "
                 f"partition={ex.part_idx}")
    lines.append("wait-for cycle: " + " -> ".join(starved + starved[:1]))
    lines.append("starved streams: " + ", ".join(starved))
    return "\n".join(lines)


# -- per-stream stepping ---------------------------------------------------------


def _step(st, ex: _Exec):
    if isinstance(st, _DStream):
        return _step_d(st, ex)
    if isinstance(st, _SStream):
        return _step_s(st, ex)
    return _step_e(st, ex)


def _step_d(st: _DStream, ex: _Exec):
    if st.finished:
        return False
    prog = ex.prog
    ins = prog.d_function[st.pc]
    op = ins.opcode

    if op == "WAIT":
        while True:
            if ex.done == len(ex.tiles()):
                ex.trace.emit(stream=st.name, opcode="WAIT", partition=ex.part_idx,
                              phase=ins.phase, wait_on=ex.partition_done_event)
                st.pc += 1
                return True
            if ex.sem_d:
                ex.sem_d.popleft()   # stray resume; re-check
                continue
            return False

    if op == "FCH.PTT":
        ex.part_idx += 1
        if ex.part_idx >= ex.plan.num_partitions:
            st.finished = True
            ex.trace.emit(stream=st.name, opcode="FCH.PTT", partition=ex.part_idx,
                          note="halt")
            return True
        ex.mem.free_scope(ex.part_scope)
        ex.partition = ex.plan.partitions[ex.part_idx]
        ex.partition_done_event = None
        ex.open_sweep(0)
        ex.trace.emit(stream=st.name, opcode="FCH.PTT", partition=ex.part_idx,
                      items=ex.partition.num_dst, phase=0)
        st.pc += 1
        return True

    if op == "UPD.PTT":
        ex.open_sweep(ins.phase)
        ex.trace.emit(stream=st.name, opcode="UPD.PTT", partition=ex.part_idx,
                      phase=ins.phase)
        st.pc += 1
        return True

    if op == "SIGNAL":
        count = min(ex.cfg.n_s, len(ex.tiles()))
        ex.announced = count
        ev = ex.trace.emit(stream=st.name, opcode="SIGNAL", partition=ex.part_idx,
                           phase=ins.phase, items=count, note="->s")
        for _ in range(count):
            ex.sem_s.append(ev.index)
        st.pc += 1
        return True

    part = ex.partition
    rows = slice(part.dst_start, part.dst_stop)
    if op == "LD.DST":
        if ex.feats.vertex_features.shape[1] != ins.dim:
            raise ProtocolError("feature width does not match program input dim")
        val = np.asarray(ex.feats.vertex_features[rows], dtype=np.float32).copy()
        ex.mem.write(ex.part_scope, ins.dest, val)
        ex.trace.emit(stream=st.name, opcode="LD.DST", partition=ex.part_idx,
                      items=part.num_dst, dim=ins.dim, bytes=val.nbytes,
                      onchip_bytes=val.nbytes, phase=ins.phase)
    elif op == "ST.DST":
        val = ex.mem.read([ex.part_scope], ins.src_a)
        ex.outputs[ins.src_a][rows] = val
        ex.trace.emit(stream=st.name, opcode="ST.DST", partition=ex.part_idx,
                      items=part.num_dst, dim=ins.dim, bytes=val.nbytes,
                      onchip_bytes=val.nbytes, phase=ins.phase)
    else:
        _compute(st.name, ins, ex, [ex.part_scope], ex.part_scope,
                 items=part.num_dst, partition=ex.part_idx, tile=-1)
    st.pc += 1
    if st.pc == len(prog.d_function):
        st.pc = 0
    return True


def _step_s(st: _SStream, ex: _Exec):
    prog = ex.prog
    if st.pc is None:
        if not ex.sem_s:
            return False
        sig = ex.sem_s.popleft()
        if ex.claimed >= len(ex.tiles()):
            raise ProtocolError("tile wakeup with no unclaimed tile (over-signal)")
        tile_pos = ex.claimed
        ex.claimed += 1
        tile = ex.tiles()[tile_pos]
        st.round = (ex.part_idx, ex.partition, tile_pos, tile, ex.sweep, {})
        st.pc = prog.s_entries[ex.sweep]
        ex.trace.emit(stream=st.name, opcode="WAIT", partition=ex.part_idx,
                      tile=tile.tile_id, phase=ex.sweep, wait_on=sig)
        # claiming pulls the tile's edge list from off-chip into the tile hub
        ex.trace.emit(stream=st.name, opcode="FCH.TILE", partition=ex.part_idx,
                      tile=tile.tile_id, phase=ex.sweep,
                      bytes=tile.edge_list_bytes(),
                      onchip_bytes=tile.edge_list_bytes())
        st.pc += 1
        return True

    part_idx, partition, tile_pos, tile, phase, ctx = st.round
    if st.pc >= len(prog.s_function) or prog.s_function[st.pc].opcode == "WAIT":
        # ran past a dropped hand-off into the next block: park silently
        ex.mem.free_scope(ctx)
        st.pc = None
        st.round = None
        return True
    ins = prog.s_function[st.pc]
    op = ins.opcode

    if op == "SIGNAL":
        ev = ex.trace.emit(stream=st.name, opcode="SIGNAL", partition=part_idx,
                           tile=tile.tile_id, phase=phase, note="->e")
        ex.e_queue.append((part_idx, partition, tile_pos, tile, phase, ctx, ev.index))
        st.pc = None
        st.round = None
        return True

    if op == "LD.SRC":
        if ex.feats.vertex_features.shape[1] != ins.dim:
            raise ProtocolError("feature width does not match program input dim")
        val = np.asarray(ex.feats.vertex_features[tile.kept_sources], dtype=np.float32)
        ex.mem.write(ctx, ins.dest, val)
        ex.trace.emit(stream=st.name, opcode="LD.SRC", partition=part_idx,
                      tile=tile.tile_id, items=tile.num_kept, dim=ins.dim,
                      bytes=val.nbytes, onchip_bytes=val.nbytes, phase=phase)
    elif op == "SCTR.OUTE":
        src = ex.mem.read([ctx], ins.src_a)
        val = src[tile.local_src]
        ex.mem.write(ctx, ins.dest, val)
        profile = np.bincount(tile.local_src, minlength=tile.num_kept)
        ex.trace.emit(stream=st.name, opcode="SCTR.OUTE", partition=part_idx,
                      tile=tile.tile_id, items=tile.num_kept, dim=ins.dim,
                      onchip_bytes=src.nbytes + val.nbytes + tile.edge_list_bytes(),
                      profile=profile, phase=phase)
    else:
        _compute(st.name, ins, ex, [ctx], ctx, items=tile.num_kept,
                 partition=part_idx, tile=tile.tile_id)
    st.pc += 1
    return True


def _step_e(st: _EStream, ex: _Exec):
    prog = ex.prog
    if st.pc is None:
        if not ex.e_queue:
            return False
        part_idx, partition, tile_pos, tile, phase, ctx, sig = ex.e_queue.popleft()
        st.round = (part_idx, partition, tile_pos, tile, phase, ctx)
        st.pc = prog.e_entries[phase]
        ex.trace.emit(stream=st.name, opcode="WAIT", partition=part_idx,
                      tile=tile.tile_id, phase=phase, wait_on=sig)
        st.pc += 1
        return True

    part_idx, partition, tile_pos, tile, phase, ctx = st.round
    if st.pc >= len(prog.e_function) or prog.e_function[st.pc].opcode == "WAIT":
        ex.mem.free_scope(ctx)
        st.pc = None
        st.round = None
        return True
    ins = prog.e_function[st.pc]
    op = ins.opcode

    if op == "FCH.TILE":
        nxt = ex.tiles()[ex.announced] if ex.announced < len(ex.tiles()) else None
        ex.trace.emit(stream=st.name, opcode="FCH.TILE", partition=part_idx,
                      tile=nxt.tile_id if nxt is not None else -1, phase=phase,
                      note="peek" if nxt is not None else "end")
    elif op == "CHK.PTT":
        ex.done += 1
        st.chk_same = ex.announced < len(ex.tiles())
        if st.chk_same:
            ex.announced += 1
        ev = ex.trace.emit(stream=st.name, opcode="CHK.PTT", partition=part_idx,
                           tile=tile.tile_id, phase=phase,
                           note="same" if st.chk_same else "next-partition")
        if ex.done == len(ex.tiles()):
            ex.partition_done_event = ev.index
    elif op == "SIGNAL":
        target = "s" if st.chk_same else "d"
        ev = ex.trace.emit(stream=st.name, opcode="SIGNAL", partition=part_idx,
                           tile=tile.tile_id, phase=phase, note=f"->{target}")
        (ex.sem_s if st.chk_same else ex.sem_d).append(ev.index)
        ex.mem.free_scope(ctx)
        st.pc = None
        st.round = None
        return True
    elif op == "SCTR.INE":
        src = ex.mem.read([ex.part_scope], ins.src_a)
        val = src[tile.local_dst]
        ex.mem.write(ctx, ins.dest, val)
        profile = np.bincount(tile.local_dst)
        profile = profile[profile > 0]
        ex.trace.emit(stream=st.name, opcode="SCTR.INE", partition=part_idx,
                      tile=tile.tile_id, items=int(profile.size), dim=ins.dim,
                      onchip_bytes=val.nbytes * 2 + tile.edge_list_bytes(),
                      profile=profile, phase=phase)
    elif op in ("GTHR.DST.SUM", "GTHR.DST.MAX"):
        info = prog.channels[ins.channel]
        val = ex.mem.read([ctx], ins.src_a)
        ex.gather_commit(ins.channel, tile_pos, val, tile.local_dst, info.kind)
        profile = np.bincount(tile.local_dst)
        profile = profile[profile > 0]
        ex.trace.emit(stream=st.name, opcode=op, partition=part_idx,
                      tile=tile.tile_id, items=int(profile.size), dim=ins.dim,
                      onchip_bytes=val.nbytes * 2 + tile.edge_list_bytes(),
                      profile=profile, phase=phase)
    elif op == "LD.EDGE":
        if ex.feats.edge_features is None:
            raise ProtocolError("program loads edge features but none were given")
        val = np.asarray(ex.feats.edge_features[tile.edge_ids], dtype=np.float32)
        ex.mem.write(ctx, ins.dest, val)
        ex.trace.emit(stream=st.name, opcode="LD.EDGE", partition=part_idx,
                      tile=tile.tile_id, items=tile.num_edges, dim=ins.dim,
                      bytes=val.nbytes, onchip_bytes=val.nbytes, phase=phase)
    elif op == "BMM":
        x = ex.mem.read([ctx], ins.src_a)
        w = ex.mem.read([], ins.weight)
        out = np.zeros((x.shape[0], ins.dim), dtype=np.float32)
        counts = np.zeros(w.shape[0], dtype=np.int64)
        for t in range(w.shape[0]):
            sel = tile.edge_type == t
            counts[t] = int(sel.sum())
            if counts[t]:
                out[sel] = matmul_f32(x[sel], w[t])
        ex.mem.write(ctx, ins.dest, out)
        ex.trace.emit(stream=st.name, opcode="BMM", partition=part_idx,
                      tile=tile.tile_id, items=tile.num_edges, dim=ins.dim,
                      k_dim=ins.k_dim, macs=tile.num_edges * ins.dim * ins.k_dim,
                      onchip_bytes=x.nbytes + out.nbytes, weight_region=ins.weight,
                      profile=counts, phase=phase)
    else:
        _compute(st.name, ins, ex, [ctx], ctx, items=tile.num_edges,
                 partition=part_idx, tile=tile.tile_id)
    st.pc += 1
    return True


def _compute(stream, ins, ex: _Exec, scopes, out_scope, items, partition, tile):
    """GEMM/GEMV/ELW execution over the rows of a scope."""
    op = ins.opcode
    read_scopes = scopes + [ex.part_scope]
    a = ex.mem.read(read_scopes, ins.src_a)
    macs = 0
    onchip = a.nbytes
    weight_region = -1
    if op in ("GEMM", "GEMV"):
        w = ex.mem.read([], ins.weight)
        val = matmul_f32(a, w)
        macs = items * ins.dim * ins.k_dim
        onchip += val.nbytes
        weight_region = ins.weight
    elif op in _ELW:
        b = None
        if ins.src_b != -1:
            b = ex.mem.read(read_scopes, ins.src_b)
            onchip += b.nbytes
        if op == "ADD":
            val = a + b
        elif op == "SUB":
            val = a - b
        elif op == "MUL":
            val = a * b
        elif op == "DIV":
            val = a / b
        elif op == "MAX":
            val = np.maximum(a, b)
        elif op == "EXP":
            val = np.exp(a)
        elif op == "RELU":
            val = np.maximum(a, np.float32(0))
        else:
            val = np.float32(1) / (np.float32(1) + np.exp(-a))
        onchip += val.nbytes
    else:
        raise ProtocolError(f"unhandled opcode {op}")
    ex.mem.write(out_scope, ins.dest, np.asarray(val, dtype=np.float32))
    ex.trace.emit(stream=stream, opcode=op, partition=partition, tile=tile,
                  items=items, dim=ins.dim, k_dim=ins.k_dim, macs=macs,
                  onchip_bytes=onchip, weight_region=weight_region,
                  phase=ins.phase)


# -- diagnostics ------------------------------------------------------------------


def detect_deadlock(trace: Trace):
    """Scan a trace for a deadlock record; returns 'none' or the report."""
    if trace.deadlock_report:
        return trace.deadlock_report
    for ev in trace.events:
        if ev.opcode == "DEADLOCK":
            return ev.note
    return "none"


def inject_drop_signal(prog: Program, function="e", which=0):
    """Fault injector: remove the nth SIGNAL from a stream function. Returns a
    corrupted copy whose execution must deadlock."""
    import copy
    bad = copy.deepcopy(prog)
    fn = {"s": bad.s_function, "e": bad.e_function, "d": bad.d_function}[function]
    seen = 0
    for i, ins in enumerate(fn):
        if ins.opcode == "SIGNAL":
            if seen == which:
                del fn[i]
                entries = {"s": bad.s_entries, "e": bad.e_entries, "d": []}[function]
                for j, e in enumerate(entries):
                    if e > i:
                        entries[j] = e - 1
                return bad
            seen += 1
    raise ValueError("no such SIGNAL to drop")
