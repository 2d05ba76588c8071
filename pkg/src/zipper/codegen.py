"""Code generation: vertex-segment specialization, sweep scheduling, and
emission of the three stream functions in the tile-level ISA.

The tiled execution model runs one destination partition at a time. Each
partition takes one or more sweeps over its tiles: a sweep materializes the
scattered values an edge phase needs, runs the per-edge work, and commits
that phase's gathers. The d function orchestrates sweeps (FCH.PTT advances
the partition, UPD.PTT rewinds the tile cursor for the next sweep, both
initializing that sweep's gather accumulators); s and e functions are
per-sweep blocks entered at a phase-dependent pc. Models whose edge work is
single-phase (gcn, sage, ggnn, rgcn) take one sweep; attention models pay
extra sweeps re-deriving per-edge values, which is the honest cost of
softmax on this execution model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import CodegenError
from .ir import IrOp, IrProgram, RECV_KINDS, SEND_KINDS, Segment, verify_ir

VALUE_BYTES = 4
# mv ops at least this wide batch into a systolic-array GEMM; narrower ones
# (attention projections) stay on the vector units as GEMV.
GEMM_MIN_WIDTH = 8

OPCODES = [
    "ADD", "SUB", "MUL", "DIV", "MAX", "EXP", "RELU", "SIGMOID",
    "GEMV", "GEMM", "BMM",
    "GTHR.DST.SUM", "GTHR.DST.MAX", "SCTR.OUTE", "SCTR.INE",
    "LD.SRC", "LD.DST", "LD.EDGE", "ST.DST",
    "SIGNAL", "WAIT", "FCH.TILE", "FCH.PTT", "UPD.PTT", "CHK.PTT",
]
_OPCODE_INDEX = {op: i for i, op in enumerate(OPCODES)}

ELW_OPCODE = {"add": "ADD", "sub": "SUB", "mul": "MUL", "div": "DIV",
              "max": "MAX", "exp": "EXP", "relu": "RELU", "sigmoid": "SIGMOID"}

OCC_TILE_SRC, OCC_TILE_EDGE, OCC_PART_DST, OCC_WEIGHTS = (
    "per-tile-src", "per-tile-edge", "per-partition-dst", "weights")
_OCC_INDEX = {OCC_TILE_SRC: 0, OCC_TILE_EDGE: 1, OCC_PART_DST: 2, OCC_WEIGHTS: 3}

TARGET_NONE, TARGET_S, TARGET_E, TARGET_D, TARGET_CHK = "", "s", "e", "d", "chk"
_TARGET_INDEX = {TARGET_NONE: 0, TARGET_S: 1, TARGET_E: 2, TARGET_D: 3, TARGET_CHK: 4}

MAGIC = b"ZIPR"
VERSION = 1


@dataclass
class Instruction:
    opcode: str
    dest: int = -1
    src_a: int = -1
    src_b: int = -1
    weight: int = -1
    channel: int = -1
    dim: int = 0
    k_dim: int = 0
    phase: int = 0
    target: str = TARGET_NONE


@dataclass
class Region:
    rid: int
    name: str
    occupancy: str
    dim: int
    capacity: int
    base: int = 0
    extent: int = 0


@dataclass
class ChannelInfo:
    cid: int
    kind: str
    dim: int
    phase: int = 0
    acc_region: int = -1
    staging_region: int = -1


@dataclass
class Program:
    s_function: list = field(default_factory=list)
    e_function: list = field(default_factory=list)
    d_function: list = field(default_factory=list)
    regions: list = field(default_factory=list)
    channels: list = field(default_factory=list)
    s_entries: list = field(default_factory=list)
    e_entries: list = field(default_factory=list)
    n_phases: int = 0
    outputs: list = field(default_factory=list)   # (region id, dim)

    def region_named(self, name):
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def weight_regions(self):
        return {r.name.split(":", 1)[1]: r.rid for r in self.regions
                if r.occupancy == OCC_WEIGHTS}

    def instruction_count(self):
        return len(self.s_function) + len(self.e_function) + len(self.d_function)


@dataclass
class Layout:
    """Capacity envelope the region table is sized for."""
    src_cap: int
    edge_cap: int
    dst_cap: int

    @classmethod
    def from_plan(cls, plan):
        return cls(max(plan.max_kept_sources(), 1),
                   max(plan.max_tile_edges(), 1),
                   max(max((p.num_dst for p in plan.partitions), default=1), 1))


# -- specialization -----------------------------------------------------------


def _closure_to(seg: Segment, roots):
    """Ids of ops with a path to any root (roots included)."""
    keep = set(roots)
    for op in reversed(seg.ops):
        if op.id in keep:
            keep.update(op.inputs)
    return keep


def _subsegment(seg: Segment, keep, role):
    out = Segment(seg.label, seg.index, role=role)
    remap = {}
    for op in seg.ops:
        if op.id not in keep:
            continue
        remap[op.id] = len(out.ops)
        out.ops.append(IrOp(len(out.ops), op.kind,
                            tuple(remap[i] for i in op.inputs), op.dim, dict(op.attrs)))
    return out


def specialize(p: IrProgram):
    """Split each vertex segment into a source replica (paths feeding
    sendOutEdge) and a destination replica (paths to outputs / sendInEdge);
    empty replicas are dropped."""
    diags = verify_ir(p, check_exits=False)
    if diags:
        raise CodegenError("specialize precondition: " + "; ".join(diags))
    out = IrProgram(weight_specs=dict(p.weight_specs))
    out.channels = list(p.channels)
    for seg in p.segments:
        if seg.label == "edge":
            out.segments.append(_subsegment(seg, {o.id for o in seg.ops}, None))
            continue
        src_roots = [o.id for o in seg.ops if o.kind == "sendOutEdge"]
        dst_roots = [o.id for o in seg.ops if o.kind in ("sendInEdge", "output")]
        src_keep = _closure_to(seg, src_roots)
        dst_keep = _closure_to(seg, dst_roots)
        uncovered = {o.id for o in seg.ops} - src_keep - dst_keep
        if uncovered:
            raise CodegenError(f"{seg.name}: ops {sorted(uncovered)} feed neither "
                               "source nor destination work (prune first)")
        for oid in src_keep:
            if seg.ops[oid].kind == "recvInEdge":
                raise CodegenError(f"{seg.name}: gathered value feeds a source-side "
                                   "scatter; cross-partition dataflow is not executable")
        if src_keep:
            out.segments.append(_subsegment(seg, src_keep, "src"))
        if dst_keep:
            out.segments.append(_subsegment(seg, dst_keep, "dst"))
    return out


# -- sweep (phase) assignment ---------------------------------------------------


def _global_nodes(p: IrProgram):
    send_of, recv_of = {}, {}
    for si, seg in enumerate(p.segments):
        for op in seg.ops:
            if op.kind in SEND_KINDS:
                send_of[op.channel] = (si, op.id)
            elif op.kind in RECV_KINDS:
                recv_of[op.channel] = (si, op.id)
    deps = {}
    for si, seg in enumerate(p.segments):
        for op in seg.ops:
            d = [(si, i) for i in op.inputs]
            if op.kind in RECV_KINDS:
                d.append(send_of[op.channel])
            deps[(si, op.id)] = d
    order, state = [], {}

    def visit(n):
        if state.get(n) == 2:
            return
        if state.get(n) == 1:
            raise CodegenError("cyclic channel graph; cannot schedule sweeps")
        state[n] = 1
        for dd in deps[n]:
            visit(dd)
        state[n] = 2
        order.append(n)

    for n in deps:
        visit(n)
    return order, deps, send_of, recv_of


def assign_phases(p: IrProgram):
    """Sweep index for every op and gather channel.

    Destination values become available one sweep after the gather that
    produces them; edge ops run in the latest sweep any of their inputs
    requires; source-side values carry no sweep (they are re-derived in
    every sweep that scatters them)."""
    order, deps, send_of, recv_of = _global_nodes(p)
    level = {}
    chan_phase = {}
    for si, oid in order:
        seg = p.segments[si]
        op = seg.ops[oid]
        if seg.label == "vertex" and seg.role != "dst":
            level[(si, oid)] = 0
            continue
        if op.kind == "recvInEdge":
            level[(si, oid)] = chan_phase[op.channel] + 1
        elif op.kind == "recvSrc":
            level[(si, oid)] = 0
        elif op.kind == "recvDst":
            level[(si, oid)] = level[send_of[op.channel]]
        elif op.kind == "input":
            level[(si, oid)] = 0
        elif op.kind == "output" and seg.label == "edge":
            raise CodegenError("edge-domain outputs are not storable (ST.DST only)")
        else:
            level[(si, oid)] = max((level[(si, i)] for i in op.inputs), default=0)
        if op.kind in ("sendDstSum", "sendDstMax"):
            chan_phase[op.channel] = level[(si, oid)]
    n_phases = max(chan_phase.values(), default=-1) + 1
    return level, chan_phase, n_phases


# -- emission -------------------------------------------------------------------


def plan_regions(p: IrProgram, layout: Layout):
    """One region per weight and per op value, sized by occupancy class."""
    regions = []
    value_region = {}

    def add(name, occupancy, dim, capacity):
        rid = len(regions)
        regions.append(Region(rid, name, occupancy, dim, capacity))
        return rid

    for name, shape in p.weight_specs.items():
        cap = 1
        for s in shape[:-1]:
            cap *= s
        add(f"weight:{name}", OCC_WEIGHTS, shape[-1], cap)

    for si, seg in enumerate(p.segments):
        for op in seg.ops:
            if op.kind in SEND_KINDS or op.kind == "output":
                continue
            if seg.label == "edge":
                occ, cap = OCC_TILE_EDGE, layout.edge_cap
            elif seg.role == "src":
                occ, cap = OCC_TILE_SRC, layout.src_cap
            else:
                occ, cap = OCC_PART_DST, layout.dst_cap
            value_region[(si, op.id)] = add(f"{seg.name}:{op.id}", occ, op.dim, cap)

    base = 0
    for r in regions:
        r.extent = r.dim * r.capacity * VALUE_BYTES
        r.base = base
        base += r.extent
    return regions, value_region


def emit(p: IrProgram, layout: Layout):
    """Translate a specialized IR into the three stream functions."""
    diags = verify_ir(p, check_exits=False)
    if diags:
        raise CodegenError("emit precondition: " + "; ".join(diags))
    level, chan_phase, n_phases = assign_phases(p)
    regions, value_region = plan_regions(p, layout)
    _, _, send_of, recv_of = _global_nodes(p)

    prog = Program(regions=regions, n_phases=n_phases)
    weight_rid = {name: rid for name, rid in
                  ((r.name.split(":", 1)[1], r.rid) for r in regions
                   if r.occupancy == OCC_WEIGHTS)}

    for c in p.channels:
        info = ChannelInfo(c.id, c.kind, c.dim)
        if c.kind in ("gather_sum", "gather_max"):
            info.phase = chan_phase.get(c.id, 0)
            info.acc_region = value_region[recv_of[c.id]]
        else:
            info.staging_region = value_region[recv_of[c.id]]
        prog.channels.append(info)

    edge_segs = [(si, seg) for si, seg in enumerate(p.segments) if seg.label == "edge"]
    src_segs = [(si, seg) for si, seg in enumerate(p.segments)
                if seg.label == "vertex" and seg.role == "src"]
    dst_segs = [(si, seg) for si, seg in enumerate(p.segments)
                if seg.label == "vertex" and seg.role == "dst"]

    def compute_instr(si, seg, op):
        """Instruction for one computational IR op (tile/partition granular)."""
        rid = value_region[(si, op.id)]
        xs = [value_region[(si, i)] for i in op.inputs]
        if op.kind == "mv":
            in_dim = seg.ops[op.inputs[0]].dim
            opcode = "GEMM" if op.dim >= GEMM_MIN_WIDTH else "GEMV"
            return Instruction(opcode, dest=rid, src_a=xs[0],
                               weight=weight_rid[op.weight], dim=op.dim, k_dim=in_dim)
        if op.kind == "bmm_row":
            in_dim = seg.ops[op.inputs[0]].dim
            return Instruction("BMM", dest=rid, src_a=xs[0],
                               weight=weight_rid[op.weight], dim=op.dim, k_dim=in_dim)
        opcode = ELW_OPCODE[op.kind]
        return Instruction(opcode, dest=rid, src_a=xs[0],
                           src_b=xs[1] if len(xs) > 1 else -1, dim=op.dim)

    # Per sweep: which edge ops run, which scatters feed them.
    e_ops_by_phase, src_chans_by_phase, dst_chans_by_phase = [], [], []
    for k in range(n_phases):
        terminals = set()
        for si, seg in edge_segs:
            for op in seg.ops:
                if op.kind in ("sendDstSum", "sendDstMax") and chan_phase[op.channel] == k:
                    terminals.add((si, op.id))
        needed = set()
        stack = list(terminals)
        while stack:
            node = stack.pop()
            if node in needed:
                continue
            needed.add(node)
            si, oid = node
            op = p.segments[si].ops[oid]
            if op.kind in RECV_KINDS:
                continue
            stack.extend((si, i) for i in op.inputs)
        src_chans = sorted(p.segments[si].ops[oid].channel
                           for si, oid in needed
                           if p.segments[si].ops[oid].kind == "recvSrc")
        dst_chans = sorted(p.segments[si].ops[oid].channel
                           for si, oid in needed
                           if p.segments[si].ops[oid].kind == "recvDst")
        e_ops_by_phase.append(needed)
        src_chans_by_phase.append(src_chans)
        dst_chans_by_phase.append(dst_chans)

    # s function: one block per sweep.
    for k in range(n_phases):
        prog.s_entries.append(len(prog.s_function))
        prog.s_function.append(Instruction("WAIT", phase=k))
        needed_sends = set()
        for si, seg in src_segs:
            for op in seg.ops:
                if op.kind == "sendOutEdge" and op.channel in src_chans_by_phase[k]:
                    needed_sends.add((si, op.id))
        keep = set()
        stack = list(needed_sends)
        while stack:
            node = stack.pop()
            if node in keep:
                continue
            keep.add(node)
            si, oid = node
            stack.extend((si, i) for i in p.segments[si].ops[oid].inputs)
        for si, seg in src_segs:
            for op in seg.ops:
                if (si, op.id) not in keep:
                    continue
                if op.kind == "input":
                    prog.s_function.append(Instruction(
                        "LD.SRC", dest=value_region[(si, op.id)], dim=op.dim, phase=k))
                elif op.kind == "sendOutEdge":
                    cid = op.channel
                    prog.s_function.append(Instruction(
                        "SCTR.OUTE", dest=prog.channels[cid].staging_region,
                        src_a=value_region[(si, op.inputs[0])], channel=cid,
                        dim=op.dim, phase=k))
                else:
                    ins = compute_instr(si, seg, op)
                    ins.phase = k
                    prog.s_function.append(ins)
        prog.s_function.append(Instruction("SIGNAL", target=TARGET_E, phase=k))

    # e function: one block per sweep.
    for k in range(n_phases):
        prog.e_entries.append(len(prog.e_function))
        prog.e_function.append(Instruction("WAIT", phase=k))
        for cid in dst_chans_by_phase[k]:
            send_si, send_oid = send_of[cid]
            src_rid = value_region[(send_si, p.segments[send_si].ops[send_oid].inputs[0])]
            prog.e_function.append(Instruction(
                "SCTR.INE", dest=prog.channels[cid].staging_region, src_a=src_rid,
                channel=cid, dim=prog.channels[cid].dim, phase=k))
        for si, seg in edge_segs:
            for op in seg.ops:
                if (si, op.id) not in e_ops_by_phase[k] or op.kind in RECV_KINDS:
                    continue
                if op.kind in ("sendDstSum", "sendDstMax"):
                    cid = op.channel
                    opcode = "GTHR.DST.SUM" if op.kind == "sendDstSum" else "GTHR.DST.MAX"
                    prog.e_function.append(Instruction(
                        opcode, dest=prog.channels[cid].acc_region,
                        src_a=value_region[(si, op.inputs[0])], channel=cid,
                        dim=op.dim, phase=k))
                elif op.kind == "input":
                    prog.e_function.append(Instruction(
                        "LD.EDGE", dest=value_region[(si, op.id)], dim=op.dim, phase=k))
                else:
                    ins = compute_instr(si, seg, op)
                    ins.phase = k
                    prog.e_function.append(ins)
        prog.e_function.append(Instruction("FCH.TILE", phase=k))
        prog.e_function.append(Instruction("CHK.PTT", phase=k))
        prog.e_function.append(Instruction("SIGNAL", target=TARGET_CHK, phase=k))

    # d function: prologue, one sync block per sweep, epilogue.
    d_by_level = {}
    for si, seg in dst_segs:
        for op in seg.ops:
            d_by_level.setdefault(level[(si, op.id)], []).append((si, seg, op))

    def emit_d_ops(lvl):
        for si, seg, op in d_by_level.get(lvl, []):
            if op.kind == "input":
                prog.d_function.append(Instruction(
                    "LD.DST", dest=value_region[(si, op.id)], dim=op.dim, phase=lvl))
            elif op.kind in ("recvInEdge", "sendInEdge"):
                continue  # accumulator alias / handled by SCTR.INE on the e side
            elif op.kind == "output":
                rid = value_region[(si, op.inputs[0])]
                prog.d_function.append(Instruction(
                    "ST.DST", src_a=rid, dim=op.dim, phase=lvl))
                prog.outputs.append((rid, op.dim))
            else:
                ins = compute_instr(si, seg, op)
                ins.phase = lvl
                prog.d_function.append(ins)

    prog.d_function.append(Instruction("FCH.PTT", phase=0))
    emit_d_ops(0)
    for k in range(n_phases):
        if k > 0:
            prog.d_function.append(Instruction("UPD.PTT", phase=k))
        prog.d_function.append(Instruction("SIGNAL", target=TARGET_S, phase=k))
        prog.d_function.append(Instruction("WAIT", phase=k))
        emit_d_ops(k + 1)

    if not prog.outputs:
        raise CodegenError("program stores no destination output")
    check_program(prog)
    return prog


def check_program(prog: Program):
    """Static checks: operand regions exist, widths match declarations."""
    n = len(prog.regions)
    for fn in (prog.s_function, prog.e_function, prog.d_function):
        for ins in fn:
            for rid in (ins.dest, ins.src_a, ins.src_b, ins.weight):
                if rid != -1 and not (0 <= rid < n):
                    raise CodegenError(f"{ins.opcode}: region {rid} out of range")
            if ins.dest != -1 and ins.dim and prog.regions[ins.dest].dim != ins.dim:
                raise CodegenError(f"{ins.opcode}: writes dim {ins.dim} into region "
                                   f"of dim {prog.regions[ins.dest].dim}")
    for cid, info in enumerate(prog.channels):
        if info.kind in ("gather_sum", "gather_max") and info.acc_region == -1:
            raise CodegenError(f"gather channel {cid} has no accumulator region")
    return True


# -- binary encoding ------------------------------------------------------------

_INS_FMT = "<BBHhhhhhHHB13x"
_REG_FMT = "<IHBBIIQQ"
_CHN_FMT = "<BBHHhh6x"
_CHN_KINDS = ["src_scatter", "dst_scatter", "gather_sum", "gather_max"]


def encode(prog: Program):
    """Serialize to the ZIPR container (fixed 32-byte instruction records)."""
    pool = bytearray()

    def intern(s):
        off = len(pool)
        b = s.encode("utf-8")
        pool.extend(b)
        return off, len(b)

    regs = b"".join(
        struct.pack(_REG_FMT, *intern(r.name), _OCC_INDEX[r.occupancy], 0,
                    r.dim, r.capacity, r.base, r.extent)
        for r in prog.regions)
    chans = b"".join(
        struct.pack(_CHN_FMT, _CHN_KINDS.index(c.kind), 0, c.phase, c.dim,
                    c.acc_region, c.staging_region)
        for c in prog.channels)

    def pack_fn(fn):
        return b"".join(
            struct.pack(_INS_FMT, _OPCODE_INDEX[i.opcode], 0, i.phase, i.dest,
                        i.src_a, i.src_b, i.weight, i.channel, i.dim, i.k_dim,
                        _TARGET_INDEX[i.target])
            for i in fn)

    s_fn, e_fn, d_fn = pack_fn(prog.s_function), pack_fn(prog.e_function), pack_fn(prog.d_function)
    header = struct.pack(
        "<4sHHIIIIIIII", MAGIC, VERSION, prog.n_phases, len(prog.regions),
        len(prog.channels), len(prog.s_function), len(prog.e_function),
        len(prog.d_function), len(prog.outputs), len(prog.s_entries), len(pool))
    tail = b"".join(struct.pack("<hH", rid, dim) for rid, dim in prog.outputs)
    entries = b"".join(struct.pack("<II", s, e) for s, e in
                       zip(prog.s_entries, prog.e_entries))
    return header + bytes(pool) + regs + chans + s_fn + e_fn + d_fn + tail + entries


def decode(blob):
    """Inverse of encode; raises CodegenError on bad magic/version/truncation."""
    try:
        head_size = struct.calcsize("<4sHHIIIIIIII")
        (magic, version, n_phases, n_regions, n_channels, n_s, n_e, n_d,
         n_outputs, n_entries, pool_len) = struct.unpack_from("<4sHHIIIIIIII", blob, 0)
        if magic != MAGIC:
            raise CodegenError("bad magic: not a ZIPR program")
        if version != VERSION:
            raise CodegenError(f"unsupported program version {version}")
        off = head_size
        pool = blob[off:off + pool_len]
        off += pool_len
        prog = Program(n_phases=n_phases)
        for _ in range(n_regions):
            noff, nlen, occ, _, dim, cap, base, extent = struct.unpack_from(_REG_FMT, blob, off)
            off += struct.calcsize(_REG_FMT)
            name = pool[noff:noff + nlen].decode("utf-8")
            occupancy = [k for k, v in _OCC_INDEX.items() if v == occ][0]
            prog.regions.append(Region(len(prog.regions), name, occupancy, dim, cap, base, extent))
        for _ in range(n_channels):
            kind_i, _, phase, dim, acc, staging = struct.unpack_from(_CHN_FMT, blob, off)
            off += struct.calcsize(_CHN_FMT)
            prog.channels.append(ChannelInfo(len(prog.channels), _CHN_KINDS[kind_i],
                                             dim, phase, acc, staging))

        def unpack_fn(count):
            nonlocal off
            out = []
            for _ in range(count):
                (opc, _, phase, dest, src_a, src_b, weight, channel, dim,
                 k_dim, target) = struct.unpack_from(_INS_FMT, blob, off)
                off += struct.calcsize(_INS_FMT)
                tgt = [k for k, v in _TARGET_INDEX.items() if v == target][0]
                out.append(Instruction(OPCODES[opc], dest, src_a, src_b, weight,
                                       channel, dim, k_dim, phase, tgt))
            return out

        prog.s_function = unpack_fn(n_s)
        prog.e_function = unpack_fn(n_e)
        prog.d_function = unpack_fn(n_d)
        for _ in range(n_outputs):
            rid, dim = struct.unpack_from("<hH", blob, off)
            off += struct.calcsize("<hH")
            prog.outputs.append((rid, dim))
        for _ in range(n_entries):
            s, e = struct.unpack_from("<II", blob, off)
            off += struct.calcsize("<II")
            prog.s_entries.append(s)
            prog.e_entries.append(e)
        return prog
    except struct.error as exc:
        raise CodegenError(f"truncated program stream: {exc}") from None


def program_equal(a: Program, b: Program):
    return disassemble(a) == disassemble(b)


def disassemble(prog: Program):
    """Stable human-readable listing, one instruction per line."""
    lines = [f"; zipr program, {prog.n_phases} sweep(s)"]
    for r in prog.regions:
        lines.append(f"region r{r.rid} {r.occupancy} dim={r.dim} cap={r.capacity} "
                     f"base={r.base} extent={r.extent} name={r.name}")
    for c in prog.channels:
        extra = f" acc=r{c.acc_region}" if c.acc_region != -1 else f" staging=r{c.staging_region}"
        lines.append(f"channel {c.cid} {c.kind} dim={c.dim} phase={c.phase}{extra}")
    for fname, fn in (("s", prog.s_function), ("e", prog.e_function), ("d", prog.d_function)):
        lines.append(f"{fname}_function:")
        for i, ins in enumerate(fn):
            parts = [f"  {fname}{i}: {ins.opcode}"]
            if ins.target:
                parts.append(f"->{ins.target}")
            for label, val in (("dst", ins.dest), ("a", ins.src_a), ("b", ins.src_b),
                               ("w", ins.weight)):
                if val != -1:
                    parts.append(f"{label}=r{val}")
            if ins.channel != -1:
                parts.append(f"ch={ins.channel}")
            if ins.dim:
                parts.append(f"dim={ins.dim}")
            if ins.k_dim:
                parts.append(f"k={ins.k_dim}")
            parts.append(f"ph={ins.phase}")
            lines.append(" ".join(parts))
    outs = " ".join(f"r{rid}:{dim}" for rid, dim in prog.outputs)
    lines.append(f"outputs: {outs}")
    return "\n".join(lines) + "\n"


def compile_model(m, layout=None, enable_e2v=True):
    """Full pipeline: defuse -> lower -> optimize -> specialize -> emit.

    `layout` may be a Layout, a TilingPlan (capacities derived), or None
    (graph-independent defaults). Returns (program, specialized ir, report).
    """
    from .ir import lower_to_ir
    from .model import defuse
    from .optim import run_passes
    if layout is None:
        layout = Layout(256, 4096, 256)
    elif not isinstance(layout, Layout):
        layout = Layout.from_plan(layout)
    ir = lower_to_ir(defuse(m))
    ir, report = run_passes(ir, enable_e2v=enable_e2v)
    spec = specialize(ir)
    prog = emit(spec, layout)
    return prog, spec, report
