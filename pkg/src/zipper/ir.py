"""Graph-native segment IR: DAG segments of single-item ops plus channels.

Lowering cuts every graph operation of a model into a send/recv pair on a
fresh channel. The remaining computational graph falls apart into weakly
connected components; each becomes one segment labeled `vertex` or `edge`,
and every op inside operates on one vertex or one edge. Whole-tensor
matmuls become per-item `mv` ops carrying a weight reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LoweringError, ParseError
from .graph import FeatureSet, Graph
from .oracle import matmul_f32
from .model import GOP_KINDS, ModelGraph, validate as validate_model

VERTEX, EDGE = "vertex", "edge"

SEND_KINDS = ("sendOutEdge", "sendInEdge", "sendDstSum", "sendDstMax")
RECV_KINDS = ("recvSrc", "recvDst", "recvInEdge")
ELW_KINDS = ("add", "sub", "mul", "div", "max", "exp", "relu", "sigmoid")
COMPUTE_KINDS = ELW_KINDS + ("mv", "matmul_row", "bmm_row")
MARKER_KINDS = ("input", "output")

# channel kind -> (send op, send segment label, recv op, recv segment label)
CHANNEL_RULES = {
    "src_scatter": ("sendOutEdge", VERTEX, "recvSrc", EDGE),
    "dst_scatter": ("sendInEdge", VERTEX, "recvDst", EDGE),
    "gather_sum": ("sendDstSum", EDGE, "recvInEdge", VERTEX),
    "gather_max": ("sendDstMax", EDGE, "recvInEdge", VERTEX),
}

GATHER_IDENTITY = {"gather_sum": np.float32(0.0),
                   "gather_max": np.float32(-3.0e18)}


@dataclass
class IrOp:
    id: int
    kind: str
    inputs: tuple
    dim: int
    attrs: dict = field(default_factory=dict)

    @property
    def channel(self):
        return self.attrs.get("channel")

    @property
    def weight(self):
        return self.attrs.get("weight")


@dataclass
class Segment:
    label: str                  # vertex | edge
    index: int
    ops: list[IrOp] = field(default_factory=list)
    role: str | None = None     # src | dst replica tag, set by specialization

    @property
    def name(self):
        tag = "v" if self.label == VERTEX else "e"
        suffix = f".{self.role}" if self.role else ""
        return f"{tag}.{self.index}{suffix}"

    def add(self, kind, inputs, dim, **attrs):
        op = IrOp(len(self.ops), kind, tuple(inputs), dim, attrs)
        self.ops.append(op)
        return op

    def consumers(self):
        cons = {op.id: [] for op in self.ops}
        for op in self.ops:
            for i in op.inputs:
                cons[i].append(op.id)
        return cons


@dataclass
class Channel:
    id: int
    kind: str
    dim: int


@dataclass
class IrProgram:
    segments: list[Segment] = field(default_factory=list)
    channels: list[Channel] = field(default_factory=list)
    weight_specs: dict = field(default_factory=dict)

    def segment_of_channel(self, cid, end):
        """Find (segment, op) holding the send or recv of a channel."""
        kinds = SEND_KINDS if end == "send" else RECV_KINDS
        for seg in self.segments:
            for op in seg.ops:
                if op.kind in kinds and op.channel == cid:
                    return seg, op
        return None, None

    def op_count(self):
        return sum(len(s.ops) for s in self.segments)


# -- lowering -------------------------------------------------------------------


def lower_to_ir(m: ModelGraph):
    """Cut GOPs into send/recv channel pairs and split into labeled segments."""
    validate_model(m)
    if m.has_fused():
        raise LoweringError("defuse the model before lowering")

    is_weight = {n.id: n.kind == "input" and n.out.domain == "weight" for n in m.nodes}

    # Weakly connected components after cutting every GOP's input link.
    parent = {n.id: n.id for n in m.nodes if not is_weight[n.id]}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for n in m.nodes:
        if is_weight[n.id]:
            continue
        if n.kind in GOP_KINDS:
            continue  # the link feeding a GOP is cut
        for i in n.inputs:
            if not is_weight[i]:
                union(n.id, i)

    # Deterministic segment order: by smallest member node id.
    comp_nodes = {}
    for nid in parent:
        comp_nodes.setdefault(find(nid), []).append(nid)
    roots = sorted(comp_nodes)

    # Label each component by the (single) domain of its non-weight values.
    labels = {}
    for root in roots:
        doms = {m.nodes[nid].out.domain for nid in comp_nodes[root]}
        if len(doms) != 1:
            raise LoweringError(f"segment mixes vertex and edge ops: {sorted(doms)}")
        labels[root] = doms.pop()

    prog = IrProgram(weight_specs=dict(m.weight_specs().items()))
    seg_of_root = {}
    counters = {VERTEX: 0, EDGE: 0}
    for root in roots:
        label = labels[root]
        seg = Segment(label, counters[label])
        counters[label] += 1
        prog.segments.append(seg)
        seg_of_root[root] = seg

    # Channels in topological order of their source GOP nodes.
    gop_channel = {}
    for n in m.nodes:
        if n.kind in GOP_KINDS:
            if n.kind == "scatter_src":
                kind = "src_scatter"
            elif n.kind == "scatter_dst":
                kind = "dst_scatter"
            else:
                kind = f"gather_{n.attrs['reduce']}"
            cid = len(prog.channels)
            prog.channels.append(Channel(cid, kind, n.out.dim))
            gop_channel[n.id] = (cid, kind)

    # Emit ops per component in model-node order; GOP nodes become recvs in
    # their consumers' component, with the matching send in the producer's.
    ir_of = {}
    for n in m.nodes:
        if is_weight[n.id]:
            continue
        seg = seg_of_root[find(n.id)]
        ins = [i for i in n.inputs if not is_weight[i]]
        if n.kind == "input":
            ir_of[n.id] = seg.add("input", (), n.out.dim, marker=n.out.domain,
                                  name=n.attrs.get("name"))
        elif n.kind == "output":
            ir_of[n.id] = seg.add("output", (ir_of[ins[0]].id,), n.out.dim,
                                  marker=n.out.domain, name=n.attrs.get("name"))
        elif n.kind == "matmul":
            wname = m.nodes[n.inputs[1]].attrs["name"]
            ir_of[n.id] = seg.add("mv", (ir_of[ins[0]].id,), n.out.dim, weight=wname)
        elif n.kind == "bmm":
            wname = m.nodes[n.inputs[1]].attrs["name"]
            ir_of[n.id] = seg.add("bmm_row", (ir_of[ins[0]].id,), n.out.dim, weight=wname)
        elif n.kind in GOP_KINDS:
            cid, ckind = gop_channel[n.id]
            send_kind, _, recv_kind, _ = CHANNEL_RULES[ckind]
            src_seg = seg_of_root[find(n.inputs[0])]
            src_seg.add(send_kind, (ir_of[n.inputs[0]].id,), n.out.dim, channel=cid)
            ir_of[n.id] = seg.add(recv_kind, (), n.out.dim, channel=cid)
        else:
            ir_of[n.id] = seg.add(n.kind, tuple(ir_of[i].id for i in ins), n.out.dim)
    return prog


# -- verification ----------------------------------------------------------------


def verify_ir(p: IrProgram, check_exits=True):
    """Check all segment and channel invariants; returns diagnostics (empty = ok)."""
    diags = []
    ends = {c.id: {"send": [], "recv": []} for c in p.channels}
    for seg in p.segments:
        seen = set()
        for op in seg.ops:
            if op.id != len(seen):
                diags.append(f"{seg.name}: op ids not dense")
                break
            seen.add(op.id)
            for i in op.inputs:
                if i >= op.id:
                    diags.append(f"{seg.name}: cycle in segment (op {op.id})")
            if op.kind in SEND_KINDS or op.kind in RECV_KINDS:
                cid = op.channel
                if cid is None or not (0 <= cid < len(p.channels)):
                    diags.append(f"{seg.name}: op {op.id} has invalid channel")
                    continue
                end = "send" if op.kind in SEND_KINDS else "recv"
                ends[cid][end].append((seg, op))
                want_kind, want_label = CHANNEL_RULES[p.channels[cid].kind][
                    0 if end == "send" else 2], CHANNEL_RULES[p.channels[cid].kind][
                    1 if end == "send" else 3]
                if op.kind != want_kind:
                    diags.append(f"{seg.name}: channel {cid} {end} must be {want_kind}, got {op.kind}")
                if seg.label != want_label:
                    diags.append(f"{seg.name}: {op.kind} illegal in a {seg.label} segment")
            elif op.kind == "input" or op.kind == "output":
                if op.attrs.get("marker") not in (VERTEX, EDGE):
                    diags.append(f"{seg.name}: marker op {op.id} missing edge/vertex string")
            elif op.kind not in COMPUTE_KINDS:
                diags.append(f"{seg.name}: unknown op kind {op.kind!r}")
            if not op.inputs and op.kind not in RECV_KINDS and op.kind != "input":
                diags.append(f"{seg.name}: entry op {op.id} ({op.kind}) is not a marker or recv")
        if check_exits:
            cons = seg.consumers()
            for op in seg.ops:
                if not cons[op.id] and op.kind not in SEND_KINDS and op.kind != "output":
                    diags.append(f"{seg.name}: exit op {op.id} ({op.kind}) is not a marker or send")
    for cid, e in ends.items():
        if len(e["send"]) != 1 or len(e["recv"]) != 1:
            diags.append(f"unmatched channel {cid}: {len(e['send'])} sends, {len(e['recv'])} recvs")
    return diags


# -- interpretation ---------------------------------------------------------------


def _global_order(p: IrProgram):
    """Topological order over (segment, op) pairs with channel data edges."""
    nodes = [(si, op.id) for si, seg in enumerate(p.segments) for op in seg.ops]
    send_of = {}
    for si, seg in enumerate(p.segments):
        for op in seg.ops:
            if op.kind in SEND_KINDS:
                send_of[op.channel] = (si, op.id)
    deps = {}
    for si, seg in enumerate(p.segments):
        for op in seg.ops:
            d = [(si, i) for i in op.inputs]
            if op.kind in RECV_KINDS:
                if op.channel in send_of:
                    d.append(send_of[op.channel])
            deps[(si, op.id)] = d
    order, state = [], {}

    def visit(n):
        if state.get(n) == 2:
            return
        if state.get(n) == 1:
            raise LoweringError("cycle through channels")
        state[n] = 1
        for d in deps[n]:
            visit(d)
        state[n] = 2
        order.append(n)

    for n in nodes:
        visit(n)
    return order


def interpret_ir(p: IrProgram, g: Graph, feats: FeatureSet, weights,
                 stats=None):
    """Reference execution of an IR program over the whole graph.

    Independent of tiling: segments are evaluated op-by-op in one global
    topological order; gathers reduce in ascending edge-id order. `stats`,
    if given, accumulates per-op-kind single-item execution counts.
    """
    diags = verify_ir(p, check_exits=False)
    if diags:
        raise LoweringError("; ".join(diags))
    vals = {}
    chan = {}
    out = None
    etypes = g.edge_types
    for si, oid in _global_order(p):
        seg = p.segments[si]
        op = seg.ops[oid]
        items = g.num_vertices if seg.label == VERTEX else g.num_edges
        if stats is not None and (op.kind in COMPUTE_KINDS):
            stats[op.kind] = stats.get(op.kind, 0) + items
        xs = [vals[(si, i)] for i in op.inputs]
        k = op.kind
        if k == "input":
            if op.attrs["marker"] == VERTEX:
                v = np.asarray(feats.vertex_features, dtype=np.float32)
            else:
                if feats.edge_features is None:
                    raise ValueError("IR consumes edge features but none were given")
                v = np.asarray(feats.edge_features, dtype=np.float32)
        elif k == "output":
            v = xs[0]
            if op.attrs["marker"] == VERTEX and out is None:
                out = v
        elif k in ("mv", "matmul_row"):
            if op.weight not in weights:
                raise KeyError(f"missing weight {op.weight!r}")
            v = matmul_f32(xs[0], np.asarray(weights[op.weight], dtype=np.float32))
        elif k == "bmm_row":
            w = np.asarray(weights[op.weight], dtype=np.float32)
            if etypes is None:
                raise ValueError("bmm_row requires edge types")
            v = np.zeros((xs[0].shape[0], w.shape[2]), dtype=np.float32)
            for t in range(w.shape[0]):
                sel = etypes == t
                if sel.any():
                    v[sel] = matmul_f32(xs[0][sel], w[t])
        elif k == "add":
            v = xs[0] + xs[1]
        elif k == "sub":
            v = xs[0] - xs[1]
        elif k == "mul":
            v = xs[0] * xs[1]
        elif k == "div":
            v = xs[0] / xs[1]
        elif k == "max":
            v = np.maximum(xs[0], xs[1])
        elif k == "exp":
            v = np.exp(xs[0])
        elif k == "relu":
            v = np.maximum(xs[0], np.float32(0))
        elif k == "sigmoid":
            v = np.float32(1) / (np.float32(1) + np.exp(-xs[0]))
        elif k == "sendOutEdge" or k == "sendInEdge":
            chan[op.channel] = xs[0]
            v = xs[0]
        elif k in ("sendDstSum", "sendDstMax"):
            chan[op.channel] = xs[0]
            v = xs[0]
        elif k == "recvSrc":
            v = chan[op.channel][g.src]
        elif k == "recvDst":
            v = chan[op.channel][g.dst]
        elif k == "recvInEdge":
            sent = chan[op.channel]
            ckind = p.channels[op.channel].kind
            if ckind == "gather_sum":
                v = np.zeros((g.num_vertices, sent.shape[1]), dtype=np.float32)
                np.add.at(v, g.dst, sent)
            else:
                v = np.full((g.num_vertices, sent.shape[1]),
                            GATHER_IDENTITY["gather_max"], dtype=np.float32)
                np.maximum.at(v, g.dst, sent)
        else:
            raise LoweringError(f"interpreter cannot execute {k!r}")
        vals[(si, oid)] = v
    if out is None:
        raise LoweringError("program has no vertex output")
    return FeatureSet(out)


# -- dump / parse -----------------------------------------------------------------


def dump_ir(p: IrProgram):
    """Stable text form, one segment per block; round-trips via parse_ir_dump."""
    lines = []
    for c in p.channels:
        lines.append(f"channel {c.id} kind={c.kind} dim={c.dim}")
    for seg in p.segments:
        role = f" role={seg.role}" if seg.role else ""
        lines.append(f"segment {seg.name.split('.')[0]}.{seg.index}{role}")
        for op in seg.ops:
            parts = [f"  %{op.id} = {op.kind}"]
            parts += [f"%{i}" for i in op.inputs]
            parts.append(f"dim={op.dim}")
            for key in ("channel", "weight", "marker", "name"):
                if op.attrs.get(key) is not None:
                    parts.append(f"{key}={op.attrs[key]}")
            lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_ir_dump(text):
    p = IrProgram()
    seg = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("channel "):
            toks = line.split()
            attrs = dict(t.split("=", 1) for t in toks[2:])
            p.channels.append(Channel(int(toks[1]), attrs["kind"], int(attrs["dim"])))
        elif line.startswith("segment "):
            head = line.split()[1]
            tag, index = head.split(".")
            role = None
            for t in line.split()[2:]:
                if t.startswith("role="):
                    role = t.split("=", 1)[1]
            seg = Segment(VERTEX if tag == "v" else EDGE, int(index), role=role)
            p.segments.append(seg)
        elif line.startswith("%"):
            if seg is None:
                raise ParseError("op before any segment header", line=lineno)
            lhs, rhs = line.split("=", 1)
            oid = int(lhs.strip()[1:])
            toks = rhs.split()
            kind = toks[0]
            inputs, dim, attrs = [], None, {}
            for t in toks[1:]:
                if t.startswith("%"):
                    inputs.append(int(t[1:]))
                elif "=" in t:
                    key, val = t.split("=", 1)
                    if key == "dim":
                        dim = int(val)
                    elif key == "channel":
                        attrs["channel"] = int(val)
                    else:
                        attrs[key] = val
            if dim is None:
                raise ParseError("op missing dim", line=lineno)
            op = IrOp(oid, kind, tuple(inputs), dim, attrs)
            if oid != len(seg.ops):
                raise ParseError("op ids must be dense per segment", line=lineno)
            seg.ops.append(op)
        else:
            raise ParseError(f"unrecognized line {line!r}", line=lineno)
    return p


def ir_equal(a: IrProgram, b: IrProgram):
    """Exact structural equality (segment order, op order, attrs)."""
    if len(a.segments) != len(b.segments) or len(a.channels) != len(b.channels):
        return False
    for ca, cb in zip(a.channels, b.channels):
        if (ca.id, ca.kind, ca.dim) != (cb.id, cb.kind, cb.dim):
            return False
    for sa, sb in zip(a.segments, b.segments):
        if (sa.label, sa.index, sa.role, len(sa.ops)) != (sb.label, sb.index, sb.role, len(sb.ops)):
            return False
        for oa, ob in zip(sa.ops, sb.ops):
            attrs_a = {k: v for k, v in oa.attrs.items() if v is not None}
            attrs_b = {k: v for k, v in ob.attrs.items() if v is not None}
            if (oa.id, oa.kind, oa.inputs, oa.dim, attrs_a) != (ob.id, ob.kind, ob.inputs, ob.dim, attrs_b):
                return False
    return True
