"""IR-level optimization passes: edge-to-vertex motion and dead-op pruning.

E2V walks forward from each recv in an edge segment, queueing ops whose
inputs derive only from that single recv (weight reads do not disqualify;
mixing endpoints or touching edge-native data stops the walk). The queued
chain runs once per vertex instead of once per edge: it moves into the
producing vertex segment ahead of the corresponding send, and moved results
still consumed on the edge side get a fresh send/recv pair.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import LoweringError
from .ir import (CHANNEL_RULES, ELW_KINDS, RECV_KINDS, SEND_KINDS, Channel,
                 IrOp, IrProgram, Segment, verify_ir)

# Ops eligible for motion: per-item compute that reads no edge-native data.
_MOVABLE = set(ELW_KINDS) | {"mv", "matmul_row"}


@dataclass
class PassReport:
    ops_moved: int = 0
    channels_added: int = 0
    ops_pruned: int = 0
    channels_pruned: int = 0
    segments_pruned: int = 0

    def merged(self, other):
        return PassReport(self.ops_moved + other.ops_moved,
                          self.channels_added + other.channels_added,
                          self.ops_pruned + other.ops_pruned,
                          self.channels_pruned + other.channels_pruned,
                          self.segments_pruned + other.segments_pruned)

    def as_dict(self):
        return self.__dict__.copy()


def _clone(p: IrProgram):
    out = IrProgram(weight_specs=dict(p.weight_specs))
    out.channels = [Channel(c.id, c.kind, c.dim) for c in p.channels]
    for seg in p.segments:
        ns = Segment(seg.label, seg.index, role=seg.role)
        ns.ops = [IrOp(o.id, o.kind, tuple(o.inputs), o.dim, dict(o.attrs))
                  for o in seg.ops]
        out.segments.append(ns)
    return out


def _check(p: IrProgram):
    diags = verify_ir(p, check_exits=False)
    if diags:
        raise LoweringError("pass precondition failed: " + "; ".join(diags))


def _compact_channels(p: IrProgram):
    """Renumber channels densely in current order; fix all op references."""
    remap = {c.id: i for i, c in enumerate(p.channels)}
    for i, c in enumerate(p.channels):
        c.id = i
    for seg in p.segments:
        for op in seg.ops:
            if op.channel is not None:
                op.attrs["channel"] = remap[op.channel]
    return remap


def _renumber(seg: Segment, keep_ids, replacements):
    """Rebuild a segment keeping `keep_ids` (in order) and applying
    `replacements` (old id -> ready IrOp with old-id inputs resolved later
    by position). Returns old-id -> new-id map."""
    new_ops = []
    remap = {}
    for op in seg.ops:
        if op.id in replacements:
            src = replacements[op.id]
            remap[op.id] = len(new_ops)
            new_ops.append(IrOp(len(new_ops), src.kind, src.inputs, src.dim, dict(src.attrs)))
        elif op.id in keep_ids:
            remap[op.id] = len(new_ops)
            new_ops.append(IrOp(len(new_ops), op.kind,
                                tuple(remap[i] for i in op.inputs), op.dim, dict(op.attrs)))
    seg.ops = new_ops
    return remap


def _find_send(p: IrProgram, cid):
    for seg in p.segments:
        for op in seg.ops:
            if op.kind in SEND_KINDS and op.channel == cid:
                return seg, op
    raise LoweringError(f"channel {cid} has no send")


def _try_move_one(p: IrProgram, report: PassReport):
    """Find one movable recv chain and rewrite; True if anything moved."""
    for seg in p.segments:
        if seg.label != "edge":
            continue
        cons = seg.consumers()
        for recv in seg.ops:
            if recv.kind not in ("recvSrc", "recvDst"):
                continue
            derived = {recv.id}
            moved = []
            for op in seg.ops:
                if op.kind in _MOVABLE and op.inputs and all(i in derived for i in op.inputs):
                    derived.add(op.id)
                    moved.append(op)
            if not moved:
                continue
            _apply_motion(p, seg, recv, moved, cons, report)
            return True
    return False


def _apply_motion(p, seg, recv, moved, cons, report):
    moved_ids = {op.id for op in moved}
    vseg, send = _find_send(p, recv.channel)
    src_value = send.inputs[0]

    still_needed = [op for op in moved
                    if any(c not in moved_ids for c in cons[op.id])]
    recv_still_needed = any(c not in moved_ids for c in cons[recv.id])
    scatter_kind = p.channels[recv.channel].kind

    # Fresh channels for moved results consumed on the edge side.
    new_channel = {}
    for op in still_needed:
        cid = len(p.channels)
        p.channels.append(Channel(cid, scatter_kind, op.dim))
        new_channel[op.id] = cid
        report.channels_added += 1

    # Vertex side: moved ops (inputs rebased onto the sent value) followed by
    # their sends, inserted immediately ahead of the original send.
    vmap = {}  # edge-side old id -> vertex-side new id (assigned during build)
    new_vops = []
    for vop in vseg.ops:
        if vop.id == send.id:
            for op in moved:
                ins = tuple(src_value if i == recv.id else vmap[i] for i in op.inputs)
                vmap[op.id] = len(new_vops)
                new_vops.append(IrOp(len(new_vops), op.kind, ins, op.dim, dict(op.attrs)))
            for op in still_needed:
                send_kind = CHANNEL_RULES[scatter_kind][0]
                new_vops.append(IrOp(len(new_vops), send_kind, (vmap[op.id],),
                                     op.dim, {"channel": new_channel[op.id]}))
            if recv_still_needed:
                new_vops.append(IrOp(len(new_vops), vop.kind,
                                     tuple(vop.inputs), vop.dim, dict(vop.attrs)))
            continue
        nid = len(new_vops)
        new_vops.append(IrOp(nid, vop.kind, tuple(vop.inputs), vop.dim, dict(vop.attrs)))
    # Ops before the insertion point kept their ids; references held by the
    # original tail shift by the inserted count.
    shift_at = send.id
    delta = len(new_vops) - len(vseg.ops)
    vseg.ops = new_vops
    _fix_shifted_inputs(vseg, shift_at, delta)

    # Edge side: drop moved ops; still-needed ones become recvs in place;
    # drop the original recv (and its channel's send) when fully absorbed.
    replacements = {}
    keep = set()
    for op in seg.ops:
        if op.id == recv.id:
            if recv_still_needed:
                keep.add(op.id)
        elif op.id in moved_ids:
            if any(o.id == op.id for o in still_needed):
                replacements[op.id] = IrOp(op.id, CHANNEL_RULES[scatter_kind][2], (),
                                           op.dim, {"channel": new_channel[op.id]})
        else:
            keep.add(op.id)
    _renumber(seg, keep, replacements)
    if not recv_still_needed:
        # fully absorbed: the original channel disappears (its send was
        # already dropped while rebuilding the vertex segment)
        p.channels = [c for c in p.channels if c.id != recv.channel]
        _compact_channels(p)
    report.ops_moved += len(moved)


def _fix_shifted_inputs(seg: Segment, insert_at, delta):
    """After inserting ops at `insert_at` (growing the segment by `delta`),
    rebase input references held by the ops of the original tail."""
    if delta <= 0:
        return
    for op in seg.ops:
        if op.id <= insert_at + delta:
            continue  # before or inside the insertion block
        op.inputs = tuple(i + delta if i >= insert_at else i for i in op.inputs)


def e2v(p: IrProgram, report: PassReport = None):
    """Edge-to-vertex motion; returns a new IrProgram (input untouched)."""
    _check(p)
    report = report if report is not None else PassReport()
    out = _clone(p)
    while _try_move_one(out, report):
        pass
    _check(out)
    return out


def prune_dead(p: IrProgram, report: PassReport = None):
    """Remove ops with no path to any output marker (via channels), then
    channels whose both ends died and segments left empty."""
    _check(p)
    report = report if report is not None else PassReport()
    out = _clone(p)

    # Global reverse reachability from output markers; send -> recv is a
    # dataflow edge, so liveness crosses recv -> send.
    send_of, recv_of = {}, {}
    for si, seg in enumerate(out.segments):
        for op in seg.ops:
            if op.kind in SEND_KINDS:
                send_of[op.channel] = (si, op.id)
            elif op.kind in RECV_KINDS:
                recv_of[op.channel] = (si, op.id)
    live = set()
    stack = [(si, op.id) for si, seg in enumerate(out.segments)
             for op in seg.ops if op.kind == "output"]
    while stack:
        node = stack.pop()
        if node in live:
            continue
        live.add(node)
        si, oid = node
        op = out.segments[si].ops[oid]
        stack.extend((si, i) for i in op.inputs)
        if op.kind in RECV_KINDS and op.channel in send_of:
            stack.append(send_of[op.channel])

    before_ops = out.op_count()
    dead_channels = set()
    for c in out.channels:
        s_live = send_of.get(c.id) in live
        r_live = recv_of.get(c.id) in live
        if not s_live and not r_live:
            dead_channels.add(c.id)
        elif s_live != r_live:
            raise LoweringError(f"channel {c.id} died on one end only")
    for si, seg in enumerate(out.segments):
        keep = {op.id for op in seg.ops if (si, op.id) in live}
        _renumber(seg, keep, {})
    report.ops_pruned += before_ops - out.op_count()
    report.channels_pruned += len(dead_channels)
    out.channels = [c for c in out.channels if c.id not in dead_channels]
    _compact_channels(out)

    kept_segments = [s for s in out.segments if s.ops]
    report.segments_pruned += len(out.segments) - len(kept_segments)
    counters = {"vertex": 0, "edge": 0}
    for seg in kept_segments:
        seg.index = counters[seg.label]
        counters[seg.label] += 1
    out.segments = kept_segments
    _check(out)
    return out


def run_passes(p: IrProgram, enable_e2v=True):
    """Standard optimization pipeline; returns (program, report)."""
    report = PassReport()
    out = e2v(p, report) if enable_e2v else p
    out = prune_dead(out, report)
    return out, report
