"""Exhaustive interleaving enumeration of the stream synchronization protocol.

The functional runtime executes one deterministic interleaving. This module
explores all of them: it abstracts a compiled program to its sync skeleton
(runs of computational instructions collapse into single opaque steps, which
cannot affect blocking) and enumerates every reachable scheduling state for
small stream counts, checking that no state deadlocks and no semaphore goes
negative. Streams of one class are interchangeable, so states are canonical
up to within-class permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

from .codegen import Program

PARKED = ("parked",)


@dataclass
class ProtocolResult:
    states: int
    deadlocks: list
    final_reached: bool

    @property
    def ok(self):
        return not self.deadlocks and self.final_reached


def _abstract(fn, entries=None):
    """Collapse a function into sync skeleton blocks.

    Returns a list of blocks (one per phase entry, or a single block for the
    d function), each a tuple of steps from {WAIT, SIGNAL, FCH, UPD, CHK, WORK}.
    """
    sync = {"WAIT": "WAIT", "SIGNAL": "SIGNAL", "FCH.PTT": "FCH",
            "UPD.PTT": "UPD", "CHK.PTT": "CHK"}
    if entries is None:
        steps = []
        for ins in fn:
            kind = sync.get(ins.opcode, "WORK")
            if kind == "WORK" and steps and steps[-1][0] == "WORK":
                continue
            steps.append((kind, ins.phase))
        return [tuple(steps)]
    blocks = []
    bounds = list(entries) + [len(fn)]
    for b0, b1 in zip(bounds, bounds[1:]):
        steps = []
        for ins in fn[b0:b1]:
            kind = sync.get(ins.opcode, "WORK")
            if kind == "WORK" and steps and steps[-1][0] == "WORK":
                continue
            steps.append((kind, ins.phase))
        blocks.append(tuple(steps))
    return blocks


def enumerate_interleavings(prog: Program, tile_counts, n_s=2, n_e=2,
                            max_states=2_000_000):
    """Explore every scheduler interleaving of the protocol.

    `tile_counts` lists the tile count of each partition of the plan. Returns
    ProtocolResult with the number of distinct states visited and any
    deadlocked states found (states where nothing can step and the run is
    not complete). Raises ValueError when the state budget is exceeded.
    """
    s_blocks = _abstract(prog.s_function, prog.s_entries)
    e_blocks = _abstract(prog.e_function, prog.e_entries)
    d_steps = _abstract(prog.d_function)[0]
    n_phases = max(prog.n_phases, 0)
    parts = tuple(int(t) for t in tile_counts)

    # State:
    #  d: (step index, partition index, finished)
    #  shared: (sweep, claimed, announced, done, sem_s, sem_d, queue)
    #  s streams: sorted tuple of PARKED or ("run", phase, step)
    #  e streams: sorted tuple of PARKED or ("run", phase, step, branch)
    init = ((0, -1, False), (0, 0, 0, 0, 0, 0, 0),
            (PARKED,) * n_s, (PARKED,) * n_e)

    def tiles_of(pi):
        return parts[pi] if 0 <= pi < len(parts) else 0

    def successors(state):
        (dstep, dpart, dfin), (sweep, claimed, announced, done, sem_s, sem_d, queue), ss, es = state
        out = []

        # dStream
        if not dfin:
            kind, phase = d_steps[dstep]
            nxt = (dstep + 1) % len(d_steps)
            if kind == "FCH":
                if dpart + 1 >= len(parts):
                    out.append((((dstep, dpart + 1, True)), (sweep, claimed, announced, done, sem_s, sem_d, queue), ss, es))
                else:
                    out.append(((nxt, dpart + 1, False), (0, 0, 0, 0, sem_s, sem_d, queue), ss, es))
            elif kind == "UPD":
                out.append(((nxt, dpart, False), (phase, 0, 0, 0, sem_s, sem_d, queue), ss, es))
            elif kind == "SIGNAL":
                k = min(n_s, tiles_of(dpart))
                out.append(((nxt, dpart, False), (sweep, claimed, k, done, sem_s + k, sem_d, queue), ss, es))
            elif kind == "WAIT":
                if done == tiles_of(dpart):
                    out.append(((nxt, dpart, False), (sweep, claimed, announced, done, sem_s, sem_d, queue), ss, es))
                elif sem_d > 0:
                    out.append(((dstep, dpart, False), (sweep, claimed, announced, done, sem_s, sem_d - 1, queue), ss, es))
            else:  # WORK
                out.append(((nxt, dpart, False), (sweep, claimed, announced, done, sem_s, sem_d, queue), ss, es))

        # sStreams
        for i, s in enumerate(ss):
            if s == PARKED:
                if sem_s > 0 and n_phases:
                    if claimed >= tiles_of(dpart):
                        raise AssertionError("over-signal: wakeup with no unclaimed tile")
                    ns = list(ss)
                    ns[i] = ("run", sweep, 1)  # past the WAIT
                    out.append((((dstep, dpart, dfin)), (sweep, claimed + 1, announced, done, sem_s - 1, sem_d, queue),
                                tuple(sorted(ns)), es))
            else:
                _, phase, step = s
                ns = list(ss)
                if step >= len(s_blocks[phase]) or s_blocks[phase][step][0] == "WAIT":
                    # ran past a dropped hand-off into the next block: park
                    ns[i] = PARKED
                    out.append(((dstep, dpart, dfin), (sweep, claimed, announced, done, sem_s, sem_d, queue),
                                tuple(sorted(ns)), es))
                    continue
                kind, _ = s_blocks[phase][step]
                if kind == "SIGNAL":
                    ns[i] = PARKED
                    out.append(((dstep, dpart, dfin), (sweep, claimed, announced, done, sem_s, sem_d, queue + 1),
                                tuple(sorted(ns)), es))
                else:
                    ns[i] = ("run", phase, step + 1)
                    out.append(((dstep, dpart, dfin), (sweep, claimed, announced, done, sem_s, sem_d, queue),
                                tuple(sorted(ns)), es))

        # eStreams
        for i, e in enumerate(es):
            if e == PARKED:
                if queue > 0:
                    ne = list(es)
                    ne[i] = ("run", sweep, 1, False)
                    out.append(((dstep, dpart, dfin), (sweep, claimed, announced, done, sem_s, sem_d, queue - 1),
                                ss, tuple(sorted(ne))))
            else:
                _, phase, step, branch = e
                ne = list(es)
                if step >= len(e_blocks[phase]) or e_blocks[phase][step][0] == "WAIT":
                    ne[i] = PARKED
                    out.append(((dstep, dpart, dfin), (sweep, claimed, announced, done, sem_s, sem_d, queue),
                                ss, tuple(sorted(ne))))
                    continue
                kind, _ = e_blocks[phase][step]
                if kind == "CHK":
                    same = announced < tiles_of(dpart)
                    ne[i] = ("run", phase, step + 1, same)
                    out.append(((dstep, dpart, dfin),
                                (sweep, claimed, announced + (1 if same else 0), done + 1, sem_s, sem_d, queue),
                                ss, tuple(sorted(ne))))
                elif kind == "SIGNAL":
                    ne[i] = PARKED
                    shared = (sweep, claimed, announced, done, sem_s + 1, sem_d, queue) if branch \
                        else (sweep, claimed, announced, done, sem_s, sem_d + 1, queue)
                    out.append(((dstep, dpart, dfin), shared, ss, tuple(sorted(ne))))
                else:
                    ne[i] = ("run", phase, step + 1, branch)
                    out.append(((dstep, dpart, dfin), (sweep, claimed, announced, done, sem_s, sem_d, queue),
                                ss, tuple(sorted(ne))))
        return out

    def is_final(state):
        (dstep, dpart, dfin), (sweep, claimed, announced, done, sem_s, sem_d, queue), ss, es = state
        return dfin and sem_s == 0 and queue == 0 and \
            all(s == PARKED for s in ss) and all(e == PARKED for e in es)

    visited = {init}
    stack = [init]
    deadlocks = []
    final = False
    while stack:
        state = stack.pop()
        succ = successors(state)
        for shared in succ:
            sems = shared[1]
            if sems[4] < 0 or sems[5] < 0 or sems[6] < 0:
                raise AssertionError(f"semaphore underflow in {shared}")
        if not succ:
            if is_final(state):
                final = True
            else:
                deadlocks.append(state)
            continue
        for nxt in succ:
            if nxt not in visited:
                if len(visited) >= max_states:
                    raise ValueError(f"state budget {max_states} exceeded")
                visited.add(nxt)
                stack.append(nxt)
    return ProtocolResult(len(visited), deadlocks, final)
