"""Grid tiling of a graph into destination partitions x source-range tiles.

Destination partitions split the vertex id space evenly; inside a partition
every source range yields one candidate tile holding the edges of that
(dst range x src range) rectangle in COO form. Regular mode keeps every
candidate and loads the full source range; sparse mode drops empty tiles
and keeps only source vertices that actually have an edge in the tile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError
from .graph import Graph

# On-chip edge record: 32-bit local src, local dst, edge id + 8-bit type,
# padded to 16 bytes.
EDGE_RECORD_BYTES = 16
VALUE_BYTES = 4


@dataclass
class Tile:
    tile_id: int
    src_start: int
    src_stop: int
    kept_sources: np.ndarray      # global ids actually loaded, sorted
    local_src: np.ndarray         # per-edge index into kept_sources
    local_dst: np.ndarray         # per-edge dst - partition.dst_start
    edge_ids: np.ndarray          # global canonical edge ids
    edge_type: np.ndarray         # per-edge type (0 when untyped)

    @property
    def num_edges(self):
        return int(self.edge_ids.size)

    @property
    def num_kept(self):
        return int(self.kept_sources.size)

    def edge_list_bytes(self):
        return self.num_edges * EDGE_RECORD_BYTES


@dataclass
class Partition:
    index: int
    dst_start: int
    dst_stop: int
    tiles: list[Tile] = field(default_factory=list)

    @property
    def num_dst(self):
        return self.dst_stop - self.dst_start


@dataclass
class TilingPlan:
    dst_size: int
    src_size: int
    mode: str
    num_vertices: int
    partitions: list[Partition]

    @property
    def num_partitions(self):
        return len(self.partitions)

    @property
    def num_tiles(self):
        return sum(len(p.tiles) for p in self.partitions)

    def tiles(self):
        for p in self.partitions:
            for t in p.tiles:
                yield p, t

    def total_edges(self):
        return sum(t.num_edges for _, t in self.tiles())

    def max_kept_sources(self):
        return max((t.num_kept for _, t in self.tiles()), default=0)

    def max_tile_edges(self):
        return max((t.num_edges for _, t in self.tiles()), default=0)


@dataclass
class TrafficReport:
    src_vertex_loads: int
    dst_vertex_loads: int
    edge_loads: int
    total_bytes: int

    def as_dict(self):
        return {
            "src_vertex_loads": self.src_vertex_loads,
            "dst_vertex_loads": self.dst_vertex_loads,
            "edge_loads": self.edge_loads,
            "total_bytes": self.total_bytes,
        }


def make_plan(g: Graph, dst_size, src_size, mode="sparse"):
    """Partition `g` into a TilingPlan. Pure function of its arguments."""
    if dst_size < 1 or src_size < 1:
        raise ValueError("partition sizes must be >= 1")
    if mode not in ("regular", "sparse"):
        raise ValueError(f"unknown tiling mode: {mode}")
    v = g.num_vertices
    etypes = g.edge_types if g.edge_types is not None else np.zeros(g.num_edges, dtype=np.int64)

    partitions = []
    tile_id = 0
    n_dst = max(-(-v // dst_size), 0)
    n_src = max(-(-v // src_size), 0)
    for pi in range(n_dst):
        d0, d1 = pi * dst_size, min((pi + 1) * dst_size, v)
        part = Partition(pi, d0, d1)
        # All in-edges of the partition, already grouped by (dst, src).
        lo, hi = g.in_indptr[d0], g.in_indptr[d1]
        e_src = g.in_src[lo:hi]
        e_eid = g.in_eid[lo:hi]
        e_dst = np.repeat(np.arange(d0, d1), np.diff(g.in_indptr[d0:d1 + 1]))
        blocks = e_src // src_size
        for si in range(n_src):
            s0, s1 = si * src_size, min((si + 1) * src_size, v)
            m = blocks == si
            t_src, t_dst, t_eid = e_src[m], e_dst[m], e_eid[m]
            if mode == "sparse" and t_src.size == 0:
                continue
            if mode == "sparse":
                kept, inverse = np.unique(t_src, return_inverse=True)
                local_src = inverse.astype(np.int64)
            else:
                kept = np.arange(s0, s1, dtype=np.int64)
                local_src = t_src - s0
            order = np.lexsort((local_src, t_dst))
            tile = Tile(tile_id, s0, s1, kept,
                        local_src[order], (t_dst - d0)[order],
                        t_eid[order], etypes[t_eid[order]])
            part.tiles.append(tile)
            tile_id += 1
        partitions.append(part)
    return TilingPlan(dst_size, src_size, mode, v, partitions)


def traffic_stats(plan: TilingPlan, f, bytes_per_value=VALUE_BYTES):
    """Analytic off-chip load counts for a plan at embedding width f."""
    src_loads = sum(t.num_kept for _, t in plan.tiles())
    dst_loads = sum(p.num_dst for p in plan.partitions)
    edge_loads = plan.total_edges()
    total = (src_loads + dst_loads) * f * bytes_per_value + edge_loads * EDGE_RECORD_BYTES
    return TrafficReport(src_loads, dst_loads, edge_loads, total)


def check_capacity(plan: TilingPlan, hw, model=None, max_width=None):
    """Verify every tile fits the tile hub and the embedding memory.

    `max_width` (or the widest tensor of `model`) bounds the per-item
    embedding footprint. The per-tile working set charges loaded source
    rows, edge staging, and double-buffered destination rows.
    """
    if max_width is None:
        max_width = model.max_width() if model is not None else 1
    for p, t in plan.tiles():
        hub = t.edge_list_bytes()
        if hub > hw.tilehub_bytes:
            raise CapacityError(
                f"tile {t.tile_id}: edge list needs {hub} bytes, tile hub has {hw.tilehub_bytes}",
                tile_id=t.tile_id, required=hub, available=hw.tilehub_bytes)
        ws = (t.num_kept * max_width + t.num_edges * max_width
              + 2 * p.num_dst * max_width) * VALUE_BYTES
        if ws > hw.uem_bytes:
            raise CapacityError(
                f"tile {t.tile_id}: working set needs {ws} bytes, embedding memory has {hw.uem_bytes}",
                tile_id=t.tile_id, required=ws, available=hw.uem_bytes)
    return True


def auto_sizes(g: Graph, max_width, hw):
    """Default square partition size: destination accumulators plus one
    tile's source rows must fit in half the embedding memory (the other
    half is left for staging and double buffering)."""
    per_row = 2 * max_width * VALUE_BYTES
    size = max(int(hw.uem_bytes // 2 // max(per_row, 1)), 1)
    size = min(size, max(g.num_vertices, 1))
    return size, size


def auto_plan(g: Graph, max_width, hw, mode="sparse"):
    """Derive partition sizes and build a plan that actually fits.

    The memory-derived default can still overflow the tile hub on dense
    rows, so sizes halve until check_capacity passes.
    """
    dst, src = auto_sizes(g, max_width, hw)
    while True:
        plan = make_plan(g, dst, src, mode)
        try:
            check_capacity(plan, hw, max_width=max_width)
            return plan
        except CapacityError:
            if dst == 1 and src == 1:
                raise
            dst = max(dst // 2, 1)
            src = max(src // 2, 1)
