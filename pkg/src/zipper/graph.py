"""Input graphs: loading, synthesis, degree reordering, and feature data.

A Graph stores one directed edge set in two sorted sparse views: out-CSR
(edges grouped by source) and in-CSC (edges grouped by destination, each
entry keeping its global edge id). Edge ids are canonical: position of the
edge in the list sorted by (src, dst). For a fixed destination, ascending
source therefore equals ascending edge id, which is the order every gather
in the system reduces in.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ParseError

MAX_VERTEX_ID = 2**32 - 1

# R-MAT quadrant probabilities (a, b, c, d).
_RMAT_PROBS = (0.57, 0.19, 0.19, 0.05)


@dataclass
class Graph:
    """Immutable directed graph with CSR/CSC adjacency and optional edge types."""

    num_vertices: int
    num_edges: int
    # Canonical edge list, sorted by (src, dst); edge id == position.
    src: np.ndarray
    dst: np.ndarray
    # Out-CSR: neighbors of v are dst[out_indptr[v]:out_indptr[v+1]].
    out_indptr: np.ndarray
    # In-CSC over destination: sources and edge ids per destination vertex,
    # sorted by source within each destination.
    in_indptr: np.ndarray
    in_src: np.ndarray
    in_eid: np.ndarray
    edge_types: np.ndarray | None = None
    num_edge_types: int = 0

    @classmethod
    def from_edges(cls, src, dst, num_vertices=None, edge_types=None, compact=False):
        """Build a canonical Graph from raw (possibly duplicated) edge arrays.

        With `compact`, the used vertex ids are relabeled onto [0, V) in
        ascending order; otherwise `num_vertices` (or max id + 1) is used.
        Duplicate (src, dst) pairs are dropped, keeping the first occurrence.
        """
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise ValueError("src/dst length mismatch")
        if edge_types is not None:
            edge_types = np.asarray(edge_types, dtype=np.int64).ravel()
            if edge_types.shape != src.shape:
                raise ValueError("edge_types length mismatch")

        if src.size and (src.min() < 0 or dst.min() < 0):
            raise ParseError("negative vertex id")
        if src.size and max(src.max(), dst.max()) > MAX_VERTEX_ID:
            raise CapacityError("vertex id exceeds 32-bit id space")

        if compact:
            used = np.unique(np.concatenate([src, dst]))
            src = np.searchsorted(used, src)
            dst = np.searchsorted(used, dst)
            num_vertices = int(used.size)
        elif num_vertices is None:
            num_vertices = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1)
        else:
            num_vertices = int(num_vertices)
            if src.size and max(src.max(), dst.max()) >= num_vertices:
                raise ParseError("vertex id outside declared range")

        # Dedup keeping first occurrence, then canonical (src, dst) order.
        order = np.lexsort((np.arange(src.size), dst, src))
        src, dst = src[order], dst[order]
        if edge_types is not None:
            edge_types = edge_types[order]
        if src.size:
            keep = np.ones(src.size, dtype=bool)
            keep[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
            src, dst = src[keep], dst[keep]
            if edge_types is not None:
                edge_types = edge_types[keep]

        num_edges = int(src.size)
        out_indptr = np.zeros(num_vertices + 1, dtype=np.int64)
        np.add.at(out_indptr, src + 1, 1)
        np.cumsum(out_indptr, out=out_indptr)

        in_order = np.lexsort((src, dst))
        in_src = src[in_order]
        in_eid = in_order.astype(np.int64)
        in_indptr = np.zeros(num_vertices + 1, dtype=np.int64)
        np.add.at(in_indptr, dst[in_order] + 1, 1)
        np.cumsum(in_indptr, out=in_indptr)

        n_types = int(edge_types.max() + 1) if edge_types is not None and num_edges else 0
        return cls(num_vertices, num_edges, src, dst, out_indptr,
                   in_indptr, in_src, in_eid, edge_types, n_types)

    def out_neighbors(self, v):
        return self.dst[self.out_indptr[v]:self.out_indptr[v + 1]]

    def in_neighbors(self, v):
        return self.in_src[self.in_indptr[v]:self.in_indptr[v + 1]]

    def in_degrees(self):
        return np.diff(self.in_indptr)

    def out_degrees(self):
        return np.diff(self.out_indptr)

    def edge_set(self):
        """Edge set as a sorted (E, 2) array; basis for isomorphism checks."""
        return np.column_stack([self.src, self.dst])

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        if (self.num_vertices, self.num_edges) != (other.num_vertices, other.num_edges):
            return False
        if not (np.array_equal(self.src, other.src) and np.array_equal(self.dst, other.dst)):
            return False
        if (self.edge_types is None) != (other.edge_types is None):
            return False
        if self.edge_types is not None and not np.array_equal(self.edge_types, other.edge_types):
            return False
        return True

    def validate(self):
        """Check structural invariants; raises AssertionError on violation."""
        assert self.out_indptr[-1] == self.num_edges
        assert self.in_indptr[-1] == self.num_edges
        if self.num_edges:
            assert self.src.min() >= 0 and self.src.max() < self.num_vertices
            assert self.dst.min() >= 0 and self.dst.max() < self.num_vertices
        # out view sorted by (src, dst); in view sorted by (dst, src)
        assert np.array_equal(np.lexsort((self.dst, self.src)), np.arange(self.num_edges))
        # both views describe the same edge set
        in_dst = np.repeat(np.arange(self.num_vertices), np.diff(self.in_indptr))
        pairs_in = np.lexsort((in_dst, self.in_src))
        assert np.array_equal(self.in_src[pairs_in], self.src)
        assert np.array_equal(in_dst[pairs_in], self.dst)
        assert np.array_equal(self.src[self.in_eid], self.in_src)
        if self.edge_types is not None:
            assert self.edge_types.size == self.num_edges
            if self.num_edges:
                assert self.edge_types.min() >= 0
                assert self.edge_types.max() < self.num_edge_types


@dataclass
class FeatureSet:
    """Per-vertex (and optionally per-edge) embedding matrices, float32."""

    vertex_features: np.ndarray
    edge_features: np.ndarray | None = None

    def __post_init__(self):
        self.vertex_features = np.asarray(self.vertex_features, dtype=np.float32)
        if self.vertex_features.ndim != 2:
            raise ValueError("vertex_features must be V x F")
        if self.edge_features is not None:
            self.edge_features = np.asarray(self.edge_features, dtype=np.float32)

    @property
    def embedding_dim(self):
        return self.vertex_features.shape[1]

    def check_against(self, g: Graph):
        if self.vertex_features.shape[0] != g.num_vertices:
            raise ValueError("vertex feature rows != V")
        if self.edge_features is not None and self.edge_features.shape[0] != g.num_edges:
            raise ValueError("edge feature rows != E")
        if self.embedding_dim < 1:
            raise ValueError("embedding dim must be >= 1")


@dataclass
class Permutation:
    """Vertex relabeling: new_of_old[v] is the new id of old vertex v."""

    new_of_old: np.ndarray
    old_of_new: np.ndarray = field(default=None)

    def __post_init__(self):
        self.new_of_old = np.asarray(self.new_of_old, dtype=np.int64)
        if self.old_of_new is None:
            self.old_of_new = np.argsort(self.new_of_old)
        else:
            self.old_of_new = np.asarray(self.old_of_new, dtype=np.int64)

    def validate(self):
        n = self.new_of_old.size
        ident = np.arange(n)
        assert np.array_equal(np.sort(self.new_of_old), ident)
        assert np.array_equal(self.new_of_old[self.old_of_new], ident)

    def apply_rows(self, mat):
        """Reorder feature rows so row i of the result belongs to new id i."""
        return np.asarray(mat)[self.old_of_new]

    def apply_features(self, feats: FeatureSet, edge_perm=None):
        edge = feats.edge_features
        if edge is not None and edge_perm is not None:
            edge = edge[edge_perm]
        return FeatureSet(self.apply_rows(feats.vertex_features), edge)


def load_graph(path, fmt=None):
    """Load an edge-list or Matrix Market file into a Graph.

    Edge list: one `src dst [etype]` per line, `#` comments, ids compacted
    to [0, V). Matrix Market: coordinate pattern/integer, 1-indexed, vertex
    count from the declared dimensions; entry (i, j) is the edge i -> j.
    """
    if fmt is None:
        fmt = "matrix-market" if os.path.splitext(path)[1].lower() in (".mtx", ".mm") else "edge-list"
    if fmt == "edge-list":
        return _load_edge_list(path)
    if fmt == "matrix-market":
        return _load_matrix_market(path)
    raise ValueError(f"unknown graph format: {fmt}")


def _load_edge_list(path):
    srcs, dsts, types = [], [], []
    have_types = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) not in (2, 3):
                raise ParseError(f"expected 'src dst [etype]', got {raw.strip()!r}", line=lineno)
            try:
                s, d = int(parts[0]), int(parts[1])
                t = int(parts[2]) if len(parts) == 3 else -1
            except ValueError:
                raise ParseError(f"non-integer field in {raw.strip()!r}", line=lineno) from None
            if s < 0 or d < 0:
                raise ParseError("negative vertex id", line=lineno)
            if max(s, d) > MAX_VERTEX_ID:
                raise CapacityError(f"vertex id exceeds 32-bit id space (line {lineno})")
            srcs.append(s)
            dsts.append(d)
            types.append(t)
            have_types = have_types or len(parts) == 3
    etypes = np.array(types, dtype=np.int64) if have_types else None
    if etypes is not None and (etypes < 0).any():
        raise ParseError("edge type missing on some lines but present on others")
    return Graph.from_edges(np.array(srcs, dtype=np.int64), np.array(dsts, dtype=np.int64),
                            edge_types=etypes, compact=True)


def _load_matrix_market(path):
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket"):
            raise ParseError("missing MatrixMarket header", line=1)
        fields = header.lower().split()
        if "coordinate" not in fields:
            raise ParseError("only coordinate format supported", line=1)
        symmetric = "symmetric" in fields
        lineno = 1
        dims = None
        rows, cols = [], []
        for raw in fh:
            lineno += 1
            text = raw.strip()
            if not text or text.startswith("%"):
                continue
            parts = text.split()
            if dims is None:
                if len(parts) != 3:
                    raise ParseError("expected 'rows cols nnz'", line=lineno)
                dims = (int(parts[0]), int(parts[1]), int(parts[2]))
                continue
            if len(parts) < 2:
                raise ParseError(f"expected coordinate entry, got {text!r}", line=lineno)
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer coordinate in {text!r}", line=lineno) from None
            if i < 1 or j < 1:
                raise ParseError("coordinates are 1-indexed", line=lineno)
            rows.append(i - 1)
            cols.append(j - 1)
    if dims is None:
        raise ParseError("missing size line")
    n = max(dims[0], dims[1])
    src = np.array(rows, dtype=np.int64)
    dst = np.array(cols, dtype=np.int64)
    if symmetric:
        off = src != dst
        src, dst = np.concatenate([src, dst[off]]), np.concatenate([dst, src[off]])
    return Graph.from_edges(src, dst, num_vertices=n)


def save_edge_list(g: Graph, path):
    """Write the canonical edge list back out; inverse of the edge-list loader."""
    with open(path, "w") as fh:
        for i in range(g.num_edges):
            if g.edge_types is not None:
                fh.write(f"{g.src[i]} {g.dst[i]} {g.edge_types[i]}\n")
            else:
                fh.write(f"{g.src[i]} {g.dst[i]}\n")


def gen_synthetic(kind, v, e=None, seed=0, edge_type_count=0):
    """Deterministic synthetic graphs: erdos-renyi, rmat, star, chain.

    star: every edge points at vertex 0; chain: i -> i+1. For the random
    kinds, exactly `e` distinct edges are produced (self-loops allowed).
    """
    v = int(v)
    if v < 0:
        raise ValueError("vertex count must be non-negative")
    if kind == "star":
        src = np.arange(1, v, dtype=np.int64)
        dst = np.zeros(max(v - 1, 0), dtype=np.int64)
    elif kind == "chain":
        src = np.arange(0, max(v - 1, 0), dtype=np.int64)
        dst = src + 1
    elif kind in ("erdos-renyi", "rmat"):
        if e is None:
            raise ValueError(f"{kind} requires an edge count")
        e = int(e)
        if e > v * v:
            raise ValueError("requested more edges than v^2")
        rng = np.random.default_rng(seed)
        sampler = _sample_rmat if kind == "rmat" else _sample_uniform
        src, dst = _sample_distinct(sampler, rng, v, e)
    else:
        raise ValueError(f"unknown synthetic kind: {kind}")

    etypes = None
    if edge_type_count:
        etypes = np.random.default_rng(seed + 0x5EED).integers(
            0, edge_type_count, size=src.size, dtype=np.int64)
    g = Graph.from_edges(src, dst, num_vertices=v, edge_types=etypes)
    if edge_type_count:
        g.num_edge_types = int(edge_type_count)
    return g


def assign_edge_types(g: Graph, num_types, seed=0):
    """Attach pseudo-random edge types (for relational models) to a graph."""
    etypes = np.random.default_rng(seed).integers(0, num_types, size=g.num_edges, dtype=np.int64)
    out = Graph.from_edges(g.src, g.dst, num_vertices=g.num_vertices, edge_types=etypes)
    out.num_edge_types = int(num_types)
    return out


def _sample_uniform(rng, v, n):
    return rng.integers(0, v, size=n), rng.integers(0, v, size=n)


def _sample_rmat(rng, v, n):
    levels = max(int(np.ceil(np.log2(v))), 1) if v > 1 else 1
    a, b, c, _ = _RMAT_PROBS
    src = np.zeros(n, dtype=np.int64)
    dst = np.zeros(n, dtype=np.int64)
    for _ in range(levels):
        r = rng.random(n)
        right = (r >= a) & (r < a + b)
        down = (r >= a + b) & (r < a + b + c)
        diag = r >= a + b + c
        src = src * 2 + (down | diag)
        dst = dst * 2 + (right | diag)
    return src, dst


def _sample_distinct(sampler, rng, v, e):
    """Draw from `sampler` until `e` distinct in-range edges are collected.

    First-arrival order is kept so the subset follows the sampler's own
    distribution rather than favoring low vertex ids.
    """
    if e == 0 or v == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z
    collected = np.zeros(0, dtype=np.int64)
    for _ in range(200):
        s, d = sampler(rng, v, max(2 * (e - collected.size), 64))
        ok = (s < v) & (d < v)
        keys = s[ok] * v + d[ok]
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
        keys = keys[~np.isin(keys, collected)]
        collected = np.concatenate([collected, keys])
        if collected.size >= e:
            keys = collected[:e]
            return keys // v, keys % v
    raise ValueError("could not realize requested edge count")


def degree_reorder(g: Graph):
    """Relabel vertices by descending in-degree (ties: ascending old id).

    Returns the reordered Graph and the Permutation; feature rows must be
    permuted by the caller with the same Permutation. Edge ids are re-derived
    canonically in the new labeling, so gather order stays well defined.
    """
    indeg = g.in_degrees()
    old_of_new = np.lexsort((np.arange(g.num_vertices), -indeg))
    new_of_old = np.argsort(old_of_new)
    perm = Permutation(new_of_old, old_of_new)
    new_src = new_of_old[g.src] if g.num_edges else g.src
    new_dst = new_of_old[g.dst] if g.num_edges else g.dst
    out = Graph.from_edges(new_src, new_dst, num_vertices=g.num_vertices,
                           edge_types=g.edge_types)
    out.num_edge_types = g.num_edge_types
    return out, perm


def random_features(g: Graph, dim, seed=0, with_edge_features=False):
    """Seeded uniform [-1, 1] float32 features for tests and the CLI."""
    rng = np.random.default_rng(seed)
    vf = rng.uniform(-1.0, 1.0, size=(g.num_vertices, dim)).astype(np.float32)
    ef = None
    if with_edge_features:
        ef = rng.uniform(-1.0, 1.0, size=(g.num_edges, dim)).astype(np.float32)
    return FeatureSet(vf, ef)
