"""Dense whole-graph reference executor: ground truth for every equivalence test.

Evaluates a ModelGraph topologically over full V x F / E x F float32
tensors. Gathers reduce in ascending edge-id order, the same canonical
order the tiled runtime commits in, so sum-gathers agree bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import FeatureSet, Graph
from .model import ModelGraph, validate

# Identity of a max-gather over an isolated vertex. Large negative sentinel
# rather than float32 lowest: it must survive a few-thousand-wide dot
# product without overflowing to inf/NaN.
MAX_GATHER_IDENTITY = np.float32(-3.0e18)


def matmul_f32(x, w):
    """float32 matmul whose width-1 case is batch-size independent.

    BLAS picks different summation orders for different row counts, which
    makes the same projection computed per-vertex and per-edge differ in the
    last ulp. Width-1 products instead multiply elementwise and reduce with
    numpy's pairwise sum, whose order depends only on the reduction length.
    """
    x = np.asarray(x)
    if w.shape[-1] == 1:
        return (x * w[:, 0]).sum(axis=1, keepdims=True, dtype=x.dtype)
    return x @ w


def gen_weights(m: ModelGraph, seed=0, dtype=np.float32):
    """Seeded fan-in-scaled uniform weights for every weight input.

    The 1/sqrt(fan_in) scale keeps activations O(1) through deep chains,
    which keeps float32 rounding well inside the verification tolerances.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in m.weight_specs().items():
        scale = 1.0 / np.sqrt(shape[-2])
        out[name] = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return out


def _gather(values, g: Graph, reduce, dtype):
    dim = values.shape[1]
    if reduce == "sum":
        out = np.zeros((g.num_vertices, dim), dtype=dtype)
        np.add.at(out, g.dst, values)
    else:
        out = np.full((g.num_vertices, dim), MAX_GATHER_IDENTITY, dtype=dtype)
        np.maximum.at(out, g.dst, values)
    return out


def run_dense(m: ModelGraph, g: Graph, feats: FeatureSet, weights, dtype=np.float32):
    """Evaluate the model; returns a FeatureSet with the vertex output.

    `dtype` defaults to the accelerator's float32; float64 is available as
    a shadow mode for tolerance studies.
    """
    validate(m)
    feats.check_against(g)
    vals = {}
    vertex_out = None
    for op in m.nodes:
        xs = [vals[i] for i in op.inputs]
        k = op.kind
        if k == "input":
            if op.out.domain == "weight":
                name = op.attrs["name"]
                if name not in weights:
                    raise KeyError(f"missing weight {name!r}")
                w = np.asarray(weights[name], dtype=dtype)
                if w.shape != tuple(op.attrs["shape"]):
                    raise ValueError(f"weight {name!r} has shape {w.shape}, "
                                     f"expected {tuple(op.attrs['shape'])}")
                vals[op.id] = w
            elif op.out.domain == "vertex":
                vals[op.id] = np.asarray(feats.vertex_features, dtype=dtype)
            else:
                if feats.edge_features is None:
                    raise ValueError("model consumes edge features but none were given")
                vals[op.id] = np.asarray(feats.edge_features, dtype=dtype)
        elif k == "output":
            vals[op.id] = xs[0]
            if op.out.domain == "vertex":
                vertex_out = xs[0]
        elif k == "matmul":
            vals[op.id] = matmul_f32(xs[0], xs[1])
        elif k == "bmm":
            if g.edge_types is None:
                raise ValueError("bmm requires edge types on the graph")
            x, w = xs
            out = np.zeros((x.shape[0], w.shape[2]), dtype=dtype)
            for t in range(w.shape[0]):
                sel = g.edge_types == t
                if sel.any():
                    out[sel] = matmul_f32(x[sel], w[t])
            vals[op.id] = out
        elif k == "scatter_src":
            vals[op.id] = xs[0][g.src]
        elif k == "scatter_dst":
            vals[op.id] = xs[0][g.dst]
        elif k == "gather":
            vals[op.id] = _gather(xs[0], g, op.attrs["reduce"], dtype)
        elif k == "add":
            vals[op.id] = xs[0] + xs[1]
        elif k == "sub":
            vals[op.id] = xs[0] - xs[1]
        elif k == "mul":
            vals[op.id] = xs[0] * xs[1]
        elif k == "div":
            vals[op.id] = xs[0] / xs[1]
        elif k == "max":
            vals[op.id] = np.maximum(xs[0], xs[1])
        elif k == "exp":
            vals[op.id] = np.exp(xs[0])
        elif k == "relu":
            vals[op.id] = np.maximum(xs[0], dtype(0))
        elif k == "sigmoid":
            vals[op.id] = dtype(1) / (dtype(1) + np.exp(-xs[0]))
        elif k == "fused":
            vals[op.id] = _run_fused(op.attrs["tag"], xs[0], g, dtype)
        else:
            raise ValueError(f"oracle cannot evaluate {k!r}")
    if vertex_out is None:
        # Edge-output models: hand the rows back as vertex_features-shaped data
        # is not meaningful, so surface the first output instead.
        vertex_out = vals[m.outputs()[0].id]
    return FeatureSet(np.asarray(vertex_out, dtype=np.float32))


def _run_fused(tag, x, g, dtype):
    if tag == "spmm":
        return _gather(x[g.src], g, "sum", dtype)
    if tag == "edge_softmax":
        ex = np.exp(x)
        denom = _gather(ex, g, "sum", dtype)
        return ex / denom[g.dst]
    raise ValueError(f"unknown fused tag {tag!r}")


@dataclass
class CompareReport:
    max_rel_err: float
    passed: bool
    worst_index: tuple
    rel_tol: float

    def __str__(self):
        verdict = "pass" if self.passed else "FAIL"
        return (f"{verdict}: max_rel_err={self.max_rel_err:.3e} "
                f"(tol {self.rel_tol:.1e}) at {self.worst_index}")


def compare(a, b, rel_tol=1e-5, abs_floor=1e-9):
    """Element-wise relative error with an absolute floor.

    Exactly equal elements (including matching infinities) count as zero
    error; all-zero inputs pass through the floor.
    """
    a = np.asarray(a.vertex_features if isinstance(a, FeatureSet) else a)
    b = np.asarray(b.vertex_features if isinstance(b, FeatureSet) else b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return CompareReport(0.0, True, (), rel_tol)
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    denom = np.maximum(np.maximum(np.abs(a64), np.abs(b64)), abs_floor)
    with np.errstate(invalid="ignore"):
        err = np.abs(a64 - b64) / denom
    err[a64 == b64] = 0.0
    err[np.isnan(a64) & np.isnan(b64)] = np.inf  # NaNs never compare equal
    worst = np.unravel_index(np.argmax(err), err.shape)
    worst_val = float(err[worst])
    return CompareReport(worst_val, bool(worst_val <= rel_tol), tuple(int(i) for i in worst), rel_tol)
