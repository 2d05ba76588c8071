"""Compiler and cycle-approximate simulator for a tiled multi-stream GNN
accelerator: whole-graph models lower to a graph-native segment IR, get
optimized and specialized into tile-level stream programs, and execute
under a verified signal/wait protocol with a timing and energy model."""

from .graph import FeatureSet, Graph, Permutation, degree_reorder, gen_synthetic, load_graph
from .model import ModelGraph, build_model, defuse, parse_model
from .ir import IrProgram, interpret_ir, lower_to_ir, verify_ir
from .optim import e2v, prune_dead, run_passes
from .codegen import Layout, Program, emit, specialize
from .runtime import StreamConfig, execute
from .timing import EnergyParams, HardwareConfig, SimStats, energy, simulate
from .oracle import compare, run_dense
from .tiling import TilingPlan, make_plan, traffic_stats

__version__ = "0.1.0"
