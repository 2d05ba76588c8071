"""Command-line driver: compile, verify, run, and sweep.

run and sweep write machine-readable JSON/CSV reports first; unless told
not to, they also render matplotlib figures next to those files.
Exit codes: 0 success, 1 verification failure, 2 usage error, 3 capacity.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

from . import codegen, ir, model, optim, oracle, runtime, tiling, timing
from .errors import CapacityError, DeadlockError, ZipperError
from .graph import (assign_edge_types, degree_reorder, gen_synthetic,
                    load_graph, random_features)

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_CAPACITY = 0, 1, 2, 3
CONFIG_ENV = "ZIPPER_CONFIG"
VERIFY_TOL = 1e-5


@dataclass
class RunConfig:
    """Everything a pipeline invocation depends on; reproducible from seeds."""
    model: str = "gcn"
    model_file: str = None
    f_in: int = 128
    f_out: int = 128
    graph: str = None
    graph_format: str = None
    synthetic: str = "rmat:256,2048"
    tiling_mode: str = "sparse"
    dst_size: int = 0              # 0 = auto
    src_size: int = 0
    reorder: bool = False
    n_s: int = 4
    n_e: int = 4
    seed: int = 0
    edge_types: int = 3
    e2v: bool = True
    hw: dict = field(default_factory=dict)

    def stream_config(self):
        return runtime.StreamConfig(self.n_s, self.n_e)


def load_hw(cfg: RunConfig):
    return timing.HardwareConfig.from_dict(cfg.hw) if cfg.hw else timing.HardwareConfig()


def build_graph(cfg: RunConfig):
    if cfg.graph:
        g = load_graph(cfg.graph, cfg.graph_format)
    else:
        kind, _, rest = cfg.synthetic.partition(":")
        nums = [int(x) for x in rest.split(",")] if rest else []
        if kind in ("star", "chain"):
            g = gen_synthetic(kind, nums[0])
        else:
            v, e = nums[0], nums[1]
            seed = nums[2] if len(nums) > 2 else cfg.seed
            g = gen_synthetic(kind, v, e, seed=seed)
    if cfg.model == "rgcn" and g.edge_types is None:
        g = assign_edge_types(g, cfg.edge_types, seed=cfg.seed)
    if cfg.reorder:
        g, _ = degree_reorder(g)
    return g


def build_model_graph(cfg: RunConfig):
    if cfg.model_file:
        with open(cfg.model_file) as fh:
            return model.parse_model(fh.read()), os.path.basename(cfg.model_file)
    return model.build_model(cfg.model, cfg.f_in, cfg.f_out), cfg.model


def compile_pipeline(m, plan=None, enable_e2v=True):
    """defuse -> lower -> e2v + prune -> specialize -> emit."""
    low = ir.lower_to_ir(model.defuse(m))
    opt, report = optim.run_passes(low, enable_e2v=enable_e2v)
    spec = codegen.specialize(opt)
    layout = codegen.Layout.from_plan(plan) if plan is not None \
        else codegen.Layout(256, 4096, 256)
    return codegen.emit(spec, layout), spec, report


def prepare(cfg: RunConfig):
    """Graph, plan, program, features, weights for one run."""
    g = build_graph(cfg)
    m, _ = build_model_graph(cfg)
    hw = load_hw(cfg)
    if cfg.dst_size and cfg.src_size:
        plan = tiling.make_plan(g, cfg.dst_size, cfg.src_size, cfg.tiling_mode)
        tiling.check_capacity(plan, hw, m)
    else:
        plan = tiling.auto_plan(g, m.max_width(), hw, cfg.tiling_mode)
    prog, spec, report = compile_pipeline(m, plan, enable_e2v=cfg.e2v)
    feats = random_features(g, cfg.f_in, seed=cfg.seed)
    weights = oracle.gen_weights(m, seed=cfg.seed + 1)
    return g, m, plan, prog, report, feats, weights, hw


def _cfg_from_args(args):
    cfg = RunConfig()
    for name in ("model", "model_file", "f_in", "f_out", "graph", "graph_format",
                 "synthetic", "tiling_mode", "dst_size", "src_size", "reorder",
                 "seed", "edge_types"):
        if getattr(args, name, None) is not None:
            setattr(cfg, name, getattr(args, name))
    if getattr(args, "streams", None):
        ns, ne = (int(x) for x in args.streams.split(","))
        cfg.n_s, cfg.n_e = ns, ne
    cfg.e2v = not getattr(args, "no_e2v", False)
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        with open(path) as fh:
            cfg.hw.update(json.load(fh))
    for flag in ("mu_count", "vu_count", "offchip_bw", "uem_bytes", "tilehub_bytes"):
        if getattr(args, flag, None) is not None:
            cfg.hw[flag] = getattr(args, flag)
    return cfg


# -- commands -------------------------------------------------------------------


def cmd_compile(args):
    cfg = _cfg_from_args(args)
    m, name = build_model_graph(cfg)
    layout = None
    if cfg.dst_size and cfg.src_size:
        layout = codegen.Layout(cfg.src_size, cfg.src_size * cfg.dst_size, cfg.dst_size)
    low = ir.lower_to_ir(model.defuse(m))
    opt, report = optim.run_passes(low, enable_e2v=cfg.e2v)
    prog = codegen.emit(codegen.specialize(opt), layout or codegen.Layout(256, 4096, 256))
    out = args.output or f"{name}.zipr"
    with open(out, "wb") as fh:
        fh.write(codegen.encode(prog))
    listing = args.listing or out + ".txt"
    with open(listing, "w") as fh:
        fh.write(codegen.disassemble(prog))
    print(f"compiled {name}: {prog.instruction_count()} instructions, "
          f"{prog.n_phases} sweep(s) -> {out}")
    print(f"pass report: {report.as_dict()}")
    print(f"listing: {listing}")
    return EXIT_OK


def cmd_verify(args):
    cfg = _cfg_from_args(args)
    g, m, plan, prog, report, feats, weights, hw = prepare(cfg)
    if args.inject_drop_signal:
        prog = runtime.inject_drop_signal(prog, "s", 0)
    want = oracle.run_dense(m, g, feats, weights)
    try:
        got, trace = runtime.execute(prog, plan, g, feats, weights, cfg.stream_config())
    except DeadlockError as exc:
        print("deadlock detected:")
        print(exc.snapshot)
        return EXIT_VERIFY
    rep = oracle.compare(got, want, rel_tol=VERIFY_TOL)
    print(f"verify {cfg.model}: {rep}")
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_run(args):
    cfg = _cfg_from_args(args)
    try:
        g, m, plan, prog, report, feats, weights, hw = prepare(cfg)
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)

    _, trace = runtime.execute(prog, plan, g, feats, weights, cfg.stream_config())
    stats = timing.simulate(prog, plan, g, feats, weights, cfg.stream_config(),
                            hw, trace=trace, record_windows=True)
    energy_rep = timing.energy(stats)

    stats_path = os.path.join(out_dir, "stats.json")
    with open(stats_path, "w") as fh:
        fh.write(stats.to_json())
    with open(os.path.join(out_dir, "energy.json"), "w") as fh:
        json.dump(energy_rep.as_dict(), fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "utilization.csv"), "w") as fh:
        fh.write(timing.utilization_csv(stats))
    traffic = tiling.traffic_stats(plan, cfg.f_in)
    with open(os.path.join(out_dir, "traffic.json"), "w") as fh:
        json.dump(traffic.as_dict(), fh, indent=2, sort_keys=True)
    if not args.no_plot:
        figures = render_run_figures(stats, out_dir)
        print(f"figures: {', '.join(figures)}")
    print(f"run {cfg.model}: {stats.total_cycles} cycles, "
          f"{stats.offchip_read_bytes} B read, {stats.offchip_write_bytes} B written, "
          f"{energy_rep.total_pj:.0f} pJ -> {stats_path}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _cfg_from_args(args)
    streams = [int(x) for x in (args.stream_grid or "1,2,4").split(",")]
    mu_counts = [int(x) for x in (args.mu_grid or "1").split(",")]
    vu_counts = [int(x) for x in (args.vu_grid or "2").split(",")]
    models = (args.models or cfg.model).split(",")
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)

    rows = []
    for name in models:
        mcfg = RunConfig(**{**cfg.__dict__, "model": name,
                            "f_in": cfg.f_in, "f_out": cfg.f_out})
        if name == "ggnn":
            mcfg.f_out = mcfg.f_in
        try:
            g, m, plan, prog, _, feats, weights, hw0 = prepare(mcfg)
        except ZipperError as exc:
            rows.append({"model": name, "error": str(exc)})
            continue
        base = None
        for s in streams:
            scfg = runtime.StreamConfig(s, s)
            try:
                _, trace = runtime.execute(prog, plan, g, feats, weights, scfg)
            except ZipperError as exc:
                rows.append({"model": name, "n_s": s, "n_e": s, "error": str(exc)})
                continue
            for mu in mu_counts:
                for vu in vu_counts:
                    hw = timing.HardwareConfig.from_dict(
                        {**cfg.hw, "mu_count": mu, "vu_count": vu})
                    try:
                        st = timing.simulate(prog, plan, g, feats, weights, scfg,
                                             hw, trace=trace)
                    except ZipperError as exc:
                        rows.append({"model": name, "n_s": s, "n_e": s,
                                     "mu": mu, "vu": vu, "error": str(exc)})
                        continue
                    if base is None:
                        base = st.total_cycles
                    rows.append({"model": name, "n_s": s, "n_e": s, "mu": mu,
                                 "vu": vu, "cycles": st.total_cycles,
                                 "normalized": st.total_cycles / base})
    csv_path = os.path.join(out_dir, "sweep.csv")
    cols = ["model", "n_s", "n_e", "mu", "vu", "cycles", "normalized", "error"]
    with open(csv_path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(str(r.get(c, "")) for c in cols) + "\n")
    with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
    if not args.no_plot:
        fig = render_sweep_figure(rows, out_dir)
        if fig:
            print(f"figure: {fig}")
    print(f"sweep: {len(rows)} cells -> {csv_path}")
    return EXIT_OK


# -- figures ----------------------------------------------------------------------


def render_run_figures(stats: timing.SimStats, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    fig, ax = plt.subplots(figsize=(6, 3.2))
    names = sorted(stats.busy_cycles)
    busy = [stats.busy_cycles[n] for n in names]
    ax.bar(names, busy, color="#4878d0")
    ax.axhline(stats.total_cycles, color="#d65f5f", ls="--", lw=1,
               label=f"total = {stats.total_cycles}")
    ax.set_ylabel("busy cycles")
    ax.set_title("per-unit busy time")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = os.path.join(out_dir, "units.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    windows = stats.config.get("windows")
    if windows:
        fig, ax = plt.subplots(figsize=(7, 2.2 + 0.3 * len(windows)))
        for i, (name, spans) in enumerate(sorted(windows.items())):
            for s, e in spans:
                ax.plot([s, e], [i, i], lw=5, color="#4878d0", solid_capstyle="butt")
        ax.set_yticks(range(len(windows)))
        ax.set_yticklabels(sorted(windows))
        ax.set_xlabel("cycle")
        ax.set_title("unit occupancy")
        fig.tight_layout()
        p = os.path.join(out_dir, "occupancy.png")
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def render_sweep_figure(rows, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [r for r in rows if "cycles" in r]
    if not ok:
        return None
    models = sorted({r["model"] for r in ok})
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for name in models:
        pts = sorted((r["n_s"], r["normalized"]) for r in ok
                     if r["model"] == name and r["mu"] == ok[0]["mu"]
                     and r["vu"] == ok[0]["vu"])
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
    ax.set_xlabel("s/e stream count")
    ax.set_ylabel("normalized latency")
    ax.set_title("stream scaling")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = os.path.join(out_dir, "sweep.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    return p


# -- argument parsing --------------------------------------------------------------


def _add_common(p, with_graph=True):
    p.add_argument("--model", default=None, help="benchmark model name "
                   "(gcn, gat, sage, ggnn, rgcn)")
    p.add_argument("--model-file", default=None, help="model description text file")
    p.add_argument("--f-in", type=int, default=None)
    p.add_argument("--f-out", type=int, default=None)
    p.add_argument("--no-e2v", action="store_true",
                   help="disable the edge-to-vertex pass")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None,
                   help=f"hardware config JSON (or ${CONFIG_ENV})")
    p.add_argument("--mu-count", type=int, default=None)
    p.add_argument("--vu-count", type=int, default=None)
    p.add_argument("--offchip-bw", type=int, default=None)
    p.add_argument("--uem-bytes", type=int, default=None)
    p.add_argument("--tilehub-bytes", type=int, default=None)
    if with_graph:
        p.add_argument("--graph", default=None, help="edge-list or .mtx file")
        p.add_argument("--graph-format", default=None,
                       choices=["edge-list", "matrix-market"])
        p.add_argument("--synthetic", default=None,
                       help="kind:v[,e[,seed]] (rmat, erdos-renyi, star, chain)")
        p.add_argument("--tiling", dest="tiling_mode", default=None,
                       choices=["regular", "sparse"])
        p.add_argument("--dst-size", type=int, default=None)
        p.add_argument("--src-size", type=int, default=None)
        p.add_argument("--reorder", action="store_true", default=None,
                       help="degree-sort vertices before tiling")
        p.add_argument("--streams", default=None, help="n_s,n_e (default 4,4)")
        p.add_argument("--edge-types", type=int, default=None)


def make_parser():
    ap = argparse.ArgumentParser(prog="zipper",
                                 description="GNN accelerator compiler and simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a model to a program file")
    _add_common(p, with_graph=True)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--listing", default=None, help="disassembly output path")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("verify", help="execute and compare against the dense oracle")
    _add_common(p)
    p.add_argument("--inject-drop-signal", action="store_true",
                   help="corrupt the program to demonstrate deadlock detection")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="simulate and write stats/energy reports")
    _add_common(p)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="design-space sweep over streams and units")
    _add_common(p)
    p.add_argument("--models", default=None, help="comma-separated model list")
    p.add_argument("--stream-grid", default=None, help="comma-separated s/e counts")
    p.add_argument("--mu-grid", default=None)
    p.add_argument("--vu-grid", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except ZipperError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
