"""Batch experiment runner.

Experiments are described in INI files::

    [experiment]
    kind = stability-sweep
    seed = 0

    [mesh]
    n = 8

    [time]
    T = 1
    steps = 16

    [params]
    mu = 1
    lam = 1, 1e2, 1e4, 1e8

    [boundary]
    bottom = essential, natural

Comma-separated values in ``[params]`` span a grid.  Every run writes CSV
files and ``summary.txt``; the exit status is 0 iff every checked
property passed.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import convergence, counterexample, verification
from .assembly import OperatorSet
from .mesh import read_mesh, refine_uniform, unit_square_mesh
from .norms import constraint_residuals, data_norm, trial_norm, write_norm_rows
from .problem import BoundaryConfig, MaterialParams, select_spaces
from .solver import run_trajectory, write_trajectory

EXPERIMENTS = {
    "solve": "one parameter set, seeded smooth loads; trajectory and norms",
    "stability-sweep": "two-sided stability and related bounds over a parameter grid",
    "infsup": "divergence inf-sup constants under mesh refinement",
    "counterexample": "closed-form rough trial functions along the eigenvalue sequence",
    "convergence": "manufactured-solution rates in space and time",
}
RANDOMIZED = {"solve", "stability-sweep"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    seed: int | None
    output_dir: Path
    mesh_n: int
    mesh_file: str | None
    refinements: int
    T: float
    steps: int
    params: dict
    boundary: BoundaryConfig | None
    options: dict = field(default_factory=dict)

    def mesh(self):
        mesh = read_mesh(self.mesh_file) if self.mesh_file else unit_square_mesh(self.mesh_n)
        for _ in range(self.refinements):
            mesh = refine_uniform(mesh)
        return mesh

    def grid(self) -> list[MaterialParams]:
        axes = {k: self.params[k] for k in ("lam", "sigma", "kappa", "alpha")}
        out = []
        for mu in self.params["mu"]:
            out += verification.parameter_grid(axes, mu=mu, T=self.T)
        return out


def _floats(section, key, raw):
    try:
        vals = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected numbers, got {raw!r}") from None
    if not vals:
        raise ConfigError(f"[{section}] {key}: empty list")
    return vals


def _require(cp, section, key):
    if not cp.has_section(section) or not cp.has_option(section, key):
        raise ConfigError(f"missing field '{key}' in [{section}]")
    return cp.get(section, key)


def load_config(path, output_dir=None, seed=None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    kind = _require(cp, "experiment", "kind").strip()
    if kind not in EXPERIMENTS:
        raise ConfigError(f"[experiment] kind: unknown experiment {kind!r}")
    if seed is None and cp.has_option("experiment", "seed"):
        try:
            seed = int(cp.get("experiment", "seed"))
        except ValueError:
            raise ConfigError("[experiment] seed: expected an integer") from None
    if kind in RANDOMIZED and seed is None:
        raise ConfigError(f"missing field 'seed' in [experiment] (required for {kind})")
    out = output_dir or cp.get("experiment", "output", fallback=None) or "out"

    mesh_n = cp.getint("mesh", "n", fallback=8) if cp.has_section("mesh") else 8
    mesh_file = cp.get("mesh", "file", fallback=None) if cp.has_section("mesh") else None
    refinements = cp.getint("mesh", "refinements", fallback=0) if cp.has_section("mesh") else 0

    T = _floats("time", "T", _require(cp, "time", "T"))[0]
    steps = int(_floats("time", "steps", cp.get("time", "steps", fallback="16"))[0])
    if T <= 0 or steps < 1:
        raise ConfigError("[time] T must be positive and steps at least 1")

    defaults = {"mu": "1", "lam": "1", "alpha": "1", "sigma": "0", "kappa": "1"}
    if kind == "stability-sweep":
        defaults.update({k: ", ".join(f"{v:g}" for v in vals) for k, vals in verification.DEFAULT_GRID.items()})
    params = {}
    for key, default in defaults.items():
        raw = cp.get("params", key, fallback=default) if cp.has_section("params") else default
        params[key] = _floats("params", key, raw)

    boundary = None
    if cp.has_section("boundary"):
        tags = {}
        for label, raw in cp.items("boundary"):
            parts = [s.strip() for s in raw.split(",")]
            if len(parts) != 2:
                raise ConfigError(f"[boundary] {label}: expected 'displacement_tag, pressure_tag'")
            tags[label] = tuple(parts)
        try:
            boundary = BoundaryConfig(tags)
        except ValueError as exc:
            raise ConfigError(f"[boundary] {exc}") from None

    options = dict(cp.items(kind)) if cp.has_section(kind) else {}
    cfg = ExperimentConfig(kind, seed, Path(out), mesh_n, mesh_file, refinements, T, steps, params, boundary, options)
    if cfg.boundary is not None and kind in ("solve", "stability-sweep", "infsup"):
        try:
            cfg.boundary.check_labels(cfg.mesh().labels)
        except ValueError as exc:
            raise ConfigError(f"[boundary] {exc}") from None
    return cfg


# ------------------------------------------------------------------ runs

class Summary:
    def __init__(self):
        self.lines = []
        self.passed = True

    def check(self, name, ok, detail=""):
        ok = bool(ok)
        self.passed &= ok
        self.lines.append(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""))

    def note(self, text):
        self.lines.append(f"INFO {text}")

    def write(self, path):
        Path(path).write_text("\n".join(self.lines) + "\n")


def _write_rows(path, rows, columns=None):
    columns = columns or list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r.get(c, "")) for c in columns) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _single_params(cfg) -> MaterialParams:
    vals = {k: v[0] for k, v in cfg.params.items()}
    return MaterialParams(T=cfg.T, **vals)


def run_solve(cfg, out, summary, sequential):
    mesh = cfg.mesh()
    bc = cfg.boundary or verification.default_boundary()
    prm = _single_params(cfg)
    ops = OperatorSet(mesh, bc, prm, select_spaces(bc, prm))
    loads = verification.random_smooth_loads(ops, cfg.seed).assemble(ops, cfg.steps)
    traj = run_trajectory(ops, loads)
    rep, data = trial_norm(traj, ops), data_norm(loads, ops)
    write_trajectory(traj, out / "trajectory", {"mesh": repr(mesh), "params": prm, "spaces": ops.spaces,
                                                "seed": cfg.seed})
    write_norm_rows(out / "norms.csv", [{"experiment": "solve", **rep.as_row(), **data.as_row()}])
    r1, r2 = constraint_residuals(traj, ops)
    res = max(np.abs(r1).max(), np.abs(r2).max())
    scale = max(np.abs(traj.p_tot).max(), np.abs(traj.m).max(), 1e-300)
    summary.check("constraint rows", res <= 1e-8 * scale, f"max residual {res:.3e}")
    ratio = rep.stability_lhs_sq / data.total_sq
    summary.check("stability ratio finite", math.isfinite(ratio) and ratio > 0, f"{ratio:.6g}")


def run_stability_sweep(cfg, out, summary, sequential):
    mesh = cfg.mesh()
    bc = cfg.boundary or verification.default_boundary()
    grid = cfg.grid()
    rows, (c_h, C_h) = verification.run_sweep(mesh, bc, grid, cfg.steps, cfg.seed, sequential=sequential)
    _write_rows(out / "sweep.csv", [{"point": i, **r} for i, r in enumerate(rows)])
    summary.note(f"divergence inf-sup constants c_h={c_h:.6g} C_h={C_h:.6g}")
    failed = [r for r in rows if "error" in r]
    summary.check("all grid points evaluated", not failed, f"{len(failed)} failures" if failed else "")
    good = [r for r in rows if "error" not in r]
    if not good:
        return
    limit = float(cfg.options.get("max_spread", 100))
    sp = verification.spread(r["stability_ratio"] for r in good)
    summary.check("two-sided stability", sp <= limit, f"max/min ratio {sp:.4g} (limit {limit:g})")
    summary.check("nondegeneracy", all(r["nonsingular"] for r in good),
                  f"min pivot ratio {min(r['pivot_ratio'] for r in good):.3e}")
    bsp = verification.spread(r["boundedness_random"] for r in good)
    summary.check("boundedness constant", bsp <= 10, f"max/min {bsp:.4g}")
    isp = verification.spread(r["infsup_constant"] for r in good)
    summary.note(f"inf-sup quotient constant min {min(r['infsup_constant'] for r in good):.4g}, max/min {isp:.4g}")
    summary.check("storage bound", all(r["storage_bound_holds"] for r in good))
    for key in ("l2l2_ratio", "P0_ratio", "P1_ratio", "P2_ratio", "antiderivative_ratio"):
        vals = np.array([r[key] for r in good])
        med = float(np.median(vals))
        summary.check(f"{key} uniformly bounded", vals.max() <= 10 * med,
                      f"max {vals.max():.4g}, median {med:.4g}, max/median {vals.max() / med:.4g}")


def run_infsup(cfg, out, summary, sequential):
    bc = cfg.boundary or convergence.clamped_drained_free()
    prm = _single_params(cfg)
    levels = int(cfg.options.get("levels", 3))
    mesh = cfg.mesh()
    rows = []
    for level in range(levels):
        ops = OperatorSet(mesh, bc, prm, select_spaces(bc, prm))
        c, C = verification.div_infsup_constants(ops)
        rows.append({"level": level, "h": mesh.h_max(), "n_vertices": mesh.n_vertices, "c_h": c, "C_h": C})
        mesh = refine_uniform(mesh)
    _write_rows(out / "infsup.csv", rows)
    cs = [r["c_h"] for r in rows]
    var = max(abs(a - b) / b for a, b in zip(cs[1:], cs[:-1])) if len(cs) > 1 else 0.0
    summary.check("c_h stable under refinement", var <= 0.1, f"max relative change {var:.3e}")
    summary.check("0 < c_h <= C_h <= 2", all(0 < r["c_h"] <= r["C_h"] <= 2 + 1e-8 for r in rows))


def run_counterexample(cfg, out, summary, sequential):
    K = int(cfg.options.get("K", 50))
    kappa = cfg.params["kappa"][0]
    prm = _single_params(cfg)
    rows = counterexample.verify_divergence(K, cfg.T, prm, kappa)
    counterexample.write_table(out / "counterexample.csv", rows)
    # modes sharing an eigenvalue give identical rows; compare distinct values
    distinct = list({r["lam"]: r for r in rows}.values())
    tail = [r for r in distinct if r["lam"] >= 100]
    if len(tail) >= 2:
        q = [r["quotient"] for r in tail]
        ts = [r["trial_sq"] for r in tail]
        summary.check("quotient strictly increasing for lam >= 100", all(b > a for a, b in zip(q, q[1:])))
        summary.check("trial_sq decreasing for lam >= 100", all(b < a for a, b in zip(ts, ts[1:])))
    else:
        summary.note("fewer than two distinct eigenvalues >= 100; increase K")
    far = [r for r in distinct if r["lam"] >= 250]
    if far:
        dev = max(abs(r["rough"] - cfg.T / 2) / (cfg.T / 2) for r in far)
        summary.check("rough quantity tends to T/2", dev <= 0.01, f"max relative deviation {dev:.3e}")
    summary.note(f"largest eigenvalue {rows[-1]['lam']:.6g}, quotient {rows[-1]['quotient']:.6g}")


def run_convergence(cfg, out, summary, sequential):
    prm = _single_params(cfg)
    if prm.sigma <= 0:
        raise ConfigError("[params] sigma: the convergence study needs sigma > 0")
    sizes = [int(v) for v in _floats("convergence", "sizes", cfg.options.get("sizes", "4, 8, 16"))]
    steps = [int(v) for v in _floats("convergence", "steps", cfg.options.get("steps", "8, 16, 32"))]
    rows = convergence.spatial_study(prm, sizes, n_steps=cfg.steps)
    _write_rows(out / "spatial.csv", rows, ["n", "h", "error_u", "error_p", "order_u", "order_p"])
    temporal = convergence.temporal_study(prm, n=cfg.mesh_n, steps=steps)
    _write_rows(out / "temporal.csv", [{"steps": s, "error_vs_exact": e}
                                       for s, e in zip(temporal["steps"], temporal["error_vs_exact"])])
    ou = min(r["order_u"] for r in rows[1:])
    op = min(r["order_p"] for r in rows[1:])
    summary.check("spatial order of u >= 0.8", ou >= 0.8, f"{ou:.4g}")
    summary.check("spatial order of p >= 0.8", op >= 0.8, f"{op:.4g}")
    summary.check("time order of m within 0.2 of 1", abs(temporal["order"] - 1) <= 0.2, f"{temporal['order']:.4g}")


RUNNERS = {
    "solve": run_solve,
    "stability-sweep": run_stability_sweep,
    "infsup": run_infsup,
    "counterexample": run_counterexample,
    "convergence": run_convergence,
}


def run(config_path, output_dir=None, seed=None, sequential=False) -> int:
    cfg = load_config(config_path, output_dir, seed)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    summary = Summary()
    summary.note(f"experiment {cfg.kind}, seed {cfg.seed}")
    RUNNERS[cfg.kind](cfg, cfg.output_dir, summary, sequential)
    summary.write(cfg.output_dir / "summary.txt")
    print("\n".join(summary.lines))
    return 0 if summary.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="poroinfsup", description=__doc__.split("\n\n")[0])
    parser.add_argument("--list-experiments", action="store_true", help="list experiment kinds and exit")
    sub = parser.add_subparsers(dest="command")
    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p_run.add_argument("--sequential", action="store_true", help="evaluate grid points in order, in-process")
    args = parser.parse_args(argv)
    if args.list_experiments:
        for name, text in EXPERIMENTS.items():
            print(f"{name:16s} {text}")
        return 0
    if args.command != "run":
        parser.print_usage(sys.stderr)
        return 2
    try:
        return run(args.config, args.output_dir, args.seed, args.sequential)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
