"""Command-line experiment harness.

Each experiment writes CSV data, a ``config.json`` with the resolved
configuration and a source fingerprint, and SVG figures rendered from the
same data. Reruns with the same configuration are byte-identical.

Exit codes: 0 success, 2 configuration/input error, 3 numerical
convergence failure, 4 structural singularity or disconnected geometry.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import svg
from .bayesopt import calibrate_noise, optimize_nmi
from .channel import greedy_select, nmi, rate_distortion_sweep, shannon_lower_bound
from .errors import ConfigError, MechInfoError
from .fem import (GeometrySpec, assemble_and_factor, build_geometry, fem_response_matrix,
                  mesh_domain, void_fraction)
from .fem.solver import sensor_targets
from .halfspace import build_sensor_grid, response_matrix
from .infotheory import ksg_entropies, ksg_mutual_information
from .loads import LoadSpec, sample_coefficients
from .psl import principal_field, trace_lines, write_lines_csv

log = logging.getLogger("mechinfo")

EXPERIMENTS = ("estimator-bench", "halfspace-map", "rate-distortion", "architected",
               "mesh-refinement", "optimize", "psl")
L_DEN = {"pores": 32.0, "slits": 8.0, "solid": 8.0, "ellipses": 4.0}


@dataclass
class ExperimentConfig:
    experiment: str = "estimator-bench"
    seed: int = 0
    out: str = "results"
    samples: int = 5000
    opt_samples: int = 500
    dx: int | None = None
    parity: str = "even"
    knn_k: int = 5
    threads: int = 1
    L: float = 100.0
    # halfspace / rate-distortion
    a: float = 100.0
    steps: int | None = None
    k_values: list | None = None
    n_random: int = 1
    # estimator bench
    rhos: list = field(default_factory=lambda: [0.0, 0.3, 0.6, 0.9])
    repeats: int = 50
    # architected
    slit_n: list = field(default_factory=lambda: list(range(1, 10)))
    pore_n: list = field(default_factory=lambda: list(range(1, 7)))
    phi: float = 0.3
    l_den: dict = field(default_factory=lambda: dict(L_DEN))
    # optimization
    direction: str = "both"
    budget: int = 150
    resume: bool = False
    # psl / single geometry
    geometry: dict = field(default_factory=lambda: {"kind": "solid"})
    densities: list | None = None

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.samples < 10 or self.opt_samples < 10:
            raise ConfigError("sample counts must be >= 10")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.parity not in ("even", "full"):
            raise ConfigError("parity must be 'even' or 'full'")
        if self.direction not in ("maximize", "minimize", "both"):
            raise ConfigError("direction must be maximize, minimize or both")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.dx is not None and self.dx < 1:
            raise ConfigError("dx must be >= 1")
        for key, v in self.l_den.items():
            if key not in L_DEN or not v > 0:
                raise ConfigError(f"bad mesh density entry {key!r}: {v!r}")
        return self


def load_config(args):
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(cfg) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    overrides = {"experiment": args.experiment, "seed": args.seed, "out": args.out,
                 "samples": args.samples, "dx": args.dx, "parity": args.parity,
                 "knn_k": args.knn_k, "threads": args.threads}
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if "l_den" in cfg:
        cfg["l_den"] = {**L_DEN, **cfg["l_den"]}
    try:
        return ExperimentConfig(**cfg).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def code_fingerprint():
    h = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def write_config(out, cfg, extra=None):
    meta = {"config": dataclasses.asdict(cfg), "code_version": code_fingerprint()}
    if extra:
        meta.update(extra)
    write_text(out / "config.json", json.dumps(meta, sort_keys=True, indent=2) + "\n")


# --- experiments --------------------------------------------------------------

def cmd_estimator_bench(cfg, out):
    rng_seed = cfg.seed
    rows = []
    for i, rho in enumerate(cfg.rhos):
        rng = np.random.default_rng([rng_seed, i])
        cov = [[1.0, rho], [rho, 1.0]]
        z = rng.multivariate_normal([0.0, 0.0], cov, size=cfg.samples)
        est = ksg_mutual_information(z[:, :1], z[:, 1:], cfg.knn_k, workers=cfg.threads).value
        oracle = -0.5 * math.log1p(-rho * rho) + 0.0  # avoid printing -0
        rows.append(["gaussian_mi", rho, cfg.samples, est, oracle, est - oracle])
    rng = np.random.default_rng([rng_seed, 100])
    u = rng.uniform(0, 1, size=(cfg.samples, 2))
    hx, _, _ = ksg_entropies(u[:, :1], u[:, 1:], cfg.knn_k)
    rows.append(["uniform_entropy_std", 0.0, cfg.samples, hx.value, math.log(math.sqrt(12)),
                 hx.value - math.log(math.sqrt(12))])
    write_csv(out / "estimator_bench.csv", ["case", "rho", "n", "estimate", "oracle", "error"],
              rows)
    var_rows = []
    for n in (cfg.samples // 4, cfg.samples):
        vals = []
        for r in range(cfg.repeats):
            rng = np.random.default_rng([rng_seed, 200, n, r])
            z = rng.multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], size=n)
            vals.append(ksg_mutual_information(z[:, :1], z[:, 1:], cfg.knn_k).value)
        var_rows.append([n, cfg.repeats, float(np.mean(vals)), float(np.var(vals, ddof=1))])
    write_csv(out / "estimator_variance.csv", ["n", "repeats", "mean", "variance"], var_rows)
    gm = [r for r in rows if r[0] == "gaussian_mi"]
    write_text(out / "estimator_bench.svg", svg.line_plot(
        [("KSG", [r[1] for r in gm], [r[3] for r in gm]),
         ("exact", [r[1] for r in gm], [r[4] for r in gm])],
        "Gaussian MI calibration", "correlation", "MI (nats)"))
    return {"cases": len(rows)}


def _halfspace_data(cfg, dx, parity):
    spec = LoadSpec(dx, a=cfg.a, parity=parity)
    grid = build_sensor_grid(cfg.a)
    rm = response_matrix(spec, grid)
    x = sample_coefficients(spec, cfg.samples, cfg.seed)
    return spec, grid, x, rm.readings(x)


def cmd_halfspace_map(cfg, out):
    dx = cfg.dx or 3
    spec, grid, x, y = _halfspace_data(cfg, dx, cfg.parity)
    steps = cfg.steps or dx + 1
    sel = greedy_select(x, y, steps, cfg.knn_k, workers=cfg.threads, keep_maps=True)
    pts = grid.points
    nx = len(grid.xs)
    rows = []
    for p, gains in enumerate(sel.step_gains):
        for idx, (px_, py_) in enumerate(pts):
            rows.append([p + 1, idx % nx, idx // nx, px_, py_, gains[idx]])
        panel = np.asarray(gains).reshape(grid.shape)
        marks = [(i // nx, i % nx) for i in sel.indices[:p + 1]]
        write_text(out / f"halfspace_panel{p + 1}.svg", svg.heatmap(
            panel, f"{cfg.parity} d_x={dx}: step {p + 1} gain", "x / a (-2..2)",
            "log10 depth (-4 top .. 6 bottom)", marks))
    write_csv(out / "halfspace_gains.csv", ["panel", "ix", "iy", "x", "y", "gain"], rows)
    write_csv(out / "halfspace_selection.csv",
              ["step", "sensor", "x", "y", "gain", "cumulative_mi"],
              [[i + 1, s, pts[s, 0], pts[s, 1], g, m]
               for i, (s, g, m) in enumerate(zip(sel.indices, sel.gains, sel.mi_path))])
    k = min(dx, len(sel.indices))
    n_c, n_r, mi, hx = nmi(x, y[:, sel.indices[:k]], cfg.knn_k, return_raw=True)
    return {"nmi_k_eq_dx": n_c, "status": sel.status}


def cmd_rate_distortion(cfg, out):
    dx = cfg.dx or 4
    spec, grid, x, y = _halfspace_data(cfg, dx, cfg.parity)
    k_values = cfg.k_values or list(range(1, dx + 2))
    sel = greedy_select(x, y, max(k_values), cfg.knn_k, workers=cfg.threads)
    n_train = int(round(0.8 * cfg.samples))  # 4000/1000 at the default size
    reports = rate_distortion_sweep(x, y, sel.indices, k_values, cfg.knn_k,
                                    (n_train, cfg.samples - n_train), cfg.seed, cfg.n_random)
    rows = [[r.k, r.selection_mode, r.rate, r.distortion, r.slb, r.slb_gap, r.nmi,
             " ".join(str(s) for s in r.sensors)] for r in reports]
    write_csv(out / "rate_distortion.csv",
              ["k", "mode", "rate", "mse", "slb", "slb_gap", "nmi", "sensors"], rows)
    greedy = [r for r in reports if r.selection_mode == "greedy"]
    rnd = [r for r in reports if r.selection_mode == "random"]
    dgrid = np.logspace(-8, 0, 40)
    write_text(out / "rate_distortion.svg", svg.line_plot(
        [("greedy", [r.distortion for r in greedy], [r.rate for r in greedy]),
         ("random", [r.distortion for r in rnd], [r.rate for r in rnd]),
         ("SLB", dgrid, [shannon_lower_bound(d) for d in dgrid])],
        f"rate-distortion ({cfg.parity}, d_x={dx})", "MSE (log)", "rate (nats)", logx=True))
    return {"points": len(reports)}


def _geometry_nmi(gspec, cfg, x, load):
    geom = build_geometry(gspec)
    mesh = mesh_domain(geom, l_den=cfg.l_den[gspec.kind])
    system = assemble_and_factor(mesh)
    rm = fem_response_matrix(system, load)
    c, r, _, _ = nmi(x, rm.readings(x), cfg.knn_k, return_raw=True)
    return c, r, geom, system


def _psl_outputs(out, name, geom, system, title):
    pf = principal_field(system)
    lines = trace_lines(pf)
    write_lines_csv(lines, out / f"psl_{name}.csv")
    write_text(out / f"psl_{name}.svg", svg.geometry_plot(
        geom.L, geom.outlines(), [ln.points for ln in lines], sensor_targets(geom.L), title))
    return lines


def cmd_architected(cfg, out):
    dx = cfg.dx or 6
    load = LoadSpec(dx, a=cfg.L / 2)
    x = sample_coefficients(load, cfg.samples, cfg.seed)
    rows, systems = [], {}
    specs = [GeometrySpec("solid", L=cfg.L)]
    specs += [GeometrySpec("slits", L=cfg.L, n=n) for n in cfg.slit_n]
    specs += [GeometrySpec("pores", L=cfg.L, n=n, phi=cfg.phi) for n in cfg.pore_n]
    for gs in specs:
        c, r, geom, system = _geometry_nmi(gs, cfg, x, load)
        log.info("%s n=%d: NMI %.4f", gs.kind, gs.n, c)
        rows.append([gs.kind, gs.n if gs.kind != "solid" else 0, c, r, void_fraction(geom),
                     cfg.l_den[gs.kind], system.mesh.n_nodes, gs.digest()])
        systems[(gs.kind, gs.n)] = (c, geom, system)
    write_csv(out / "architected_nmi.csv",
              ["kind", "n", "nmi", "nmi_raw", "material_fraction", "l_den", "nodes",
               "geometry_hash"], rows)
    solid = rows[0][2]
    series = [(k, [r[1] for r in rows if r[0] == k], [r[2] for r in rows if r[0] == k])
              for k in ("slits", "pores")]
    series.append(("solid", [1, max(cfg.slit_n + cfg.pore_n)], [solid, solid]))
    write_text(out / "architected_nmi.svg", svg.line_plot(
        series, "NMI vs number of units", "n", "NMI"))
    for kind in ("solid", "slits", "pores"):
        cands = [(v[0], key) for key, v in systems.items() if key[0] == kind]
        if cands:
            _, key = max(cands)
            _, geom, system = systems[key]
            _psl_outputs(out, f"{kind}_best", geom, system, f"{kind} n={key[1]}")
    return {"solid_nmi": solid}


def cmd_mesh_refinement(cfg, out):
    dx = cfg.dx or 6
    load = LoadSpec(dx, a=cfg.L / 2)
    x = sample_coefficients(load, cfg.samples, cfg.seed)
    rows = []
    studies = [(GeometrySpec("pores", L=cfg.L, n=3, phi=cfg.phi), [16, 22.627, 32, 45.255]),
               (GeometrySpec("slits", L=cfg.L, n=9), [4, 5.657, 8, 11.314])]
    for gs, dens in studies:
        dens = cfg.densities or dens
        prev = None
        for ld in dens:
            mesh = mesh_domain(build_geometry(gs), l_den=ld)
            system = assemble_and_factor(mesh)
            rs = fem_response_matrix(system, load, mode="stress")
            rr = fem_response_matrix(system, load)
            sig = float(rs.offset[0])  # uniform load, first sensor
            v = nmi(x, rr.readings(x), cfg.knn_k)
            ds = abs(sig - prev[0]) / abs(prev[0]) * 100 if prev else float("nan")
            dn = abs(v - prev[1]) / abs(prev[1]) * 100 if prev else float("nan")
            rows.append([gs.kind, gs.n, ld, mesh.nx, mesh.n_nodes, sig, v, ds, dn])
            prev = (sig, v)
    write_csv(out / "mesh_refinement.csv",
              ["kind", "n", "l_den", "nx", "nodes", "sensor_s22", "nmi", "pct_change_s22",
               "pct_change_nmi"], rows)
    return {"rows": len(rows)}


def cmd_optimize(cfg, out):
    directions = ["maximize", "minimize"] if cfg.direction == "both" else [cfg.direction]
    noise, reps = calibrate_noise(n_samples=cfg.opt_samples, seed=cfg.seed,
                                  l_den=cfg.l_den["ellipses"], L=cfg.L)
    write_csv(out / "noise_calibration.csv", ["repeat", "nmi"], list(enumerate(reps)))
    table = []
    series = []
    for d in directions:
        res = optimize_nmi(d, cfg.budget, cfg.seed, cfg.opt_samples, cfg.samples,
                           cfg.l_den["ellipses"], noise, out / f"trace_{d}.csv", cfg.resume,
                           cfg.L)
        write_text(out / f"design_{d}.json", res.best_spec.to_json() + "\n")
        table.append([d, res.final_nmi, res.best_spec.digest()])
        it = [r.iteration for r in res.trace.rows]
        series.append((f"{d} best", it, res.trace.best_curve))
        series.append((f"{d} raw", it, [r.objective for r in res.trace.rows]))
        geom = build_geometry(res.best_spec)
        system = assemble_and_factor(mesh_domain(geom, l_den=cfg.l_den["ellipses"]))
        _psl_outputs(out, f"design_{d}", geom, system, f"{d} NMI design")
    write_csv(out / "optimized_nmi.csv", ["direction", "nmi_fresh", "geometry_hash"], table)
    write_text(out / "optimization_trace.svg", svg.line_plot(
        series, "Bayesian optimization", "iteration", "NMI"))
    return {"noise_var": noise}


def cmd_psl(cfg, out):
    try:
        gs = GeometrySpec(**{**{"L": cfg.L}, **cfg.geometry})
    except TypeError as exc:
        raise ConfigError(f"bad geometry: {exc}") from None
    geom = build_geometry(gs)
    system = assemble_and_factor(mesh_domain(geom, l_den=cfg.l_den.get(gs.kind, 8.0)))
    lines = _psl_outputs(out, gs.kind, geom, system, f"{gs.kind} principal stress lines")
    return {"lines": len(lines)}


COMMANDS = {
    "estimator-bench": cmd_estimator_bench,
    "halfspace-map": cmd_halfspace_map,
    "rate-distortion": cmd_rate_distortion,
    "architected": cmd_architected,
    "mesh-refinement": cmd_mesh_refinement,
    "optimize": cmd_optimize,
    "psl": cmd_psl,
}


def build_parser():
    p = argparse.ArgumentParser(prog="mechinfo", description=__doc__.splitlines()[0])
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--samples", type=int, help="number of load samples")
    p.add_argument("--dx", type=int, help="number of free Legendre coefficients")
    p.add_argument("--parity", choices=("even", "full"))
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(cfg):
    out = Path(cfg.out) / cfg.experiment
    out.mkdir(parents=True, exist_ok=True)
    summary = COMMANDS[cfg.experiment](cfg, out)
    write_config(out, cfg, {"summary": summary})
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        out = run(cfg)
    except MechInfoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
