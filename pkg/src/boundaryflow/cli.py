"""Configuration-driven experiment runner and command line interface.

A JSON config names the manifold, the data source (synthetic generator or
CSV), endpoints and solver knobs; the ``run`` entry point writes per-solve
CSV artifacts, a JSON summary and a standalone plot script. Scenario
defaults fill any omitted knob so a minimal config is just a generator name
and a seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, generators, geo, geometry
from .analysis import EuclideanField
from .bvp import CollocationScheme
from .errors import BoundaryFlowError, ConfigError
from .field import DataCloud, Kernel, lambda1_landscape, truncate_cloud
from .flow import (FlowResult, fixed_boundary_flow, frechet_mean,
                   initial_curve, principal_flow)
from .geometry import ManifoldSpec

FMT = "%.17g"


@dataclass
class ExperimentConfig:
    """Validated experiment description (see README for the JSON schema)."""

    data: dict
    manifold: Optional[dict] = None
    endpoints: Optional[list] = None
    h: Optional[float] = None
    h_star: Optional[float] = None
    delta: Optional[object] = None       # scalar or list
    n_intervals: int = 40
    stages: int = 3
    units: str = "ambient"
    k_project: Optional[int] = None
    newton_tol: float = 1e-8
    eps_conv_rel: Optional[float] = None
    max_outer: int = 100
    relaxation: float = 1.0
    project_each_iteration: bool = True
    output_dir: str = "out"
    h_sweep: Optional[list] = None
    sweep_at: Optional[object] = None
    grid: Optional[dict] = None
    euclid: Optional[dict] = None
    principal: dict = dc_field(default_factory=dict)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "data" not in raw:
            raise ConfigError("config needs a 'data' section")
        return cls(**raw)

    def __post_init__(self):
        if "generator" in self.data:
            name = self.data["generator"]
            defaults = generators.scenario(name).flow_defaults
            if self.data.get("seed") is None:
                raise ConfigError("generators require an explicit seed")
            for key in ("h", "delta", "h_star", "k_project", "eps_conv_rel"):
                if getattr(self, key, None) is None and key in defaults:
                    setattr(self, key, defaults[key])
        if self.h is not None:
            if isinstance(self.h, str):
                if self.h.lower() not in ("inf", "infinity"):
                    raise ConfigError(f"h must be positive or 'inf', got {self.h!r}")
                self.h = np.inf
            if not (self.h > 0):
                raise ConfigError("h must be positive")
        if self.k_project is None:
            self.k_project = 1
        if self.eps_conv_rel is None:
            self.eps_conv_rel = 1e-6
        if self.n_intervals < 4:
            raise ConfigError("n_intervals must be at least 4")
        if self.delta is not None:
            deltas = np.atleast_1d(np.asarray(self.delta, dtype=float))
            if deltas.size == 0:
                raise ConfigError("delta list must be nonempty")
        if self.units not in ("ambient", "miles"):
            raise ConfigError("units must be 'ambient' or 'miles'")
        if self.units == "miles":
            kind = (self.manifold or {}).get("kind", "sphere")
            if kind != "sphere":
                raise ConfigError("mile units are only meaningful on the sphere")

    # -- resolution helpers -------------------------------------------------

    def resolve_manifold(self) -> ManifoldSpec:
        if self.manifold is None:
            if "generator" in self.data:
                return generators.scenario_manifold(self.data["generator"])
            return geometry.sphere()
        kind = self.manifold.get("kind")
        if kind == "sphere":
            return geometry.sphere(self.manifold.get("radius", 1.0),
                                   self.manifold.get("ambient_dim", 3))
        if kind == "cone":
            return geometry.cone(self.manifold.get("height", 1.0),
                                 self.manifold.get("radius", 1.0))
        if kind in ("plane", "affine"):
            if "basis" in self.manifold:
                return geometry.affine(np.asarray(self.manifold["basis"], float),
                                       self.manifold.get("origin"))
            return geometry.plane(self.manifold.get("dim", 2))
        raise ConfigError(f"unknown manifold kind {kind!r}")

    def resolve_cloud(self, spec: ManifoldSpec) -> DataCloud:
        d = self.data
        if "generator" in d:
            return generators.generate(d["generator"], d.get("n", 300),
                                       d.get("sigma", 0.05), d["seed"])
        if "csv" in d:
            if d.get("format", "ambient") == "geo":
                cloud, _ = geo.ingest_geo(d["csv"],
                                          min_magnitude=d.get("min_magnitude"),
                                          lat_range=d.get("lat_range"),
                                          lon_range=d.get("lon_range"))
                return cloud
            pts = np.loadtxt(d["csv"], delimiter=",", skiprows=1, ndmin=2)
            return DataCloud(pts)
        raise ConfigError("data section needs a 'generator' or a 'csv' entry")

    def resolve_endpoints(self, spec: ManifoldSpec) -> tuple:
        if self.endpoints is None:
            if "generator" in self.data:
                return generators.scenario_endpoints(self.data["generator"])
            raise ConfigError("endpoints are required without a generator")
        out = []
        for e in self.endpoints:
            if isinstance(e, dict):
                out.append(geo.latlon_to_unit(e["lat"], e["lon"]))
            else:
                out.append(np.asarray(e, dtype=float))
        return tuple(out)

    def length_scale(self, value):
        """Convert a config length to ambient units (miles -> central angle)."""
        if value is None:
            return None
        return geo.miles_to_radians(value) if self.units == "miles" else value


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([FMT % v if isinstance(v, (float, np.floating)) else v
                             for v in row])


def _write_flow_csv(path, result: FlowResult, spec: ManifoldSpec):
    curve = result.curve
    d = curve.ambient_dim
    F = spec.constraint(curve.points)
    pos_res = np.linalg.norm(np.atleast_2d(F.T).T, axis=1) if F.size else np.zeros(len(curve.points))
    DF = spec.constraint_jacobian(curve.points)
    vel = curve.velocities if curve.velocities is not None else curve.chord_velocities()
    vel_res = (np.linalg.norm(np.einsum("mcd,md->mc", DF, vel), axis=1)
               if F.size else np.zeros(len(curve.points)))
    acc_res = result.residuals.get("acceleration", np.full(len(curve.points), np.nan))
    bau_res = result.residuals.get("baumgarte", np.full(len(curve.points), np.nan))
    header = (["t"] + [f"x{i}" for i in range(d)] + [f"u{i}" for i in range(d)]
              + ["lambda1", "rho", "res_position", "res_velocity",
                 "res_acceleration", "res_baumgarte"])
    rows = []
    for i, t in enumerate(curve.mesh.nodes):
        lam = result.samples[i].eigenvalues if result.samples else None
        lam1 = float(lam[0]) if lam is not None else np.nan
        rho = float(lam[1:].sum() / lam[0]) if lam is not None and lam[0] > 0 else np.nan
        rows.append([t, *curve.points[i], *vel[i], lam1, rho,
                     pos_res[i], vel_res[i], acc_res[i], bau_res[i]])
    _write_csv(path, header, rows)


def _write_iterations_csv(path, result: FlowResult):
    _write_csv(path, ["iteration", "objective", "displacement",
                      "max_constraint_residual"],
               [[i, it.objective, it.displacement, it.max_constraint_residual]
                for i, it in enumerate(result.iterations)])


def _write_points_csv(path, points):
    d = points.shape[1]
    _write_csv(path, [f"x{i}" for i in range(d)], points)


_PLOT_SCRIPT = """\
#!/usr/bin/env python3
# Render the experiment artifacts in this directory:
# data cloud (black), initial curve (blue), flows (red), principal flow (purple).
import glob
import os

import numpy as np
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))

def load(name):
    path = os.path.join(here, name)
    if not os.path.exists(path):
        return None
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)

data = load("data.csv")
init = load("initial.csv")
flows = sorted(glob.glob(os.path.join(here, "flow*.csv")))
principals = sorted(glob.glob(os.path.join(here, "principal*.csv")))
dim = data.shape[1] if data is not None else 3

fig = plt.figure(figsize=(7, 7))
if dim == 3:
    ax = fig.add_subplot(111, projection="3d")
else:
    ax = fig.add_subplot(111)
    ax.set_aspect("equal")

def plot(ax, pts, *args, **kwargs):
    ax.plot(*(pts[:, i] for i in range(dim)), *args, **kwargs)

if data is not None:
    if dim == 3:
        ax.scatter(data[:, 0], data[:, 1], data[:, 2], s=4, c="k", alpha=0.35,
                   label="data")
    else:
        ax.scatter(data[:, 0], data[:, 1], s=4, c="k", alpha=0.35, label="data")
if init is not None:
    plot(ax, init, "b--", lw=2, label="initial curve")
for i, f in enumerate(flows):
    arr = np.loadtxt(f, delimiter=",", skiprows=1, ndmin=2)
    plot(ax, arr[:, 1:1 + dim], "r-", lw=2,
         label=os.path.basename(f)[:-4] if i == 0 or len(flows) > 1 else "flow")
for f in principals:
    arr = np.loadtxt(f, delimiter=",", skiprows=1, ndmin=2)
    plot(ax, arr[:, 1:1 + dim], "-", color="purple", lw=2,
         label=os.path.basename(f)[:-4])
ax.legend(loc="best", fontsize=8)
out = os.path.join(here, "plot.png")
plt.savefig(out, dpi=150, bbox_inches="tight")
print("wrote", out)
"""


def _emit_plot_script(outdir: Path):
    (outdir / "plot.py").write_text(_PLOT_SCRIPT)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return str(obj)


def _flow_summary(result: FlowResult) -> dict:
    return {
        "objective": result.objective,
        "initial_objective": result.initial_objective,
        "converged": bool(result.converged),
        "oscillating": bool(result.oscillating),
        "outer_iterations": len(result.iterations),
        "energy": result.energy,
        "max_position_residual": float(np.abs(
            result.residuals.get("position", np.array([np.nan]))).max()),
    }


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------

def run(config: ExperimentConfig) -> dict:
    """Solve the configured flow for every delta and write the artifacts."""
    spec = config.resolve_manifold()
    cloud = config.resolve_cloud(spec)
    x1, x2 = config.resolve_endpoints(spec)
    if config.h is None:
        raise ConfigError("h is required")
    h = config.length_scale(config.h)
    h_star = config.length_scale(config.h_star)
    deltas = np.atleast_1d(np.asarray(config.delta, dtype=float))
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    _write_points_csv(outdir / "data.csv", cloud.points)
    scheme = CollocationScheme.lobatto_iiia(config.stages)
    summary = {"config": {k: v for k, v in asdict(config).items()},
               "results": []}
    wrote_initial = False
    for delta in deltas:
        result = fixed_boundary_flow(
            cloud, x1, x2, h, float(delta), h_star, spec=spec,
            n_intervals=config.n_intervals, scheme=scheme,
            newton_tol=config.newton_tol, eps_conv_rel=config.eps_conv_rel,
            max_outer=config.max_outer, k_project=config.k_project,
            project_each_iteration=config.project_each_iteration,
            relaxation=config.relaxation)
        suffix = "" if deltas.size == 1 else f"_delta{delta:g}"
        _write_flow_csv(outdir / f"flow{suffix}.csv", result, spec)
        _write_iterations_csv(outdir / f"iterations{suffix}.csv", result)
        if not wrote_initial:
            _write_points_csv(outdir / "initial.csv", result.initial_curve.points)
            wrote_initial = True
        entry = {"delta": float(delta), **_flow_summary(result)}
        summary["results"].append(entry)
    with open(outdir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, default=_json_default)
    _emit_plot_script(outdir)
    return summary


def run_principal(config: ExperimentConfig) -> dict:
    spec = config.resolve_manifold()
    cloud = config.resolve_cloud(spec)
    pconf = config.principal
    start = pconf.get("start", "mean")
    if isinstance(start, str):
        start = frechet_mean(cloud, spec)
    else:
        start = np.asarray(start, dtype=float)
    h = config.length_scale(config.h)
    r = pconf.get("r", 0.8)
    step = pconf.get("step", max(r / 25.0, 1e-3))
    res = principal_flow(cloud, start, h, r, step, spec=spec,
                         k_project=config.k_project)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_points_csv(outdir / "data.csv", cloud.points)
    for name, curve in (("forward", res.forward), ("backward", res.backward)):
        d = curve.ambient_dim
        header = ["t"] + [f"x{i}" for i in range(d)] + [f"u{i}" for i in range(d)]
        rows = [[t, *p, *u] for t, p, u in
                zip(curve.mesh.nodes, curve.points, curve.velocities)]
        _write_csv(outdir / f"principal_{name}.csv", header, rows)
    _emit_plot_script(outdir)
    out = {"start": start.tolist(),
           "branch_errors": [(b, float(l), str(e)) for b, l, e in res.errors]}
    with open(outdir / "principal.json", "w") as fh:
        json.dump(out, fh, indent=2, default=_json_default)
    return out


def run_sweep_h(config: ExperimentConfig) -> list:
    spec = config.resolve_manifold()
    cloud = config.resolve_cloud(spec)
    if not config.h_sweep:
        raise ConfigError("sweep-h needs an 'h_sweep' list in the config")
    at = config.sweep_at
    if at is None or (isinstance(at, str) and at == "mean"):
        x = frechet_mean(cloud, spec)
    else:
        x = np.asarray(at, dtype=float)
    hs = [config.length_scale(h) for h in config.h_sweep]
    entries = analysis.h_sweep(x, cloud, hs)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    m = max((len(e.eigenvalues) for e in entries if e.eigenvalues is not None),
            default=0)
    header = ["h", "rho", "neighbor_count", "is_argmin"] + \
             [f"lambda{i + 1}" for i in range(m)]
    rows = []
    for e in entries:
        lam = list(e.eigenvalues) if e.eigenvalues is not None else [np.nan] * m
        rows.append([e.h, e.rho if e.rho is not None else np.nan,
                     e.neighbor_count, int(e.is_argmin), *lam])
    _write_csv(outdir / "hsweep.csv", header, rows)
    return entries


def run_lambda_map(config: ExperimentConfig) -> list:
    spec = config.resolve_manifold()
    cloud = config.resolve_cloud(spec)
    if not config.grid:
        raise ConfigError("lambda-map needs a 'grid' section")
    g = config.grid
    lo = np.asarray(g["min"], dtype=float)
    hi = np.asarray(g["max"], dtype=float)
    n = int(g.get("n", 20))
    axes = [np.linspace(lo[k], hi[k], n) for k in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    if spec.codim > 0:
        pts = np.asarray(geometry.project_to_manifold(pts, spec))
    kernel = Kernel(config.length_scale(config.h) if config.h else np.inf)
    use_spec = None if spec.kind == "affine" else spec
    records, errors = lambda1_landscape(pts, cloud, kernel, use_spec)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    d = pts.shape[1]
    _write_csv(outdir / "lambda1.csv",
               [f"x{i}" for i in range(d)] + ["lambda1"],
               [[*p, lam] for p, lam in records])
    return records


_EUCLID_FIELDS = {
    "swirl": lambda x: np.array([1.0, x[0] * x[1]]) /
                       np.hypot(1.0, x[0] * x[1]),
    "antiswirl": lambda x: np.array([1.0, -x[0] * x[1]]) /
                           np.hypot(1.0, x[0] * x[1]),
    "constant": lambda x: np.array([1.0, 0.0]),
}


def run_analyze_euclid(config: ExperimentConfig) -> dict:
    if not config.euclid:
        raise ConfigError("analyze-euclid needs a 'euclid' section")
    e = config.euclid
    name = e.get("field", "swirl")
    if name not in _EUCLID_FIELDS:
        raise ConfigError(f"unknown euclid field {name!r}; "
                          f"known: {sorted(_EUCLID_FIELDS)}")
    fld = EuclideanField(np.eye(2), _EUCLID_FIELDS[name], np.zeros(2))
    x1 = np.asarray(e.get("x1", [-0.3, -0.15]), dtype=float)
    x2 = np.asarray(e.get("x2", [0.3, 0.1]), dtype=float)
    extent = float(e.get("extent", 0.5))
    cells = int(e.get("cells", 11))
    gx = np.linspace(-extent, extent, cells)
    grid = np.array([[a, b] for a in gx for b in gx])
    report = analysis.assumption_check(fld, grid, (x1, x2))
    out = {"field": name,
           "clauses": {k: {"passed": bool(v.passed),
                           "worst_value": float(v.worst_value),
                           "worst_point": None if v.worst_point is None
                           else v.worst_point.tolist()}
                       for k, v in report.items()}}
    if report["a"].passed:
        gs = analysis.gamma_s(fld, x1, x2, n_cells=cells - 1)
        out["gamma_s"] = {"lengths": list(gs.segment_lengths),
                          "alignment": analysis.discrete_objective(gs.points, fld)}
        ax_x = np.linspace(min(x1[0], -extent), max(x2[0], extent), cells)
        ax_y = np.linspace(-extent, extent, cells)
        prob = analysis.LatticePathProblem.from_field(
            fld, [ax_x, ax_y],
            (int(np.argmin(np.abs(ax_x - x1[0]))), int(np.argmin(np.abs(ax_y - x1[1])))),
            (int(np.argmin(np.abs(ax_x - x2[0]))), int(np.argmin(np.abs(ax_y - x2[1])))))
        best = analysis.lattice_oracle(prob)
        out["lattice"] = {"value": best.value, "nodes": len(best.indices)}
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "euclid.json", "w") as fh:
        json.dump(out, fh, indent=2, default=_json_default)
    return out


def run_generate(args) -> None:
    cloud = generators.generate(args.scenario, args.n, args.sigma, args.seed)
    if args.format == "geo":
        geo.emit_geo(cloud, args.out)
    else:
        _write_points_csv(args.out, cloud.points)


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------

def _add_config_arg(sub):
    sub.add_argument("--config", required=True, help="JSON experiment config")
    sub.add_argument("--out", help="override the config's output_dir")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config)
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="boundaryflow",
        description="Fixed-endpoint principal-direction flows on manifolds")
    subs = parser.add_subparsers(dest="verb", required=True)

    for verb in ("flow", "sweep-delta", "principal", "sweep-h", "lambda-map",
                 "analyze-euclid"):
        _add_config_arg(subs.add_parser(verb))

    gen = subs.add_parser("generate", help="write a synthetic scenario cloud")
    gen.add_argument("--scenario", required=True,
                     choices=sorted(generators.SCENARIOS))
    gen.add_argument("--n", type=int, default=300)
    gen.add_argument("--sigma", type=float, default=0.05)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--format", choices=("ambient", "geo"), default="ambient")

    args = parser.parse_args(argv)
    try:
        if args.verb == "generate":
            run_generate(args)
        elif args.verb in ("flow", "sweep-delta"):
            summary = run(_load_config(args))
            for entry in summary["results"]:
                print(f"delta={entry['delta']:g} converged={entry['converged']} "
                      f"objective={entry['objective']:.6g}")
        elif args.verb == "principal":
            run_principal(_load_config(args))
        elif args.verb == "sweep-h":
            for e in run_sweep_h(_load_config(args)):
                flag = "  <- argmin" if e.is_argmin else ""
                rho = "gap" if e.rho is None else f"{e.rho:.4f}"
                print(f"h={e.h:g} rho={rho} n={e.neighbor_count}{flag}")
        elif args.verb == "lambda-map":
            run_lambda_map(_load_config(args))
        elif args.verb == "analyze-euclid":
            out = run_analyze_euclid(_load_config(args))
            print(json.dumps(out["clauses"], indent=2))
    except (BoundaryFlowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
