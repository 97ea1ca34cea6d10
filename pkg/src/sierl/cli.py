"""Command line front end: ``sierl extract <config.yaml>``.

The run configuration is YAML. ``sierl extract --print-defaults`` prints
every key with its default and a short description.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .assembly import MU0, Material
from .circuit import PortSpec, triangles_in_box, triangles_with_tag
from .errors import ConfigError, InconsistentPotential, SierlError
from .extract import build_model, field_solution, frequency_sweep, mna_solve
from .mesh import FORMATS, load_mesh

DEFAULTS_YAML = f"""\
# sierl run configuration; every key below is optional except mesh.path,
# material.sigma and ports.
mesh:
  path: null            # MSH 2.2 ASCII or STL (ASCII/binary) surface file; relative to this file
  format: null          # one of {', '.join(FORMATS)}; guessed from the file when null
  scale: 1.0            # factor applied to coordinates (e.g. 1.0e-6 for files in micrometers)
  weld_tol: 1.0e-12     # vertices closer than this (m, after scaling) are merged
material:
  sigma: null           # conductivity (S/m), e.g. 5.8e7 for copper
  mu: {MU0!r}  # permeability (H/m)
  pec: false            # force zero surface impedance (lossless conductor)
  thickness: null       # thinnest conductor dimension (m) for the skin-depth validity flag
frequencies:
  list: null            # explicit frequencies (Hz); overrides start/stop/points
  start: 1.0e9
  stop: 1.0e10
  points: 2
  spacing: log          # log or lin
ports: []               # list of {{name, source, sink}}; source/sink select triangles by
                        # {{box: [[xmin, ymin, zmin], [xmax, ymax, zmax]], tol: 0.0}},
                        # {{tag: <physical tag>}} or {{ids: [triangle ids]}}, or a list of those
solver:
  backend: dense        # dense or pfft
  method: gmres         # gmres, or direct (dense LU; dense backend only)
  tol: 1.0e-3           # relative preconditioned residual
  restart: 100
  maxiter: null         # total GMRES iterations per solve; null means max(10 l, 1000)
  precondition: true
  stencil_order: 2      # pfft stencil order (1..3)
  grid_spacing: null    # pfft grid spacing (m); null picks a third of the mean basis support diameter
  near_margin: 2        # pfft near set: stencils overlapping after growing by this many nodes
  dense_cap_bytes: 2147483648
  max_grid_nodes: 50000000
  threads: null         # worker threads for assembly and FFTs; null keeps the library default
output:
  directory: sierl_out  # relative to this file
  fields: true          # write per-port VTK field files
oracle: null            # mna: also solve the modified nodal system and report the deviation
"""


def _defaults():
    return yaml.safe_load(DEFAULTS_YAML)


@dataclass
class RunConfig:
    mesh_path: Path
    sigma: float
    frequencies: np.ndarray
    ports: list
    mesh_format: str | None = None
    scale: float = 1.0
    weld_tol: float = 1e-12
    mu: float = MU0
    pec: bool = False
    thickness: float | None = None
    backend: str = "dense"
    method: str = "gmres"
    tol: float = 1e-3
    restart: int = 100
    maxiter: int | None = None
    precondition: bool = True
    stencil_order: int = 2
    grid_spacing: float | None = None
    near_margin: int = 2
    dense_cap_bytes: int = 2 * 1024**3
    max_grid_nodes: int = 50_000_000
    threads: int | None = None
    output_dir: Path = Path("sierl_out")
    fields: bool = True
    oracle: str | None = None
    source: dict = field(default_factory=dict, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("source")
        d["mesh_path"] = str(self.mesh_path)
        d["output_dir"] = str(self.output_dir)
        d["frequencies"] = [float(f) for f in self.frequencies]
        return d


def _merge(defaults, given, where=""):
    out = dict(defaults)
    for k, v in given.items():
        if k not in defaults:
            raise ConfigError(f"unknown configuration key {where}{k!r}")
        if isinstance(defaults[k], dict) and v is not None:
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be a mapping")
            out[k] = _merge(defaults[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _frequencies(fc) -> np.ndarray:
    if fc["list"] is not None:
        f = np.atleast_1d(np.asarray(fc["list"], dtype=float))
    else:
        start, stop, n = float(fc["start"]), float(fc["stop"]), int(fc["points"])
        if n < 1:
            raise ConfigError("frequencies.points must be at least 1")
        if fc["spacing"] == "log":
            if start <= 0 or stop <= 0:
                raise ConfigError("log spacing needs positive start and stop")
            f = np.geomspace(start, stop, n)
        elif fc["spacing"] == "lin":
            f = np.linspace(start, stop, n)
        else:
            raise ConfigError(f"frequencies.spacing must be 'log' or 'lin', got {fc['spacing']!r}")
    if len(f) == 0 or np.any(~np.isfinite(f)) or np.any(f <= 0):
        raise ConfigError("frequencies must be positive")
    if np.any(np.diff(f) <= 0):
        raise ConfigError("frequencies must be strictly ascending")
    return f


def parse_config(data: dict, base_dir=Path("."), overrides=None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    c = _merge(_defaults(), data)
    ov = overrides or {}
    if ov.get("freq"):
        c["frequencies"] = dict(c["frequencies"], list=list(ov["freq"]))
    for key in ("backend", "tol", "threads"):
        if ov.get(key) is not None:
            c["solver"][key] = ov[key]
    if ov.get("oracle") is not None:
        c["oracle"] = ov["oracle"]
    m, mat, s, o = c["mesh"], c["material"], c["solver"], c["output"]
    if not m["path"]:
        raise ConfigError("mesh.path is required")
    if m["format"] is not None and m["format"] not in FORMATS:
        raise ConfigError(f"mesh.format must be one of {FORMATS}")
    if mat["sigma"] is None or not float(mat["sigma"]) > 0:
        raise ConfigError("material.sigma must be a positive conductivity")
    if not float(mat["mu"]) > 0:
        raise ConfigError("material.mu must be positive")
    if s["backend"] not in ("dense", "pfft"):
        raise ConfigError(f"solver.backend must be 'dense' or 'pfft', got {s['backend']!r}")
    if s["method"] not in ("gmres", "direct"):
        raise ConfigError(f"solver.method must be 'gmres' or 'direct', got {s['method']!r}")
    if s["method"] == "direct" and s["backend"] != "dense":
        raise ConfigError("solver.method 'direct' needs the dense backend")
    if not 0 < float(s["tol"]) < 1:
        raise ConfigError("solver.tol must lie in (0, 1)")
    if c["oracle"] not in (None, "mna"):
        raise ConfigError(f"oracle must be null or 'mna', got {c['oracle']!r}")
    ports = c["ports"]
    if not isinstance(ports, list) or not ports:
        raise ConfigError("at least one port is required")
    names = []
    for k, p in enumerate(ports):
        if not isinstance(p, dict) or "source" not in p or "sink" not in p:
            raise ConfigError(f"port {k} needs 'source' and 'sink' selectors")
        name = str(p.get("name", f"p{k + 1}"))
        if not name.replace("_", "").replace("-", "").isalnum():
            raise ConfigError(f"port name {name!r} must be alphanumeric (with _ or -)")
        names.append(name)
    if len(set(names)) != len(names):
        raise ConfigError("port names must be unique")
    base_dir = Path(base_dir)
    return RunConfig(
        mesh_path=(base_dir / m["path"]),
        mesh_format=m["format"],
        scale=float(m["scale"]),
        weld_tol=float(m["weld_tol"]),
        sigma=float(mat["sigma"]),
        mu=float(mat["mu"]),
        pec=bool(mat["pec"]),
        thickness=None if mat["thickness"] is None else float(mat["thickness"]),
        frequencies=_frequencies(c["frequencies"]),
        ports=[dict(p, name=n) for p, n in zip(ports, names)],
        backend=s["backend"],
        method=s["method"],
        tol=float(s["tol"]),
        restart=int(s["restart"]),
        maxiter=None if s["maxiter"] is None else int(s["maxiter"]),
        precondition=bool(s["precondition"]),
        stencil_order=int(s["stencil_order"]),
        grid_spacing=None if s["grid_spacing"] is None else float(s["grid_spacing"]),
        near_margin=int(s["near_margin"]),
        dense_cap_bytes=int(s["dense_cap_bytes"]),
        max_grid_nodes=int(s["max_grid_nodes"]),
        threads=None if s["threads"] is None else int(s["threads"]),
        output_dir=base_dir / o["directory"],
        fields=bool(o["fields"]),
        oracle=c["oracle"],
        source=c,
    )


def load_config(path, overrides=None) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    return parse_config(data or {}, path.parent, overrides)


def select_triangles(mesh, selector) -> np.ndarray:
    """Triangle ids picked by one selector mapping or a list of them (union)."""
    if isinstance(selector, list):
        parts = [select_triangles(mesh, s) for s in selector]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    if not isinstance(selector, dict) or len(set(selector) - {"tol"}) != 1:
        raise ConfigError(f"a selector needs exactly one of box/tag/ids, got {selector!r}")
    if "box" in selector:
        box = np.asarray(selector["box"], dtype=float)
        if box.shape != (2, 3):
            raise ConfigError("box selector must be [[xmin, ymin, zmin], [xmax, ymax, zmax]]")
        return triangles_in_box(mesh, box[0], box[1], float(selector.get("tol", 0.0)))
    if "tag" in selector:
        return triangles_with_tag(mesh, int(selector["tag"]))
    if "ids" in selector:
        return np.asarray(selector["ids"], dtype=np.int64)
    raise ConfigError(f"unknown selector {selector!r}")


def resolve_ports(mesh, port_cfgs) -> list:
    return [PortSpec(p["name"], select_triangles(mesh, p["source"]), select_triangles(mesh, p["sink"]))
            for p in port_cfgs]


# ---------------------------------------------------------------------------
# writers


def write_impedance_csv(path, result):
    names = result.port_names
    pairs = [(a, b) for a in names for b in names]
    header = ["freq_hz"] + [f"R_{a}_{b}" for a, b in pairs] + [f"L_{a}_{b}" for a, b in pairs] + ["valid"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, f in enumerate(result.frequencies):
            vals = np.concatenate([result.R[k].ravel(), result.L[k].ravel()])
            w.writerow([f"{f:.17g}"] + [f"{v:.17g}" for v in vals] + [str(bool(result.valid[k])).lower()])


def write_vtk(path, mesh, potentials, current_density, title="sierl field"):
    phi = np.asarray(potentials)
    jmag = np.sqrt((np.abs(current_density) ** 2).sum(axis=1))
    nv, nt = mesh.n_vertices, mesh.n_triangles
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    lines.append(f"CELL_DATA {nt}")
    for name, data in (("potential_V", phi.real), ("potential_V_imag", phi.imag), ("current_mag_A_per_m", jmag)):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in data]
    Path(path).write_text("\n".join(lines) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


def _set_threads(n):
    if n is None:
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def run(cfg: RunConfig) -> dict:
    """Execute a configured extraction and write all outputs. Returns the report."""
    t_start = time.perf_counter()
    _set_threads(cfg.threads)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    mesh = load_mesh(cfg.mesh_path, cfg.mesh_format, weld_tol=cfg.weld_tol, scale=cfg.scale)
    t_mesh = time.perf_counter() - t0
    ports = resolve_ports(mesh, cfg.ports)
    material = Material(cfg.sigma, cfg.mu)
    model = build_model(
        mesh, ports, material, backend=cfg.backend, pec=cfg.pec, dense_cap=cfg.dense_cap_bytes,
        spacing=cfg.grid_spacing, order=cfg.stencil_order, margin=cfg.near_margin,
        max_grid_nodes=cfg.max_grid_nodes,
    )
    if not model.op.dense and cfg.threads is not None:
        model.op.Lb.workers = cfg.threads
    t0 = time.perf_counter()
    result = frequency_sweep(
        model, cfg.frequencies, thickness=cfg.thickness, method=cfg.method, tol=cfg.tol, restart=cfg.restart,
        maxiter=cfg.maxiter, precondition=cfg.precondition, keep_solutions=cfg.fields,
    )
    t_solve = time.perf_counter() - t0
    write_impedance_csv(out / "impedance.csv", result)

    field_files, field_errors = [], []
    closure_tol = 1e-6 if cfg.method == "direct" else max(1e-6, 100 * cfg.tol)
    if cfg.fields:
        for k, sol in enumerate(result.solutions):
            if sol is None:
                continue
            for j, name in enumerate(result.port_names):
                fname = f"fields_{name}_{result.frequencies[k]:.6g}Hz.vtk"
                try:
                    fs = field_solution(model.basis, model.op, sol.omega, sol.loop_currents[:, j], j, tol=closure_tol)
                except InconsistentPotential as exc:
                    field_errors.append({"file": fname, "error": exc.category, "message": str(exc)})
                    continue
                write_vtk(out / fname, mesh, fs.potentials, fs.current_density(mesh, model.edges),
                          f"port {name} at {result.frequencies[k]:.6g} Hz")
                field_files.append(fname)

    oracle = None
    if cfg.oracle == "mna":
        op = model.op
        if not op.dense:
            op = build_model(mesh, ports, material, backend="dense", pec=cfg.pec, dense_cap=cfg.dense_cap_bytes,
                     edges=model.edges).op
        devs = []
        for k, f in enumerate(result.frequencies):
            if result.failed[k]:
                devs.append(None)
                continue
            Zm = mna_solve(model.graph, op, 2 * np.pi * f)[0]
            devs.append(float(np.abs(result.Z[k] - Zm).max() / np.abs(Zm).max()))
        finite = [d for d in devs if d is not None]
        oracle = {"kind": "mna", "max_relative_deviation": max(finite) if finite else None,
                  "per_frequency": devs}

    stats = model.stats()
    mna_dim = stats["b"] + stats["n"]
    report = {
        "version": __version__,
        "config": cfg.summary(),
        "mesh": dict(stats, vertices=mesh.n_vertices, conductors=mesh.n_conductors,
                     loop_to_mna_ratio=stats["l"] / mna_dim),
        "ports": [{"name": p.name, "source_triangles": len(p.source_triangles),
                   "sink_triangles": len(p.sink_triangles)} for p in ports],
        "timings_s": dict(mesh=t_mesh, **model.timings, solve=t_solve, total=time.perf_counter() - t_start),
        "memory_estimate_bytes": model.memory_estimate(),
        "frequencies_hz": result.frequencies,
        "iterations": result.iterations,
        "valid": result.valid,
        "failed": [{"index": k, "freq_hz": float(result.frequencies[k]), "error": msg}
                   for k, msg in result.errors.items()],
        "field_files": field_files,
        "field_errors": field_errors,
        "oracle": oracle,
    }
    report["timings_s"]["total"] = time.perf_counter() - t_start
    (out / "report.json").write_text(json.dumps(report, indent=2, default=_json_default) + "\n")
    return report


def _error(category, message, code):
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sierl", description="Wideband R/L extraction from surface meshes.")
    parser.add_argument("--version", action="version", version=f"sierl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    ex = sub.add_parser("extract", help="run an extraction described by a YAML config")
    ex.add_argument("config", nargs="?", help="run configuration (YAML)")
    ex.add_argument("--freq", type=float, nargs="+", metavar="HZ", help="override the frequency list")
    ex.add_argument("--backend", choices=["dense", "pfft"])
    ex.add_argument("--tol", type=float, help="GMRES relative tolerance")
    ex.add_argument("--threads", type=int, help="worker threads")
    ex.add_argument("--oracle", choices=["mna"], help="cross-check against the modified nodal solve")
    ex.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    args = parser.parse_args(argv)

    if args.print_defaults:
        sys.stdout.write(DEFAULTS_YAML)
        return 0
    if not args.config:
        return _error("ConfigError", "a config file is required", 2)
    overrides = {"freq": args.freq, "backend": args.backend, "tol": args.tol, "threads": args.threads,
                 "oracle": args.oracle}
    try:
        cfg = load_config(args.config, overrides)
        report = run(cfg)
    except SierlError as exc:
        return _error(exc.category, str(exc), 2)
    except (OSError, MemoryError) as exc:
        return _error(type(exc).__name__, str(exc), 3)
    print(f"wrote {Path(cfg.output_dir) / 'impedance.csv'} ({len(report['frequencies_hz'])} frequencies, "
          f"{len(report['ports'])} port(s), {len(report['failed'])} failed)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
