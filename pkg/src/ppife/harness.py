"""Run configuration, the end-to-end solve pipeline, convergence studies,
verification runs, and their file outputs (CSV rows, markdown tables,
pointwise-error fields)."""
from __future__ import annotations

import configparser
import math
import os
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import assembly, geometry, linsolve, verify
from .assembly import MethodParams, SCHEMES
from .errors import ConfigError, NotConverged
from .geometry import DomainSpec, build_mesh, classify_edges, classify_elements
from .local_basis import build_bases
from .postprocess import (RunRecord, energy_error, h1_semi_error, l2_error,
                          linf_error, markdown_error_table,
                          radial_interface_solution, record_csv_rows)

_SYMMETRIC_SCHEMES = ("classic", "spp")


@dataclass
class RunConfig:
    """Flat run configuration; every field can be set from a config file and
    overridden by the CLI flag of the same name."""

    xmin: float = -1.0
    xmax: float = 1.0
    ymin: float = -1.0
    ymax: float = 1.0
    mesh: str = "rect"
    N: tuple = (20, 40, 80)
    interface: str = "circle"
    interface_params: tuple = (0.0, 0.0, math.pi / 6.28)
    beta_minus: float = 1.0
    beta_plus: float = 10.0
    alpha_exp: float = 5.0
    schemes: tuple = ("spp",)
    sigma0: Optional[float] = None
    penalty_alpha: float = 1.0
    solver_tol: float = 1e-12
    solver_maxiter: Optional[int] = None
    seed: int = 7
    out: str = "out"
    dump_field: bool = False
    field_grid: int = 0      # 0: sample at the mesh nodes (N+1 per side)
    dump_matrix: bool = False
    dump_mesh: bool = False
    # verification scan sizes
    coeff_samples: int = 2000
    trace_samples: int = 800
    coercivity_ns: tuple = (10, 20, 40)
    interp_ns: tuple = (20, 40, 80, 160)
    scan_betas: tuple = ((1.0, 10.0), (1.0, 10000.0))

    def validate(self, doubling=False):
        if self.beta_minus <= 0 or self.beta_plus <= 0:
            raise ConfigError("beta values must be positive")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")
        if self.mesh not in ("rect", "tri"):
            raise ConfigError("mesh must be 'rect' or 'tri'")
        if not self.N:
            raise ConfigError("N list is empty")
        if doubling and len(self.N) > 1:
            for a, b in zip(self.N[:-1], self.N[1:]):
                if b != 2 * a:
                    raise ConfigError("N list must strictly double")
        return self


def _parse_number(text):
    """Float parser with support for 'pi' fractions like pi/6.28 or 2*pi."""
    t = text.strip().lower()
    try:
        return float(t)
    except ValueError:
        pass
    if "pi" in t:
        expr = t.replace("pi", repr(math.pi))
        try:
            val = eval(expr, {"__builtins__": {}}, {})  # arithmetic on literals only
            return float(val)
        except Exception:
            pass
    raise ConfigError(f"cannot parse number {text!r}")


# how each RunConfig field is parsed from text
_PARSE_KIND = {
    "xmin": "float", "xmax": "float", "ymin": "float", "ymax": "float",
    "mesh": "str", "N": "int_tuple", "interface": "str",
    "interface_params": "float_tuple", "beta_minus": "float", "beta_plus": "float",
    "alpha_exp": "float", "schemes": "str_tuple", "sigma0": "opt_float",
    "penalty_alpha": "float", "solver_tol": "float", "solver_maxiter": "opt_int",
    "seed": "int", "out": "str", "dump_field": "bool", "field_grid": "int",
    "dump_matrix": "bool", "dump_mesh": "bool",
    "coeff_samples": "int", "trace_samples": "int",
    "coercivity_ns": "int_tuple", "interp_ns": "int_tuple", "scan_betas": "beta_pairs",
}


def _parse_value(name, raw):
    kind = _PARSE_KIND[name]
    raw = raw.strip()
    if kind == "beta_pairs":
        pairs = []
        for item in raw.split(","):
            a, b = item.split(":")
            pairs.append((_parse_number(a), _parse_number(b)))
        return tuple(pairs)
    if kind == "float":
        return _parse_number(raw)
    if kind == "opt_float":
        return None if raw.lower() in ("none", "") else _parse_number(raw)
    if kind == "int":
        return int(raw)
    if kind == "opt_int":
        return None if raw.lower() in ("none", "") else int(raw)
    if kind == "bool":
        return raw.lower() in ("1", "true", "yes", "on")
    items = [x for x in raw.replace(" ", "").split(",") if x]
    if kind == "int_tuple":
        return tuple(int(x) for x in items)
    if kind == "float_tuple":
        return tuple(_parse_number(x) for x in items)
    if kind == "str_tuple":
        return tuple(x.lower() for x in items)
    return raw


def load_config(path=None, overrides=None) -> RunConfig:
    """Read a flat key=value config file (a [run] section is optional) and
    apply CLI overrides on top of it."""
    cfg = RunConfig()
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        text = open(path).read()
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keys are case sensitive (N vs n)
        try:
            parser.read_string(text if text.lstrip().startswith("[") else "[run]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        for section in parser.sections():
            values.update(parser.items(section))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    lowered = {k.lower(): k for k in _PARSE_KIND}
    for key, raw in values.items():
        key = key.replace("-", "_")
        if key not in _PARSE_KIND:
            key = lowered.get(key.lower(), key)
        if key not in _PARSE_KIND:
            raise ConfigError(f"unknown config key {key!r}")
        val = _parse_value(key, raw) if isinstance(raw, str) else raw
        try:
            cfg = replace(cfg, **{key: val})
        except TypeError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return cfg


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CaseContext:
    """Everything that is shared by all schemes on one (mesh, beta) case."""

    N: int
    mesh: object
    iface: object
    sol: object
    cuts: list
    labels: np.ndarray
    bases: list
    A_vol: object
    M: object
    P_unit: object
    b: np.ndarray
    n_interface: int


def build_context(config: RunConfig, N: int) -> CaseContext:
    spec = DomainSpec(config.xmin, config.xmax, config.ymin, config.ymax, N, config.mesh)
    mesh = build_mesh(spec)
    iface = geometry.interface_from_name(config.interface, config.interface_params)
    sol = radial_interface_solution(config.beta_minus, config.beta_plus,
                                    alpha_exp=config.alpha_exp,
                                    r0=config.interface_params[2]
                                    if config.interface == "circle" else np.pi / 6.28)
    cuts = classify_elements(mesh, iface)
    labels = classify_edges(mesh, cuts)
    bases = build_bases(mesh, cuts, config.beta_minus, config.beta_plus)
    A_vol = assembly.assemble_volume(mesh, cuts, bases, config.beta_minus, config.beta_plus)
    unit = MethodParams("custom", -1.0, 0.0, 1.0, config.penalty_alpha)
    M, P_unit = assembly.assemble_edge_terms(mesh, labels, cuts, bases,
                                             config.beta_minus, config.beta_plus, unit)
    b = assembly.assemble_load(mesh, cuts, bases, sol, iface)
    n_interface = sum(c.is_interface for c in cuts)
    return CaseContext(N, mesh, iface, sol, cuts, labels, bases, A_vol, M, P_unit,
                       b, n_interface)


def scheme_params(config: RunConfig, scheme: str) -> MethodParams:
    return MethodParams.preset(scheme, config.beta_minus, config.beta_plus,
                               sigma0=config.sigma0, alpha=config.penalty_alpha)


def solve_scheme(ctx: CaseContext, config: RunConfig, scheme: str):
    """Assemble the scheme system on a prepared context, solve, measure errors."""
    params = scheme_params(config, scheme)
    A = (ctx.A_vol + params.delta * ctx.M + params.epsilon * ctx.M.T
         + params.sigma0_at(0) * ctx.P_unit).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    system = assembly.apply_dirichlet(A, ctx.b, ctx.mesh,
                                      lambda x, y: ctx.sol.u_at(x, y, ctx.iface))
    A_ff, rhs = system.reduced()
    solver = linsolve.cg if scheme in _SYMMETRIC_SCHEMES else linsolve.bicgstab
    res = solver(A_ff, rhs, tol_rel=config.solver_tol, max_iter=config.solver_maxiter)
    if not res.converged:
        raise NotConverged(f"{scheme} at N={ctx.N}: residual {res.residual:.3e}", res)
    coeffs = system.expand(res.x)

    rec = RunRecord(
        scheme=scheme, mesh_kind=config.mesh, N=ctx.N, h=ctx.mesh.h,
        beta_minus=config.beta_minus, beta_plus=config.beta_plus,
        e_l2=l2_error(ctx.mesh, ctx.cuts, ctx.bases, coeffs, ctx.sol, ctx.iface),
        e_h1=h1_semi_error(ctx.mesh, ctx.cuts, ctx.bases, coeffs, ctx.sol, ctx.iface),
        e_linf=linf_error(ctx.mesh, ctx.cuts, ctx.bases, coeffs, ctx.sol, ctx.iface),
        e_energy=energy_error(ctx.mesh, ctx.cuts, ctx.bases, coeffs, ctx.sol,
                              ctx.iface, ctx.labels, params),
        iterations=res.iterations, residual=res.residual,
        n_dofs=ctx.mesh.n_nodes, n_interface_elements=ctx.n_interface)
    return rec, coeffs, system


# ---------------------------------------------------------------------------
# pointwise field evaluation
# ---------------------------------------------------------------------------

def evaluate_solution(mesh, cuts, bases, coeffs, pts):
    """u_h at arbitrary points of the domain (vectorized on standard cells)."""
    spec = mesh.spec
    n = mesh.n_cells
    h = mesh.h
    x = np.asarray(pts[:, 0], float)
    y = np.asarray(pts[:, 1], float)
    ix = np.clip(((x - spec.xmin) / h).astype(int), 0, n - 1)
    iy = np.clip(((y - spec.ymin) / h).astype(int), 0, n - 1)
    cell = iy * n + ix
    xi = (x - (spec.xmin + ix * h)) / h
    eta = (y - (spec.ymin + iy * h)) / h
    if mesh.cell_kind == geometry.RECT:
        elem = cell
    else:
        lower = eta <= xi
        elem = 2 * cell + np.where(lower, 0, 1)

    out = np.empty(len(x))
    iface_elem = np.array([c.is_interface for c in cuts], dtype=bool)
    std = ~iface_elem[elem]
    if std.any():
        ce = coeffs[mesh.elements[elem[std]]]
        xs, es = xi[std], eta[std]
        if mesh.cell_kind == geometry.RECT:
            out[std] = (ce[:, 0] * (1 - xs) * (1 - es) + ce[:, 1] * xs * (1 - es)
                        + ce[:, 2] * xs * es + ce[:, 3] * (1 - xs) * es)
        else:
            low = eta[std] <= xi[std]
            vals = np.empty(std.sum())
            vals[low] = (ce[low, 0] * (1 - xs[low]) + ce[low, 1] * (xs[low] - es[low])
                         + ce[low, 2] * es[low])
            up = ~low
            vals[up] = (ce[up, 0] * (1 - es[up]) + ce[up, 1] * xs[up]
                        + ce[up, 2] * (es[up] - xs[up]))
            out[std] = vals
    for k in np.unique(elem[~std]) if (~std).any() else []:
        sel = elem == k
        p = np.column_stack([x[sel], y[sel]])
        out[sel] = coeffs[mesh.elements[k]] @ bases[k].values(p)
    return out


def pointwise_error_field(ctx: CaseContext, coeffs, grid=0):
    """|u - u_h| on a uniform grid; grid=0 samples at the mesh nodes, where the
    penalty's effect on the interface-local error is not masked by ordinary
    in-cell interpolation error."""
    if grid <= 0:
        grid = ctx.mesh.n_cells + 1
    xs = np.linspace(ctx.mesh.spec.xmin, ctx.mesh.spec.xmax, grid)
    ys = np.linspace(ctx.mesh.spec.ymin, ctx.mesh.spec.ymax, grid)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    uh = evaluate_solution(ctx.mesh, ctx.cuts, ctx.bases, coeffs, pts)
    ue = ctx.sol.u_at(pts[:, 0], pts[:, 1], ctx.iface)
    return pts, np.abs(ue - uh)


def write_field(path, pts, err):
    with open(path, "w") as f:
        f.write("x,y,abs_error\n")
        for (x, y), e in zip(pts, err):
            f.write(f"{x:.12e},{y:.12e},{e:.12e}\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _ensure_out(config):
    os.makedirs(config.out, exist_ok=True)
    return config.out


def _write_timings(out, rows):
    with open(os.path.join(out, "timings.csv"), "w") as f:
        f.write("label,seconds\n")
        for label, sec in rows:
            f.write(f"{label},{sec:.3f}\n")


def cmd_solve(config: RunConfig):
    """Single solve: first N and first scheme of the config."""
    config.validate()
    out = _ensure_out(config)
    N = config.N[0]
    scheme = config.schemes[0]
    t0 = time.perf_counter()
    ctx = build_context(config, N)
    rec, coeffs, system = solve_scheme(ctx, config, scheme)
    elapsed = time.perf_counter() - t0
    with open(os.path.join(out, "runs.csv"), "w") as f:
        f.write(record_csv_rows([rec]))
    _write_timings(out, [(f"solve_{scheme}_N{N}", elapsed)])
    if config.dump_field:
        pts, err = pointwise_error_field(ctx, coeffs, config.field_grid)
        write_field(os.path.join(out, f"field_{scheme}_N{N}.csv"), pts, err)
    if config.dump_matrix:
        assembly.dump_matrix(os.path.join(out, f"system_{scheme}_N{N}.mtx"), system.A)
    if config.dump_mesh:
        geometry.dump_mesh(ctx.mesh, os.path.join(out, f"mesh_N{N}.txt"))
    print(f"{scheme} N={N} h={ctx.mesh.h:.4e} L2={rec.e_l2:.4e} H1={rec.e_h1:.4e} "
          f"Linf={rec.e_linf:.4e} energy={rec.e_energy:.4e} iters={rec.iterations}")
    return [rec]


def cmd_convergence(config: RunConfig):
    """Convergence study over the config's N list and schemes; writes CSV rows
    and per-norm markdown tables in an error/rate-per-scheme layout."""
    config.validate(doubling=True)
    if len(config.N) < 3:
        raise ConfigError("convergence study needs at least 3 mesh sizes")
    out = _ensure_out(config)
    records = []
    timings = []
    for N in config.N:
        t0 = time.perf_counter()
        ctx = build_context(config, N)
        timings.append((f"context_N{N}", time.perf_counter() - t0))
        for scheme in config.schemes:
            t1 = time.perf_counter()
            rec, _, _ = solve_scheme(ctx, config, scheme)
            timings.append((f"solve_{scheme}_N{N}", time.perf_counter() - t1))
            records.append(rec)
    with open(os.path.join(out, "runs.csv"), "w") as f:
        f.write(record_csv_rows(records))
    for norm in ("l2", "h1", "linf", "energy"):
        table = markdown_error_table(records, norm, list(config.schemes))
        with open(os.path.join(out, f"table_{norm}.md"), "w") as f:
            f.write(table)
        print(f"--- {norm} ---")
        print(table, end="")
    _write_timings(out, timings)
    return records


def cmd_verify(config: RunConfig):
    """Run all four verification scans; returns (reports, all_passed)."""
    config.validate()
    out = _ensure_out(config)
    kind = config.mesh
    reports = [
        verify.scan_coefficient_bounds(kind, config.scan_betas,
                                       samples=config.coeff_samples, seed=config.seed),
        verify.scan_trace_ratio(kind, config.scan_betas,
                                samples=config.trace_samples, seed=config.seed),
        verify.scan_coercivity(config.coercivity_ns, config.scan_betas, cell_kind=kind,
                               seed=config.seed, sigma0_override=config.sigma0),
        verify.interp_edge_error_study(config.interp_ns,
                                       (config.beta_minus, config.beta_plus),
                                       cell_kind=kind, seed=config.seed),
    ]
    with open(os.path.join(out, "scans.csv"), "w") as f:
        f.write("scan,key,value\n")
        for rep in reports:
            for row in rep.csv_rows():
                f.write(row + "\n")
    for rep in reports:
        print(rep.summary_line())
    return reports, all(r.passed for r in reports)
