"""Command line experiment driver.

Config files are flat `key = value` lines with `#` comments. Subcommands
write schema-versioned CSV files into the output directory and use the
exit-code contract: 0 success, 1 config error, 2 numerical failure,
3 inequality-check failure.
"""

import argparse
import concurrent.futures
import glob
import os
import sys

import numpy as np

from . import tables
from .estimates import (
    SizeExperimentConfig,
    admissible_centers,
    calibrate_constants,
    lps_check,
    run_size_experiment,
    size_bounds,
    three_spheres_check,
    verify_energy_lemma,
)
from .functionals import frequency, strain_energy_density, work_report
from .geometry import (
    AprioriData,
    Domain,
    generate_mesh,
    rasterize_inclusion,
    read_polygons,
)
from .material import (
    InclusionMaterial,
    JumpBounds,
    bending_voigt,
    derive_plate_tensors,
    inclusion_from_tables,
    jump_bounds,
    material_from_config,
    shear_matrix,
)
from .solver import (
    CompatibilityError,
    SolveError,
    assemble_load,
    assemble_stiffness,
    dense_oracle_solve,
    element_operators,
    load_from_family,
    residual_check,
    solve,
)

ENV_OUT = "PLATELAB_OUT"


class ConfigError(Exception):
    pass


def parse_config(path):
    cfg = {}
    try:
        with open(path) as fh:
            for ln, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected 'key = value'")
                key, val = (s.strip() for s in line.split("=", 1))
                if not key:
                    raise ConfigError(f"{path}:{ln}: empty key")
                if key in cfg:
                    raise ConfigError(f"{path}:{ln}: duplicate key '{key}'")
                cfg[key] = val
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    return cfg


def _f(cfg, key, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing config key '{key}'")
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"config key '{key}' is not a number: {cfg[key]!r}")


def _i(cfg, key, default=None):
    if key not in cfg:
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"config key '{key}' is not an integer: {cfg[key]!r}")


def _floats(cfg, key):
    if key not in cfg:
        raise ConfigError(f"missing config key '{key}'")
    try:
        return [float(tok) for tok in cfg[key].replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"config key '{key}' is not a number list: {cfg[key]!r}")


def _onoff(cfg, key, default):
    val = cfg.get(key)
    if val is None:
        return default
    low = val.lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"config key '{key}' must be on or off, got {val!r}")


def _build_apriori(cfg):
    kw = {}
    for key in ("rho0", "m0", "m1", "s0", "d0", "h1"):
        if key in cfg:
            kw[key] = _f(cfg, key)
    if "x0" in cfg:
        parts = _floats(cfg, "x0")
        if len(parts) != 2:
            raise ConfigError("x0 needs two coordinates")
        kw["x0"] = tuple(parts)
    try:
        return AprioriData(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _build_domain(cfg):
    spec = cfg.get("domain")
    if spec is None:
        raise ConfigError("missing config key 'domain'")
    apriori = _build_apriori(cfg)
    try:
        if spec.startswith("rectangle"):
            parts = spec.split()[1:]
            if len(parts) != 4:
                raise ConfigError("domain rectangle needs 4 numbers")
            x0, y0, x1, y1 = (float(p) for p in parts)
            verts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
            return Domain(np.array(verts, dtype=float), apriori)
        polys = read_polygons(spec)
        if len(polys) != 1:
            raise ConfigError("domain file must hold exactly one polygon")
        return Domain(polys[0], apriori)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"bad domain: {exc}")


def _build_material(cfg):
    try:
        return material_from_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _build_inclusion(cfg, n_elements):
    """(polygons tuple, InclusionMaterial or None) from config."""
    path = cfg.get("inclusion")
    has_kappa = "kappa" in cfg
    has_tables = "stilde_table" in cfg or "ptilde_table" in cfg
    if path is None:
        if has_kappa or has_tables:
            raise ConfigError("inclusion material given without inclusion polygons")
        return (), None
    if has_kappa == has_tables:
        raise ConfigError("give exactly one of kappa or tensor tables")
    try:
        polys = tuple(read_polygons(path))
        if has_kappa:
            incl = InclusionMaterial(kappa=_f(cfg, "kappa"))
        else:
            if "stilde_table" not in cfg or "ptilde_table" not in cfg:
                raise ConfigError("tensor override needs both stilde_table and ptilde_table")
            incl = inclusion_from_tables(cfg["stilde_table"], cfg["ptilde_table"],
                                         n_elements)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"bad inclusion: {exc}")
    return polys, incl


def _outdir(cfg, args):
    out = args.out or cfg.get("out") or os.environ.get(ENV_OUT) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _emit(outdir, name, build, timestamp):
    kind, header, rows = build
    path = os.path.join(outdir, f"{name}_{kind}.csv")
    tables.write_csv(path, kind, header, rows, timestamp=timestamp)
    print(path)
    return path


def _solve_states(cfg, args, with_inclusion):
    """Shared front half: mesh, load, reference state, optional override state."""
    domain = _build_domain(cfg)
    mat = _build_material(cfg)
    mesh = generate_mesh(domain, _f(cfg, "target_size"),
                         _i(cfg, "element_budget"))
    load = load_from_family(mesh, cfg.get("load", "pure_bending a=1"), mat)
    tol = args.tol if args.tol is not None else _f(cfg, "tol", 1e-9)
    assumed = not args.full_integration
    rhs = assemble_load(mesh, load, tol=tol)

    def run(system):
        system = system.with_load(rhs, load)
        if args.dense_oracle:
            return dense_oracle_solve(system, cap=_i(cfg, "dense_cap", 600) or 600,
                                      tol=tol)
        return solve(system, tol=tol)

    state0 = run(assemble_stiffness(mesh, mat, assumed_shear=assumed))
    polys, incl = _build_inclusion(cfg, mesh.n_elements) if with_inclusion \
        else ((), None)
    if incl is not None:
        indicator = rasterize_inclusion(mesh, polys)
        state = run(assemble_stiffness(mesh, mat, indicator, incl,
                                       assumed_shear=assumed))
    else:
        indicator, state = None, None
    return dict(domain=domain, material=mat, mesh=mesh, load=load, tol=tol,
                assumed=assumed, state0=state0, state=state,
                indicator=indicator, inclusion=incl, polygons=polys)


def _cmd_solve(cfg, args, name, outdir, stamp):
    ctx = _solve_states(cfg, args, with_inclusion=True)
    state = ctx["state"] or ctx["state0"]
    _emit(outdir, name, tables.state_rows(state), stamp)
    res = residual_check(state, ctx["mesh"], ctx["material"], ctx["load"],
                         ctx["indicator"], ctx["inclusion"])
    _emit(outdir, name, tables.quantity_rows(name, {
        "n_elements": ctx["mesh"].n_elements,
        "mesh_size": ctx["mesh"].mesh_size,
        "solve_residual": state.residual,
        "equilibrium_residual": res[1],
        "stability_ratio": state.stability_ratio,
    }), stamp)
    return 0


def _cmd_work(cfg, args, name, outdir, stamp):
    ctx = _solve_states(cfg, args, with_inclusion=True)
    state = ctx["state"] or ctx["state0"]
    rep = work_report(ctx["load"], state, ctx["state0"])
    _emit(outdir, name, tables.quantity_rows(name, rep), stamp)
    return 0


def _cmd_energy_lemma(cfg, args, name, outdir, stamp):
    ctx = _solve_states(cfg, args, with_inclusion=True)
    if ctx["inclusion"] is None:
        raise ConfigError("energy-lemma needs an inclusion")
    jumps = jump_bounds(ctx["material"], ctx["inclusion"])
    rep = verify_energy_lemma(ctx["state0"], ctx["state"], ctx["load"],
                              ctx["material"], jumps, ctx["indicator"])
    _emit(outdir, name, tables.quantity_rows(name, rep), stamp)
    if not rep.passed:
        for msg in rep.messages:
            print(f"energy lemma: {msg}", file=sys.stderr)
        return 3
    return 0


def _size_config(cfg, args, name):
    domain = _build_domain(cfg)
    mat = _build_material(cfg)
    target = _f(cfg, "target_size")
    polys, incl = (), None
    if {"inclusion", "kappa", "stilde_table", "ptilde_table"} & cfg.keys():
        # table-driven overrides need the element count ahead of time; the
        # mesh is regenerated identically inside the experiment
        ne = generate_mesh(domain, target, _i(cfg, "element_budget")).n_elements
        polys, incl = _build_inclusion(cfg, ne)
    return SizeExperimentConfig(
        domain=domain, material=mat, target_size=target,
        load_family=cfg.get("load", "pure_bending a=1"),
        inclusion_polygons=polys, inclusion=incl,
        c1=_f(cfg, "c1", 1.0), c2=_f(cfg, "c2", 1.0),
        theta=_f(cfg, "theta", 0.3),
        tol=args.tol if args.tol is not None else _f(cfg, "tol", 1e-9),
        assumed_shear=not args.full_integration,
        dense_oracle=args.dense_oracle,
        dense_cap=_i(cfg, "dense_cap", 600) or 600,
        element_budget=_i(cfg, "element_budget"),
        name=name)


def _cmd_size(cfg, args, name, outdir, stamp):
    rep = run_size_experiment(_size_config(cfg, args, name))
    _emit(outdir, name, tables.corpus_rows([rep]), stamp)
    _emit(outdir, name, tables.quantity_rows(name, rep), stamp)
    ok = rep.sign_ok and (rep.lemma is None or rep.lemma.passed)
    if not ok:
        for msg in rep.messages:
            print(f"size: {msg}", file=sys.stderr)
    return 0 if ok else 3


def _cmd_three_spheres(cfg, args, name, outdir, stamp):
    ctx = _solve_states(cfg, args, with_inclusion=False)
    field = strain_energy_density(ctx["state0"],
                                  order=_i(cfg, "quad_order", 4) or 4)
    rho = _floats(cfg, "rho")[0]
    theta = _f(cfg, "theta", 0.3)
    if "center" in cfg:
        centers = np.array([_floats(cfg, "center")])
        if centers.shape != (1, 2):
            raise ConfigError("center needs two coordinates")
    else:
        pitch = _f(cfg, "pitch", rho / 2.0)
        centers, _ = admissible_centers(ctx["mesh"], rho, theta, pitch)
        if not len(centers):
            raise ConfigError("no admissible centers; shrink rho or theta")
    reports = [three_spheres_check(field, c, rho, theta) for c in centers]
    _emit(outdir, name, tables.three_spheres_rows(reports), stamp)
    solid = [r for r in reports if not r.degenerate]
    n_ok = sum(r.feasible for r in solid) + (len(reports) - len(solid))
    frac = n_ok / len(reports)
    _emit(outdir, name, tables.quantity_rows(name, {
        "rho": rho, "theta": theta, "n_centers": len(reports),
        "feasible_fraction": frac,
    }), stamp)
    need = _f(cfg, "feasible_fraction", 0.95)
    if frac < need:
        print(f"three-spheres: feasible fraction {frac:.3f} < {need}",
              file=sys.stderr)
        return 3
    return 0


def _cmd_lps(cfg, args, name, outdir, stamp):
    ctx = _solve_states(cfg, args, with_inclusion=False)
    field = strain_energy_density(ctx["state0"],
                                  order=_i(cfg, "quad_order", 4) or 4)
    theta = _f(cfg, "theta", 0.3)
    code = 0
    quantities = {"theta": theta}
    for rho in _floats(cfg, "rho"):
        rep = lps_check(field, ctx["mesh"], rho, theta)
        tag = f"{name}_rho{rho:g}".replace(".", "p")
        _emit(outdir, tag, tables.lps_rows(rep), stamp)
        quantities[f"constant_rho_{rho:g}"] = rep.constant
        quantities[f"n_centers_rho_{rho:g}"] = len(rep.centers)
        if rep.degenerate or not rep.constant > 0.0:
            print(f"lps: no positive smallness constant at rho {rho:g}",
                  file=sys.stderr)
            code = 3
    _emit(outdir, name, tables.quantity_rows(name, quantities), stamp)
    return code


_EXACT_FAMILIES = ("pure_bending", "twist", "edge_moment")


def _exact_strains(family, material):
    """Constant exact curvature and shear for the closed-form families."""
    from .solver import _parse_family

    kind, params = _parse_family(family)
    t = derive_plate_tensors(material)
    b, nu = float(t.rigidity), float(t.nu)
    if kind == "pure_bending":
        a = params.get("a", 1.0)
        kv = np.array([a, a, 0.0])
        density = 2.0 * b * a ** 2 * (1.0 + nu)
    elif kind == "edge_moment":
        a = params.get("c", 1.0) / (b * (1.0 + nu))
        kv = np.array([a, a, 0.0])
        density = 2.0 * b * a ** 2 * (1.0 + nu)
    elif kind == "twist":
        a = params.get("a", 1.0)
        kv = np.array([0.0, 0.0, 2.0 * a])
        density = 2.0 * b * a ** 2 * (1.0 - nu)
    else:
        raise ConfigError(f"no closed form for load family '{kind}'")
    return kv, np.zeros(2), density


def convergence_study(domain, material, family="pure_bending a=1", target0=0.25,
                      levels=3, assumed_shear=True, tol=1e-9, floor=1e-8):
    """Uniform-refinement errors against the closed-form solution.

    Returns (records, work_error_last) where records are rows
    (n_elements, mesh_size, energy_error, work_error, observed_order).
    Energy errors are relative to the exact energy norm; once an error
    falls below `floor` the solution is exact to round-off and the
    observed order is reported as inf.
    """
    kv, gv, density = _exact_strains(family, material)
    t = derive_plate_tensors(material)
    db = bending_voigt(t)
    sm = shear_matrix(t)
    records = []
    prev = None
    for level in range(levels):
        mesh = generate_mesh(domain, target0 / 2 ** level)
        load = load_from_family(mesh, family, material)
        system = assemble_stiffness(mesh, material, assumed_shear=assumed_shear)
        state = solve(system.with_load(assemble_load(mesh, load, tol=tol), load),
                      tol=tol)
        ops = element_operators(mesh, 2, assumed_shear)
        wts = ops.point_weights()
        dk = ops.curvatures(state.u) - kv
        dg = ops.shears(state.u) - gv
        err2 = float(np.sum(wts * (np.einsum("ega,ab,egb->eg", dk, db, dk)
                                   + np.einsum("ega,ab,egb->eg", dg, sm, dg))))
        w_exact = density * domain.area
        from .functionals import boundary_work
        w_err = abs(boundary_work(load, state) - w_exact) / w_exact
        e_rel = np.sqrt(max(err2, 0.0) / w_exact)
        if prev is None:
            order = None
        elif e_rel < floor:
            order = float("inf")
        else:
            order = float(np.log2(prev / e_rel))
        records.append((mesh.n_elements, mesh.mesh_size, e_rel, w_err, order))
        prev = e_rel
    return records, records[-1][3]


def _cmd_convergence(cfg, args, name, outdir, stamp):
    domain = _build_domain(cfg)
    mat = _build_material(cfg)
    records, w_err = convergence_study(
        domain, mat, cfg.get("load", "pure_bending a=1"),
        target0=_f(cfg, "target_size", 0.25),
        levels=_i(cfg, "refinements", 3) or 3,
        assumed_shear=not args.full_integration,
        tol=args.tol if args.tol is not None else _f(cfg, "tol", 1e-9))
    _emit(outdir, name, tables.convergence_rows(records), stamp)
    last_order = records[-1][4]
    min_order = _f(cfg, "min_order", 1.9)
    if last_order is not None and last_order < min_order:
        print(f"convergence: observed order {last_order:.3f} < {min_order}",
              file=sys.stderr)
        return 3
    if w_err > _f(cfg, "work_rtol", 0.005):
        print(f"convergence: work error {w_err:.3e} over tolerance",
              file=sys.stderr)
        return 3
    return 0


def _cmd_calibrate(cfg, args, name, outdir, stamp):
    corpus_dir = cfg.get("corpus")
    if corpus_dir is None:
        raise ConfigError("missing config key 'corpus'")
    paths = sorted(glob.glob(os.path.join(corpus_dir, "*.cfg")))
    if not paths:
        raise ConfigError(f"no *.cfg files in {corpus_dir}")
    configs = []
    for p in paths:
        sub = parse_config(p)
        cname = sub.get("name", os.path.splitext(os.path.basename(p))[0])
        configs.append(_size_config(sub, args, cname))

    jobs = max(args.jobs or 1, 1)
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run_size_experiment, configs))
    else:
        reports = [run_size_experiment(c) for c in configs]

    entries = [r for r in reports if r.regime is not None]
    if not entries:
        raise ConfigError("calibration corpus has no inclusion experiments")
    rho0 = _build_apriori(parse_config(paths[0])).rho0
    corpus = [(r.true_area, r.gap,  r.work_reference,
               JumpBounds(r.eta, r.delta, r.regime)) for r in entries]
    fit = calibrate_constants(corpus, rho0=rho0)

    code = 0
    rows = []
    worst_spread = 0.0
    for r in entries:
        jb = JumpBounds(r.eta, r.delta, r.regime)
        lo, hi = size_bounds(r.gap, r.work_reference, jb, fit.c1, fit.c2, rho0)
        bracketed = lo <= r.true_area * (1 + 1e-12) and \
            r.true_area <= hi * (1 + 1e-12)
        if lo > 0.0:
            worst_spread = max(worst_spread, hi / lo)
        rows.append((r.name, r.true_area, lo, hi, 1 if bracketed else 0))
        if not bracketed:
            print(f"calibrate: {r.name} not bracketed", file=sys.stderr)
            code = 3
        if not (r.sign_ok and (r.lemma is None or r.lemma.passed)):
            print(f"calibrate: {r.name} failed checks", file=sys.stderr)
            code = 3
    _emit(outdir, name, tables.corpus_rows(reports), stamp)
    _emit(outdir, name, ("calibration",
                         ("id", "true_area", "lower", "upper", "bracketed"),
                         rows), stamp)
    _emit(outdir, name, tables.quantity_rows(name, {
        "c1": fit.c1, "c2": fit.c2, "spread": fit.c2 / fit.c1,
        "worst_interval_ratio": worst_spread, "count": fit.count,
        "regime": fit.regime,
    }), stamp)
    return code


_HANDLERS = {
    "solve": _cmd_solve,
    "work": _cmd_work,
    "energy-lemma": _cmd_energy_lemma,
    "size": _cmd_size,
    "three-spheres": _cmd_three_spheres,
    "lps": _cmd_lps,
    "convergence": _cmd_convergence,
    "calibrate": _cmd_calibrate,
}


def _parser():
    p = argparse.ArgumentParser(
        prog="platelab",
        description="Reissner-Mindlin plate laboratory: forward solves, "
                    "boundary-work measurements, and size-estimate checks.")
    p.add_argument("command", choices=sorted(_HANDLERS))
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--dense-oracle", action="store_true")
    p.add_argument("--full-integration", action="store_true")
    return p


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        # keep the exit-code contract: usage problems are config errors
        return 0 if exc.code == 0 else 1
    try:
        cfg = parse_config(args.config)
        name = cfg.get("name", args.command.replace("-", "_"))
        outdir = _outdir(cfg, args)
        stamp = _onoff(cfg, "timestamp", True)
        return _HANDLERS[args.command](cfg, args, name, outdir, stamp)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SolveError, CompatibilityError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
