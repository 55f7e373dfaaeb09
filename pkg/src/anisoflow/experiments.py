"""Scripted desk-scale experiments with machine-readable verdicts.

Every experiment takes an output directory and a dict of overrides, writes
its fields and logs there, and returns a verdict dict::

    {"name": ..., "passed": bool, "checks": [{"name", "value", "threshold", "passed"}, ...],
     "runtime_s": ..., "metadata": {...}}

The same dict is written to ``<out>/verdict.json``.
"""

import logging
import os
import time

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError
from .io import write_fields, write_json
from .material import DesignField, MaterialTensors, build_tensors, kf_interp
from .optimize import optimize
from .solver import simulate
from .task import task_from_dict

log = logging.getLogger(__name__)

THIRD = 1.0 / 3.0


# -- task documents ------------------------------------------------------------------


def pipe_doc(n=60, v_max=0.6, block_size=8, iterations=300, perturb=0.0, seed=0, width=THIRD):
    """Straight pipe: one inlet on x-, one outlet on x+, same width and velocity."""
    return {
        "name": "straight-pipe",
        "grid": {"dim": 2, "cells": [n, n], "block_size": block_size},
        "patches": [
            {"id": "in", "face": "x-", "role": "inlet", "center": [0.5], "extent": [width], "velocity": [1.0, 0.0]},
            {"id": "out", "face": "x+", "role": "outlet", "center": [0.5], "extent": [width], "target": [1.0, 0.0]},
        ],
        "objective": {"v_max": v_max},
        "optimizer": {"iterations": iterations, "perturb": perturb, "seed": seed},
    }


def two_port_doc(n=30, kf_max=1e3, lambda_max=1e2, block_size=8):
    """Two inlets on x-, two outlets on x+, each a sixth of the face wide."""
    patches = []
    for k, y in enumerate((0.25, 0.75)):
        patches.append({"id": f"in{k}", "face": "x-", "role": "inlet", "center": [y], "extent": [1 / 6],
                        "velocity": [1.0, 0.0]})
        patches.append({"id": f"out{k}", "face": "x+", "role": "outlet", "center": [y], "extent": [1 / 6],
                        "target": [1.0, 0.0]})
    return {
        "name": "two-port",
        "grid": {"dim": 2, "cells": [n, n], "block_size": block_size},
        "patches": patches,
        "material": {"kf_max": kf_max, "lambda_max": lambda_max},
    }


def amplifier_doc(n=64, block_size=8, inlet_width=0.5, gain=5 / 3):
    """Inlet of width w on x-, outlet of width w / gain on x+ with gain-times speed."""
    return {
        "name": "amplifier",
        "grid": {"dim": 2, "cells": [n, n], "block_size": block_size},
        "patches": [
            {"id": "in", "face": "x-", "role": "inlet", "center": [0.5], "extent": [inlet_width],
             "velocity": [1.0, 0.0]},
            {"id": "out", "face": "x+", "role": "outlet", "center": [0.5], "extent": [inlet_width / gain],
             "target": [gain, 0.0]},
        ],
        "objective": {"v_max": 0.3},
    }


def slanted_pipe_geometry(slope=0.5, half_width=0.15, band=3, cover=1, n=20):
    """Centerline through the domain center with the given slope.

    Cells with ``|s| < half_width`` are isotropic fluid, the next ``band`` cell
    widths are free-slip wall cells (rho 1, eps 0, normal across the pipe),
    everything else is solid. Inlet and outlet patches reach ``cover`` cell
    widths into the wall band.
    """
    h = 1.0 / n
    theta = float(np.arctan(slope))
    c = np.cos(theta)
    y_in, y_out = 0.5 - 0.5 * slope, 0.5 + 0.5 * slope
    half = min((half_width + cover * h) / c, y_in, 1 - y_out)
    return dict(theta=theta, half_width=half_width, band=band * h, y_in=y_in, y_out=y_out, patch_half=half)


def slanted_pipe_doc(n=20, **geom):
    g = slanted_pipe_geometry(n=n, **geom)
    t = (float(np.cos(g["theta"])), float(np.sin(g["theta"])))
    return {
        "name": "slanted-pipe",
        "grid": {"dim": 2, "cells": [n, n], "block_size": 8},
        "patches": [
            {"id": "in", "face": "x-", "role": "inlet", "center": [g["y_in"]], "extent": [2 * g["patch_half"]],
             "velocity": list(t)},
            {"id": "out", "face": "x+", "role": "outlet", "center": [g["y_out"]], "extent": [2 * g["patch_half"]],
             "target": list(t)},
        ],
        "metadata": {"geometry": {k: float(v) for k, v in g.items()}},
    }


def channel3d_doc(n=8, block_size=4, iterations=5):
    return {
        "name": "channel-3d",
        "grid": {"dim": 3, "cells": [n, n, n], "block_size": block_size},
        "patches": [
            {"id": "in", "face": "x-", "role": "inlet", "shape": "circle", "center": [0.5, 0.5], "radius": 0.3,
             "velocity": [1.0, 0.0, 0.0]},
            {"id": "out", "face": "x+", "role": "outlet", "shape": "circle", "center": [0.5, 0.5], "radius": 0.3,
             "target": [1.0, 0.0, 0.0]},
        ],
        "objective": {"v_max": 0.4},
        "optimizer": {"iterations": iterations},
    }


# -- helpers ---------------------------------------------------------------------------


def _check(name, value, threshold, passed):
    return {"name": name, "value": value, "threshold": threshold, "passed": bool(passed)}


def _verdict(name, checks, t0, out, metadata=None):
    v = {
        "name": name,
        "passed": all(c["passed"] for c in checks),
        "checks": checks,
        "runtime_s": time.perf_counter() - t0,
        "metadata": metadata or {},
    }
    if out:
        write_json(os.path.join(out, "verdict.json"), v)
    return v


def _mkdir(out):
    if out:
        os.makedirs(out, exist_ok=True)
    return out


def _path(out, name):
    return os.path.join(out, name) if out else None


def invariant_report(state, system, grid):
    """KKT residuals plus the largest per-block net flux of the full field."""
    from .assembly import block_constraint_matrix

    res = dict(state.residuals)
    if system.C.shape[0]:
        flux = block_constraint_matrix(grid) @ state.v
        res["block_flux"] = float(np.max(np.abs(flux[system.block_ids])))
    else:
        res["block_flux"] = 0.0
    res["block_flux_ok"] = res["block_flux"] <= 1e-8
    return res


def fluid_path_connected(mask, task):
    """True when one face-connected component of ``mask`` touches every inlet and outlet."""
    grid = task.grid
    labels, _ = ndimage.label(grid.cell_array(mask))
    labels = labels.ravel(order="F")
    table = grid.cell_node_table

    def touching(nodes):
        hit = np.isin(table, nodes).any(axis=1)
        return set(labels[hit & (labels > 0)].tolist())

    comps = None
    for nodes in [task.inlet_nodes, task.outlet_nodes]:
        found = touching(nodes)
        comps = found if comps is None else comps & found
    return bool(comps)


def _parse_bool(x):
    return x if isinstance(x, bool) else str(x).lower() in ("1", "true", "yes", "on")


# -- experiments -----------------------------------------------------------------------


def block_divergence(out=None, resolution=30, kf_max=1e3, lambda_max=1e2, block_size=8,
                     no_blocks_band=(0.5, 0.9), tol=1e-6, time_limit=10.0):
    """Uniform fluid, two inlets and two outlets, solved with and without block rows."""
    t0 = time.perf_counter()
    _mkdir(out)
    task = task_from_dict(two_port_doc(resolution, kf_max, lambda_max, block_size))
    design = DesignField.uniform(task.grid.n_cells, 2)
    ratios, checks = {}, []
    for blocks in (False, True):
        state, system = simulate(design, task, use_blocks=blocks)
        influx, outflux = task.fluxes(state.v)
        tag = "blocks" if blocks else "no_blocks"
        ratios[tag] = outflux / influx
        if out:
            write_fields(_path(out, f"{tag}.vtk"), task.grid, state.v, design, task.hyper)
        inv = invariant_report(state, system, task.grid)
        checks.append(_check(f"kkt_residuals_{tag}", inv["primal"], inv["primal_tol"], inv["ok"]))
    lo, hi = no_blocks_band
    checks.append(_check("ratio_without_blocks", ratios["no_blocks"], [lo, hi], lo <= ratios["no_blocks"] <= hi))
    checks.append(_check("ratio_with_blocks", ratios["blocks"], [1 - tol, 1 + tol], abs(ratios["blocks"] - 1) <= tol))
    checks.append(_check("runtime_s", time.perf_counter() - t0, time_limit, time.perf_counter() - t0 < time_limit))
    meta = {"resolution": resolution, "kf_max": kf_max, "lambda_max": lambda_max, "block_size": block_size,
            "patch_extent": 1 / 6, "ratios": ratios}
    return _verdict("block-divergence", checks, t0, out, meta)


def slanted_pipe_fields(resolution=20, **geom):
    """Solve the slanted pipe with every iso/aniso combination of Km and Kf.

    Returns ``(task, {("aniso", "iso"): v, ...}, inner_outlet_nodes)``. The
    isotropic Km is the identity; the isotropic Kf is ``kf(eps rho) I``, the
    impedance a wall cell applies across the boundary, now in every direction.
    """
    doc = slanted_pipe_doc(n=resolution, **geom)
    task = task_from_dict(doc)
    g = doc["metadata"]["geometry"]
    grid = task.grid
    theta = g["theta"]
    c, s = np.cos(theta), np.sin(theta)

    def sdist(p):
        return (p[:, 1] - 0.5) * c - (p[:, 0] - 0.5) * s

    sd = np.abs(sdist(grid.cell_centers()))
    pipe = sd < g["half_width"] + g["band"]
    wall = pipe & (sd >= g["half_width"])
    design = DesignField(pipe.astype(float), np.where(wall, 0.0, 1.0), np.full(grid.n_cells, theta + np.pi / 2))
    aniso = build_tensors(design, task.hyper)
    k_iso, _ = kf_interp(design.eps * design.rho, task.hyper)
    eye = np.broadcast_to(np.eye(2), aniso.Km.shape)
    fields = {}
    for km in ("iso", "aniso"):
        for kf in ("iso", "aniso"):
            mat = MaterialTensors(
                Km=aniso.Km if km == "aniso" else eye.copy(),
                Kf=aniso.Kf if kf == "aniso" else k_iso[:, None, None] * eye,
                lam=aniso.lam, n=aniso.n,
            )
            state, system = simulate(design, task, material=mat)
            fields[(km, kf)] = (state, system)
    out_nodes = task.outlet_nodes
    inner = out_nodes[np.abs(sdist(grid.node_positions()[out_nodes])) < g["half_width"] - 1e-9]
    return task, design, fields, inner


def slanted_pipe(out=None, resolution=20, aniso_tol=0.05, iso_min=0.2, time_limit=5.0, **geom):
    t0 = time.perf_counter()
    _mkdir(out)
    task, design, fields, inner = slanted_pipe_fields(resolution, **geom)
    speed_in = float(np.linalg.norm(task.patches[0].velocity))
    checks, profiles = [], {}
    for (km, kf), (state, system) in fields.items():
        vel = state.v.reshape(-1, 2)
        speed = np.linalg.norm(vel[inner], axis=1)
        dev = float(np.max(np.abs(speed - speed_in)) / speed_in)
        tag = f"Km_{km}_Kf_{kf}"
        profiles[tag] = speed.tolist()
        if km == kf == "aniso":
            checks.append(_check(f"deviation_{tag}", dev, aniso_tol, dev < aniso_tol))
        else:
            checks.append(_check(f"deviation_{tag}", dev, iso_min, dev > iso_min))
        if out:
            write_fields(_path(out, f"{tag}.vtk"), task.grid, state.v, design, task.hyper)
    elapsed = time.perf_counter() - t0
    checks.append(_check("runtime_s", elapsed, time_limit, elapsed < time_limit))
    meta = {"resolution": resolution, "outlet_profiles": profiles, "geometry": task.metadata["geometry"]}
    return _verdict("slanted-pipe", checks, t0, out, meta)


def amplifier_design(task, transition=1 / 32):
    """Tapered channel with a smooth fluidity ramp of fixed physical width.

    The channel half-width shrinks linearly from half the inlet width to half
    the outlet width. The ramp width does not depend on resolution, so the
    designs at different N describe the same continuous material field.
    """
    grid = task.grid
    p = grid.cell_centers()
    w_in = task.patches[0].extent[0] / 2
    w_out = task.patches[1].extent[0] / 2
    half = w_in + (w_out - w_in) * p[:, 0]
    dist = np.abs(p[:, 1] - 0.5) - half
    rho = np.clip(0.5 - dist / transition, 0.0, 1.0)
    return DesignField(rho, np.ones(grid.n_cells), np.zeros(grid.n_cells))


def refine_convergence(out=None, resolutions=(32, 64, 128), reference=256, block_size=8, time_limit=120.0):
    t0 = time.perf_counter()
    _mkdir(out)
    solutions = {}
    for n in tuple(resolutions) + (reference,):
        task = task_from_dict(amplifier_doc(n, block_size))
        design = amplifier_design(task)
        state, system = simulate(design, task)
        solutions[n] = (task, state.v)
        if out and n <= 128:
            write_fields(_path(out, f"amplifier_{n}.vtk"), task.grid, state.v, design, task.hyper, binary=True)
    ref_task, ref_v = solutions[reference]
    ref_grid = ref_task.grid
    errors = {}
    for n in resolutions:
        task, v = solutions[n]
        stride = reference // n
        coords = task.grid.node_coord_table * stride
        ref_nodes = coords @ np.asarray(ref_grid.node_strides)
        ref_vel = ref_v.reshape(-1, 2)[ref_nodes]
        diff = v.reshape(-1, 2) - ref_vel
        errors[n] = float(np.linalg.norm(diff) / np.linalg.norm(ref_vel))
    seq = [errors[n] for n in resolutions]
    mono = all(b < a for a, b in zip(seq, seq[1:]))
    elapsed = time.perf_counter() - t0
    checks = [
        _check("strictly_decreasing_error", seq, "decreasing", mono),
        _check("runtime_s", elapsed, time_limit, elapsed < time_limit),
    ]
    meta = {"resolutions": list(resolutions), "reference": reference, "relative_l2_error": errors,
            "transition_width": 1 / 32, "inlet_width": 0.5, "gain": 5 / 3}
    return _verdict("refine-convergence", checks, t0, out, meta)


def pipe_optimization_checks(task, result, lf_ratio=0.1, vol_tol=1e-6):
    """Criteria shared by every straight-pipe optimization run."""
    h = result.history
    best = h.best
    n = task.grid.n_cells
    d = result.design
    ratio = best.L_f / h.records[0].L_f
    connected = fluid_path_connected(d.rho > 0.5, task)
    return [
        _check("final_over_initial_L_f", ratio, lf_ratio, ratio <= lf_ratio),
        _check("g_iso_over_n", best.g_iso / n, vol_tol, best.g_iso <= vol_tol * n),
        _check("g_all_over_n", best.g_all / n, vol_tol, best.g_all <= vol_tol * n),
        _check("connected_fluid_path_rho", connected, "rho > 0.5", connected),
    ]


def _run_pipe(out, tag, doc, isotropic=False):
    task = task_from_dict(doc)
    result = optimize(task, isotropic=isotropic)
    if out:
        result.history.write_csv(_path(out, f"{tag}.csv"))
        state, _ = simulate(result.design, task)
        write_fields(_path(out, f"{tag}.vtk"), task.grid, state.v, result.design, task.hyper, result.history.weights)
    return task, result


def straight_pipe(out=None, resolution=60, v_max=0.6, iterations=300, block_size=8, time_limit=1800.0,
                  isotropic=False):
    t0 = time.perf_counter()
    _mkdir(out)
    doc = pipe_doc(resolution, v_max, block_size, iterations)
    task, result = _run_pipe(out, "pipe", doc, _parse_bool(isotropic))
    checks = pipe_optimization_checks(task, result)
    d = result.design
    iso_path = fluid_path_connected(d.eps * d.rho > 0.5, task)
    elapsed = time.perf_counter() - t0
    checks.append(_check("runtime_s", elapsed, time_limit, elapsed < time_limit))
    h = result.history
    meta = {
        "resolution": resolution, "v_max": v_max, "iterations": iterations, "block_size": block_size,
        "initial_L_f": h.records[0].L_f, "best_L_f": h.best.L_f, "best_iteration": h.best_index,
        # informational: isotropic-fluid threshold used for visualization
        "connected_path_eps_rho": iso_path,
        "anisotropic_fraction_of_fluid": float(np.mean(d.eps[d.rho > 0.5] < 0.5)) if np.any(d.rho > 0.5) else 0.0,
    }
    return _verdict("straight-pipe", checks, t0, out, meta)


def block_size(out=None, sizes=(4, 8, 16), resolution=60, v_max=0.6, iterations=300, spread_factor=2.0):
    t0 = time.perf_counter()
    _mkdir(out)
    finals, checks = {}, []
    for b in sizes:
        task, result = _run_pipe(out, f"block{b}", pipe_doc(resolution, v_max, b, iterations))
        for c in pipe_optimization_checks(task, result):
            c["name"] = f"block{b}_{c['name']}"
            checks.append(c)
        finals[b] = result.history.best.L_f
    vals = np.array(list(finals.values()))
    factor = float(vals.max() / vals.min()) if vals.min() > 0 else float("inf")
    checks.append(_check("final_L_f_max_over_min", factor, spread_factor, factor <= spread_factor))
    meta = {"final_L_f": {str(k): v for k, v in finals.items()}, "resolution": resolution, "iterations": iterations}
    return _verdict("block-size", checks, t0, out, meta)


def init_sensitivity(out=None, ks=(0.001, 0.01, 0.09), resolution=60, v_max=0.6, iterations=300, seed=0):
    t0 = time.perf_counter()
    _mkdir(out)
    finals, checks = {}, []
    for k in ks:
        doc = pipe_doc(resolution, v_max, 8, iterations, perturb=k, seed=seed)
        task, result = _run_pipe(out, f"perturb{k:g}", doc)
        for c in pipe_optimization_checks(task, result):
            c["name"] = f"k{k:g}_{c['name']}"
            checks.append(c)
        finals[f"{k:g}"] = result.history.best.L_f
    meta = {"final_L_f": finals, "seed": seed, "resolution": resolution, "iterations": iterations}
    return _verdict("init-sensitivity", checks, t0, out, meta)


def smoke_3d(out=None, resolution=8, iterations=5):
    t0 = time.perf_counter()
    _mkdir(out)
    task = task_from_dict(channel3d_doc(resolution, iterations=iterations))
    design = DesignField.uniform(task.grid.n_cells, 3)
    state, system = simulate(design, task)
    inv = invariant_report(state, system, task.grid)
    influx, outflux = task.fluxes(state.v)
    checks = [
        _check("primal_residual", inv["primal"], inv["primal_tol"], inv["primal"] <= inv["primal_tol"]),
        _check("constraint_residual", inv["constraint"], inv["constraint_tol"],
               inv["constraint"] <= inv["constraint_tol"]),
        _check("block_flux", inv["block_flux"], 1e-8, inv["block_flux_ok"]),
        _check("dirichlet_exact", inv["dirichlet"], 0.0, inv["dirichlet"] == 0.0),
    ]
    if out:
        write_fields(_path(out, "channel3d.vtk"), task.grid, state.v, design, task.hyper, binary=True)
    result = optimize(task, iterations=iterations)
    finite = bool(np.all(np.isfinite([r.total for r in result.history.records])))
    checks.append(_check("optimization_iterations", len(result.history.records) - 1, iterations,
                         finite and len(result.history.records) == iterations + 1))
    if out:
        result.history.write_csv(_path(out, "channel3d.csv"))
    meta = {"resolution": resolution, "influx": influx, "outflux": outflux}
    return _verdict("smoke-3d", checks, t0, out, meta)


EXPERIMENTS = {
    "block-divergence": block_divergence,
    "slanted-pipe": slanted_pipe,
    "refine-convergence": refine_convergence,
    "straight-pipe": straight_pipe,
    "block-size": block_size,
    "init-sensitivity": init_sensitivity,
    "smoke-3d": smoke_3d,
}


def run_experiment(name, out=None, **overrides):
    try:
        fn = EXPERIMENTS[name]
    except KeyError:
        raise ConfigurationError(f"unknown experiment '{name}'", [f"known: {', '.join(sorted(EXPERIMENTS))}"])
    try:
        return fn(out=out, **overrides)
    except TypeError as exc:
        raise ConfigurationError(f"bad overrides for '{name}'", [str(exc)]) from exc
