"""Numba kernels against their numpy twins, then one full design evaluation.

    python benchmarks/bench_kernels.py [--n 128] [--n3 24] [--repeat 5]

The kernel table times each pair on identical inputs after a warm-up call (so
JIT compilation is excluded) and checks they agree. The pipeline section runs
one forward solve plus gradient in a subprocess per setting of
ANISOFLOW_DISABLE_NUMBA, which shows how much of a step the kernels account
for next to the sparse factorization.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from anisoflow import kernels
from anisoflow.grid import GridSpec
from anisoflow.material import DesignField, MaterialHyperparams, build_tensors


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(dim, n, rng):
    grid = GridSpec(dim, (n,) * dim)
    N = grid.n_cells
    design = DesignField(rng.uniform(0, 1, N), rng.uniform(0, 1, N), rng.uniform(-np.pi, np.pi, (N, dim - 1)))
    mat = build_tensors(design, MaterialHyperparams())
    w, v = rng.standard_normal(grid.n_dofs), rng.standard_normal(grid.n_dofs)
    rho = grid.cell_array(design.rho)
    normals = np.stack([grid.cell_array(mat.n[:, k]) for k in range(dim)], axis=-1)
    member = grid.cell_array(design.eps < 0.5)
    return {
        "element_values": (kernels.element_values_numba, kernels.element_values_numpy,
                           (mat.Km, mat.lam, mat.Kf, 1.0, grid.h)),
        "material_sensitivity": (kernels.material_sensitivity_numba, kernels.material_sensitivity_numpy,
                                 (grid.cell_dof_table, w, v, 1.0, grid.h)),
        "neighborhood_extrema": (kernels.neighborhood_extrema_numba, kernels.neighborhood_extrema_numpy, (rho,)),
        "neighbor_direction": (kernels.neighbor_direction_numba, kernels.neighbor_direction_numpy, (normals, member)),
    }


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0))


_PIPELINE = """
import json, time, sys
import numpy as np
from anisoflow._accel import use_numba
from anisoflow.experiments import pipe_doc
from anisoflow.gradients import total_gradient
from anisoflow.objective import freeze
from anisoflow.task import task_from_dict

task = task_from_dict(pipe_doc(n=int(sys.argv[1])))
rng = np.random.default_rng(0)
design = task.initial_design()
design.alpha = rng.uniform(-np.pi, np.pi, design.alpha.shape)
design.eps = rng.uniform(0, 1, design.eps.shape)
frozen = freeze(design, task.grid, task.weights)
total_gradient(design, task, task.weights, frozen)
t0 = time.perf_counter()
total_gradient(design, task, task.weights, frozen)
print(json.dumps({"numba": use_numba(), "seconds": time.perf_counter() - t0}))
"""


def pipeline(n, disable):
    env = dict(os.environ, ANISOFLOW_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", _PIPELINE, str(n)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128, help="2D cells per axis")
    ap.add_argument("--n3", type=int, default=24, help="3D cells per axis")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-pipeline", action="store_true")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<24}{'dim':>4}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}{'max diff':>12}")
    for dim, n in ((2, args.n), (3, args.n3)):
        for name, (fast, slow, inputs) in kernel_cases(dim, n, rng).items():
            t_nb = best_of(lambda: fast(*inputs), args.repeat)
            t_np = best_of(lambda: slow(*inputs), args.repeat)
            diff = max_diff(fast(*inputs), slow(*inputs))
            rows.append((name, dim, t_nb, t_np, diff))
            print(f"{name:<24}{dim:>4}{1e3 * t_nb:>12.2f}{1e3 * t_np:>12.2f}{t_np / t_nb:>10.1f}{diff:>12.1e}")

    if not args.no_pipeline:
        print(f"\nevaluate + gradient, {args.n}x{args.n} pipe")
        for disable in (False, True):
            r = pipeline(args.n, disable)
            print(f"  {'numba' if r['numba'] else 'numpy':<6} {r['seconds']:.3f} s")
    return rows


if __name__ == "__main__":
    main()
