"""Design loop: frozen statistics, forward and adjoint solves, MMA steps.

Each iteration evaluates the current design, records it, then takes one MMA
step on the stacked vector ``(rho, eps, alpha)`` subject to the two volume
constraints. The isotropy upper bound ``1 - (local rho spread)`` is refreshed
from the frozen statistics at the start of every iteration.
"""

import csv
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import SolverError
from .gradients import gradient_from_report, total_gradient
from .mma import MMA
from .objective import combine, freeze

log = logging.getLogger(__name__)

# rho and eps live in [0, 1]; angles are re-wrapped each iteration so the box
# never binds: period pi for the 2D angle and the 3D polar angle, 2 pi for azimuth
_ANGLE_PERIODS = {2: (np.pi,), 3: (np.pi, 2 * np.pi)}


def dynamic_eps_bound(design, grid, frozen=None):
    """Per-cell upper bound on eps: one minus the local fluidity spread."""
    if frozen is None:
        from . import kernels

        hi, lo = kernels.neighborhood_extrema(grid.cell_array(design.rho))
        spread = (hi - lo).ravel(order="F")
    else:
        spread = frozen.spread
    return np.clip(1.0 - spread, 0.0, 1.0)


@dataclass
class IterationRecord:
    iteration: int
    L_f: float
    L_c: float
    L_d: float
    L_a: float
    total: float
    V_iso: float
    V_all: float
    g_iso: float
    g_all: float
    max_change: float = 0.0

    def feasible(self, n_cells, tol=1e-6):
        return self.g_iso <= tol * n_cells and self.g_all <= tol * n_cells


CSV_COLUMNS = [f.name for f in fields(IterationRecord)]


@dataclass
class OptimizationHistory:
    n_cells: int
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    weights: object = None  # weights after the first-iteration normalization
    best_index: int = None

    def append(self, record, design):
        self.records.append(record)
        self.snapshots.append(design.copy())
        self.best_index = self._select_best()

    def _select_best(self):
        ok = [i for i, r in enumerate(self.records) if r.feasible(self.n_cells)]
        if ok:
            return min(ok, key=lambda i: self.records[i].L_f)
        # nothing feasible yet: least violation, then L_f
        return min(
            range(len(self.records)),
            key=lambda i: (max(self.records[i].g_iso, self.records[i].g_all, 0.0), self.records[i].L_f),
        )

    @property
    def best(self):
        return None if self.best_index is None else self.records[self.best_index]

    @property
    def best_design(self):
        return None if self.best_index is None else self.snapshots[self.best_index]

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path):
        write_history_csv(self.records, path)


def write_history_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            row = asdict(r)
            # repr keeps the shortest string that round-trips a double
            w.writerow([row["iteration"]] + [repr(float(row[c])) for c in CSV_COLUMNS[1:]])


def read_history_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        IterationRecord(iteration=int(r["iteration"]), **{c: float(r[c]) for c in CSV_COLUMNS[1:]}) for r in rows
    ]


class OptimizationAborted(SolverError):
    """A solve failed mid-run; ``history`` holds everything recorded so far."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class OptimizationResult:
    design: object
    history: OptimizationHistory
    final_design: object


def wrap_angles(alpha, dim):
    """Shift each angle by whole periods into ``[-period/2, period/2)``."""
    periods = np.asarray(_ANGLE_PERIODS[dim])
    return alpha - periods * np.floor(alpha / periods + 0.5)


def _record(k, report, change):
    return IterationRecord(
        iteration=k, L_f=report.L_f, L_c=report.L_c, L_d=report.L_d, L_a=report.L_a, total=report.total,
        V_iso=report.V_iso, V_all=report.V_all, g_iso=report.g_iso, g_all=report.g_all, max_change=change,
    )


def replay(history, task, index):
    """Re-evaluate a recorded snapshot; returns the fresh ObjectiveReport."""
    from .objective import evaluate

    design = history.snapshots[index]
    frozen = freeze(design, task.grid, history.weights)
    return evaluate(design, task, history.weights, frozen)


def optimize(task, iterations=None, isotropic=None, perturb=None, seed=None, on_record=None, mma_options=None):
    """Run the design loop and return an :class:`OptimizationResult`.

    Arguments left as ``None`` come from ``task.optimizer``. ``on_record`` is
    called with ``(record, design)`` after every evaluation. The returned
    design is the feasible iterate with the smallest ``L_f``.
    """
    opts = task.optimizer
    iterations = opts.iterations if iterations is None else int(iterations)
    isotropic = opts.isotropic if isotropic is None else bool(isotropic)
    perturb = opts.perturb if perturb is None else float(perturb)
    seed = opts.seed if seed is None else int(seed)
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")

    grid = task.grid
    n, d = grid.n_cells, grid.dim
    weights = task.weights
    if isotropic:
        weights = weights.with_(w_d=0.0, w_a=0.0)

    design = task.initial_design()
    if isotropic:
        design.eps[:] = 1.0
    if perturb > 0:
        rng = np.random.default_rng(seed)
        design.rho = np.clip(design.rho + rng.uniform(-perturb, perturb, n), 0.0, 1.0)
        if not isotropic:
            design.alpha = design.alpha + rng.uniform(-perturb, perturb, design.alpha.shape)
    design.alpha = wrap_angles(design.alpha, d)

    n_alpha = n * (d - 1)
    optimizer = MMA(2 * n + n_alpha, 2, **(mma_options or {}))
    periods = np.repeat(np.asarray(_ANGLE_PERIODS[d]), n)
    history = OptimizationHistory(n_cells=n)
    f_scale = None
    change = 0.0

    for k in range(iterations + 1):
        frozen = freeze(design, grid, weights)
        if isotropic:
            design.eps_upper = np.ones(n)
        else:
            design.eps_upper = dynamic_eps_bound(design, grid, frozen)
            design.eps = np.minimum(design.eps, design.eps_upper)
        try:
            report, bundle = total_gradient(design, task, weights, frozen)
        except SolverError as exc:
            raise OptimizationAborted(f"iteration {k}: {exc}", history) from exc
        if k == 0:
            weights = weights.normalized(report.L_f, report.L_c, report.L_d, report.L_a, n)
            report.weights = weights
            report.total = combine(weights, report.L_f, report.L_c, report.L_d, report.L_a)
            bundle = gradient_from_report(design, task, report)
            history.weights = weights
            f_scale = 1.0 / max(abs(report.total), 1e-300)

        record = _record(k, report, change)
        history.append(record, design)
        if on_record is not None:
            on_record(record, design)
        log.info(
            "iter %d  L_f %.6g  total %.6g  V_iso %.4f  V_all %.4f",
            k, record.L_f, record.total, record.V_iso / n, record.V_all / n,
        )
        if k == iterations:
            break

        x = design.to_vector()
        df0 = f_scale * bundle.as_vector()
        g = np.array([report.g_iso, report.g_all]) / n
        dg = np.zeros((2, x.size))
        dg[0, :n] = bundle.d_iso_rho / n
        dg[0, n : 2 * n] = bundle.d_iso_eps / n
        dg[1, :n] = bundle.d_all_rho / n
        lb = np.concatenate([np.zeros(n), np.zeros(n), -periods])
        ub = np.concatenate([np.ones(n), design.eps_upper, periods])
        if isotropic:
            lb[n : 2 * n] = ub[n : 2 * n] = 1.0
            lb[2 * n :] = ub[2 * n :] = x[2 * n :]
        x_new = optimizer.step(x, df0, g, dg, lb, ub)
        change = float(np.max(np.abs(x_new - x))) if x.size else 0.0

        new = type(design).from_vector(x_new, n, d, design.eps_upper)
        wrapped = wrap_angles(new.alpha, d)
        delta = (wrapped - new.alpha).ravel(order="F")
        if np.any(delta != 0):
            mask = np.zeros(x.size, bool)
            mask[2 * n :] = delta != 0
            full = np.zeros(x.size)
            full[2 * n :] = delta
            optimizer.shift(mask, full)
            new.alpha = wrapped
        design = new

    return OptimizationResult(design=history.best_design.copy(), history=history, final_design=design)
