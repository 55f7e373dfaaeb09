"""Adjoint gradients of the design objective with respect to (rho, eps, alpha).

For a loss ``L(v)`` of the constrained minimizer ``v`` of ``v^T K v - b^T v``
the adjoint pair solves the same symmetric KKT matrix,

    [2K  C^T] [w]   [dL/dv]
    [C    0 ] [r] = [  0  ],

and ``dL/dtheta = -2 w_full^T (dK_full/dtheta) v_full`` where ``w_full`` is
zero on Dirichlet DOFs. Because ``K_full`` is a sum of element matrices that
are linear in (Km, lam, Kf), the contraction is done per cell and chained
through the material partials.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError
from .material import tensor_partials
from .objective import evaluate


@dataclass
class GradientBundle:
    d_rho: np.ndarray
    d_eps: np.ndarray
    d_alpha: np.ndarray  # (N, d-1)
    d_iso_rho: np.ndarray
    d_iso_eps: np.ndarray
    d_all_rho: np.ndarray
    parts: dict = field(default_factory=dict)

    def as_vector(self):
        return np.concatenate([self.d_rho, self.d_eps, self.d_alpha.ravel(order="F")])


def adjoint_solve(system, factorization, dL_dv_free):
    if factorization.system is not system:
        raise DomainError("factorization does not belong to this system")
    return factorization.solve(dL_dv_free)


def contract(grid, w, v, partials, mu):
    """Per-cell ``w^T (dK_full/dtheta_c) v`` as an (N, d+1) array."""
    A, beta, F = kernels.material_sensitivity(grid.cell_dof_table, w, v, mu, grid.h)
    return (
        np.einsum("ckl,cpkl->cp", A, partials.dKm)
        + beta[:, None] * partials.dlam
        + np.einsum("ckl,cpkl->cp", F, partials.dKf)
    )


def solution_gradient(state, system, dL_dv_full, partials):
    """Gradient of a loss that depends on theta only through ``v``."""
    w_free, _ = adjoint_solve(system, state.factorization, dL_dv_full[system.free])
    w = np.zeros(system.grid.n_dofs)
    w[system.free] = w_free
    return -2.0 * contract(system.grid, w, state.v, partials, system.mu)


def compliance_gradient(comp, partials):
    """Gradient of the augmented-solve energy, via its own adjoint."""
    state, system = comp.state, comp.system
    explicit = contract(system.grid, state.v, state.v, partials, system.mu)
    if system.n_free == 0:
        return explicit
    # dE/dv_free = 2 K v - b; nonzero only through the block multipliers
    g = 2.0 * (system.K @ state.v_free) - system.b
    w_free, _ = adjoint_solve(system, state.factorization, g)
    w = np.zeros(system.grid.n_dofs)
    w[system.free] = w_free
    return explicit - 2.0 * contract(system.grid, w, state.v, partials, system.mu)


def gradient_from_report(design, task, report):
    """Assemble the full gradient from an :class:`ObjectiveReport`."""
    weights = report.weights
    partials = tensor_partials(design, task.hyper)
    state, system = report.main
    g = solution_gradient(state, system, report.dLf_dv, partials)
    parts = {"L_f": g.copy()}
    if report.compliance is not None:
        gc = compliance_gradient(report.compliance, partials)
        parts["L_c"] = gc
        g = g + weights.w_c * gc
    d = design.dim
    g[:, 2:] += weights.w_d * report.dLd_dalpha
    g[:, 1] += weights.w_a * report.dLa_deps
    g[:, 0] += weights.w_a * report.dLa_drho
    vol = report.volume
    return GradientBundle(
        d_rho=g[:, 0].copy(), d_eps=g[:, 1].copy(), d_alpha=g[:, 2 : 2 + d - 1].copy(),
        d_iso_rho=vol.d_iso_rho, d_iso_eps=vol.d_iso_eps, d_all_rho=vol.d_all_rho, parts=parts,
    )


def total_gradient(design, task, weights, frozen):
    """Evaluate the objective and its full gradient; returns (report, bundle)."""
    report = evaluate(design, task, weights, frozen, compliance=True)
    return report, gradient_from_report(design, task, report)


# -- finite-difference oracle ------------------------------------------------------


@dataclass
class FDReport:
    components: list  # (param, cell)
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    abs_error: np.ndarray
    passed: np.ndarray
    rtol: float
    atol: float

    @property
    def ok(self):
        return bool(np.all(self.passed))

    @property
    def max_rel_error(self):
        return float(np.max(np.where(self.abs_error <= self.atol, 0.0, self.rel_error), initial=0.0))


PARAM_NAMES = ("rho", "eps", "alpha")


def _get(design, param, cell):
    if param == "rho":
        return design.rho[cell]
    if param == "eps":
        return design.eps[cell]
    return design.alpha[cell, int(param[5:] or 0)]


def _set(design, param, cell, value):
    if param == "rho":
        design.rho[cell] = value
    elif param == "eps":
        design.eps[cell] = value
    else:
        design.alpha[cell, int(param[5:] or 0)] = value


def _analytic(bundle, param, cell):
    if param == "rho":
        return bundle.d_rho[cell]
    if param == "eps":
        return bundle.d_eps[cell]
    return bundle.d_alpha[cell, int(param[5:] or 0)]


def fd_check(design, task, components, step=1e-5, weights=None, frozen=None, rtol=1e-4, atol=1e-8,
             gradient=None, objective=None):
    """Compare the adjoint gradient with central differences of the objective.

    ``components`` is a list of ``(param, cell)`` with param in ``rho``,
    ``eps``, ``alpha`` (or ``alpha0``/``alpha1`` in 3D). Frozen neighborhood
    statistics are held fixed. Components within ``step`` of a bound are
    moved inward first. ``gradient``/``objective`` override the analytic
    gradient callable and objective callable (used for negative controls).
    """
    from .objective import freeze

    weights = task.weights if weights is None else weights
    design = design.copy()
    for param, cell in components:
        if param in ("rho", "eps"):
            hi = design.eps_upper[cell] if param == "eps" else 1.0
            _set(design, param, cell, float(np.clip(_get(design, param, cell), 2 * step, hi - 2 * step)))
    frozen = freeze(design, task.grid, weights) if frozen is None else frozen
    if gradient is None:
        _, bundle = total_gradient(design, task, weights, frozen)
    else:
        bundle = gradient(design, task, weights, frozen)
    if objective is None:
        def objective(dz):
            return evaluate(dz, task, weights, frozen).total
    ana, num = [], []
    for param, cell in components:
        x0 = _get(design, param, cell)
        dp = design.copy()
        _set(dp, param, cell, x0 + step)
        fp = objective(dp)
        _set(dp, param, cell, x0 - step)
        fm = objective(dp)
        num.append((fp - fm) / (2 * step))
        ana.append(_analytic(bundle, param, cell))
    ana, num = np.array(ana), np.array(num)
    abs_err = np.abs(ana - num)
    rel = abs_err / np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-300)
    passed = (abs_err <= atol) | (rel < rtol)
    return FDReport(list(components), ana, num, rel, abs_err, passed, rtol, atol)


def sample_components(design, n_per_param, rng):
    d = design.dim
    comps = []
    for param in ("rho", "eps"):
        cells = rng.choice(design.n_cells, size=min(n_per_param, design.n_cells), replace=False)
        comps += [(param, int(c)) for c in cells]
    for k in range(d - 1):
        cells = rng.choice(design.n_cells, size=min(n_per_param, design.n_cells), replace=False)
        name = "alpha" if d == 2 else f"alpha{k}"
        comps += [(name, int(c)) for c in cells]
    return comps
