"""Design objective ``L_f + w_c L_c + w_d L_d + w_a L_a`` and volume constraints.

Neighborhood quantities (local fluidity extrema, the anisotropic-cell set and
the neighbors' mean direction) are computed once per optimizer iteration by
:func:`freeze` and held fixed while the objective and its gradient are
evaluated.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError
from .material import build_tensors, normal_from_alpha

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObjectiveWeights:
    w_c: float = 1e-2
    w_d: float = 1e-2
    w_a: float = 1e-2
    eps0: float = 0.5
    rho0: float = 0.5
    v_max: float = 0.5
    v_b: float = 0.1
    # scale each regularizer by L_f / R at the first iteration
    normalize: bool = True
    face_weighted: bool = False

    def __post_init__(self):
        problems = []
        for name in ("w_c", "w_d", "w_a", "v_b"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be nonnegative")
        if not 0 < self.v_max <= 1:
            problems.append("v_max must lie in (0, 1]")
        for name in ("eps0", "rho0"):
            if not 0 < getattr(self, name) < 1:
                problems.append(f"{name} must lie in (0, 1)")
        if problems:
            raise DomainError("; ".join(problems))

    def with_(self, **kw):
        return replace(self, **kw)

    def normalized(self, L_f, L_c, L_d, L_a, n_cells):
        """Weights rescaled so each regularizer starts at ``w * L_f``.

        A regularizer that is zero at the start is scaled by ``L_f / n_cells``
        instead (its per-cell maximum is of order one).
        """
        if not self.normalize:
            return self

        def scale(r):
            return L_f / r if r > 1e-300 else L_f / n_cells

        return replace(
            self, w_c=self.w_c * scale(L_c), w_d=self.w_d * scale(L_d), w_a=self.w_a * scale(L_a), normalize=False
        )


@dataclass
class OutletTargets:
    dofs: np.ndarray
    values: np.ndarray
    weights: np.ndarray = None


def functional_loss(v, targets, dirichlet=None):
    """Sum of squared differences at outlet DOFs and its gradient in ``v``."""
    if dirichlet is not None and len(np.intersect1d(targets.dofs, dirichlet.dofs)):
        raise ConfigurationError("outlet target placed on a Dirichlet node")
    diff = v[targets.dofs] - targets.values
    w = np.ones_like(diff) if targets.weights is None else targets.weights
    grad = np.zeros_like(v)
    grad[targets.dofs] = 2.0 * w * diff
    return float(np.sum(w * diff * diff)), grad


@dataclass
class ComplianceResult:
    value: float
    state: object
    system: object


def compliance_loss(design, task, material=None):
    """Energy of the solve with outlet targets imposed as extra Dirichlet data."""
    from .solver import simulate

    state, system = simulate(design, task, extra_dirichlet=task.outlet_dirichlet(), material=material)
    return ComplianceResult(value=system.energy(state.v_free), state=state, system=system)


@dataclass
class FrozenStats:
    rho_hi: np.ndarray
    rho_lo: np.ndarray
    member: np.ndarray  # anisotropic-cell set A
    nbr_dir: np.ndarray  # (N, d) unit mean direction, zero where undefined

    @property
    def spread(self):
        return self.rho_hi - self.rho_lo


def freeze(design, grid, weights):
    rho = grid.cell_array(design.rho)
    hi, lo = kernels.neighborhood_extrema(rho)
    member = (design.eps < weights.eps0) & (design.rho > weights.rho0)
    n, _ = normal_from_alpha(design.alpha, grid.dim)
    normals = np.stack([grid.cell_array(n[:, k]) for k in range(grid.dim)], axis=-1)
    nbr = kernels.neighbor_direction(normals, grid.cell_array(member))
    nbr = np.stack([nbr[..., k].ravel(order="F") for k in range(grid.dim)], axis=1)
    return FrozenStats(rho_hi=hi.ravel(order="F"), rho_lo=lo.ravel(order="F"), member=member, nbr_dir=nbr)


def directional_reg(design, frozen):
    """Sum over anisotropic cells of ``1 - |n_c . m_c|`` against the frozen mean ``m_c``.

    The absolute value makes each term blind to the sign of ``n_c``, like the
    material tensors themselves.
    """
    n, dn = normal_from_alpha(design.alpha, design.dim)
    valid = frozen.member & (np.linalg.norm(frozen.nbr_dir, axis=1) > 0)
    if np.any(frozen.member & ~valid):
        log.debug("%d anisotropic cells without a neighborhood direction", int(np.sum(frozen.member & ~valid)))
    cos = np.sum(n * frozen.nbr_dir, axis=1)
    value = float(np.sum(np.where(valid, 1.0 - np.minimum(np.abs(cos), 1.0), 0.0)))
    grad = -(np.sign(cos) * valid)[:, None] * np.einsum("ckd,cd->ck", dn, frozen.nbr_dir)
    return value, grad


def anisotropic_reg(design, frozen):
    """``sum eps rho spread`` with frozen spread; returns (value, d_eps, d_rho)."""
    s = frozen.spread
    value = float(np.sum(design.eps * design.rho * s))
    return value, design.rho * s, design.eps * s


@dataclass
class VolumeReport:
    V_iso: float
    V_all: float
    g_iso: float
    g_all: float
    d_iso_rho: np.ndarray
    d_iso_eps: np.ndarray
    d_all_rho: np.ndarray


def volume_constraints(design, weights):
    n = design.n_cells
    V_iso = float(np.sum(design.eps * design.rho))
    V_all = float(np.sum(design.rho))
    return VolumeReport(
        V_iso=V_iso,
        V_all=V_all,
        g_iso=V_iso - weights.v_max * n,
        g_all=V_all - (weights.v_b + weights.v_max) * n,
        d_iso_rho=design.eps.copy(),
        d_iso_eps=design.rho.copy(),
        d_all_rho=np.ones(n),
    )


@dataclass
class ObjectiveReport:
    L_f: float
    L_c: float
    L_d: float
    L_a: float
    total: float
    V_iso: float
    V_all: float
    g_iso: float
    g_all: float
    dLf_dv: np.ndarray
    dLd_dalpha: np.ndarray
    dLa_deps: np.ndarray
    dLa_drho: np.ndarray
    volume: VolumeReport = None
    main: tuple = None  # (FlowState, StokesSystem)
    compliance: ComplianceResult = None
    weights: ObjectiveWeights = None
    extra: dict = field(default_factory=dict)


def combine(weights, L_f, L_c, L_d, L_a):
    return L_f + weights.w_c * L_c + weights.w_d * L_d + weights.w_a * L_a


def evaluate(design, task, weights, frozen, compliance=True):
    """All objective terms at ``design`` (solves the forward problems)."""
    from .solver import simulate

    design.validate(task.grid.n_cells)
    material = build_tensors(design, task.hyper, validate=False)
    state, system = simulate(design, task, material=material)
    L_f, dLf_dv = functional_loss(state.v, task.outlet_targets(), system.dirichlet)
    comp = compliance_loss(design, task, material=material) if compliance else None
    L_c = comp.value if comp is not None else 0.0
    L_d, dLd = directional_reg(design, frozen)
    L_a, dLa_e, dLa_r = anisotropic_reg(design, frozen)
    vol = volume_constraints(design, weights)
    return ObjectiveReport(
        L_f=L_f, L_c=L_c, L_d=L_d, L_a=L_a, total=combine(weights, L_f, L_c, L_d, L_a),
        V_iso=vol.V_iso, V_all=vol.V_all, g_iso=vol.g_iso, g_all=vol.g_all,
        dLf_dv=dLf_dv, dLd_dalpha=dLd, dLa_deps=dLa_e, dLa_drho=dLa_r, volume=vol,
        main=(state, system), compliance=comp, weights=weights, extra={"material": material},
    )
