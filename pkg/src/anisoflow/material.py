"""Per-cell design variables and the anisotropic material tensors they induce.

A cell is described by fluidity ``rho``, isotropy ``eps`` and orientation
angles ``alpha``. From these we build

    Km  = I - (1 - eps) rho n n^T
    Kf  = kf(rho) I + (kf(eps rho) - kf(rho)) n n^T
    lam = lam_min + (1 - (1 - eps) rho)^p lam_max

with ``kf(r) = kf_max + (kf_min - kf_max) r (1 + q) / (r + q)``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class MaterialHyperparams:
    kf_min: float = 2.5e-4
    kf_max: float = 1e5
    q: float = 0.1
    lambda_min: float = 0.1
    lambda_max: float = 1e3
    p: float = 12.0
    mu: float = 1.0

    def __post_init__(self):
        problems = []
        if not self.kf_min < self.kf_max:
            problems.append(f"kf_min ({self.kf_min}) must be below kf_max ({self.kf_max})")
        if self.kf_min < 0:
            problems.append("kf_min must be nonnegative")
        for name in ("lambda_min", "lambda_max", "mu", "q", "p"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if problems:
            raise DomainError("; ".join(problems))

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class DesignField:
    """Decision variables, one row per cell.

    ``alpha`` has shape (n_cells, dim - 1): one angle in 2D, (polar, azimuth)
    in 3D.
    """

    rho: np.ndarray
    eps: np.ndarray
    alpha: np.ndarray
    eps_upper: np.ndarray = None

    def __post_init__(self):
        self.rho = np.array(self.rho, dtype=float)
        self.eps = np.array(self.eps, dtype=float)
        alpha = np.array(self.alpha, dtype=float)
        if alpha.ndim == 1:
            alpha = alpha[:, None]
        self.alpha = alpha
        if self.eps_upper is None:
            self.eps_upper = np.ones_like(self.rho)
        else:
            self.eps_upper = np.array(self.eps_upper, dtype=float)

    @classmethod
    def uniform(cls, n_cells, dim, rho=1.0, eps=1.0, alpha=0.0):
        return cls(
            rho=np.full(n_cells, float(rho)),
            eps=np.full(n_cells, float(eps)),
            alpha=np.full((n_cells, dim - 1), float(alpha)),
        )

    @property
    def n_cells(self):
        return self.rho.shape[0]

    @property
    def dim(self):
        return self.alpha.shape[1] + 1

    def copy(self):
        return DesignField(self.rho.copy(), self.eps.copy(), self.alpha.copy(), self.eps_upper.copy())

    def validate(self, n_cells=None, tol=1e-12):
        n = self.n_cells
        problems = []
        if n_cells is not None and n != n_cells:
            problems.append(f"design has {n} cells, grid has {n_cells}")
        for name in ("eps", "eps_upper"):
            if getattr(self, name).shape != (n,):
                problems.append(f"{name} has shape {getattr(self, name).shape}, expected ({n},)")
        if self.alpha.shape[0] != n:
            problems.append(f"alpha has {self.alpha.shape[0]} rows, expected {n}")
        if problems:
            raise DomainError("; ".join(problems))
        arrays = (self.rho, self.eps, self.alpha, self.eps_upper)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            problems.append("non-finite design values")
        if np.any(self.rho < -tol) or np.any(self.rho > 1 + tol):
            problems.append("rho outside [0, 1]")
        if np.any(self.eps < -tol) or np.any(self.eps > self.eps_upper + tol):
            problems.append("eps outside [0, eps_upper]")
        if np.any(self.eps_upper < -tol) or np.any(self.eps_upper > 1 + tol):
            problems.append("eps_upper outside [0, 1]")
        if problems:
            raise DomainError("; ".join(problems))

    # Flat (rho, eps, alpha...) vector used by the optimizer.
    def to_vector(self):
        return np.concatenate([self.rho, self.eps, self.alpha.ravel(order="F")])

    @classmethod
    def from_vector(cls, x, n_cells, dim, eps_upper=None):
        rho = x[:n_cells]
        eps = x[n_cells : 2 * n_cells]
        alpha = x[2 * n_cells :].reshape((n_cells, dim - 1), order="F")
        return cls(rho, eps, alpha, eps_upper)


@dataclass
class MaterialTensors:
    Km: np.ndarray  # (n_cells, d, d)
    Kf: np.ndarray  # (n_cells, d, d)
    lam: np.ndarray  # (n_cells,)
    n: np.ndarray = field(default=None)  # (n_cells, d)

    @property
    def dim(self):
        return self.Km.shape[1]


def normal_from_alpha(alpha, dim):
    """Unit normals and their Jacobian with respect to the angles.

    Returns ``(n, dn)`` with ``n`` of shape (N, d) and ``dn`` of shape
    (N, d-1, d), ``dn[:, k]`` being the derivative with respect to angle k.
    In 3D ``alpha = (phi, psi)`` and ``n = (sin phi cos psi, sin phi sin psi, cos phi)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 1:
        alpha = alpha[:, None] if dim == 2 else alpha[None, :]
    if dim == 2:
        a = alpha[:, 0]
        c, s = np.cos(a), np.sin(a)
        n = np.stack([c, s], axis=1)
        dn = np.stack([-s, c], axis=1)[:, None, :]
        return n, dn
    if dim == 3:
        phi, psi = alpha[:, 0], alpha[:, 1]
        sp, cp, ss, cs = np.sin(phi), np.cos(phi), np.sin(psi), np.cos(psi)
        n = np.stack([sp * cs, sp * ss, cp], axis=1)
        dphi = np.stack([cp * cs, cp * ss, -sp], axis=1)
        dpsi = np.stack([-sp * ss, sp * cs, np.zeros_like(sp)], axis=1)
        return n, np.stack([dphi, dpsi], axis=1)
    raise DomainError(f"dim must be 2 or 3, got {dim}")


def kf_interp(rho, hyper):
    """Impedance ``kf(rho)`` and its derivative."""
    rho = np.asarray(rho, dtype=float)
    q = hyper.q
    span = hyper.kf_min - hyper.kf_max
    kf = hyper.kf_max + span * rho * (1 + q) / (rho + q)
    dkf = span * (1 + q) * q / (rho + q) ** 2
    return kf, dkf


def build_tensors(design, hyper, validate=True):
    if validate:
        design.validate()
    d = design.dim
    n, _ = normal_from_alpha(design.alpha, d)
    nn = n[:, :, None] * n[:, None, :]
    eye = np.eye(d)[None]
    rho, eps = design.rho, design.eps
    s = (1 - eps) * rho
    Km = eye - s[:, None, None] * nn
    k_rho, _ = kf_interp(rho, hyper)
    k_er, _ = kf_interp(eps * rho, hyper)
    Kf = k_rho[:, None, None] * eye + (k_er - k_rho)[:, None, None] * nn
    lam = hyper.lambda_min + (1 - s) ** hyper.p * hyper.lambda_max
    return MaterialTensors(Km=Km, Kf=Kf, lam=lam, n=n)


@dataclass
class TensorPartials:
    """Derivatives with respect to the parameter axis ``(rho, eps, alpha_0, ...)``.

    ``dKm`` and ``dKf`` have shape (N, P, d, d) and ``dlam`` (N, P) with
    ``P = d + 1``; ``dlam`` is zero along the angle axes.
    """

    dKm: np.ndarray
    dKf: np.ndarray
    dlam: np.ndarray


def tensor_partials(design, hyper, cell=None):
    d = design.dim
    rho, eps, alpha = design.rho, design.eps, design.alpha
    if cell is not None:
        rho, eps, alpha = rho[[cell]], eps[[cell]], alpha[[cell]]
    N = rho.shape[0]
    n, dn = normal_from_alpha(alpha, d)
    nn = n[:, :, None] * n[:, None, :]
    # d(nn^T)/d alpha_k = dn_k n^T + n dn_k^T
    dnn = dn[:, :, :, None] * n[:, None, None, :] + n[:, None, :, None] * dn[:, :, None, :]
    eye = np.eye(d)
    s = 1 - (1 - eps) * rho

    dKm = np.empty((N, d + 1, d, d))
    dKm[:, 0] = -(1 - eps)[:, None, None] * nn
    dKm[:, 1] = rho[:, None, None] * nn
    dKm[:, 2:] = -((1 - eps) * rho)[:, None, None, None] * dnn

    k_rho, dk_rho = kf_interp(rho, hyper)
    k_er, dk_er = kf_interp(eps * rho, hyper)
    dKf = np.empty((N, d + 1, d, d))
    dKf[:, 0] = dk_rho[:, None, None] * eye + (eps * dk_er - dk_rho)[:, None, None] * nn
    dKf[:, 1] = (rho * dk_er)[:, None, None] * nn
    dKf[:, 2:] = (k_er - k_rho)[:, None, None, None] * dnn

    pw = hyper.p * s ** (hyper.p - 1) * hyper.lambda_max
    dlam = np.zeros((N, d + 1))
    dlam[:, 0] = -pw * (1 - eps)
    dlam[:, 1] = pw * rho
    if cell is not None:
        return TensorPartials(dKm[0], dKf[0], dlam[0])
    return TensorPartials(dKm, dKf, dlam)
