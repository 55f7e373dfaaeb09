"""Design-task description: grid, boundary patches, hyperparameters, settings.

Task files are YAML documents; see ``tasks/README.md`` for the schema. Every
boundary node that is not inside an outlet patch receives a Dirichlet value:
the inlet velocity inside inlet patches and zero elsewhere. A node lying on
several faces is a wall node if any of those faces leaves it uncovered.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import yaml

from .assembly import DirichletSet
from .errors import ConfigurationError, DomainError
from .grid import GridSpec
from .material import MaterialHyperparams
from .objective import ObjectiveWeights, OutletTargets

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")
ROLES = ("inlet", "outlet", "wall")
SHAPES = ("rectangle", "circle")
_TOL = 1e-9


def face_axis(face):
    return "xyz".index(face[0]), (1 if face[1] == "+" else -1)


@dataclass
class Patch:
    """A region on one domain face.

    ``center`` and ``extent`` are in normalized face coordinates: the face's
    tangential axes in increasing order, each scaled to [0, 1]. ``extent`` is
    the full width per axis for rectangles and ``[radius]`` for circles.
    ``velocity`` is prescribed for inlets; ``target`` is the desired outlet
    velocity.
    """

    id: str
    face: str
    role: str
    center: tuple
    extent: tuple
    shape: str = "rectangle"
    velocity: tuple = None
    target: tuple = None

    def contains(self, t):
        """Mask of face points ``t`` (shape (N, d-1)) inside the patch."""
        c = np.asarray(self.center, dtype=float)
        e = np.asarray(self.extent, dtype=float)
        if self.shape == "circle":
            return np.linalg.norm(t - c, axis=1) <= e[0] + _TOL
        return np.all(np.abs(t - c) <= e / 2 + _TOL, axis=1)

    def bounds(self):
        c = np.asarray(self.center, dtype=float)
        e = np.asarray(self.extent, dtype=float)
        half = np.full_like(c, e[0]) if self.shape == "circle" else e / 2
        return c - half, c + half


def _patches_overlap(a, b):
    lo_a, hi_a = a.bounds()
    lo_b, hi_b = b.bounds()
    if np.any(np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b) <= _TOL):
        return False
    if a.shape == "rectangle" and b.shape == "rectangle":
        return True
    if a.shape == "circle" and b.shape == "circle":
        gap = np.linalg.norm(np.subtract(a.center, b.center)) - a.extent[0] - b.extent[0]
        return gap < -_TOL
    circ, rect = (a, b) if a.shape == "circle" else (b, a)
    lo, hi = rect.bounds()
    nearest = np.clip(circ.center, lo, hi)
    return np.linalg.norm(nearest - np.asarray(circ.center)) < circ.extent[0] - _TOL


@dataclass
class OptimizerSettings:
    iterations: int = 300
    perturb: float = 0.0
    isotropic: bool = False
    seed: int = 0


@dataclass
class TaskSpec:
    grid: GridSpec
    patches: list
    hyper: MaterialHyperparams = field(default_factory=MaterialHyperparams)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    use_blocks: bool = True
    name: str = "task"
    init: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = validate_patches(self.grid, self.patches)
        if problems:
            raise ConfigurationError("invalid task", problems)

    def with_(self, **kw):
        return replace(self, **kw)

    # -- boundary classification ---------------------------------------------

    @cached_property
    def _boundary(self):
        grid = self.grid
        d = grid.dim
        coords = grid.node_coord_table
        npa = np.array(grid.nodes_per_axis)
        n_nodes = grid.n_nodes
        wall = np.zeros(n_nodes, bool)
        inlet_vel = np.full((n_nodes, d), np.nan)
        outlet_tgt = np.full((n_nodes, d), np.nan)
        on_boundary = np.zeros(n_nodes, bool)
        inlet_normal = np.zeros((n_nodes, d))
        outlet_normal = np.zeros((n_nodes, d))
        for face in FACES[: 2 * d]:
            k, sgn = face_axis(face)
            on = coords[:, k] == (npa[k] - 1 if sgn > 0 else 0)
            on_boundary |= on
            tang = [a for a in range(d) if a != k]
            idx = np.flatnonzero(on)
            t = coords[idx][:, tang] / (npa[tang] - 1)
            covered = np.zeros(len(idx), bool)
            normal = np.zeros(d)
            normal[k] = sgn
            for p in self.patches:
                if p.face != face or p.role == "wall":
                    continue
                inside = p.contains(t) & ~covered
                covered |= inside
                sel = idx[inside]
                if p.role == "inlet":
                    inlet_vel[sel] = p.velocity
                    inlet_normal[sel] = normal
                else:
                    outlet_tgt[sel] = p.target
                    outlet_normal[sel] = normal
            wall[idx[~covered]] = True
        inlet = on_boundary & ~wall & ~np.isnan(inlet_vel[:, 0])
        outlet = on_boundary & ~wall & ~inlet & ~np.isnan(outlet_tgt[:, 0])
        return dict(
            wall=wall, inlet=inlet, outlet=outlet, inlet_vel=inlet_vel, outlet_tgt=outlet_tgt,
            inlet_normal=inlet_normal, outlet_normal=outlet_normal, on_boundary=on_boundary,
        )

    @property
    def inlet_nodes(self):
        return np.flatnonzero(self._boundary["inlet"])

    @property
    def outlet_nodes(self):
        return np.flatnonzero(self._boundary["outlet"])

    @property
    def wall_nodes(self):
        return np.flatnonzero(self._boundary["wall"])

    def _node_dofs(self, nodes):
        d = self.grid.dim
        return (nodes[:, None] * d + np.arange(d)[None, :]).ravel()

    def dirichlet(self):
        """Walls at zero plus inlet velocities; outlets stay free."""
        bd = self._boundary
        d = self.grid.dim
        wall, inlet = self.wall_nodes, self.inlet_nodes
        dofs = np.concatenate([self._node_dofs(wall), self._node_dofs(inlet)])
        vals = np.concatenate([np.zeros(len(wall) * d), bd["inlet_vel"][inlet].ravel()])
        return DirichletSet(dofs, vals)

    def outlet_dirichlet(self):
        """Outlet nodes pinned to their targets (the extra set for compliance)."""
        out = self.outlet_nodes
        return DirichletSet(self._node_dofs(out), self._boundary["outlet_tgt"][out].ravel())

    def outlet_targets(self):
        out = self.outlet_nodes
        weights = None
        if self.weights.face_weighted:
            weights = np.repeat(self.face_weights(out), self.grid.dim)
        return OutletTargets(self._node_dofs(out), self._boundary["outlet_tgt"][out].ravel(), weights)

    def face_weights(self, nodes):
        """Trapezoidal face-area weight of boundary nodes.

        Each adjacent face cell contributes ``h^(d-1) / 2^(d-1)``, so these
        weights integrate bi/trilinear traces exactly.
        """
        grid = self.grid
        coords = grid.node_coord_table[nodes]
        npa = np.array(grid.nodes_per_axis)
        bd = self._boundary
        normals = bd["inlet_normal"][nodes] + bd["outlet_normal"][nodes]
        w = np.ones(len(nodes))
        for a in range(grid.dim):
            tangential = normals[:, a] == 0
            end = (coords[:, a] == 0) | (coords[:, a] == npa[a] - 1)
            w *= np.where(tangential, np.where(end, grid.h / 2, grid.h), 1.0)
        return w

    def fluxes(self, v):
        """(influx, outflux) through inlet and outlet patches of a solved field."""
        d = self.grid.dim
        vel = np.asarray(v).reshape(-1, d)
        bd = self._boundary
        inl, out = self.inlet_nodes, self.outlet_nodes
        influx = -np.sum(self.face_weights(inl) * np.sum(vel[inl] * bd["inlet_normal"][inl], axis=1))
        outflux = np.sum(self.face_weights(out) * np.sum(vel[out] * bd["outlet_normal"][out], axis=1))
        return float(influx), float(outflux)

    def initial_design(self):
        from .material import DesignField

        n, d = self.grid.n_cells, self.grid.dim
        rho = self.init.get("rho", self.weights.v_max)
        eps = self.init.get("eps", 1.0)
        alpha = np.asarray(self.init.get("alpha", 0.0), float)
        if alpha.ndim == 1 and alpha.shape[0] == n:
            alpha = alpha[:, None]
        return DesignField(
            rho=np.broadcast_to(np.asarray(rho, float), (n,)).copy(),
            eps=np.broadcast_to(np.asarray(eps, float), (n,)).copy(),
            alpha=np.broadcast_to(alpha, (n, d - 1)).copy(),
        )


def validate_patches(grid, patches):
    problems = []
    d = grid.dim
    faces = FACES[: 2 * d]
    seen = {}
    for p in patches:
        label = f"patch '{p.id}'"
        if p.id in seen:
            problems.append(f"duplicate patch id '{p.id}' (entries {seen[p.id]} and {patches.index(p)})")
        else:
            seen[p.id] = patches.index(p)
        if p.face not in faces:
            problems.append(f"{label}: face '{p.face}' invalid for a {d}D grid")
            continue
        if p.role not in ROLES:
            problems.append(f"{label}: role '{p.role}' not one of {ROLES}")
        if p.shape not in SHAPES:
            problems.append(f"{label}: shape '{p.shape}' not one of {SHAPES}")
            continue
        if len(p.center) != d - 1:
            problems.append(f"{label}: center needs {d - 1} coordinates")
            continue
        n_ext = 1 if p.shape == "circle" else d - 1
        if len(p.extent) != n_ext:
            problems.append(f"{label}: extent needs {n_ext} values")
            continue
        if any(e <= 0 for e in p.extent):
            problems.append(f"{label}: extent must be positive")
        lo, hi = p.bounds()
        if np.any(lo < -_TOL) or np.any(hi > 1 + _TOL):
            problems.append(f"{label}: lies outside its face extent")
        if p.role == "inlet":
            if p.target is not None:
                problems.append(f"{label}: target given on a Dirichlet (inlet) patch")
            if p.velocity is None or len(p.velocity) != d or not np.all(np.isfinite(p.velocity)):
                problems.append(f"{label}: inlet needs a finite {d}-component velocity")
        elif p.role == "outlet":
            if p.velocity is not None:
                problems.append(f"{label}: outlet patches take a target, not a velocity")
            if p.target is None or len(p.target) != d or not np.all(np.isfinite(p.target)):
                problems.append(f"{label}: outlet needs a finite {d}-component target")
        elif p.role == "wall":
            if p.target is not None:
                problems.append(f"{label}: target given on a Dirichlet (wall) patch")
            if p.velocity is not None and np.any(np.asarray(p.velocity) != 0):
                problems.append(f"{label}: wall velocity must be zero")
    by_face = {}
    for p in patches:
        if p.face in faces and p.shape in SHAPES:
            by_face.setdefault(p.face, []).append(p)
    for face, ps in by_face.items():
        for i in range(len(ps)):
            for j in range(i + 1, len(ps)):
                try:
                    if _patches_overlap(ps[i], ps[j]):
                        problems.append(f"patches '{ps[i].id}' and '{ps[j].id}' overlap on face {face}")
                except ValueError:
                    pass
    return problems


# -- file loading ------------------------------------------------------------------


def _num(x):
    # PyYAML reads forms like 1e5 as strings
    if isinstance(x, str):
        return float(x)
    return x


def _nums(xs):
    if xs is None:
        return None
    if np.isscalar(xs):
        return (float(_num(xs)),)
    return tuple(float(_num(x)) for x in xs)


def task_from_dict(doc, problems=None):
    problems = [] if problems is None else problems
    if not isinstance(doc, dict):
        raise ConfigurationError("task document must be a mapping")
    g = doc.get("grid") or {}
    try:
        dim = int(g.get("dim", 2))
        grid = GridSpec(dim=dim, cells=tuple(g.get("cells", ())), block_size=int(g.get("block_size", 8 if dim == 2 else 4)))
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigurationError("invalid grid", [str(exc)]) from exc
    patches = []
    for i, pd in enumerate(doc.get("patches") or []):
        try:
            patches.append(
                Patch(
                    id=str(pd.get("id", f"patch{i}")),
                    face=str(pd["face"]),
                    role=str(pd.get("role", "wall")),
                    center=_nums(pd.get("center", [0.5] * (dim - 1))),
                    extent=_nums(pd.get("extent", pd.get("radius", [1.0] * (dim - 1)))),
                    shape=str(pd.get("shape", "rectangle")),
                    velocity=_nums(pd.get("velocity")),
                    target=_nums(pd.get("target")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"patch entry {i}: malformed ({exc})")
    try:
        hyper = MaterialHyperparams(**{k: float(_num(v)) for k, v in (doc.get("material") or {}).items()})
    except (TypeError, DomainError, ValueError) as exc:
        problems.append(f"material: {exc}")
        hyper = MaterialHyperparams()
    try:
        wdoc = dict(doc.get("objective") or {})
        weights = ObjectiveWeights(**{k: (v if isinstance(v, bool) else float(_num(v))) for k, v in wdoc.items()})
    except (TypeError, DomainError, ValueError) as exc:
        problems.append(f"objective: {exc}")
        weights = ObjectiveWeights()
    odoc = doc.get("optimizer") or {}
    try:
        opt = OptimizerSettings(
            iterations=int(odoc.get("iterations", 300)),
            perturb=float(_num(odoc.get("perturb", 0.0))),
            isotropic=bool(odoc.get("isotropic", False)),
            seed=int(odoc.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        problems.append(f"optimizer: {exc}")
        opt = OptimizerSettings()
    problems.extend(validate_patches(grid, patches))
    if problems:
        raise ConfigurationError("invalid task", problems)
    return TaskSpec(
        grid=grid, patches=patches, hyper=hyper, weights=weights, optimizer=opt,
        use_blocks=bool(doc.get("use_blocks", True)), name=str(doc.get("name", "task")),
        init=dict(doc.get("init") or {}), metadata=dict(doc.get("metadata") or {}),
    )


def load_task(path):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read task file {path}", [str(exc)]) from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse task file {path}", [str(exc)]) from exc
    return task_from_dict(doc)
