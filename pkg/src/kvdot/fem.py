"""P1 assembly and the three discrete boundary value problems.

For coefficients ``q`` and ``a`` (P1 fields) the bilinear form is

    B(u, v) = int q grad u . grad v + int a u v + int_{dOmega} sigma u v,

and the forward problems differ only in boundary handling:

* Neumann-Robin: flux ``j`` on Gamma, ``j0`` on the complement.
* Mixed: ``u = g`` at the Gamma nodes, ``j0`` on the complement.
* Dirichlet: ``u = g`` at every boundary node.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from kvdot.errors import ConfigurationError
from kvdot.linalg import SPDSolver
from kvdot.mesh import ALL, COMPLEMENT, GAMMA, TriMesh, check_field

# symmetric triangle rules: barycentric points and weights summing to 1
TRI_DEG2 = (
    np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 3),
)
_a, _b = 0.445948490915965, 0.091576213509771
TRI_DEG4 = (
    np.array(
        [
            [1 - 2 * _a, _a, _a], [_a, 1 - 2 * _a, _a], [_a, _a, 1 - 2 * _a],
            [1 - 2 * _b, _b, _b], [_b, 1 - 2 * _b, _b], [_b, _b, 1 - 2 * _b],
        ]
    ),
    np.array([0.223381589678011] * 3 + [0.109951743655322] * 3),
)
# 3-point Gauss-Legendre on [0, 1], exact to degree 5
_g = np.sqrt(3 / 5)
EDGE_GAUSS = (np.array([(1 - _g) / 2, 0.5, (1 + _g) / 2]), np.array([5 / 18, 8 / 18, 5 / 18]))

# int_T l_i l_j l_k / |T| for the barycentric coordinates l of a triangle
P1_TRIPLE = np.full((3, 3, 3), 1 / 60)
for _i in range(3):
    for _j in range(3):
        if _i == _j:
            P1_TRIPLE[_i, _i, :] = 1 / 30
            P1_TRIPLE[_i, :, _i] = 1 / 30
            P1_TRIPLE[:, _i, _i] = 1 / 30
for _i in range(3):
    P1_TRIPLE[_i, _i, _i] = 1 / 10
P1_MASS = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 12.0

Scalar = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def _as_function(value: Scalar):
    if callable(value):
        return value
    c = float(value)
    return lambda x, y: np.full(np.shape(x), c)


@dataclass(frozen=True)
class BoxBounds:
    q_lo: float = 0.1
    q_hi: float = 8.0
    a_lo: float = 0.1
    a_hi: float = 8.0

    def __post_init__(self):
        if not (0 < self.q_lo <= self.q_hi and 0 < self.a_lo <= self.a_hi):
            raise ConfigurationError(f"invalid box bounds {self}")


def default_source(x, y):
    """+1 on the diamond |x1| + |x2| <= 1/2, -1 elsewhere."""
    return np.where(np.abs(x) + np.abs(y) <= 0.5, 1.0, -1.0)


def default_j0(x, y):
    """Flux 4 on the right side and -3 on the top side."""
    return np.where(np.isclose(x, 1.0), 4.0, np.where(np.isclose(y, 1.0), -3.0, 0.0))


@dataclass(frozen=True)
class ProblemSpec:
    """Known PDE data: source, Robin coefficient, complement flux and bounds.

    ``source``, ``sigma`` and ``j0`` accept constants or vectorised callables
    ``f(x1, x2)``.
    """

    source: Scalar = default_source
    sigma: Scalar = 1.0
    j0: Scalar = default_j0
    bounds: BoxBounds = field(default_factory=BoxBounds)

    def __post_init__(self):
        if not callable(self.sigma) and float(self.sigma) < 0:
            raise ConfigurationError("sigma must be nonnegative")


@dataclass(frozen=True)
class BoundaryDatum:
    """Boundary data on ``region``.

    ``kind`` selects the representation:

    * ``"edge"``: one constant per edge of the region (in mesh edge order);
    * ``"node"``: one value per region node, continuous and linear per edge;
    * ``"edge_linear"``: endpoint values per edge, shape (n_edges, 2), linear
      on each edge and possibly discontinuous at nodes.

    ``role`` is ``"neumann"`` or ``"dirichlet"`` and is informational.
    """

    kind: str
    values: np.ndarray
    region: str = GAMMA
    role: str = "neumann"

    def __post_init__(self):
        if self.kind not in ("edge", "node", "edge_linear"):
            raise ConfigurationError(f"unknown datum kind {self.kind!r}")
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("boundary datum must be finite")
        object.__setattr__(self, "values", values)

    def _check(self, mesh: TriMesh):
        expected = {
            "edge": (len(mesh.edges(self.region)),),
            "node": (len(region_nodes(mesh, self.region)),),
            "edge_linear": (len(mesh.edges(self.region)), 2),
        }[self.kind]
        if self.values.shape != expected:
            raise ConfigurationError(
                f"{self.kind} datum on {self.region} needs shape {expected}, got {self.values.shape}"
            )

    def edge_values(self, mesh: TriMesh, region: str | None = None) -> np.ndarray:
        """Endpoint values ``(n_edges, 2)`` on the edges of ``region``."""
        self._check(mesh)
        region = self.region if region is None else region
        own = mesh.edges(self.region)
        if self.kind == "edge":
            full = np.repeat(self.values[:, None], 2, axis=1)
        elif self.kind == "edge_linear":
            full = self.values
        else:
            lookup = np.full(mesh.n_nodes, np.nan)
            lookup[region_nodes(mesh, self.region)] = self.values
            full = lookup[mesh.boundary_edges[own]]
        pos = np.full(len(mesh.boundary_edges), -1)
        pos[own] = np.arange(len(own))
        want = pos[mesh.edges(region)]
        if np.any(want < 0):
            raise ConfigurationError(f"datum on {self.region} does not cover {region}")
        return full[want]

    def __add__(self, other):
        if not isinstance(other, BoundaryDatum) or (other.kind, other.region) != (self.kind, self.region):
            return NotImplemented
        return BoundaryDatum(self.kind, self.values + other.values, self.region, self.role)


def region_nodes(mesh: TriMesh, region: str) -> np.ndarray:
    if region == GAMMA:
        return mesh.gamma_nodes
    if region == COMPLEMENT:
        return mesh.complement_nodes
    if region == ALL:
        return mesh.boundary_nodes
    raise ConfigurationError(f"unknown boundary region {region!r}")


def _edge_points(mesh: TriMesh, edges: np.ndarray):
    """Gauss points (n_e, 3, 2), weights times length (n_e, 3), and basis values."""
    t, w = EDGE_GAUSS
    p = mesh.nodes[mesh.boundary_edges[edges]]
    pts = p[:, None, 0, :] * (1 - t)[None, :, None] + p[:, None, 1, :] * t[None, :, None]
    wl = w[None, :] * mesh.edge_lengths[edges][:, None]
    basis = np.stack([1 - t, t], axis=1)  # (3 points, 2 endpoints)
    return pts, wl, basis


def _tri_points(mesh: TriMesh, rule):
    bary, w = rule
    p = mesh.nodes[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", bary, p)
    return pts, w[None, :] * mesh.areas[:, None], bary


def _scatter(mesh: TriMesh, local: np.ndarray, conn: np.ndarray) -> sp.csr_matrix:
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def stiffness_matrix(mesh: TriMesh, q) -> sp.csr_matrix:
    """int q grad phi_i . grad phi_j, exact for P1 ``q``."""
    q = check_field(mesh, q, "q")
    qbar = q[mesh.triangles].mean(axis=1)
    G = mesh.grad_basis
    local = np.einsum("tid,tjd->tij", G, G) * (mesh.areas * qbar)[:, None, None]
    return _scatter(mesh, local, mesh.triangles)


def mass_matrix(mesh: TriMesh, a=None) -> sp.csr_matrix:
    """int a phi_i phi_j, exact for P1 ``a`` (``a=None`` means a = 1)."""
    if a is None:
        local = P1_MASS[None, :, :] * mesh.areas[:, None, None]
    else:
        a = check_field(mesh, a, "a")
        local = np.einsum("kij,tk->tij", P1_TRIPLE, a[mesh.triangles]) * mesh.areas[:, None, None]
    return _scatter(mesh, local, mesh.triangles)


def robin_matrix(mesh: TriMesh, sigma: Scalar) -> sp.csr_matrix:
    """int_{dOmega} sigma phi_i phi_j with 3-point Gauss per edge."""
    edges = mesh.edges(ALL)
    pts, wl, basis = _edge_points(mesh, edges)
    s = _as_function(sigma)(pts[..., 0], pts[..., 1])
    local = np.einsum("eq,qi,qj->eij", wl * s, basis, basis)
    return _scatter(mesh, local, mesh.boundary_edges)


def assemble_operator(mesh: TriMesh, q, a, spec: ProblemSpec) -> sp.csr_matrix:
    """Matrix of the bilinear form B for the P1 coefficients ``q`` and ``a``."""
    return (stiffness_matrix(mesh, q) + mass_matrix(mesh, a) + robin_matrix(mesh, spec.sigma)).tocsr()


def source_load(mesh: TriMesh, source: Scalar) -> np.ndarray:
    """int f phi_i with the 3-point degree-2 rule."""
    pts, wa, bary = _tri_points(mesh, TRI_DEG2)
    fv = _as_function(source)(pts[..., 0], pts[..., 1])
    local = np.einsum("tq,qi->ti", wa * fv, bary)
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_nodes)


def boundary_load(mesh: TriMesh, datum, region: str = GAMMA) -> np.ndarray:
    """int_region j phi_i ds for a :class:`BoundaryDatum` or callable ``j``."""
    edges = mesh.edges(region)
    if callable(datum):
        pts, wl, basis = _edge_points(mesh, edges)
        jv = datum(pts[..., 0], pts[..., 1])
        local = np.einsum("eq,qi->ei", wl * jv, basis)
    else:
        ev = datum.edge_values(mesh, region)
        L = mesh.edge_lengths[edges][:, None]
        local = L * (ev @ np.array([[2.0, 1.0], [1.0, 2.0]])) / 6.0
    conn = mesh.boundary_edges[edges]
    return np.bincount(conn.ravel(), local.ravel(), minlength=mesh.n_nodes)


def assemble_load(mesh: TriMesh, spec: ProblemSpec, j_on_gamma=None) -> np.ndarray:
    """int f phi_i + int_Gamma j phi_i (if given) + int_{complement} j0 phi_i."""
    b = source_load(mesh, spec.source) + boundary_load(mesh, _as_function(spec.j0), COMPLEMENT)
    if j_on_gamma is not None:
        b = b + boundary_load(mesh, j_on_gamma, GAMMA)
    return b


def _dirichlet_values(mesh: TriMesh, datum, region: str) -> np.ndarray:
    nodes = region_nodes(mesh, region)
    if isinstance(datum, BoundaryDatum):
        if datum.kind != "node" or datum.region != region:
            raise ConfigurationError(f"Dirichlet data must be node values on {region}")
        return datum.values
    if callable(datum):
        return datum(mesh.nodes[nodes, 0], mesh.nodes[nodes, 1])
    values = np.asarray(datum, dtype=float)
    if values.shape != nodes.shape:
        raise ConfigurationError(f"Dirichlet data needs {len(nodes)} values on {region}")
    return values


class StateSolver:
    """Forward solves for one coefficient pair; factorizations are reused.

    All three problems share the matrix of B, so building this once and
    calling :meth:`neumann` / :meth:`mixed` for several data sets costs one
    factorization per constraint set.
    """

    def __init__(self, mesh: TriMesh, q, a, spec: ProblemSpec, method: str = "direct"):
        self.mesh = mesh
        self.spec = spec
        self.method = method
        self.q = check_field(mesh, q, "q")
        self.a = check_field(mesh, a, "a")
        self.A = assemble_operator(mesh, self.q, self.a, spec)
        self._base_load = None
        self._source_load = None
        self._solvers = {}

    @property
    def base_load(self):
        if self._base_load is None:
            self._base_load = assemble_load(self.mesh, self.spec)
        return self._base_load

    @property
    def f_load(self):
        if self._source_load is None:
            self._source_load = source_load(self.mesh, self.spec.source)
        return self._source_load

    def _solver(self, region):
        if region not in self._solvers:
            if region is None:
                self._solvers[region] = (None, SPDSolver(self.A, self.method))
            else:
                fixed = region_nodes(self.mesh, region)
                free = np.setdiff1d(np.arange(self.mesh.n_nodes), fixed)
                A_ff = self.A[free][:, free]
                A_fd = self.A[free][:, fixed]
                self._solvers[region] = ((free, fixed, A_fd), SPDSolver(A_ff, self.method))
        return self._solvers[region]

    def neumann(self, j_gamma) -> np.ndarray:
        _, solver = self._solver(None)
        return solver.solve(self.base_load + boundary_load(self.mesh, j_gamma, GAMMA))

    def _constrained(self, region, load, g):
        (free, fixed, A_fd), solver = self._solver(region)
        g = _dirichlet_values(self.mesh, g, region)
        u = np.empty(self.mesh.n_nodes)
        u[fixed] = g
        u[free] = solver.solve(load[free] - A_fd @ g)
        return u

    def mixed(self, g_gamma) -> np.ndarray:
        return self._constrained(GAMMA, self.base_load, g_gamma)

    def dirichlet(self, g_full) -> np.ndarray:
        return self._constrained(ALL, self.f_load, g_full)


def solve_neumann(mesh, q, a, spec, j_gamma, method="direct") -> np.ndarray:
    """Discrete solution with Robin flux ``j_gamma`` on Gamma and ``j0`` elsewhere."""
    return StateSolver(mesh, q, a, spec, method).neumann(j_gamma)


def solve_mixed(mesh, q, a, spec, g_gamma, method="direct") -> np.ndarray:
    """Discrete solution equal to ``g_gamma`` at the Gamma nodes, ``j0`` elsewhere."""
    return StateSolver(mesh, q, a, spec, method).mixed(g_gamma)


def solve_dirichlet(mesh, q, a, spec, g_full, method="direct") -> np.ndarray:
    """Discrete solution equal to ``g_full`` at every boundary node."""
    return StateSolver(mesh, q, a, spec, method).dirichlet(g_full)


def discrete_flux(mesh: TriMesh, q, a, spec: ProblemSpec, u) -> BoundaryDatum:
    """P1 flux ``j`` on Gamma for which ``u`` is the discrete Neumann-Robin solution.

    Valid for any ``u`` that satisfies the discrete equations at all nodes
    off Gamma (e.g. a mixed solution): the Gamma rows of the residual
    ``B u - load`` are matched by the boundary mass matrix of Gamma.
    """
    u = check_field(mesh, u)
    residual = assemble_operator(mesh, q, a, spec) @ u - assemble_load(mesh, spec)
    edges = mesh.edges(GAMMA)
    local = mesh.edge_lengths[edges][:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    bmass = _scatter(mesh, local, mesh.boundary_edges[edges])
    nodes = mesh.gamma_nodes
    values = SPDSolver(bmass[nodes][:, nodes]).solve(residual[nodes])
    return BoundaryDatum("node", values, GAMMA, "neumann")


def trace(mesh: TriMesh, values, region: str = GAMMA) -> BoundaryDatum:
    """Nodal trace of a P1 field on ``region`` as a Dirichlet datum."""
    v = check_field(mesh, values)
    return BoundaryDatum("node", v[region_nodes(mesh, region)], region, "dirichlet")


def trace_gamma(mesh: TriMesh, values) -> BoundaryDatum:
    return trace(mesh, values, GAMMA)


def boundary_l2_norm(mesh: TriMesh, datum: BoundaryDatum, region: str = GAMMA) -> float:
    """L2 norm over ``region`` of a piecewise linear boundary datum (exact)."""
    ev = datum.edge_values(mesh, region)
    L = mesh.edge_lengths[mesh.edges(region)]
    sq = L * (ev[:, 0] ** 2 + ev[:, 0] * ev[:, 1] + ev[:, 1] ** 2) / 3.0
    return float(np.sqrt(sq.sum()))


def l2_norm(mesh: TriMesh, values, mass=None) -> float:
    """L2(Omega) norm of a P1 field."""
    v = check_field(mesh, values)
    M = mass_matrix(mesh) if mass is None else mass
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def l2_error(mesh: TriMesh, values, exact: Callable, rule=TRI_DEG4) -> float:
    """L2 distance between a P1 field and a function evaluated at quadrature points."""
    v = check_field(mesh, values)
    pts, wa, bary = _tri_points(mesh, rule)
    uh = bary @ v[mesh.triangles].T  # (n_q, n_tri)
    diff = uh.T - exact(pts[..., 0], pts[..., 1])
    return float(np.sqrt(np.sum(wa * diff**2)))


def h1_seminorm_error(mesh: TriMesh, values, exact_grad: Callable, rule=TRI_DEG4) -> float:
    """|u_h - u|_{H^1} where ``exact_grad(x1, x2)`` returns (du/dx1, du/dx2)."""
    v = check_field(mesh, values)
    pts, wa, _ = _tri_points(mesh, rule)
    gh = np.einsum("tid,ti->td", mesh.grad_basis, v[mesh.triangles])
    gx, gy = exact_grad(pts[..., 0], pts[..., 1])
    diff = (gh[:, None, 0] - gx) ** 2 + (gh[:, None, 1] - gy) ** 2
    return float(np.sqrt(np.sum(wa * diff)))


def interpolate(mesh: TriMesh, func: Callable) -> np.ndarray:
    """Nodal interpolant of ``func(x1, x2)``."""
    return np.asarray(func(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float)
