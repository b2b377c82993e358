"""Uniform triangulation of the square (-1, 1)^2 and P1 interpolation.

Nodes are numbered row-major from bottom to top, ``k = i + j * (tau + 1)``,
and every cell is split along its lower-left to upper-right diagonal.
Boundary edges on the bottom side (x2 = -1) and the left side (x1 = -1)
form the observation boundary ``Gamma``; the rest is ``Complement``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from kvdot.errors import ConfigurationError

GAMMA = "gamma"
COMPLEMENT = "complement"
ALL = "all"


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Structured P1 mesh on the square.

    Attributes
    ----------
    tau : int
        Number of segments per axis.
    nodes : ndarray, shape (n_nodes, 2)
    triangles : ndarray, shape (n_tri, 3)
        Counterclockwise vertex triples.
    boundary_edges : ndarray, shape (4 * tau, 2)
        Node pairs, oriented counterclockwise around the square.
    edge_labels : ndarray of str, shape (4 * tau,)
        ``"gamma"`` or ``"complement"`` for each boundary edge.
    """

    tau: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_labels: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        """Triangle diameter, sqrt(8) / tau."""
        return float(np.sqrt(8.0) / self.tau)

    @property
    def cell_width(self) -> float:
        return 2.0 / self.tau

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def areas(self) -> np.ndarray:
        """Signed triangle areas (all positive for a valid mesh)."""
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def grad_basis(self) -> np.ndarray:
        """Gradients of the three local hat functions, shape (n_tri, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_area = 2.0 * self.areas
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        return np.stack([gx, gy], axis=2) / two_area[:, None, None]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def edges(self, region: str = ALL) -> np.ndarray:
        """Indices of boundary edges in ``region``."""
        if region == ALL:
            return np.arange(len(self.boundary_edges))
        if region not in (GAMMA, COMPLEMENT):
            raise ConfigurationError(f"unknown boundary region {region!r}")
        return np.flatnonzero(self.edge_labels == region)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    @cached_property
    def gamma_nodes(self) -> np.ndarray:
        """Dirichlet nodes of Gamma: every node with x1 = -1 or x2 = -1.

        The corners (1, -1) and (-1, 1) are included, i.e. the closure of Gamma.
        """
        return np.unique(self.boundary_edges[self.edges(GAMMA)])

    @cached_property
    def complement_nodes(self) -> np.ndarray:
        """Boundary nodes not in :attr:`gamma_nodes`."""
        return np.setdiff1d(self.boundary_nodes, self.gamma_nodes)

    def node_index(self, i: int, j: int) -> int:
        return i + j * (self.tau + 1)


def build_mesh(tau: int) -> TriMesh:
    """Triangulate (-1, 1)^2 with ``tau`` segments per axis (tau even, >= 2)."""
    if isinstance(tau, bool) or not isinstance(tau, (int, np.integer)):
        raise ConfigurationError(f"tau must be an integer, got {tau!r}")
    tau = int(tau)
    if tau < 2 or tau % 2:
        raise ConfigurationError(f"tau must be even and >= 2, got {tau}")

    n1 = tau + 1
    t = np.linspace(-1.0, 1.0, n1)
    xx, yy = np.meshgrid(t, t)  # row j holds x2 = t[j]
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(tau), np.arange(tau))
    ll = (i + j * n1).ravel()
    lr, ul, ur = ll + 1, ll + n1, ll + n1 + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    triangles = np.empty((2 * tau * tau, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    k = np.arange(tau)
    bottom = np.column_stack([k, k + 1])
    right = np.column_stack([tau + k * n1, tau + (k + 1) * n1])
    top = np.column_stack([(tau - k) + tau * n1, (tau - k - 1) + tau * n1])
    left = np.column_stack([(tau - k) * n1, (tau - k - 1) * n1])
    edges = np.vstack([bottom, right, top, left]).astype(np.int64)

    mesh = TriMesh(tau, nodes, triangles, edges, np.empty(0, dtype=object))
    return classify_boundary(mesh)


def classify_boundary(mesh: TriMesh) -> TriMesh:
    """Label each boundary edge as Gamma (bottom or left side) or Complement."""
    p = mesh.nodes[mesh.boundary_edges]
    on_bottom = np.all(np.isclose(p[..., 1], -1.0), axis=1)
    on_left = np.all(np.isclose(p[..., 0], -1.0), axis=1)
    labels = np.where(on_bottom | on_left, GAMMA, COMPLEMENT).astype(object)
    return TriMesh(mesh.tau, mesh.nodes, mesh.triangles, mesh.boundary_edges, labels)


@dataclass(frozen=True)
class NodalField:
    """A P1 function stored by its nodal values on the mesh of level ``tau``."""

    values: np.ndarray
    tau: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != ((self.tau + 1) ** 2,):
            raise ConfigurationError(
                f"NodalField on tau={self.tau} needs {(self.tau + 1) ** 2} values, "
                f"got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)


def check_field(mesh: TriMesh, values, name: str = "field") -> np.ndarray:
    """Return ``values`` as a float array after checking it matches ``mesh``."""
    if isinstance(values, NodalField):
        if values.tau != mesh.tau:
            raise ConfigurationError(f"{name} lives on tau={values.tau}, mesh has tau={mesh.tau}")
        values = values.values
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.n_nodes, float(arr))
    if arr.shape != (mesh.n_nodes,):
        raise ConfigurationError(
            f"{name} has shape {arr.shape}, expected ({mesh.n_nodes},) for tau={mesh.tau}"
        )
    return arr


def evaluate(mesh: TriMesh, values, points) -> np.ndarray:
    """Evaluate the P1 field ``values`` at arbitrary points of the closed square."""
    v = check_field(mesh, values)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    hw = mesh.cell_width
    n1 = mesh.tau + 1
    s = (pts[:, 0] + 1.0) / hw
    t = (pts[:, 1] + 1.0) / hw
    ci = np.clip(np.floor(s).astype(np.int64), 0, mesh.tau - 1)
    cj = np.clip(np.floor(t).astype(np.int64), 0, mesh.tau - 1)
    s -= ci
    t -= cj
    ll = ci + cj * n1
    v_ll, v_lr, v_ul, v_ur = v[ll], v[ll + 1], v[ll + n1], v[ll + n1 + 1]
    lower = v_ll + s * (v_lr - v_ll) + t * (v_ur - v_lr)
    upper = v_ll + t * (v_ul - v_ll) + s * (v_ur - v_ul)
    return np.where(t <= s, lower, upper)


def prolongate(field: NodalField, target_tau: int) -> NodalField:
    """Interpolate a coarse P1 field onto the nodes of a refined mesh.

    ``target_tau`` must be a positive integer multiple of ``field.tau``; the
    refinement ladder uses ``2 * tau``.
    """
    if target_tau < field.tau or target_tau % field.tau:
        raise ConfigurationError(
            f"cannot prolongate from tau={field.tau} to tau={target_tau}: "
            "target must be an integer multiple"
        )
    coarse = build_mesh(field.tau)
    fine = build_mesh(target_tau)
    values = evaluate(coarse, field.values, fine.nodes)
    # every fine value is a convex combination of coarse ones; clipping only
    # removes rounding so box bounds survive exactly
    values = np.clip(values, field.values.min(), field.values.max())
    # coarse nodes are fine nodes; copy them so they survive bit-for-bit
    r = target_tau // field.tau
    fi = np.arange(0, target_tau + 1, r)
    fine_idx = (fi[None, :] + fi[:, None] * (target_tau + 1)).ravel()
    values[fine_idx] = field.values
    return NodalField(values, target_tau)
