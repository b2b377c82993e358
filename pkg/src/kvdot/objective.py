"""Kohn-Vogelius misfit, smoothed TV regularizer and their nodal gradients.

The misfit compares, for every Cauchy pair (j, g), the Neumann-Robin state
``N`` driven by ``j`` with the mixed state ``M`` pinned to ``g``::

    J(q, a) = mean_i B_{q,a}(N_i - M_i, N_i - M_i)

Its derivative in direction (eta_q, eta_a) is

    int eta_q (|grad M|^2 - |grad N|^2) + int eta_a (M^2 - N^2),

so a gradient costs no solves beyond the two used for the value.
Gradients are returned as nodal vectors: entry ``j`` is the derivative in
the direction of hat function ``phi_j``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from kvdot.errors import ConfigurationError, ContractError
from kvdot.fem import P1_TRIPLE, BoundaryDatum, ProblemSpec, StateSolver, mass_matrix
from kvdot.mesh import TriMesh, check_field


@dataclass(frozen=True)
class MeasurementSet:
    """Cauchy pairs ``(j, g)`` on Gamma and the recorded noise level."""

    pairs: tuple
    delta: float = 0.0
    patterns: tuple = ()

    def __post_init__(self):
        pairs = tuple((j, g) for j, g in self.pairs)
        if not pairs:
            raise ConfigurationError("a measurement set needs at least one pair")
        object.__setattr__(self, "pairs", pairs)

    @property
    def count(self) -> int:
        return len(self.pairs)

    def repeated(self, times: int) -> "MeasurementSet":
        return MeasurementSet(self.pairs * times, self.delta, self.patterns * times)


@dataclass(frozen=True)
class RegConfig:
    """Regularization weight ``rho`` and TV smoothing ``eps``."""

    rho: float
    eps: float

    def __post_init__(self):
        if not (self.rho > 0 and self.eps > 0):
            raise ConfigurationError(f"rho and eps must be positive, got {self}")

    @classmethod
    def for_mesh(cls, mesh: TriMesh, rho_factor: float = 1e-3, eps_factor: float = 1e-3):
        """Default scaling rho = eps = 1e-3 * sqrt(h)."""
        sh = np.sqrt(mesh.h)
        return cls(rho_factor * sh, eps_factor * sh)


@dataclass
class CoefficientPair:
    q: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        if self.q.shape != self.a.shape:
            raise ConfigurationError("q and a must live on the same mesh")

    @classmethod
    def constant(cls, mesh: TriMesh, q0: float, a0: float):
        return cls(np.full(mesh.n_nodes, float(q0)), np.full(mesh.n_nodes, float(a0)))

    def key(self) -> str:
        h = hashlib.sha1(self.q.tobytes())
        h.update(self.a.tobytes())
        return h.hexdigest()

    def within(self, bounds) -> bool:
        return bool(
            np.all((self.q >= bounds.q_lo) & (self.q <= bounds.q_hi))
            and np.all((self.a >= bounds.a_lo) & (self.a <= bounds.a_hi))
        )


@dataclass
class ForwardCache:
    """States ``N_i``, ``M_i`` computed for the pair identified by ``key``."""

    key: str
    neumann: list
    mixed: list
    value: float
    solver: StateSolver = field(repr=False)


def _check_pair(mesh, pair):
    check_field(mesh, pair.q, "q")
    check_field(mesh, pair.a, "a")


def misfit(mesh: TriMesh, pair: CoefficientPair, spec: ProblemSpec, meas: MeasurementSet,
           method: str = "direct"):
    """Averaged Kohn-Vogelius misfit and the forward states used to compute it.

    Returns
    -------
    value : float
    cache : ForwardCache
        Pass to :func:`misfit_gradient` for the same ``pair``.
    """
    _check_pair(mesh, pair)
    solver = StateSolver(mesh, pair.q, pair.a, spec, method)
    N, M, total = [], [], 0.0
    for j, g in meas.pairs:
        n = solver.neumann(j)
        m = solver.mixed(g)
        w = n - m
        total += w @ (solver.A @ w)
        N.append(n)
        M.append(m)
    value = total / meas.count
    return value, ForwardCache(pair.key(), N, M, value, solver)


def misfit_gradient(mesh: TriMesh, pair: CoefficientPair, spec: ProblemSpec,
                    meas: MeasurementSet, cache: ForwardCache):
    """Nodal gradients ``(grad_q, grad_a)`` of the misfit at ``pair``."""
    if cache.key != pair.key():
        raise ContractError("forward cache was computed for a different coefficient pair")
    tri = mesh.triangles
    G = mesh.grad_basis
    area = mesh.areas
    dgrad = np.zeros(mesh.n_triangles)
    dmass = np.zeros((mesh.n_triangles, 3))
    for n, m in zip(cache.neumann, cache.mixed):
        gn = np.einsum("tid,ti->td", G, n[tri])
        gm = np.einsum("tid,ti->td", G, m[tri])
        dgrad += np.sum(gm * gm - gn * gn, axis=1)
        mt, nt = m[tri], n[tri]
        dmass += np.einsum("jkl,tk,tl->tj", P1_TRIPLE, mt, mt) - np.einsum(
            "jkl,tk,tl->tj", P1_TRIPLE, nt, nt
        )
    scale = 1.0 / meas.count
    local_q = np.repeat((dgrad * area / 3.0)[:, None], 3, axis=1)
    local_a = dmass * area[:, None]
    grad_q = np.bincount(tri.ravel(), local_q.ravel(), minlength=mesh.n_nodes) * scale
    grad_a = np.bincount(tri.ravel(), local_a.ravel(), minlength=mesh.n_nodes) * scale
    return grad_q, grad_a


def _tv(mesh, v, eps):
    g = np.einsum("tid,ti->td", mesh.grad_basis, v[mesh.triangles])
    s = np.sqrt(np.sum(g * g, axis=1) + eps)
    return g, s


def regularizer(mesh: TriMesh, pair: CoefficientPair, cfg: RegConfig, mass=None) -> float:
    """Smoothed TV plus half squared L2 norms of both coefficients."""
    M = mass_matrix(mesh) if mass is None else mass
    total = 0.0
    for v in (pair.q, pair.a):
        _, s = _tv(mesh, v, cfg.eps)
        total += mesh.areas @ s + 0.5 * v @ (M @ v)
    return float(total)


def tv_gradient(mesh: TriMesh, v: np.ndarray, eps: float) -> np.ndarray:
    """Nodal gradient of sum_T |T| sqrt(|grad v|^2 + eps)."""
    g, s = _tv(mesh, v, eps)
    local = np.einsum("tid,td->ti", mesh.grad_basis, g) * (mesh.areas / s)[:, None]
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_nodes)


def regularizer_gradient(mesh: TriMesh, pair: CoefficientPair, cfg: RegConfig, mass=None):
    M = mass_matrix(mesh) if mass is None else mass
    return (
        tv_gradient(mesh, pair.q, cfg.eps) + M @ pair.q,
        tv_gradient(mesh, pair.a, cfg.eps) + M @ pair.a,
    )


def total_objective(mesh, pair, spec, meas, cfg: RegConfig, method="direct"):
    """``misfit + rho * regularizer``; also returns the forward cache."""
    J, cache = misfit(mesh, pair, spec, meas, method)
    return J + cfg.rho * regularizer(mesh, pair, cfg), cache


def total_gradient(mesh, pair, spec, meas, cfg: RegConfig, cache: ForwardCache):
    gq, ga = misfit_gradient(mesh, pair, spec, meas, cache)
    rq, ra = regularizer_gradient(mesh, pair, cfg)
    return gq + cfg.rho * rq, ga + cfg.rho * ra


@dataclass
class Evaluation:
    pair: CoefficientPair
    J: float
    R: float
    value: float
    cache: ForwardCache = field(repr=False)
    grad: tuple | None = field(default=None, repr=False)


class Objective:
    """The regularized objective for fixed mesh, data and regularization.

    Keeps the mass matrix around so repeated evaluations inside the
    optimizer only pay for assembly and the forward solves.
    """

    def __init__(self, mesh: TriMesh, spec: ProblemSpec, meas: MeasurementSet,
                 reg: RegConfig, method: str = "direct"):
        self.mesh = mesh
        self.spec = spec
        self.meas = meas
        self.reg = reg
        self.method = method
        self.mass = mass_matrix(mesh)

    def evaluate(self, pair: CoefficientPair) -> Evaluation:
        J, cache = misfit(self.mesh, pair, self.spec, self.meas, self.method)
        R = regularizer(self.mesh, pair, self.reg, self.mass)
        return Evaluation(pair, J, R, J + self.reg.rho * R, cache)

    def gradient(self, ev: Evaluation):
        if ev.grad is None:
            gq, ga = misfit_gradient(self.mesh, ev.pair, self.spec, self.meas, ev.cache)
            rq, ra = regularizer_gradient(self.mesh, ev.pair, self.reg, self.mass)
            ev.grad = (gq + self.reg.rho * rq, ga + self.reg.rho * ra)
        return ev.grad
