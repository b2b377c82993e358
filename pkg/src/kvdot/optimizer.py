"""Projected gradient descent with a sufficient-decrease backtracking rule.

Each iteration takes the gradient at ``(q_n, a_n)``, tries the step sizes
1, 1/2, 1/4, ... and accepts the first whose box-projected trial point
satisfies

    U(trial) - U(current) <= -(beta / step) * ||trial - current||^2

with the Euclidean norm on nodal values by default. ``ReconConfig.metric``
can instead take the descent direction and step norm from the L2(Omega)
inner product (consistent or lumped mass matrix). The run stops once

    ||grad U(trial)||_{L2} <= kappa1 + kappa2 * ||grad U(initial)||_{L2},

after ``max_iters`` iterations, or when no step above the floor is accepted.
The test is also applied to the initial iterate, so a start that already
meets it returns after zero iterations.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from kvdot.errors import ConfigurationError
from kvdot.fem import BoxBounds
from kvdot.mesh import TriMesh
from kvdot.objective import CoefficientPair, Evaluation, Objective

log = logging.getLogger(__name__)

METRICS = ("euclidean", "l2", "lumped")
LOG_COLUMNS = ("iter", "beta_n", "J", "R", "Upsilon", "grad_L2", "tolerance")


def project_box(values, lo: float, hi: float) -> np.ndarray:
    """Clamp nodal values into ``[lo, hi]``."""
    if lo > hi:
        raise ConfigurationError(f"empty box [{lo}, {hi}]")
    return np.clip(np.asarray(values, dtype=float), lo, hi)


def project_pair(pair: CoefficientPair, bounds: BoxBounds) -> CoefficientPair:
    return CoefficientPair(
        project_box(pair.q, bounds.q_lo, bounds.q_hi),
        project_box(pair.a, bounds.a_lo, bounds.a_hi),
    )


@dataclass
class ReconConfig:
    """Settings for :func:`run_reconstruction`.

    ``kappa1`` and ``kappa2`` default to ``1e-3 * sqrt(h)`` of the mesh in use
    when left as ``None``.
    """

    q0: float = 1.5
    a0: float = 4.0
    max_iters: int = 800
    kappa1: float | None = None
    kappa2: float | None = None
    beta: float = 0.75
    step_floor: float = 2.0**-30
    metric: str = "euclidean"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if not 0 < self.beta < 1:
            raise ConfigurationError("beta must lie in (0, 1)")
        for k in (self.kappa1, self.kappa2):
            if k is not None and k < 0:
                raise ConfigurationError("kappa constants must be nonnegative")
        if self.metric not in METRICS:
            raise ConfigurationError(f"metric must be one of {METRICS}")
        if not 0 < self.step_floor <= 1:
            raise ConfigurationError("step_floor must lie in (0, 1]")

    def kappas(self, mesh: TriMesh):
        default = 1e-3 * np.sqrt(mesh.h)
        return (
            default if self.kappa1 is None else self.kappa1,
            default if self.kappa2 is None else self.kappa2,
        )


@dataclass
class StepResult:
    evaluation: Evaluation
    beta_n: float
    stalled: bool = False
    fixed_point: bool = False


class GradientMetric:
    """Inner product that turns the nodal derivative vector into a step direction.

    * ``"euclidean"``: the derivative vector itself, Euclidean step norm;
    * ``"l2"``: the L2(Omega) Riesz representer ``M^{-1} g`` with the
      consistent mass matrix ``M``, mass-weighted step norm;
    * ``"lumped"``: the same with the row-summed (diagonal) mass matrix.
    """

    def __init__(self, name: str, mass):
        if name not in METRICS:
            raise ConfigurationError(f"metric must be one of {METRICS}")
        self.name = name
        self.mass = mass
        self.lumped = np.asarray(mass.sum(axis=1)).ravel()
        self._mass_solve = spla.factorized(sp.csc_matrix(mass)) if name == "l2" else None

    def direction(self, grad):
        if self.name == "euclidean":
            return grad
        if self.name == "lumped":
            return tuple(g / self.lumped for g in grad)
        return tuple(self._mass_solve(g) for g in grad)

    def norm_sq(self, v) -> float:
        if self.name == "euclidean":
            return float(v @ v)
        if self.name == "lumped":
            return float(self.lumped @ (v * v))
        return float(v @ (self.mass @ v))

    def l2_norm(self, direction) -> float:
        """L2(Omega) norm of the direction read as a pair of P1 fields."""
        return float(np.sqrt(sum(max(d @ (self.mass @ d), 0.0) for d in direction)))


def line_search_step(objective, current: Evaluation, direction, bounds: BoxBounds,
                     beta: float = 0.75, step_floor: float = 2.0**-30,
                     norm_sq=None) -> StepResult:
    """Largest step in {1, 1/2, 1/4, ...} meeting the sufficient-decrease test.

    ``objective`` needs an ``evaluate(pair) -> Evaluation`` method and
    ``direction`` is the (q, a) descent representer. ``norm_sq`` measures
    the projected step and defaults to the Euclidean norm. A zero projected
    step is accepted at ``beta_n = 1`` and flagged as a fixed point; if
    every step down to ``step_floor`` fails, the current point is returned
    with ``beta_n = 0`` and ``stalled=True``.
    """
    if norm_sq is None:
        norm_sq = lambda v: float(v @ v)  # noqa: E731
    gq, ga = direction
    q, a = current.pair.q, current.pair.a
    step = 1.0
    while step >= step_floor:
        trial = project_pair(CoefficientPair(q - step * gq, a - step * ga), bounds)
        if np.array_equal(trial.q, q) and np.array_equal(trial.a, a):
            return StepResult(current, step, fixed_point=True)
        moved = norm_sq(trial.q - q) + norm_sq(trial.a - a)
        ev = objective.evaluate(trial)
        if ev.value - current.value <= -(beta / step) * moved:
            return StepResult(ev, step)
        step *= 0.5
    return StepResult(current, 0.0, stalled=True)


@dataclass
class ReconState:
    """Iterate, counters and per-iteration log of a reconstruction run."""

    pair: CoefficientPair
    iteration: int = 0
    value: float = np.nan
    grad: tuple | None = field(default=None, repr=False)
    log: list = field(default_factory=list)
    status: str = "running"

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in self.log:
                w.writerow([row["iter"]] + [f"{row[c]:.10e}" for c in LOG_COLUMNS[1:]])


def run_reconstruction(mesh: TriMesh, spec, meas, reg_cfg, recon_cfg: ReconConfig | None = None,
                       warm_start: CoefficientPair | None = None, method: str = "direct",
                       callback=None) -> ReconState:
    """Minimize the regularized Kohn-Vogelius objective over the coefficient box.

    ``callback(state)`` is called after every iteration, e.g. for
    checkpointing. The returned state's ``status`` is ``"converged"``,
    ``"max_iters"``, ``"stalled"`` or ``"fixed_point"``. An exception raised
    mid-run carries the state reached so far as ``partial_state``.
    """
    cfg = recon_cfg or ReconConfig()
    bounds = spec.bounds
    objective = Objective(mesh, spec, meas, reg_cfg, method)
    metric = GradientMetric(cfg.metric, objective.mass)
    kappa1, kappa2 = cfg.kappas(mesh)

    start = warm_start if warm_start is not None else CoefficientPair.constant(mesh, cfg.q0, cfg.a0)
    start = project_pair(start, bounds)
    current = objective.evaluate(start)
    grad = metric.direction(objective.gradient(current))
    g0 = metric.l2_norm(grad)
    state = ReconState(start, 0, current.value, grad)
    tolerance = g0 - kappa1 - kappa2 * g0
    state.log.append(_row(0, 0.0, current, g0, tolerance))
    if tolerance <= 0:
        state.status = "converged"
        log.info("tau=%d: initial iterate already meets the tolerance", mesh.tau)
        return state

    n = 0
    try:
        while n <= cfg.max_iters:
            step = line_search_step(objective, current, grad, bounds, cfg.beta, cfg.step_floor,
                                    metric.norm_sq)
            if step.stalled:
                state.status = "stalled"
                break
            current = step.evaluation
            grad = metric.direction(objective.gradient(current))
            gnorm = metric.l2_norm(grad)
            tolerance = gnorm - kappa1 - kappa2 * g0
            n += 1
            state.pair, state.iteration, state.value, state.grad = current.pair, n, current.value, grad
            state.log.append(_row(n, step.beta_n, current, gnorm, tolerance))
            if callback is not None:
                callback(state)
            if tolerance <= 0:
                state.status = "converged"
                break
            if step.fixed_point:
                state.status = "fixed_point"
                break
        else:
            state.status = "max_iters"
    except Exception as exc:
        state.status = "failed"
        exc.partial_state = state
        raise
    log.info("tau=%d: %s after %d iterations, U=%.6e", mesh.tau, state.status, n, state.value)
    return state


def _row(n, beta_n, ev: Evaluation, gnorm, tolerance):
    return {
        "iter": n, "beta_n": beta_n, "J": ev.J, "R": ev.R, "Upsilon": ev.value,
        "grad_L2": gnorm, "tolerance": tolerance,
    }
