"""Synthetic test case on the square: truth, data, noise, ladder and errors.

The diffusion truth is 2 / 1 / 3 on the vertical strips split at
x1 = -1/2 and x1 = 1/2; the reaction truth is 3 below x2 = 0 and 5 above.
Fluxes on Gamma are constant on four segments,

    A on (0, 1) x {-1},   B on [-1, 0] x {-1},
    C on {-1} x (-1, 0],  D on {-1} x (0, 1),

with the default pattern (A, B, C, D) = (-1, 1, -2, 3). Dirichlet data are
traces of the Neumann-Robin state at the truth.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from kvdot import fem
from kvdot.errors import ConfigurationError
from kvdot.fem import BoundaryDatum, ProblemSpec, StateSolver
from kvdot.mesh import ALL, COMPLEMENT, GAMMA, NodalField, TriMesh, build_mesh, prolongate
from kvdot.objective import CoefficientPair, MeasurementSet, RegConfig
from kvdot.optimizer import ReconConfig, ReconState, run_reconstruction

log = logging.getLogger(__name__)

DEFAULT_PATTERN = (-1.0, 1.0, -2.0, 3.0)
REPORT_COLUMNS = ("tau", "delta", "E_qa", "E_N", "E_M", "E_D")


def q_true(x, y):
    """Diffusion truth; points on x1 = +-1/2 take the value of the left strip."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= -0.5, 2.0, np.where(x <= 0.5, 1.0, 3.0))


def a_true(x, y):
    """Reaction truth; points on x2 = 0 take the value of the lower half."""
    y = np.asarray(y, dtype=float)
    return np.where(y <= 0.0, 3.0, 5.0)


@dataclass
class GroundTruth:
    q: np.ndarray
    a: np.ndarray
    pattern: tuple = DEFAULT_PATTERN

    @property
    def pair(self) -> CoefficientPair:
        return CoefficientPair(self.q, self.a)


def synthesize_truth(mesh: TriMesh, pattern=DEFAULT_PATTERN) -> GroundTruth:
    """Nodal interpolants of the piecewise-constant truth (tau divisible by 4)."""
    if mesh.tau % 4:
        raise ConfigurationError(f"tau must be divisible by 4 for the test case, got {mesh.tau}")
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    return GroundTruth(q_true(x, y), a_true(x, y), tuple(pattern))


def flux_pattern(mesh: TriMesh, pattern) -> BoundaryDatum:
    """Edgewise-constant flux on Gamma for constants (A, B, C, D)."""
    A, B, C, D = pattern
    edges = mesh.edges(GAMMA)
    mid = mesh.nodes[mesh.boundary_edges[edges]].mean(axis=1)
    bottom = np.isclose(mid[:, 1], -1.0)
    values = np.where(
        bottom,
        np.where(mid[:, 0] > 0.0, A, B),
        np.where(mid[:, 1] <= 0.0, C, D),
    )
    return BoundaryDatum("edge", values.astype(float), GAMMA, "neumann")


def exact_data(mesh: TriMesh, truth: GroundTruth, spec: ProblemSpec, pattern=None,
               data_mesh_factor: int = 1, method: str = "direct"):
    """Exact Cauchy pair ``(j, g)`` on Gamma for the given flux pattern.

    With ``data_mesh_factor > 1`` the Neumann-Robin problem is solved on a
    mesh refined by that factor and its trace restricted to ``mesh``.
    """
    pattern = truth.pattern if pattern is None else tuple(pattern)
    j = flux_pattern(mesh, pattern)
    if data_mesh_factor == 1:
        u = StateSolver(mesh, truth.q, truth.a, spec, method).neumann(j)
        return j, fem.trace_gamma(mesh, u)
    fine = build_mesh(mesh.tau * int(data_mesh_factor))
    ft = synthesize_truth(fine, pattern)
    u = StateSolver(fine, ft.q, ft.a, spec, method).neumann(flux_pattern(fine, pattern))
    r = int(data_mesh_factor)
    coarse_nodes = mesh.gamma_nodes
    ci, cj = coarse_nodes % (mesh.tau + 1), coarse_nodes // (mesh.tau + 1)
    g = u[r * ci + r * cj * (fine.tau + 1)]
    return j, BoundaryDatum("node", g, GAMMA, "dirichlet")


def example1_theta(mesh: TriMesh) -> float:
    """Noise amplitude h * sqrt(10 * rho) with rho = 1e-3 * sqrt(h)."""
    h = mesh.h
    return h * np.sqrt(10.0 * 1e-3 * np.sqrt(h))


@dataclass
class NoiseModel:
    """Uniform noise ``r * theta`` with ``r ~ U(-1, 1)`` per boundary unknown.

    ``theta`` is a number or ``"example1"`` for the mesh-dependent rule.
    """

    theta: float | str = "example1"
    seed: int = 0

    def amplitude(self, mesh: TriMesh) -> float:
        if self.theta == "example1":
            return example1_theta(mesh)
        theta = float(self.theta)
        if theta < 0:
            raise ConfigurationError("theta must be nonnegative")
        return theta

    def rng(self, mesh: TriMesh) -> np.random.Generator:
        return np.random.default_rng([int(self.seed), mesh.tau])


def add_noise(mesh: TriMesh, j: BoundaryDatum, g: BoundaryDatum, theta: float, rng):
    """Perturb every edge value of ``j`` and node value of ``g`` independently.

    Returns ``(j_noisy, g_noisy, delta)`` with
    ``delta = ||j_noisy - j||_{L2(Gamma)} + ||g_noisy - g||_{L2(Gamma)}``.
    """
    rj = BoundaryDatum(j.kind, theta * rng.uniform(-1.0, 1.0, j.values.shape), j.region, j.role)
    rg = BoundaryDatum(g.kind, theta * rng.uniform(-1.0, 1.0, g.values.shape), g.region, g.role)
    delta = fem.boundary_l2_norm(mesh, rj, GAMMA) + fem.boundary_l2_norm(mesh, rg, GAMMA)
    return j + rj, g + rg, delta


def measurement_patterns(mode: str = "single", count: int = 16):
    """Flux patterns for ``"single"``, ``"six"`` or ``"sixteen"`` measurements.

    ``"six"`` orders (-1, 1, -2) in all 6 ways with D = 3. ``"sixteen"``
    takes the first ``count`` orderings of (-1, 1, -2, 3) in
    :func:`itertools.permutations` order (there are 24 in total).
    """
    if mode == "single":
        return [DEFAULT_PATTERN]
    if mode == "six":
        return [p + (3.0,) for p in itertools.permutations(DEFAULT_PATTERN[:3])]
    if mode == "sixteen":
        if not 1 <= count <= 24:
            raise ConfigurationError("sixteen-mode count must be between 1 and 24")
        return list(itertools.permutations(DEFAULT_PATTERN))[:count]
    raise ConfigurationError(f"unknown measurement mode {mode!r}")


def permutation_measurements(mesh: TriMesh, truth: GroundTruth, spec: ProblemSpec,
                             mode: str = "single", noise: NoiseModel | None = None,
                             count: int = 16, data_mesh_factor: int = 1,
                             method: str = "direct") -> MeasurementSet:
    """Noisy measurement set; ``delta`` is the mean per-pair noise level."""
    noise = noise or NoiseModel(0.0)
    theta = noise.amplitude(mesh)
    rng = noise.rng(mesh)
    pairs, deltas = [], []
    patterns = measurement_patterns(mode, count)
    for pattern in patterns:
        j, g = exact_data(mesh, truth, spec, pattern, data_mesh_factor, method)
        jd, gd, d = add_noise(mesh, j, g, theta, rng)
        pairs.append((jd, gd))
        deltas.append(d)
    return MeasurementSet(tuple(pairs), float(np.mean(deltas)), tuple(tuple(p) for p in patterns))


@dataclass
class ErrorReport:
    tau: int
    delta: float
    E_qa: float
    E_N: float
    E_M: float
    E_D: float
    E_qa_exact: float = np.nan
    I: int = 1
    theta: float = np.nan
    iterations: int = 0
    status: str = ""

    def row(self):
        return [self.tau] + [getattr(self, c) for c in REPORT_COLUMNS[1:]]


def compute_errors(mesh: TriMesh, pair: CoefficientPair, truth: GroundTruth, spec: ProblemSpec,
                   meas: MeasurementSet, index: int = 0, method: str = "direct") -> ErrorReport:
    """Coefficient and state errors of ``pair`` against the truth.

    ``E_qa`` compares against the nodal interpolant of the truth (exactly,
    via the mass matrix), so it vanishes at the truth; ``E_qa_exact``
    integrates against the discontinuous truth itself with a degree-4 rule
    per triangle. The state errors use measurement ``index`` and its exact
    counterpart.
    """
    M = fem.mass_matrix(mesh)
    E_qa = fem.l2_norm(mesh, pair.q - truth.q, M) + fem.l2_norm(mesh, pair.a - truth.a, M)
    E_qa_exact = fem.l2_error(mesh, pair.q, q_true) + fem.l2_error(mesh, pair.a, a_true)

    pattern = meas.patterns[index] if meas.patterns else truth.pattern
    j_true, g_true = exact_data(mesh, truth, spec, pattern, method=method)
    j_d, g_d = meas.pairs[index]

    rec = StateSolver(mesh, pair.q, pair.a, spec, method)
    ref = StateSolver(mesh, truth.q, truth.a, spec, method)
    n_true = ref.neumann(j_true)
    E_N = fem.l2_norm(mesh, rec.neumann(j_d) - n_true, M)
    E_M = fem.l2_norm(mesh, rec.mixed(g_d) - ref.mixed(g_true), M)

    g_hat = n_true[mesh.boundary_nodes]
    g_mix = g_hat.copy()
    lookup = np.full(mesh.n_nodes, -1)
    lookup[mesh.boundary_nodes] = np.arange(len(mesh.boundary_nodes))
    g_mix[lookup[mesh.gamma_nodes]] = g_d.values
    E_D = fem.l2_norm(mesh, rec.dirichlet(g_mix) - ref.dirichlet(g_hat), M)

    return ErrorReport(mesh.tau, meas.delta, E_qa, E_N, E_M, E_D, E_qa_exact, meas.count)


@dataclass
class ExperimentConfig:
    """Everything needed to rerun one of the numerical studies."""

    tau_levels: tuple = (4, 8, 16, 32)
    theta: float | str = "example1"
    seed: int = 0
    measurement_mode: str = "single"
    sixteen_count: int = 16
    rho_factor: float = 1e-3
    eps_factor: float = 1e-3
    data_mesh_factor: int = 1
    recon: ReconConfig = field(default_factory=ReconConfig)
    method: str = "direct"
    output_dir: str | None = None

    def __post_init__(self):
        levels = tuple(int(t) for t in self.tau_levels)
        if not levels:
            raise ConfigurationError("tau_levels must not be empty")
        for coarse, fine in zip(levels, levels[1:]):
            if fine != 2 * coarse:
                raise ConfigurationError(f"tau levels must double, got {levels}")
        for t in levels:
            if t % 4:
                raise ConfigurationError(f"tau levels must be divisible by 4, got {t}")
        self.tau_levels = levels


@dataclass
class LevelResult:
    mesh: TriMesh
    truth: GroundTruth
    measurements: MeasurementSet
    initial: CoefficientPair
    state: ReconState
    report: ErrorReport


def run_level(mesh: TriMesh, config: ExperimentConfig, warm_start: CoefficientPair | None = None,
              spec: ProblemSpec | None = None, callback=None) -> LevelResult:
    spec = spec or ProblemSpec()
    truth = synthesize_truth(mesh)
    noise = NoiseModel(config.theta, config.seed)
    meas = permutation_measurements(
        mesh, truth, spec, config.measurement_mode, noise, config.sixteen_count,
        config.data_mesh_factor, config.method,
    )
    reg = RegConfig.for_mesh(mesh, config.rho_factor, config.eps_factor)
    initial = warm_start or CoefficientPair.constant(mesh, config.recon.q0, config.recon.a0)
    state = run_reconstruction(mesh, spec, meas, reg, config.recon, initial, config.method, callback)
    report = compute_errors(mesh, state.pair, truth, spec, meas, method=config.method)
    report = replace(report, theta=noise.amplitude(mesh), iterations=state.iteration, status=state.status)
    log.info("tau=%d delta=%.4e E_qa=%.4e E_N=%.4e E_M=%.4e E_D=%.4e", mesh.tau, report.delta,
             report.E_qa, report.E_N, report.E_M, report.E_D)
    return LevelResult(mesh, truth, meas, initial, state, report)


def run_ladder(config: ExperimentConfig, spec: ProblemSpec | None = None, on_level=None,
               callback=None):
    """Run the refinement ladder, warm-starting each level from the previous one.

    ``on_level(result)`` is called after each level and ``callback(state)``
    after every optimizer iteration. If a level raises, the
    completed levels are attached to the exception as ``partial_results``.
    """
    results = []
    warm = None
    for tau in config.tau_levels:
        mesh = build_mesh(tau)
        if results:
            prev = results[-1]
            warm = CoefficientPair(
                prolongate(NodalField(prev.state.pair.q, prev.mesh.tau), tau).values,
                prolongate(NodalField(prev.state.pair.a, prev.mesh.tau), tau).values,
            )
        try:
            result = run_level(mesh, config, warm, spec, callback)
        except Exception as exc:
            exc.partial_results = results
            raise
        results.append(result)
        if on_level is not None:
            on_level(result)
    return results
