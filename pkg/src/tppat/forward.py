"""Forward model: the semilinear diffusion boundary-value problem.

Solves  -div(gamma grad u) + sigma u + mu |u| u = 0  in (-1,1)^2 with
Dirichlet data u = g, produces the internal datum H = Gamma (sigma u +
mu |u| u), and applies the multiplicative uniform noise model.

Discretization: P1 stiffness with exact quadrature; reaction terms by group
FEM with row-sum lumped mass (interpolate the nonlinearity nodally, scale by
the lumped mass). With lumping the exact Jacobian of the discrete residual is
the symmetric operator K + diag(m * (sigma + 2 mu |u|)), i.e. precisely the
discretization of the linearized equation used by the sensitivity and adjoint
solves. Newton with backtracking damping is then globally robust and the
adjoint gradients downstream are exact for the discrete objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .errors import SolverError, ValidationError
from .fem import CoefficientSet, as_field
from .mesh import Mesh


class BoundarySource:
    """Photon source strength g on the boundary nodes of a mesh.

    values maps every boundary node index to a real strength. The source is
    flagged strictly positive when min g > 0; several reconstruction routines
    require that.
    """

    def __init__(self, mesh: Mesh, values: dict):
        keys = {int(k) for k in values}
        if keys != set(mesh.boundary_nodes):
            missing = sorted(set(mesh.boundary_nodes) - keys)[:5]
            extra = sorted(keys - set(mesh.boundary_nodes))[:5]
            raise ValidationError(
                f"boundary source must cover exactly the boundary nodes "
                f"(missing {missing}, extra {extra})")
        self.mesh = mesh
        self.values = {int(k): float(v) for k, v in values.items()}
        self._ordered = np.array([self.values[int(i)] for i in mesh.boundary_list])

    @classmethod
    def constant(cls, mesh: Mesh, value: float) -> "BoundarySource":
        return cls(mesh, {int(i): float(value) for i in mesh.boundary_nodes})

    @classmethod
    def from_function(cls, mesh: Mesh, fn) -> "BoundarySource":
        return cls(mesh, {int(i): float(fn(mesh.nodes[i, 0], mesh.nodes[i, 1]))
                          for i in mesh.boundary_nodes})

    @property
    def ordered_values(self) -> np.ndarray:
        """Values in the order of mesh.boundary_list."""
        return self._ordered

    @property
    def min_value(self) -> float:
        return float(self._ordered.min())

    @property
    def max_value(self) -> float:
        return float(self._ordered.max())

    @property
    def is_strictly_positive(self) -> bool:
        return self.min_value > 0.0

    def require_strictly_positive(self, epsilon: float = 0.0):
        if self.min_value <= epsilon:
            raise ValidationError(
                f"boundary source must satisfy g > {epsilon:g} everywhere "
                f"(min is {self.min_value:g})")
        return self


@dataclass
class NewtonConfig:
    residual_tol: float = 1e-10
    max_iterations: int = 50
    damping: float = 0.5
    linear_tol: float = fem.DEFAULT_TOL

    def __post_init__(self):
        if self.residual_tol <= 0.0:
            raise ValidationError("residual_tol must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not 0.0 < self.damping < 1.0:
            raise ValidationError("damping factor must lie in (0, 1)")


@dataclass
class SolverReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False


class ForwardOperator:
    """Cached discrete operators for one (mesh, gamma) pair.

    The stiffness matrix and its Dirichlet split depend only on gamma, so the
    Newton loop, the repeated solves inside the least-squares iteration, and
    the direct-reconstruction solve all share them.
    """

    def __init__(self, mesh: Mesh, gamma, linear_tol: float = fem.DEFAULT_TOL):
        self.mesh = mesh
        self.gamma = as_field(mesh, gamma)
        self.K = fem.assemble_stiffness(mesh, self.gamma)
        self.split = fem.DirichletSystem(mesh, self.K)
        self.lumped = fem.lumped_mass(mesh)
        self.interior = self.split.interior
        self.boundary = self.split.boundary
        self.linear_tol = linear_tol

    def residual_interior(self, u, sigma, mu):
        nonlin = self.lumped * (sigma * u + mu * np.abs(u) * u)
        return (self.K @ u)[self.interior] + nonlin[self.interior]

    def jacobian_weight(self, u, sigma, mu):
        """Nodal weight sigma + 2 mu |u| of the linearized operator."""
        return sigma + 2.0 * mu * np.abs(u)

    def linearized_matrix(self, u, sigma, mu) -> sp.csr_matrix:
        w = (self.lumped * self.jacobian_weight(u, sigma, mu))[self.interior]
        return self.split.operator(w)

    def solve_linearized(self, u, sigma, mu, rhs_interior, tol=None,
                         x0=None) -> np.ndarray:
        """Solve the linearized equation with homogeneous Dirichlet data."""
        A = self.linearized_matrix(u, sigma, mu)
        x = fem.solve_linear(A, rhs_interior, self.linear_tol if tol is None else tol,
                             x0=x0)
        return self.split.expand(x, np.zeros(len(self.boundary)))

    def solve_reaction(self, weight, g: BoundarySource, load_nodal=None,
                       tol=None) -> np.ndarray:
        """Solve -div(gamma grad u) + weight * u = load with u = g on the boundary."""
        w = (self.lumped * as_field(self.mesh, weight))[self.interior]
        A = self.split.operator(w)
        rhs = -(self.K_ib @ g.ordered_values)
        if load_nodal is not None:
            rhs = rhs + (self.lumped * as_field(self.mesh, load_nodal))[self.interior]
        x = fem.solve_linear(A, rhs, self.linear_tol if tol is None else tol)
        return self.split.expand(x, g.ordered_values)

    @property
    def K_ib(self):
        return self.split.K_ib


def solve_semilinear(mesh: Mesh, coeffs: CoefficientSet, g: BoundarySource,
                     cfg: NewtonConfig | None = None, u0: np.ndarray | None = None,
                     operator: ForwardOperator | None = None):
    """Newton solve of the discrete semilinear problem.

    Returns (u, report) with u matching g exactly on boundary nodes and the
    interior residual norm at most cfg.residual_tol. Accepted steps never
    increase the residual norm (backtracking with factor cfg.damping). The
    initial iterate is the solution of the linear problem with mu = 0, unless
    a warm start u0 is supplied.
    """
    cfg = cfg or NewtonConfig()
    coeffs.validate(mesh)
    if g.mesh is not mesh and set(g.values) != set(mesh.boundary_nodes):
        raise ValidationError("boundary source does not match the mesh")
    if operator is not None and not np.array_equal(operator.gamma,
                                                   coeffs.diffusion):
        raise ValidationError(
            "cached operator was assembled for a different diffusion field")
    op = operator or ForwardOperator(mesh, coeffs.diffusion, cfg.linear_tol)
    sigma = as_field(mesh, coeffs.single_photon)
    mu = as_field(mesh, coeffs.two_photon)

    if u0 is None:
        u = op.solve_reaction(sigma, g, tol=cfg.linear_tol)
    else:
        u = as_field(mesh, u0)
        u[op.boundary] = g.ordered_values

    report = SolverReport()
    F = op.residual_interior(u, sigma, mu)
    rnorm = float(np.linalg.norm(F))
    report.residual_history.append(rnorm)

    for _ in range(cfg.max_iterations):
        if rnorm <= cfg.residual_tol:
            report.converged = True
            return u, report
        A = op.linearized_matrix(u, sigma, mu)
        delta_i = fem.solve_linear(A, -F, cfg.linear_tol)
        delta = op.split.expand(delta_i, np.zeros(len(op.boundary)))

        alpha = 1.0
        accepted = False
        for _ in range(40):
            trial = u + alpha * delta
            F_trial = op.residual_interior(trial, sigma, mu)
            rnorm_trial = float(np.linalg.norm(F_trial))
            if rnorm_trial < rnorm:
                u, F, rnorm = trial, F_trial, rnorm_trial
                accepted = True
                break
            alpha *= cfg.damping
        if not accepted:
            raise SolverError(
                f"Newton line search stalled at residual {rnorm:.3e}",
                residual=rnorm, report=report)
        report.iterations += 1
        report.residual_history.append(rnorm)

    if rnorm <= cfg.residual_tol:
        report.converged = True
        return u, report
    raise SolverError(
        f"Newton did not reach residual {cfg.residual_tol:g} in "
        f"{cfg.max_iterations} iterations (residual {rnorm:.3e})",
        residual=rnorm, report=report)


def compute_datum(coeffs: CoefficientSet, u: np.ndarray) -> np.ndarray:
    """Internal datum H = Gamma (sigma u + mu |u| u), evaluated nodewise."""
    u = np.asarray(u, dtype=float)
    for name in ("gruneisen", "single_photon", "two_photon"):
        if np.asarray(getattr(coeffs, name)).shape != u.shape:
            raise ValidationError(f"coefficient {name} does not match the field shape")
    return coeffs.gruneisen * (coeffs.single_photon * u
                               + coeffs.two_photon * np.abs(u) * u)


def add_noise(H: np.ndarray, epsilon: float, seed) -> np.ndarray:
    """Multiply each nodal value by 1 + sqrt(3) * epsilon/100 * r, r ~ U[-1, 1].

    epsilon is the noise level in percent (the standard deviation of the
    multiplier is epsilon/100). Deterministic for a given seed.
    """
    if epsilon < 0.0:
        raise ValidationError(f"noise level must be nonnegative, got {epsilon}")
    H = np.asarray(H, dtype=float)
    if epsilon == 0.0:
        return H.copy()
    rng = np.random.default_rng(seed)
    r = rng.uniform(-1.0, 1.0, size=H.shape)
    return H * (1.0 + np.sqrt(3.0) * epsilon * 1e-2 * r)
