"""Finite-difference verification of adjoint gradients.

Evaluates the least-squares objective as a pure function of the stacked
(sigma, mu) vector (fresh solver state per call, tight tolerances) and
compares its central finite differences against the adjoint gradient in
random directions. With the discretization used here the adjoint gradient is
exact, so disagreement should sit at the solver-tolerance floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .direct import DatumSet
from .experiments import prepare_data
from .forward import NewtonConfig
from .lsq import Evaluator, auto_kappa
from .metrics import fd_directional_derivative


@dataclass
class GradCheckResult:
    relative_errors: np.ndarray
    adjoint_values: np.ndarray
    fd_values: np.ndarray
    step: float

    @property
    def max_relative_error(self) -> float:
        return float(self.relative_errors.max())

    def save(self, path):
        lines = ["direction,adjoint,fd,relative_error"]
        for k in range(len(self.relative_errors)):
            lines.append(f"{k},{self.adjoint_values[k]:.17g},"
                         f"{self.fd_values[k]:.17g},{self.relative_errors[k]:.17g}")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")


def gradient_check(cfg: ExperimentConfig, directions: int = 20, seed: int = 7,
                   step_scale: float = 1e-6,
                   kappa: float | str = "auto") -> GradCheckResult:
    """Compare the adjoint gradient of Phi with central differences.

    The trial point is a random within-bounds perturbation of the true
    coefficients, so the misfit (and its gradient) is genuinely nonzero.
    The FD step is step_scale times the coefficient field scale.
    """
    newton = NewtonConfig(residual_tol=1e-12, linear_tol=1e-12)
    bundle = prepare_data(cfg, newton=newton)
    mesh = bundle.mesh
    data = DatumSet(sources=list(bundle.sources),
                    data=[H.copy() for H in bundle.H_clean])
    if bundle.crime_guard:
        raise ValueError("gradient check expects data and reconstruction "
                         "on the same mesh")
    kap = auto_kappa(mesh, data) if kappa == "auto" else float(kappa)

    rng = np.random.default_rng(seed)
    n = mesh.node_count
    sigma = bundle.coeffs.single_photon * (1.0 + 0.3 * rng.uniform(-1, 1, n))
    mu = bundle.coeffs.two_photon * (1.0 + 0.3 * rng.uniform(-1, 1, n))
    x0 = np.concatenate([sigma, mu])
    scale = float(np.max(np.abs(x0)))
    step = step_scale * scale

    def phi(x):
        ev = Evaluator(mesh, bundle.coeffs.gruneisen, bundle.coeffs.diffusion,
                       data, kap, newton)
        value, _ = ev.objective(x[:n], x[n:])
        return value

    ev = Evaluator(mesh, bundle.coeffs.gruneisen, bundle.coeffs.diffusion,
                   data, kap, newton)
    g_sigma, g_mu = ev.gradient(sigma, mu)
    weights = np.concatenate([ev.lumped, ev.lumped])
    grad = np.concatenate([g_sigma, g_mu])

    adjoint_vals = np.empty(directions)
    fd_vals = np.empty(directions)
    rel = np.empty(directions)
    for k in range(directions):
        # exercise each coefficient alone as well as joint perturbations
        d = rng.uniform(-1.0, 1.0, 2 * n)
        if k % 3 == 0:
            d[n:] = 0.0
        elif k % 3 == 1:
            d[:n] = 0.0
        adjoint_vals[k] = float((weights * grad * d).sum())
        fd_vals[k] = fd_directional_derivative(phi, x0, d, step)
        denom = max(abs(adjoint_vals[k]), abs(fd_vals[k]), 1e-300)
        rel[k] = abs(adjoint_vals[k] - fd_vals[k]) / denom
    return GradCheckResult(relative_errors=rel, adjoint_values=adjoint_vals,
                           fd_values=fd_vals, step=step)
