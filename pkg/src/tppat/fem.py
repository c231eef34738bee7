"""P1 finite-element assembly and sparse linear solves.

Coefficients live as nodal fields (piecewise-linear interpolants). Stiffness
and mass integrals of products of linears are evaluated exactly. The linear
solver is conjugate gradients with diagonal (Jacobi) preconditioning, which is
deterministic and keeps the Dirichlet-eliminated SPD structure assumptions
explicit.

Nodal fields serialize as CSV with header ``node,value``, one row per node in
mesh order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import MeshFormatError, SolverError, ValidationError
from .mesh import Mesh

DEFAULT_TOL = 1e-10


def as_field(mesh: Mesh, values) -> np.ndarray:
    """Coerce to a float array with one value per mesh node."""
    arr = np.asarray(values, dtype=float)
    if np.isscalar(values) or arr.ndim == 0:
        return np.full(mesh.node_count, float(arr))
    if arr.shape != (mesh.node_count,):
        raise ValidationError(
            f"field has {arr.shape} values, mesh has {mesh.node_count} nodes")
    return arr.copy()


@dataclass
class CoefficientSet:
    """The quadruple (Gamma, gamma, sigma, mu) of positive nodal fields.

    gruneisen: photoacoustic efficiency Gamma; diffusion: gamma;
    single_photon: sigma; two_photon: mu. All must be bounded away from zero.
    """

    gruneisen: np.ndarray
    diffusion: np.ndarray
    single_photon: np.ndarray
    two_photon: np.ndarray

    def validate(self, mesh: Mesh, floor: float = 0.0):
        for name in ("gruneisen", "diffusion", "single_photon", "two_photon"):
            vals = as_field(mesh, getattr(self, name))
            setattr(self, name, vals)
            if not np.all(np.isfinite(vals)):
                raise ValidationError(f"coefficient {name} has non-finite values")
            if vals.min() <= floor:
                raise ValidationError(
                    f"coefficient {name} must exceed {floor:g} everywhere "
                    f"(min is {vals.min():g})")
        return self


def _triangle_geometry(mesh: Mesh):
    """Per-triangle areas and P1 gradient vectors, vectorized over triangles."""
    p = mesh.nodes
    t = mesh.triangles
    a, b, c = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) \
        - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    area = 0.5 * det
    # grad phi_i = perp(edge opposite i) / (2 area)
    grads = np.empty((len(t), 3, 2))
    grads[:, 0, 0] = b[:, 1] - c[:, 1]
    grads[:, 0, 1] = c[:, 0] - b[:, 0]
    grads[:, 1, 0] = c[:, 1] - a[:, 1]
    grads[:, 1, 1] = a[:, 0] - c[:, 0]
    grads[:, 2, 0] = a[:, 1] - b[:, 1]
    grads[:, 2, 1] = b[:, 0] - a[:, 0]
    grads /= det[:, None, None]
    return area, grads


def assemble_stiffness(mesh: Mesh, gamma) -> sp.csr_matrix:
    """Stiffness matrix K[i,j] = ∫ gamma ∇phi_i·∇phi_j, gamma piecewise linear.

    Since P1 gradients are constant per triangle the integral is exact with
    the mean of the vertex values of gamma (equivalently the mid-edge rule).
    K is symmetric positive semidefinite with constants in its kernel.
    """
    gamma = as_field(mesh, gamma)
    area, grads = _triangle_geometry(mesh)
    gbar = gamma[mesh.triangles].mean(axis=1)
    local = np.einsum("tid,tjd->tij", grads, grads) * (gbar * area)[:, None, None]
    return _scatter(mesh, local)


def assemble_weighted_mass(mesh: Mesh, weight) -> sp.csr_matrix:
    """Consistent mass matrix M[i,j] = ∫ w phi_i phi_j with w piecewise linear.

    Exact closed form for products of three linears on a triangle:
    diagonal (6 w_i + 2 w_j + 2 w_k)|T|/60, off-diagonal (2 w_i + 2 w_j + w_k)|T|/60.
    """
    weight = as_field(mesh, weight)
    if not np.all(np.isfinite(weight)):
        raise ValidationError("mass weight has non-finite values")
    area, _ = _triangle_geometry(mesh)
    w = weight[mesh.triangles]          # (T, 3)
    local = np.empty((len(area), 3, 3))
    for i in range(3):
        for j in range(3):
            k = 3 - i - j if i != j else (i + 1) % 3
            if i == j:
                coeff = 6.0 * w[:, i] + 2.0 * w[:, (i + 1) % 3] + 2.0 * w[:, (i + 2) % 3]
            else:
                coeff = 2.0 * w[:, i] + 2.0 * w[:, j] + w[:, k]
            local[:, i, j] = coeff * area / 60.0
    return _scatter(mesh, local)


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Row-sum lumped unweighted mass: m_i = ∫ phi_i = sum of |T|/3 over incident T."""
    area, _ = _triangle_geometry(mesh)
    m = np.zeros(mesh.node_count)
    np.add.at(m, mesh.triangles.ravel(), np.repeat(area / 3.0, 3))
    return m


def load_from_field(mesh: Mesh, values, lumped: np.ndarray | None = None) -> np.ndarray:
    """Load vector of a nodal source field under lumped quadrature: b_i = m_i f_i."""
    f = as_field(mesh, values)
    m = lumped_mass(mesh) if lumped is None else lumped
    return m * f


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.node_count
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    return mat.tocsr()


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, boundary_values: dict,
                    mesh: Mesh | None = None):
    """Impose u = value at the given nodes by symmetric elimination.

    Rows and columns of constrained nodes are replaced by the identity; the
    eliminated columns move to the right-hand side so symmetry (and SPD-ness
    on the free block) is preserved. When a mesh is supplied, values at
    non-boundary nodes are rejected.
    """
    if mesh is not None:
        for node in boundary_values:
            if int(node) not in mesh.boundary_nodes:
                raise ValidationError(
                    f"Dirichlet value specified for non-boundary node {node}")
    n = A.shape[0]
    idx = np.array(sorted(int(k) for k in boundary_values), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError("Dirichlet node index out of range")
    vals = np.array([float(boundary_values[int(k)]) for k in idx])

    A = A.tocsr().copy()
    b = np.asarray(b, dtype=float).copy()
    g = np.zeros(n)
    g[idx] = vals
    b -= A @ g
    b[idx] = vals

    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    A = A.tolil()
    A[idx, :] = 0.0
    A[:, idx] = 0.0
    A = A.tocsr()
    A = A + sp.diags(mask.astype(float))
    A.eliminate_zeros()
    return A.tocsr(), b


def solve_linear(A: sp.spmatrix, b: np.ndarray, tol: float = DEFAULT_TOL,
                 max_iterations: int | None = None, x0: np.ndarray | None = None):
    """Jacobi-preconditioned conjugate gradients for SPD systems.

    Returns x with relative residual ||Ax - b|| / ||b|| <= tol (x = 0 when
    b = 0). Raises SolverError with the final residual on non-convergence.
    """
    A = A.tocsr()
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n)
    if max_iterations is None:
        max_iterations = max(1000, 20 * n)

    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("matrix diagonal must be positive for Jacobi-CG")
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    target = tol * bnorm

    for _ in range(max_iterations):
        if np.linalg.norm(r) <= target:
            return x
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise SolverError("matrix is not positive definite (p^T A p <= 0)",
                              residual=float(np.linalg.norm(r)) / bnorm)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    res = float(np.linalg.norm(b - A @ x)) / bnorm
    if res <= tol:
        return x
    raise SolverError(
        f"CG failed to reach tol {tol:g} in {max_iterations} iterations "
        f"(relative residual {res:.3e})", residual=res)


class DirichletSystem:
    """Interior/boundary split of a symmetric operator for repeated solves.

    Precomputes the interior block and the interior-boundary coupling so that
    solves with varying diagonal reaction terms or right-hand sides reuse the
    sparse structure.
    """

    def __init__(self, mesh: Mesh, K: sp.spmatrix):
        self.mesh = mesh
        self.interior = mesh.interior_list
        self.boundary = mesh.boundary_list
        K = K.tocsr()
        self.K_ii = K[self.interior][:, self.interior].tocsr()
        self.K_ib = K[self.interior][:, self.boundary].tocsr()

    def operator(self, reaction_diag_interior=None) -> sp.csr_matrix:
        """Interior block of K plus a diagonal reaction term."""
        if reaction_diag_interior is None:
            return self.K_ii
        return (self.K_ii + sp.diags(reaction_diag_interior)).tocsr()

    def expand(self, x_interior: np.ndarray, boundary_values: np.ndarray) -> np.ndarray:
        full = np.empty(self.mesh.node_count)
        full[self.interior] = x_interior
        full[self.boundary] = boundary_values
        return full


def save_field(path, values) -> None:
    """Write a nodal field as CSV with header ``node,value``."""
    values = np.asarray(values, dtype=float)
    lines = ["node,value"]
    for i, v in enumerate(values):
        lines.append(f"{i},{v:.17g}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field(path, mesh: Mesh | None = None) -> np.ndarray:
    """Read a nodal field CSV; validates the header, node order and count."""
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0].strip() != "node,value":
        raise MeshFormatError("expected header 'node,value'", line=1)
    values = []
    for lineno, ln in enumerate(raw[1:], start=2):
        if not ln.strip():
            continue
        parts = ln.split(",")
        if len(parts) != 2:
            raise MeshFormatError(f"expected 'node,value', got {ln!r}", line=lineno)
        try:
            idx = int(parts[0])
            val = float(parts[1])
        except ValueError:
            raise MeshFormatError(f"bad entry {ln!r}", line=lineno) from None
        if idx != len(values):
            raise MeshFormatError(
                f"expected node {len(values)}, got {idx}", line=lineno)
        values.append(val)
    arr = np.asarray(values, dtype=float)
    if mesh is not None and arr.shape != (mesh.node_count,):
        raise MeshFormatError(
            f"field has {arr.size} values, mesh has {mesh.node_count} nodes")
    return arr
