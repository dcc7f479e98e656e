"""P1 finite element operators on triangulated squares.

Provides exact mass/stiffness assembly (full and Dirichlet-reduced), nodal
interpolation, L2 projection, the discrete Laplacian, norms, and CSV output
of nodal fields.  Non-polynomial integrands (projection right-hand sides,
Lp norms) use a 7-point degree-5 symmetric triangle quadrature; products of
P1 functions are integrated exactly in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, MeshError

TOL_GEOM = 1e-12


class FemError(ValueError):
    """Invalid finite element input (bad coefficients, evaluation failure)."""


class LinearSolveError(RuntimeError):
    """A sparse linear solve failed or left too large a residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


def triangle_quadrature():
    """Degree-5 7-point symmetric rule: barycentric points and weights.

    Weights sum to 1 and multiply the triangle area.
    """
    s15 = np.sqrt(15.0)
    a1 = (6.0 + s15) / 21.0
    a2 = (6.0 - s15) / 21.0
    w1 = (155.0 + s15) / 1200.0
    w2 = (155.0 - s15) / 1200.0
    points = np.array(
        [
            [1 / 3, 1 / 3, 1 / 3],
            [a1, a1, 1 - 2 * a1],
            [a1, 1 - 2 * a1, a1],
            [1 - 2 * a1, a1, a1],
            [a2, a2, 1 - 2 * a2],
            [a2, 1 - 2 * a2, a2],
            [1 - 2 * a2, a2, a2],
        ]
    )
    weights = np.array([9.0 / 40.0, w1, w1, w1, w2, w2, w2])
    return points, weights


@dataclass(frozen=True)
class Field:
    """Nodal coefficients of a P1 function with zero Dirichlet trace."""

    mesh: Mesh
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (self.mesh.num_vertices,):
            raise FemError(
                f"coefficient vector has length {coeffs.shape}, expected "
                f"({self.mesh.num_vertices},)"
            )
        if np.any(coeffs[self.mesh.boundary_mask] != 0.0):
            raise FemError("boundary coefficients must be exactly 0")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "Field":
        return cls(mesh, np.zeros(mesh.num_vertices))

    @classmethod
    def from_free(cls, mesh: Mesh, free_values: np.ndarray) -> "Field":
        """Build a Field from values on the free (interior) dofs."""
        coeffs = np.zeros(mesh.num_vertices)
        coeffs[mesh.free_vertices] = free_values
        return cls(mesh, coeffs)

    @property
    def free(self) -> np.ndarray:
        """Values at the free dofs, in free-dof order."""
        return self.coeffs[self.mesh.free_vertices]


@dataclass(frozen=True)
class SparseOperator:
    """Symmetric sparse operator assembled from P1 elements.

    ``full`` is the unconstrained matrix over all vertices; ``free`` is its
    restriction to non-boundary dofs (Dirichlet elimination).  Both share the
    row/column ordering of the mesh (vertex order, free-dof order).
    """

    kind: str
    full: sp.csr_matrix
    free: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return self.free.shape[0]


def _element_geometry(mesh: Mesh):
    """Areas and barycentric gradient components per triangle."""
    p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    # b_i = y_{i+1} - y_{i+2}, c_i = x_{i+2} - x_{i+1} (cyclic)
    b = p[:, [1, 2, 0], 1] - p[:, [2, 0, 1], 1]
    c = p[:, [2, 0, 1], 0] - p[:, [1, 2, 0], 0]
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    # for CCW triangles this equals the positive area
    area = np.abs(area)
    return area, b, c


def _assemble(mesh: Mesh, element_matrices: np.ndarray, kind: str) -> SparseOperator:
    """Scatter per-element 3x3 matrices into full and free sparse operators.

    The full and free matrices are built from identical index streams so the
    mass and stiffness operators of one mesh share their sparsity pattern,
    which the time stepper relies on when forming Newton Jacobians in place.
    """
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    data = element_matrices.reshape(element_matrices.shape[0], 9).ravel()

    nv = mesh.num_vertices
    full = sp.coo_matrix((data, (rows, cols)), shape=(nv, nv)).tocsr()
    full.sum_duplicates()
    full.sort_indices()

    fmap = mesh.vertex_to_free
    keep = (fmap[rows] >= 0) & (fmap[cols] >= 0)
    nf = mesh.num_free
    free = sp.coo_matrix(
        (data[keep], (fmap[rows[keep]], fmap[cols[keep]])), shape=(nf, nf)
    ).tocsr()
    free.sum_duplicates()
    free.sort_indices()
    return SparseOperator(kind=kind, full=full, free=free)


def assemble_mass(mesh: Mesh) -> SparseOperator:
    """Exact P1 mass matrix; element block (area/12) * [[2,1,1],[1,2,1],[1,1,2]]."""
    area, _, _ = _element_geometry(mesh)
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    elems = area[:, None, None] * base[None, :, :]
    return _assemble(mesh, elems, "mass")


def assemble_stiffness(mesh: Mesh) -> SparseOperator:
    """Exact P1 stiffness matrix from the piecewise-constant gradients."""
    area, b, c = _element_geometry(mesh)
    elems = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (
        4.0 * area[:, None, None]
    )
    return _assemble(mesh, elems, "stiffness")


@dataclass(frozen=True)
class DominanceReport:
    passed: bool
    worst_row: int
    worst_margin: float     # min over rows of diag - sum(|offdiag|)
    max_offdiag: float


def check_diagonal_dominance(op: SparseOperator, tol_geom: float = TOL_GEOM) -> DominanceReport:
    """Row-wise diagonal dominance with nonpositive off-diagonals (free part)."""
    a = op.free.tocsr()
    diag = a.diagonal()
    row_abs = np.asarray(np.abs(a).sum(axis=1)).ravel()
    margins = diag - (row_abs - np.abs(diag))
    worst = int(np.argmin(margins)) if margins.size else 0

    b = a.copy()
    b.setdiag(0.0)
    max_off = float(b.data.max()) if b.nnz else 0.0

    passed = bool(np.all(margins >= -tol_geom) and max_off <= tol_geom)
    return DominanceReport(
        passed=passed,
        worst_row=worst,
        worst_margin=float(margins[worst]) if margins.size else 0.0,
        max_offdiag=max_off,
    )


def _eval_pointwise(f, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate ``f`` at coordinate arrays, falling back to a scalar loop."""
    try:
        values = np.asarray(f(x, y), dtype=float)
        if values.shape != x.shape:
            values = np.broadcast_to(values, x.shape).astype(float)
    except (TypeError, ValueError):
        values = np.array([float(f(float(xi), float(yi))) for xi, yi in zip(x, y)])
    return values


def interpolate_nodal(f, mesh: Mesh) -> Field:
    """Nodal interpolant of ``f`` with boundary values forced to zero.

    The interpolant matches ``f`` at interior vertices; boundary nodal values
    are pinned to 0 so the result lies in the zero-trace P1 space.
    """
    values = _eval_pointwise(f, mesh.vertices[:, 0], mesh.vertices[:, 1])
    bad = ~np.isfinite(values)
    if np.any(bad):
        v = int(np.flatnonzero(bad)[0])
        raise FemError(
            f"function evaluated to a non-finite value at vertex {v} "
            f"(x={mesh.vertices[v, 0]:g}, y={mesh.vertices[v, 1]:g})"
        )
    values[mesh.boundary_mask] = 0.0
    return Field(mesh, values)


def quadrature_rhs(f, mesh: Mesh) -> np.ndarray:
    """Load vector b_i = integral of f * phi_i, by the degree-5 rule."""
    points, weights = triangle_quadrature()
    area, _, _ = _element_geometry(mesh)
    p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    b = np.zeros(mesh.num_vertices)
    for lam, w in zip(points, weights):
        xq = (lam[None, :, None] * p).sum(axis=1)  # (nt, 2)
        fq = _eval_pointwise(f, xq[:, 0], xq[:, 1])
        if np.any(~np.isfinite(fq)):
            raise FemError("integrand evaluated to a non-finite value at a quadrature point")
        contrib = (w * area) * fq
        for i in range(3):
            np.add.at(b, mesh.triangles[:, i], contrib * lam[i])
    return b


def l2_project(f, mesh: Mesh, M: SparseOperator, rel_tol: float = 1e-12) -> Field:
    """L2 projection onto the zero-trace P1 space.

    Solves M x = b with b_i = integral of f*phi_i over the free dofs and
    checks the relative residual of the solve.
    """
    b = quadrature_rhs(f, mesh)[mesh.free_vertices]
    x = spla.spsolve(M.free.tocsc(), b)
    scale = np.linalg.norm(b)
    residual = np.linalg.norm(M.free @ x - b)
    if not np.all(np.isfinite(x)) or residual > rel_tol * max(scale, 1e-300):
        raise LinearSolveError(
            f"mass solve residual {residual:.3e} exceeds {rel_tol:.1e} * |b|",
            residual=residual,
        )
    return Field.from_free(mesh, x)


def apply_discrete_laplacian(v: Field, M: SparseOperator, K: SparseOperator) -> Field:
    """Discrete Laplacian: the Field w with (w, phi) = -(grad v, grad phi)."""
    rhs = -(K.free @ v.free)
    w = spla.spsolve(M.free.tocsc(), rhs)
    if not np.all(np.isfinite(w)):
        raise LinearSolveError("discrete Laplacian mass solve produced non-finite values")
    return Field.from_free(v.mesh, w)


def l2_norm(v: Field, M: SparseOperator) -> float:
    """L2 norm via the full (unconstrained) mass quadratic form."""
    u = v.coeffs
    return float(np.sqrt(max(u @ (M.full @ u), 0.0)))


def h1_seminorm(v: Field, K: SparseOperator) -> float:
    u = v.coeffs
    return float(np.sqrt(max(u @ (K.full @ u), 0.0)))


def lp_norm(v: Field, p: float) -> float:
    """Lp norm by the degree-5 quadrature of |v|^p per triangle."""
    if p < 1:
        raise FemError(f"Lp norm requires p >= 1, got {p}")
    points, weights = triangle_quadrature()
    mesh = v.mesh
    area, _, _ = _element_geometry(mesh)
    vals = v.coeffs[mesh.triangles]  # (nt, 3)
    total = 0.0
    for lam, w in zip(points, weights):
        vq = vals @ lam
        total += w * float(area @ np.abs(vq) ** p)
    return float(total ** (1.0 / p))


def norm(v: Field, kind: str, p: float | None = None,
         M: SparseOperator | None = None, K: SparseOperator | None = None) -> float:
    """Dispatch on norm kind: ``"l2"``, ``"h1semi"``, or ``"lp"`` (needs p).

    The mass/stiffness operators are assembled on demand when not supplied.
    """
    kind = kind.lower()
    if kind == "l2":
        return l2_norm(v, M if M is not None else assemble_mass(v.mesh))
    if kind == "h1semi":
        return h1_seminorm(v, K if K is not None else assemble_stiffness(v.mesh))
    if kind == "lp":
        if p is None:
            raise FemError("Lp norm needs the exponent p")
        return lp_norm(v, p)
    raise FemError(f"unknown norm kind {kind!r}")


def eval_field(v: Field, points: np.ndarray) -> np.ndarray:
    """Evaluate the P1 interpolant at arbitrary points of a structured mesh.

    Uses the regular cell layout of :func:`build_structured_mesh` for the
    point location, so it only works on meshes whose vertices still sit on
    that grid.
    """
    mesh = v.mesh
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = mesh.n_div
    m = n + 1
    hx = mesh.L / n
    x0, y0 = mesh.origin
    fx = (pts[:, 0] - x0) / hx
    fy = (pts[:, 1] - y0) / hx
    eps = 1e-12 * max(1.0, n)
    if np.any(fx < -eps) or np.any(fx > n + eps) or np.any(fy < -eps) or np.any(fy > n + eps):
        raise FemError("evaluation point outside the mesh domain")
    ci = np.clip(np.floor(fx).astype(int), 0, n - 1)
    cj = np.clip(np.floor(fy).astype(int), 0, n - 1)
    # local coordinates in the cell; the diagonal runs from (0,0) to (1,1)
    lx = fx - ci
    ly = fy - cj
    v00 = cj * m + ci
    v10 = v00 + 1
    v01 = v00 + m
    v11 = v01 + 1
    c = v.coeffs
    lower = ly <= lx  # triangle (v00, v10, v11), barycentric in (lx, ly)
    out = np.where(
        lower,
        c[v00] * (1 - lx) + c[v10] * (lx - ly) + c[v11] * ly,
        c[v00] * (1 - ly) + c[v11] * lx + c[v01] * (ly - lx),
    )
    return out if np.asarray(points).ndim == 2 else float(out[0])


def smallest_laplacian_eigenvalue(
    mesh: Mesh,
    M: SparseOperator | None = None,
    K: SparseOperator | None = None,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> float:
    """Smallest eigenvalue of the negative discrete Laplacian.

    Inverse power iteration on the generalized problem K v = lam M v with a
    fixed all-ones start vector, so the result is deterministic.
    """
    if M is None:
        M = assemble_mass(mesh)
    if K is None:
        K = assemble_stiffness(mesh)
    solve = spla.splu(K.free.tocsc()).solve
    Mf = M.free
    v = np.ones(mesh.num_free)
    lam_old = np.inf
    for _ in range(max_iter):
        w = solve(Mf @ v)
        w /= np.sqrt(w @ (Mf @ w))
        lam = (w @ (K.free @ w)) / (w @ (Mf @ w))
        if abs(lam - lam_old) <= tol * abs(lam):
            return float(lam)
        lam_old = lam
        v = w
    return float(lam_old)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_field_csv(v: Field, path, comments=()) -> None:
    """Field snapshot: header ``x,y,value``, one row per vertex in index order."""
    mesh = v.mesh
    with open(path, "w", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write("x,y,value\n")
        for (x, y), val in zip(mesh.vertices, v.coeffs):
            fh.write(f"{_fmt(x)},{_fmt(y)},{_fmt(val)}\n")


def read_field_csv(path, mesh: Mesh) -> Field:
    """Read a snapshot written by :func:`write_field_csv` back onto its mesh."""
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("x,"):
                continue
            values.append(float(line.split(",")[2]))
    if len(values) != mesh.num_vertices:
        raise MeshError(
            f"snapshot has {len(values)} rows but the mesh has {mesh.num_vertices} vertices"
        )
    return Field(mesh, np.array(values))
