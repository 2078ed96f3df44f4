"""Simplicial meshes and P1 finite-element kernels.

All solvers in the package are built on three primitives defined here:
the lumped (vertex-quadrature) mass vector, tensor-weighted stiffness
matrices, and exact quadrature of products of P1 functions.  Kernels are
written dimension-generically (triangles and tetrahedra), although the
desk-scale test geometry is 2D.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, InvalidConfigError, InvalidTensorError

# Symmetric quadrature rules exact for polynomials up to degree 4,
# barycentric points with weights summing to 1.
_TRI_D4_A = 0.445948490915965
_TRI_D4_B = 0.091576213509771
_TRI_D4_W1 = 0.223381589678011
_TRI_D4_W2 = 0.109951743655322


def _tri_degree4_rule():
    pts = []
    wts = []
    for a, w in ((_TRI_D4_A, _TRI_D4_W1), (_TRI_D4_B, _TRI_D4_W2)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w, w, w]
    return np.array(pts), np.array(wts)


def _tet_degree4_rule():
    # Keast 11-point rule, degree 4.
    pts = [(0.25, 0.25, 0.25, 0.25)]
    wts = [-0.0131555555555556 * 6.0]
    a, b = 0.0714285714285714, 0.785714285714286
    w = 0.00762222222222222 * 6.0
    for i in range(4):
        p = [a] * 4
        p[i] = b
        pts.append(tuple(p))
        wts.append(w)
    a, b = 0.399403576166799, 0.100596423833201
    w = 0.0248888888888889 * 6.0
    for i in range(3):
        for j in range(i + 1, 4):
            p = [b] * 4
            p[i] = a
            p[j] = a
            pts.append(tuple(p))
            wts.append(w)
    return np.array(pts), np.array(wts) / 6.0 * 6.0


@dataclass
class Mesh:
    """Conforming simplicial mesh (triangles in 2D, tetrahedra in 3D).

    Coordinates are in mm.  Geometric quantities used by the assembly
    kernels (volumes, P1 basis gradients, lumped masses, quadrature
    values) are computed once at construction and cached.
    """

    vertices: np.ndarray  # (Nv, dim)
    cells: np.ndarray     # (Nc, dim+1) vertex indices
    boundary_facets: np.ndarray = field(default=None)  # (Nb, dim)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise InvalidConfigError("vertices must be (Nv, 2) or (Nv, 3)")
        if self.cells.ndim != 2 or self.cells.shape[1] != self.dim + 1:
            raise InvalidConfigError("cells must be (Nc, dim+1)")
        self._validate_topology()
        self._build_geometry()

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def _validate_topology(self):
        nv = self.num_vertices
        if self.cells.min(initial=0) < 0 or self.cells.max(initial=-1) >= nv:
            raise InvalidConfigError("cell vertex index out of range")
        # distinct vertices per cell
        srt = np.sort(self.cells, axis=1)
        if np.any(srt[:, 1:] == srt[:, :-1]):
            raise InvalidConfigError("cell with repeated vertex index")
        # conformity: every facet is shared by at most two cells and the
        # shared copies reference identical vertex sets (guaranteed by
        # sorting); count facet multiplicity and extract the boundary.
        d = self.dim
        facets = []
        for drop in range(d + 1):
            idx = [k for k in range(d + 1) if k != drop]
            facets.append(np.sort(self.cells[:, idx], axis=1))
        facets = np.concatenate(facets, axis=0)
        uniq, counts = np.unique(facets, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise InvalidConfigError("non-conforming mesh: facet shared by >2 cells")
        if self.boundary_facets is None:
            self.boundary_facets = uniq[counts == 1]

    def _build_geometry(self):
        d = self.dim
        verts = self.vertices[self.cells]  # (Nc, d+1, d)
        edges = verts[:, 1:, :] - verts[:, :1, :]  # (Nc, d, d)
        det = np.linalg.det(edges)
        vol = det / (2.0 if d == 2 else 6.0)
        if np.any(vol <= 0):
            # orientation fix: flip the last two vertices of inverted cells
            bad = vol <= 0
            if np.any(np.isclose(vol, 0.0)):
                raise InvalidConfigError("degenerate (zero-volume) cell")
            self.cells = self.cells.copy()
            self.cells[bad, -2], self.cells[bad, -1] = (
                self.cells[bad, -1].copy(),
                self.cells[bad, -2].copy(),
            )
            verts = self.vertices[self.cells]
            edges = verts[:, 1:, :] - verts[:, :1, :]
            det = np.linalg.det(edges)
            vol = det / (2.0 if d == 2 else 6.0)
        self.cell_volumes = vol
        # P1 basis gradients: grad lambda_i constant per cell.
        inv = np.linalg.inv(edges)  # (Nc, d, d): rows of inv give grads 1..d
        grads = np.empty((self.num_cells, d + 1, d))
        grads[:, 1:, :] = np.swapaxes(inv, 1, 2)
        grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
        self.grads = grads
        # lumped (row-sum) mass: vol/(d+1) to each vertex of the cell
        m = np.zeros(self.num_vertices)
        np.add.at(m, self.cells.ravel(),
                  np.repeat(vol / (d + 1), d + 1))
        self.lumped_mass = m
        if d == 2:
            self.quad_points, self.quad_weights = _tri_degree4_rule()
        else:
            self.quad_points, self.quad_weights = _tet_degree4_rule()

    # -- inner products -------------------------------------------------

    def lumped_inner_product(self, u, v) -> float:
        """(u, v)^h = sum_j m_j u_j v_j over mesh vertices."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.shape != (self.num_vertices,) or v.shape != (self.num_vertices,):
            raise DimensionError("fields do not match mesh vertex count")
        return float(np.dot(self.lumped_mass * u, v))

    def lumped_norm(self, u) -> float:
        return float(np.sqrt(max(self.lumped_inner_product(u, u), 0.0)))

    def consistent_mass_matrix(self) -> sp.csr_matrix:
        """Exact P1 mass matrix (reference for the lumped approximation)."""
        d = self.dim
        nloc = d + 1
        mloc = (np.ones((nloc, nloc)) + np.eye(nloc)) / (
            (d + 1) * (d + 2))
        vals = self.cell_volumes[:, None, None] * mloc[None, :, :]
        rows = np.repeat(self.cells, nloc, axis=1).ravel()
        cols = np.tile(self.cells, (1, nloc)).ravel()
        return sp.coo_matrix(
            (vals.ravel(), (rows, cols)),
            shape=(self.num_vertices, self.num_vertices)).tocsr()

    # -- quadrature helpers ---------------------------------------------

    def p1_values_at_quadpoints(self, nodal) -> np.ndarray:
        """Values of a P1 field at the degree-4 quadrature points, (Nc, Q)."""
        nodal = np.asarray(nodal, dtype=float)
        return np.einsum("ck,qk->cq", nodal[self.cells], self.quad_points)

    def integrate_cellwise(self, quad_values) -> np.ndarray:
        """Per-cell integral of values sampled at the quadrature points."""
        return self.cell_volumes * (quad_values @ self.quad_weights)


def validate_cell_tensors(mesh: Mesh, K: np.ndarray, tol: float = 1e-10):
    """Check per-cell symmetry of a (Nc, dim, dim) tensor field."""
    K = np.asarray(K, dtype=float)
    d = mesh.dim
    if K.shape != (mesh.num_cells, d, d):
        raise DimensionError("tensor field shape does not match mesh")
    scale = np.abs(K).max() or 1.0
    if np.abs(K - np.swapaxes(K, 1, 2)).max() > tol * scale:
        raise InvalidTensorError("per-cell tensor is not symmetric")
    return K


def build_structured_mesh(nx: int, ny: int, extent=(1.0, 1.0)) -> Mesh:
    """Crossed-diagonal triangulation of [0, Lx] x [0, Ly].

    The diagonal direction alternates checkerboard-fashion, giving
    (nx+1)(ny+1) vertices and 2*nx*ny triangles.
    """
    if nx < 2 or ny < 2:
        raise InvalidConfigError("nx, ny must be at least 2")
    lx, ly = float(extent[0]), float(extent[1])
    if lx <= 0 or ly <= 0:
        raise InvalidConfigError("mesh extents must be positive")
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
            else:
                cells.append((v00, v10, v01))
                cells.append((v10, v11, v01))
    return Mesh(vertices, np.array(cells))


def assemble_stiffness(mesh: Mesh, K=None) -> sp.csr_matrix:
    """Stiffness matrix A_ij = sum_cells int K grad(chi_i) . grad(chi_j).

    K is a per-cell symmetric tensor field; None means the identity.
    Rows sum to zero (pure Neumann operator).
    """
    if K is None:
        Kg = mesh.grads
    else:
        K = validate_cell_tensors(mesh, K)
        Kg = np.einsum("cde,cke->ckd", K, mesh.grads)
    return _stiffness_from_kgrads(mesh, Kg, np.ones(mesh.num_cells))


def assemble_weighted_stiffness(mesh: Mesh, K, cell_weights) -> sp.csr_matrix:
    """Stiffness with an extra scalar weight per cell (already integrated).

    `cell_weights[c]` must be the integral over cell c of the scalar
    coefficient, so entries are  w_c (K_c g_i) . g_j.
    """
    if K is None:
        Kg = mesh.grads
    else:
        Kg = np.einsum("cde,cke->ckd", np.asarray(K, dtype=float), mesh.grads)
    return _stiffness_from_kgrads(mesh, Kg, np.asarray(cell_weights, float),
                                  weights_are_integrals=True)


def _stiffness_from_kgrads(mesh, Kg, w, weights_are_integrals=False):
    scale = w if weights_are_integrals else mesh.cell_volumes * w
    vals = np.einsum("c,ckd,cld->ckl", scale, Kg, mesh.grads)
    nloc = mesh.dim + 1
    rows = np.repeat(mesh.cells, nloc, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, nloc)).ravel()
    A = sp.coo_matrix((vals.ravel(), (rows, cols)),
                      shape=(mesh.num_vertices, mesh.num_vertices)).tocsr()
    A.sum_duplicates()
    return A


def p1_interpolate(f, mesh: Mesh) -> np.ndarray:
    """Standard Lagrangian interpolation: values_j = f(x_j)."""
    try:
        vals = np.asarray(f(mesh.vertices), dtype=float)
        if vals.shape == (mesh.num_vertices,):
            return vals
    except Exception:
        pass
    return np.array([float(f(x)) for x in mesh.vertices])
