"""Global assembly of the partially penalized immersed finite element system.

The bilinear form is

    sum_K int_K beta grad(u) . grad(v)
  + delta   * sum_B int_B {beta grad(u) . n_B} [v]
  + epsilon * sum_B int_B {beta grad(v) . n_B} [u]
  + sum_B sigma0_B / |B|^alpha * int_B [u][v]

with the edge sums over interior interface edges only. Averages are the plain
1/2-1/2 mean of the two element traces; jumps are trace(T1) - trace(T2) with
T1 the lower-index element and n_B oriented from T1 to T2. The scheme presets
are classic (0, 0, 0), SPP (-1, -1, 10 max beta), IPP (-1, 0, 10 max beta),
and NPP (-1, +1, 1).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ConfigError
from .geometry import EDGE_INTERFACE, RECT, SIDE_MINUS, edge_split_points
from .local_basis import template_gradients, template_values
from .quadrature import (map_triangle, rect_rule, split_edge_rule,
                         split_polygon_rule, _collapsed_triangle_rule,
                         fan_triangles, _subdivide)

VOLUME_DEGREE = 4
EDGE_DEGREE = 4
DATA_DEGREE = 6      # load / error integrands (non-polynomial data)
DATA_REFINE = 1      # uniform sub-triangle refinement on cut elements

SCHEMES = ("classic", "spp", "ipp", "npp")


@dataclass(frozen=True)
class MethodParams:
    """Scheme parameters: edge-term signs, penalty rule, penalty exponent."""

    scheme: str
    delta: float
    epsilon: float
    sigma0: Union[float, Callable[[int], float]]
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha < 1.0:
            raise ConfigError("penalty exponent alpha must be >= 1")

    def sigma0_at(self, edge_id):
        if callable(self.sigma0):
            return float(self.sigma0(edge_id))
        return float(self.sigma0)

    @staticmethod
    def preset(name, beta_minus=1.0, beta_plus=1.0, sigma0=None, alpha=1.0):
        name = name.lower()
        if name == "classic":
            return MethodParams("classic", 0.0, 0.0, 0.0 if sigma0 is None else sigma0, alpha)
        if name == "spp":
            s = 10.0 * max(beta_minus, beta_plus) if sigma0 is None else sigma0
            return MethodParams("spp", -1.0, -1.0, s, alpha)
        if name == "ipp":
            s = 10.0 * max(beta_minus, beta_plus) if sigma0 is None else sigma0
            return MethodParams("ipp", -1.0, 0.0, s, alpha)
        if name == "npp":
            return MethodParams("npp", -1.0, 1.0, 1.0 if sigma0 is None else sigma0, alpha)
        raise ConfigError(f"unknown scheme {name!r}; choose from {SCHEMES}")


# ---------------------------------------------------------------------------
# volume terms
# ---------------------------------------------------------------------------

def _q1_ref_stiffness():
    rule = rect_rule(2)
    G = template_gradients("rect", rule.points)  # scaled gradients on [0,1]^2
    return np.einsum("q,iqa,jqa->ij", rule.weights, G, G)


_S_Q1 = _q1_ref_stiffness()


def _p1_stiffness_batch(verts, coef):
    """Local P1 stiffness matrices for a batch of triangles, (ne, 3, 3)."""
    x = verts[:, :, 0]
    y = verts[:, :, 1]
    b = y[:, [1, 2, 0]] - y[:, [2, 0, 1]]
    c = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
    area2 = x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2]  # 2*area (CCW > 0)
    scale = coef / (2.0 * area2)
    return (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) * scale[:, None, None]


def volume_element_matrix(basis, cut, beta_minus, beta_plus, degree=VOLUME_DEGREE):
    """Stiffness matrix of one cut element: both chord sides, each with its beta."""
    d = basis.n_funcs
    A = np.zeros((d, d))
    for side, poly, b in ((SIDE_MINUS, cut.poly_minus, beta_minus),
                          (-SIDE_MINUS, cut.poly_plus, beta_plus)):
        rule = split_polygon_rule(poly, degree)
        G = basis.gradients_piece(rule.points, side)
        A += b * np.einsum("q,iqa,jqa->ij", rule.weights, G, G)
    return A


def assemble_volume(mesh, cuts, bases, beta_minus, beta_plus):
    """Stiffness matrix sum_K int_K beta grad(phi_i) . grad(phi_j), CSR."""
    n = mesh.n_nodes
    d = mesh.n_local
    status = np.array([c.status for c in cuts], dtype=np.int8)
    bulk = np.flatnonzero(status != 0)
    coef = np.where(status == SIDE_MINUS, beta_minus, beta_plus)[bulk]

    rows, cols, data = [], [], []
    if len(bulk):
        conn = mesh.elements[bulk]
        if mesh.cell_kind == RECT:
            blocks = coef[:, None, None] * _S_Q1[None, :, :]
        else:
            blocks = _p1_stiffness_batch(mesh.nodes[conn], coef)
        rows.append(np.repeat(conn, d, axis=1).ravel())
        cols.append(np.tile(conn, (1, d)).ravel())
        data.append(blocks.ravel())

    for cut in cuts:
        if not cut.is_interface:
            continue
        k = cut.element_id
        Aloc = volume_element_matrix(bases[k], cut, beta_minus, beta_plus)
        conn = mesh.elements[k]
        rows.append(np.repeat(conn, d))
        cols.append(np.tile(conn, d))
        data.append(Aloc.ravel())

    A = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


# ---------------------------------------------------------------------------
# edge terms
# ---------------------------------------------------------------------------

def _edge_traces(mesh, edge_id, cuts, bases, beta_minus, beta_plus, degree):
    """Per-edge dof list, jump values, averaged fluxes, and quadrature weights."""
    t1, t2 = mesh.edge_elements[edge_id]
    a = mesh.nodes[mesh.edge_nodes[edge_id, 0]]
    b = mesh.nodes[mesh.edge_nodes[edge_id, 1]]
    nB = mesh.edge_normals[edge_id]
    rule = split_edge_rule(a, b, edge_split_points(mesh, edge_id, cuts), degree)
    pts = rule.points

    dofs = list(mesh.elements[t1])
    for g in mesh.elements[t2]:
        if g not in dofs:
            dofs.append(int(g))
    index = {g: i for i, g in enumerate(dofs)}
    nq = rule.n_points
    jump = np.zeros((len(dofs), nq))
    flux = np.zeros((len(dofs), nq))

    for elem, sign in ((t1, 1.0), (t2, -1.0)):
        basis = bases[elem]
        vals = basis.values(pts)
        grads = basis.gradients(pts)
        if cuts[elem].is_interface:
            bpt = np.where(basis.side_plus_mask(pts), beta_plus, beta_minus)
        else:
            bpt = np.full(nq, beta_minus if cuts[elem].status == SIDE_MINUS else beta_plus)
        fl = bpt[None, :] * np.einsum("dqa,a->dq", grads, nB)
        loc = [index[int(g)] for g in mesh.elements[elem]]
        jump[loc] += sign * vals
        flux[loc] += 0.5 * fl
    return dofs, jump, flux, rule.weights


def edge_term_matrices(mesh, edge_id, cuts, bases, beta_minus, beta_plus,
                       params: MethodParams, degree=EDGE_DEGREE):
    """Consistency matrix M_loc[i,j] = int_B {beta grad(phi_j).n}[phi_i] and the
    scaled penalty matrix for one edge, with the dof list they refer to."""
    dofs, jump, flux, w = _edge_traces(mesh, edge_id, cuts, bases,
                                       beta_minus, beta_plus, degree)
    M = np.einsum("q,iq,jq->ij", w, jump, flux)
    L = mesh.edge_lengths[edge_id]
    scale = params.sigma0_at(edge_id) / L ** params.alpha
    P = scale * np.einsum("q,iq,jq->ij", w, jump, jump)
    return dofs, M, P


def assemble_edge_terms(mesh, edge_labels, cuts, bases, beta_minus, beta_plus,
                        params: MethodParams, degree=EDGE_DEGREE):
    """Assemble (M, P): consistency and penalty matrices over interface edges.

    The full edge contribution of a scheme is delta*M + epsilon*M^T + P.
    """
    n = mesh.n_nodes
    rows, cols, mdata, pdata = [], [], [], []
    for e in np.flatnonzero(edge_labels == EDGE_INTERFACE):
        dofs, M, P = edge_term_matrices(mesh, int(e), cuts, bases,
                                        beta_minus, beta_plus, params, degree)
        dofs = np.asarray(dofs)
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        mdata.append(M.ravel())
        pdata.append(P.ravel())
    if not rows:
        z = sp.csr_matrix((n, n))
        return z, z.copy()
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    M = sp.coo_matrix((np.concatenate(mdata), (r, c)), shape=(n, n)).tocsr()
    P = sp.coo_matrix((np.concatenate(pdata), (r, c)), shape=(n, n)).tocsr()
    for X in (M, P):
        X.sum_duplicates()
        X.eliminate_zeros()
        X.sort_indices()
    return M, P


def combine_system(A_vol, M, P, params: MethodParams):
    """Full scheme matrix A_vol + delta*M + epsilon*M^T + P."""
    A = (A_vol + params.delta * M + params.epsilon * M.T + P).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


# ---------------------------------------------------------------------------
# load vector
# ---------------------------------------------------------------------------

def cut_data_rules(cut, degree=DATA_DEGREE, refine=DATA_REFINE):
    """Refined chord-split quadrature for data integrands on a cut element.

    Yields (side, points, weights) per sub-polygon; the caller selects the
    exact-solution piece per point from the true level set.
    """
    ref = _collapsed_triangle_rule(degree)
    for side, poly in ((SIDE_MINUS, cut.poly_minus), (-SIDE_MINUS, cut.poly_plus)):
        tris = fan_triangles(poly)
        for _ in range(refine):
            tris = [c for t in tris for c in _subdivide(t)]
        pts, wts = [], []
        for tri in tris:
            p, w = map_triangle(ref, tri)
            pts.append(p)
            wts.append(w)
        yield side, np.vstack(pts), np.concatenate(wts)


def _bulk_reference(mesh, degree):
    """Scaled quadrature points/weights and basis value/grad tables per variant."""
    if mesh.cell_kind == RECT:
        rule = rect_rule(degree)
        return {0: ("rect", rule.points, rule.weights)}
    ref = _collapsed_triangle_rule(degree)
    # map reference (0,0)-(1,0)-(0,1) onto the two cell triangles in scaled coords
    J_low = np.column_stack([[1.0, 0.0], [1.0, 1.0]])   # (0,0),(1,0),(1,1)
    J_up = np.column_stack([[1.0, 1.0], [0.0, 1.0]])    # (0,0),(1,1),(0,1)
    out = {}
    for variant, J, name in ((0, J_low, "tri_lower"), (1, J_up, "tri_upper")):
        pts = ref.points @ J.T
        det = abs(np.linalg.det(J))
        out[variant] = (name, pts, ref.weights * det)
    return out


def assemble_load(mesh, cuts, bases, solution, iface, degree=DATA_DEGREE,
                  refine=DATA_REFINE):
    """Load vector b_i = sum_K int_K f phi_i with the data-side of f chosen by
    the exact level set at each quadrature point."""
    n = mesh.n_nodes
    b = np.zeros(n)
    status = np.array([c.status for c in cuts], dtype=np.int8)
    bulk = np.flatnonzero(status != 0)

    tables = _bulk_reference(mesh, degree)
    h = mesh.h
    for variant, (name, spts, swts) in tables.items():
        if mesh.cell_kind == RECT:
            ids = bulk
        else:
            ids = bulk[mesh.element_variant[bulk] == variant]
        if len(ids) == 0:
            continue
        V = template_values(name, spts)              # (d, nq)
        w = swts * h * h                             # physical weights
        for chunk in np.array_split(ids, max(1, len(ids) // 50000)):
            pts = mesh.element_origins[chunk][:, None, :] + h * spts[None, :, :]
            x = pts[..., 0]
            y = pts[..., 1]
            minus = np.asarray(iface.phi(x, y)) < 0
            f = np.where(minus, solution.f_minus(x, y), solution.f_plus(x, y))
            loc = (f * w[None, :]) @ V.T             # (nc, d)
            np.add.at(b, mesh.elements[chunk], loc)

    for cut in cuts:
        if not cut.is_interface:
            continue
        k = cut.element_id
        basis = bases[k]
        acc = np.zeros(basis.n_funcs)
        for _side, pts, wts in cut_data_rules(cut, degree, refine):
            x, y = pts[:, 0], pts[:, 1]
            minus = np.asarray(iface.phi(x, y)) < 0
            f = np.where(minus, solution.f_minus(x, y), solution.f_plus(x, y))
            acc += basis.values(pts) @ (f * wts)
        b[mesh.elements[k]] += acc
    return b


# ---------------------------------------------------------------------------
# boundary conditions
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SparseSystem:
    """Assembled system with Dirichlet bookkeeping.

    `A` and `b` are the full (all-node) matrix and load; boundary dofs carry
    interpolated boundary values and are eliminated in `reduced()`.
    """

    A: sp.csr_matrix
    b: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray
    free: np.ndarray

    def reduced(self):
        A_ff = self.A[self.free][:, self.free].tocsr()
        rhs = self.b[self.free] - self.A[self.free][:, self.boundary] @ self.boundary_values
        return A_ff, rhs

    def expand(self, x_free):
        x = np.empty(self.A.shape[0])
        x[self.free] = x_free
        x[self.boundary] = self.boundary_values
        return x

    @property
    def dirichlet(self):
        return dict(zip(self.boundary.tolist(), self.boundary_values.tolist()))


def apply_dirichlet(A, b, mesh, g) -> SparseSystem:
    """Fix boundary dofs to the nodal interpolation of g(x, y)."""
    bd = mesh.boundary_nodes
    vals = np.asarray(g(mesh.nodes[bd, 0], mesh.nodes[bd, 1]), float)
    return SparseSystem(A, b, bd, vals, mesh.interior_nodes)


def dump_matrix(path, A):
    """MatrixMarket coordinate dump of a sparse matrix."""
    scipy.io.mmwrite(str(path), A.tocoo())


# ---------------------------------------------------------------------------
# edge jump integrals (shared with the energy norm)
# ---------------------------------------------------------------------------

def edge_jump_square(mesh, edge_id, cuts, bases, coeffs, degree=EDGE_DEGREE):
    """int_B [u_h]^2 for one interior edge."""
    t1, t2 = mesh.edge_elements[edge_id]
    a = mesh.nodes[mesh.edge_nodes[edge_id, 0]]
    b = mesh.nodes[mesh.edge_nodes[edge_id, 1]]
    rule = split_edge_rule(a, b, edge_split_points(mesh, edge_id, cuts), degree)
    u1 = coeffs[mesh.elements[t1]] @ bases[t1].values(rule.points)
    u2 = coeffs[mesh.elements[t2]] @ bases[t2].values(rule.points)
    return float(np.dot(rule.weights, (u1 - u2) ** 2))
