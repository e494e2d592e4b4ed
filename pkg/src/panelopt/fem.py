"""Coupled vibro-acoustic finite elements on the periodic unit cell.

Every node carries (u_x, u_y, p).  Q4 bilinear plane-strain elements back
the structural blocks, Q4 acoustic elements the fluid blocks, both with
2x2 Gauss quadrature.  Solid/fluid coupling follows the one-material
density weighting: the element coupling matrix is an edge integral of the
u.n p form (inward normal convention) so that the (1-xi)/xi weighted
assembly reduces to the classical wet-interface coupling at sharp
interfaces.  Domain top/bottom edges are excluded from the coupling sum;
the exterior halfspaces are handled by the transmission solver.

DOF layout (full grid, (nx+1)*(ny+1) nodes): displacements interleaved
first (2 per node), pressures appended.  The Bloch reduction removes the
right-edge nodes; reduced nodes are (ix, iy), ix < nx.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .design import GridSpec
from .materials import MaterialCatalog, interpolate_element

__all__ = [
    "ElementMatrices",
    "reference_element_matrices",
    "AssembledSystem",
    "assemble",
    "BlochOperator",
    "bloch_operator",
    "bloch_reduce",
    "ReducedAssembler",
    "dump_matrix",
]

_GP = 1.0 / np.sqrt(3.0)

# local CCW nodes: 0=(−1,−1) 1=(+1,−1) 2=(+1,+1) 3=(−1,+1)
_EDGE_NODES = {"bottom": (0, 1), "right": (1, 2), "top": (2, 3), "left": (3, 0)}
_EDGE_OUT_NORMAL = {
    "bottom": (0.0, -1.0),
    "right": (1.0, 0.0),
    "top": (0.0, 1.0),
    "left": (-1.0, 0.0),
}


def _shape(xi: float, eta: float):
    n = 0.25 * np.array([
        (1 - xi) * (1 - eta),
        (1 + xi) * (1 - eta),
        (1 + xi) * (1 + eta),
        (1 - xi) * (1 + eta),
    ])
    dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    return n, dxi, deta


@dataclass(frozen=True)
class ElementMatrices:
    """Reference element blocks for unit material coefficients.

    ``S_edge`` holds the per-edge coupling pieces (inward normals); their
    sum is ``S_e``.  Structural DOFs are (ux0, uy0, ..., ux3, uy3).
    """

    Ks_e: np.ndarray
    Ms_e: np.ndarray
    Ka_e: np.ndarray
    Ma_e: np.ndarray
    S_e: np.ndarray
    S_edge: dict[str, np.ndarray]
    a: float
    b: float


def reference_element_matrices(a: float, b: float, nu: float = 0.31) -> ElementMatrices:
    """Q4 element matrices on a rectangle with half-widths (a, b).

    Unit Young's modulus (plane strain), unit density, unit acoustic
    coefficients; 2x2 Gauss quadrature is exact for all these forms.
    """
    if a <= 0 or b <= 0:
        raise ValueError("element half-widths must be positive")
    if not 0.0 < nu < 0.5:
        raise ValueError("Poisson ratio must lie in (0, 0.5)")

    fac = 1.0 / ((1 + nu) * (1 - 2 * nu))
    D = fac * np.array([
        [1 - nu, nu, 0.0],
        [nu, 1 - nu, 0.0],
        [0.0, 0.0, (1 - 2 * nu) / 2.0],
    ])

    Ks = np.zeros((8, 8))
    Ms = np.zeros((8, 8))
    Ka = np.zeros((4, 4))
    Ma = np.zeros((4, 4))
    jac = a * b
    for xi in (-_GP, _GP):
        for eta in (-_GP, _GP):
            n, dxi, deta = _shape(xi, eta)
            dx = dxi / a
            dy = deta / b
            B = np.zeros((3, 8))
            Nu = np.zeros((2, 8))
            for i in range(4):
                B[0, 2 * i] = dx[i]
                B[1, 2 * i + 1] = dy[i]
                B[2, 2 * i] = dy[i]
                B[2, 2 * i + 1] = dx[i]
                Nu[0, 2 * i] = n[i]
                Nu[1, 2 * i + 1] = n[i]
            g = np.vstack([dx, dy])
            Ks += (B.T @ D @ B) * jac
            Ms += (Nu.T @ Nu) * jac
            Ka += (g.T @ g) * jac
            Ma += np.outer(n, n) * jac

    edge_mass = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    s_edge = {}
    for name, (na, nb_) in _EDGE_NODES.items():
        length = 2 * a if name in ("bottom", "top") else 2 * b
        nx_in, ny_in = -_EDGE_OUT_NORMAL[name][0], -_EDGE_OUT_NORMAL[name][1]
        m = length * edge_mass
        s = np.zeros((8, 4))
        for ii, ni in enumerate((na, nb_)):
            for jj, nj in enumerate((na, nb_)):
                if nx_in != 0.0:
                    s[2 * ni, nj] += nx_in * m[ii, jj]
                if ny_in != 0.0:
                    s[2 * ni + 1, nj] += ny_in * m[ii, jj]
        s_edge[name] = s
    s_total = sum(s_edge.values())
    return ElementMatrices(Ks, Ms, Ka, Ma, s_total, s_edge, a, b)


# ---------------------------------------------------------------------------
# DOF bookkeeping


def n_nodes_full(grid: GridSpec) -> int:
    return (grid.nx + 1) * (grid.ny + 1)


def n_nodes_reduced(grid: GridSpec) -> int:
    return grid.nx * (grid.ny + 1)


def n_dofs_full(grid: GridSpec) -> int:
    return 3 * n_nodes_full(grid)


def n_dofs_reduced(grid: GridSpec) -> int:
    return 3 * n_nodes_reduced(grid)


def u_dofs_full(grid: GridSpec) -> np.ndarray:
    return np.arange(2 * n_nodes_full(grid))


def p_dofs_full(grid: GridSpec) -> np.ndarray:
    nn = n_nodes_full(grid)
    return np.arange(2 * nn, 3 * nn)


def u_dofs_reduced(grid: GridSpec) -> np.ndarray:
    return np.arange(2 * n_nodes_reduced(grid))


def p_dofs_reduced(grid: GridSpec) -> np.ndarray:
    nn = n_nodes_reduced(grid)
    return np.arange(2 * nn, 3 * nn)


def _element_nodes_full(grid: GridSpec) -> np.ndarray:
    """(N_e, 4) full node ids per element, local CCW order."""
    nx, ny = grid.nx, grid.ny
    ex = np.arange(grid.n_elements) % nx
    ey = np.arange(grid.n_elements) // nx
    n0 = ey * (nx + 1) + ex
    return np.stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1], axis=1)


def _element_nodes_reduced(grid: GridSpec):
    """(N_e, 4) reduced node ids, plus a wrap mask for the periodic seam."""
    nx = grid.nx
    ex = np.arange(grid.n_elements) % nx
    ey = np.arange(grid.n_elements) // nx
    ix = np.stack([ex, ex + 1, ex + 1, ex], axis=1)
    iy = np.stack([ey, ey, ey + 1, ey + 1], axis=1)
    wrap = ix == nx
    nodes = iy * nx + np.where(wrap, 0, ix)
    return nodes, wrap


def _dofs_from_nodes(nodes: np.ndarray, n_nodes: int):
    """u dofs (..., 8) interleaved and p dofs (..., 4) from node ids."""
    u = np.empty(nodes.shape[:-1] + (8,), dtype=np.int64)
    u[..., 0::2] = 2 * nodes
    u[..., 1::2] = 2 * nodes + 1
    p = 2 * n_nodes + nodes
    return u, p


# ---------------------------------------------------------------------------
# Full (unreduced) assembly


@dataclass
class AssembledSystem:
    """Sparse coupled system over the full DOF vector q = (u, p).

    K carries the S_p coupling in its (u, p) block, M carries S_u in
    (p, u).  ``e`` is the external force vector; it is populated by the
    transmission solver (wave-dependent) and None right after assembly.
    """

    K: sp.csr_matrix
    M: sp.csr_matrix
    grid: GridSpec
    e: np.ndarray | None = None


def _element_scalings(field_values: np.ndarray, cat: MaterialCatalog):
    props = interpolate_element(field_values, cat)
    sp_w = 1.0 - props.xi_p
    su_w = props.xi_p
    return props, sp_w, su_w


def assemble(field_values: np.ndarray, cat: MaterialCatalog, grid: GridSpec) -> AssembledSystem:
    """Assemble the full coupled K, M for one physical density field."""
    field_values = np.asarray(field_values, dtype=float)
    if field_values.shape != (grid.n_elements,):
        raise ValueError("physical field length does not match grid")
    h = grid.element_size
    ref = reference_element_matrices(h / 2, h / 2, cat.nu)
    props, sp_w, su_w = _element_scalings(field_values, cat)

    nn = n_nodes_full(grid)
    nodes = _element_nodes_full(grid)
    ud, pd = _dofs_from_nodes(nodes, nn)

    ey = np.arange(grid.n_elements) // grid.nx
    s_eff = np.broadcast_to(ref.S_e, (grid.n_elements, 8, 4)).copy()
    s_eff[ey == 0] -= ref.S_edge["bottom"]
    s_eff[ey == grid.ny - 1] -= ref.S_edge["top"]

    def block(rows_idx, cols_idx, data):
        r = np.repeat(rows_idx, cols_idx.shape[1], axis=1).ravel()
        c = np.tile(cols_idx, (1, rows_idx.shape[1])).ravel()
        return r, c, data.ravel()

    def outer_rows_cols(rows_idx, cols_idx):
        r = rows_idx[:, :, None] * np.ones((1, 1, cols_idx.shape[1]), dtype=np.int64)
        c = cols_idx[:, None, :] * np.ones((1, rows_idx.shape[1], 1), dtype=np.int64)
        return r.ravel(), c.ravel()

    ndof = 3 * nn
    uu_r, uu_c = outer_rows_cols(ud, ud)
    up_r, up_c = outer_rows_cols(ud, pd)
    pu_r, pu_c = outer_rows_cols(pd, ud)
    pp_r, pp_c = outer_rows_cols(pd, pd)

    ks_data = (props.E_e[:, None, None] * ref.Ks_e).ravel()
    ka_data = (props.inv_rho_a_e[:, None, None] * ref.Ka_e).ravel()
    sp_data = (sp_w[:, None, None] * s_eff).ravel()
    K = sp.coo_matrix(
        (np.concatenate([ks_data, sp_data, ka_data]),
         (np.concatenate([uu_r, up_r, pp_r]),
          np.concatenate([uu_c, up_c, pp_c]))),
        shape=(ndof, ndof), dtype=complex).tocsr()

    ms_data = (props.rho_s_e[:, None, None] * ref.Ms_e).ravel()
    ma_data = (props.inv_kappa_e[:, None, None] * ref.Ma_e).ravel()
    su_data = (su_w[:, None, None] * np.transpose(s_eff, (0, 2, 1))).ravel()
    M = sp.coo_matrix(
        (np.concatenate([ms_data, su_data, ma_data]),
         (np.concatenate([uu_r, pu_r, pp_r]),
          np.concatenate([uu_c, pu_c, pp_c]))),
        shape=(ndof, ndof), dtype=complex).tocsr()
    return AssembledSystem(K=K, M=M, grid=grid)


# ---------------------------------------------------------------------------
# Bloch reduction


@dataclass(frozen=True)
class BlochOperator:
    """Periodicity map q = Lambda qhat tying right-edge to left-edge nodes."""

    lambda_x: complex
    Lambda: sp.csr_matrix
    grid: GridSpec


def bloch_operator(k_x: float, grid: GridSpec) -> BlochOperator:
    """Build Lambda for wavenumber k_x; lambda_x = exp(-i k_x L_x)."""
    lam = np.exp(-1j * float(k_x) * grid.lx)
    nx, ny = grid.nx, grid.ny
    nn_full, nn_red = n_nodes_full(grid), n_nodes_reduced(grid)

    ix = np.arange(nn_full) % (nx + 1)
    iy = np.arange(nn_full) // (nx + 1)
    wrap = ix == nx
    red_node = iy * nx + np.where(wrap, 0, ix)
    factor = np.where(wrap, lam, 1.0 + 0.0j)

    rows, cols, data = [], [], []
    for comp in range(2):
        rows.append(2 * np.arange(nn_full) + comp)
        cols.append(2 * red_node + comp)
        data.append(factor)
    rows.append(2 * nn_full + np.arange(nn_full))
    cols.append(2 * nn_red + red_node)
    data.append(factor)
    Lam = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * nn_full, 3 * nn_red)).tocsr()
    return BlochOperator(lambda_x=lam, Lambda=Lam, grid=grid)


def bloch_reduce(system: AssembledSystem, k_x: float, grid: GridSpec):
    """Reduce K, M with Lambda^H (.) Lambda; returns (Khat, Mhat, op)."""
    op = bloch_operator(k_x, grid)
    lam_h = op.Lambda.conj().T
    Khat = (lam_h @ system.K @ op.Lambda).tocsc()
    Mhat = (lam_h @ system.M @ op.Lambda).tocsc()
    return Khat, Mhat, op


# ---------------------------------------------------------------------------
# Cached direct-to-reduced assembly (hot path)


class ReducedAssembler:
    """Caches index arrays to assemble reduced systems without Lambda products.

    Cross-checked against assemble + bloch_reduce in the test suite.
    """

    def __init__(self, grid: GridSpec, cat: MaterialCatalog):
        self.grid = grid
        self.cat = cat
        h = grid.element_size
        self.ref = reference_element_matrices(h / 2, h / 2, cat.nu)

        nodes_red, wrap = _element_nodes_reduced(grid)
        self.nodes_red = nodes_red
        nn_red = n_nodes_reduced(grid)
        self.ud, self.pd = _dofs_from_nodes(nodes_red, nn_red)
        self.u_wrap = np.repeat(wrap, 2, axis=1)
        self.p_wrap = wrap

        ey = np.arange(grid.n_elements) // grid.nx
        s_eff = np.broadcast_to(self.ref.S_e, (grid.n_elements, 8, 4)).copy()
        s_eff[ey == 0] -= self.ref.S_edge["bottom"]
        s_eff[ey == grid.ny - 1] -= self.ref.S_edge["top"]
        self.s_eff = s_eff
        self.s_eff_t = np.ascontiguousarray(np.transpose(s_eff, (0, 2, 1)))

        self._idx = {}
        for name, (ri, ci, rw, cw) in {
            "uu": (self.ud, self.ud, self.u_wrap, self.u_wrap),
            "up": (self.ud, self.pd, self.u_wrap, self.p_wrap),
            "pu": (self.pd, self.ud, self.p_wrap, self.u_wrap),
            "pp": (self.pd, self.pd, self.p_wrap, self.p_wrap),
        }.items():
            nr, nc = ri.shape[1], ci.shape[1]
            rows = np.repeat(ri, nc, axis=1).ravel()
            cols = np.tile(ci, (1, nr)).ravel()
            rwrap = np.repeat(rw, nc, axis=1).ravel()
            cwrap = np.tile(cw, (1, nr)).ravel()
            self._idx[name] = (rows, cols, rwrap.astype(np.int8), cwrap.astype(np.int8))

    def _phases(self, name: str, lam: complex) -> np.ndarray | None:
        if lam == 1.0:
            return None
        rows, cols, rwrap, cwrap = self._idx[name]
        phase = np.ones(len(rows), dtype=complex)
        phase[rwrap == 1] *= np.conj(lam)
        phase[cwrap == 1] *= lam
        return phase

    def system(self, field_values: np.ndarray, lam: complex = 1.0):
        """Reduced (Khat, Mhat) in CSC form for one physical field."""
        field_values = np.asarray(field_values, dtype=float)
        if field_values.shape != (self.grid.n_elements,):
            raise ValueError("physical field length does not match grid")
        props, sp_w, su_w = _element_scalings(field_values, self.cat)
        ref = self.ref
        ndof = n_dofs_reduced(self.grid)

        def pack(name, data):
            rows, cols, _, _ = self._idx[name]
            ph = self._phases(name, lam)
            d = data.ravel()
            if ph is not None:
                d = d * ph
            return rows, cols, d

        kr, kc, kd = pack("uu", props.E_e[:, None, None] * ref.Ks_e)
        sr, sc, sd = pack("up", sp_w[:, None, None] * self.s_eff)
        ar, ac, ad = pack("pp", props.inv_rho_a_e[:, None, None] * ref.Ka_e)
        K = sp.coo_matrix(
            (np.concatenate([kd, sd, ad]).astype(complex),
             (np.concatenate([kr, sr, ar]), np.concatenate([kc, sc, ac]))),
            shape=(ndof, ndof)).tocsc()

        mr, mc, md = pack("uu", props.rho_s_e[:, None, None] * ref.Ms_e)
        ur, uc, ud_ = pack("pu", su_w[:, None, None] * self.s_eff_t)
        gr, gc, gd = pack("pp", props.inv_kappa_e[:, None, None] * ref.Ma_e)
        M = sp.coo_matrix(
            (np.concatenate([md, ud_, gd]).astype(complex),
             (np.concatenate([mr, ur, gr]), np.concatenate([mc, uc, gc]))),
            shape=(ndof, ndof)).tocsc()
        return K, M

    def element_dof_arrays(self):
        """Reduced element u/p DOF gathers plus wrap masks (for gradients)."""
        return self.ud, self.pd, self.u_wrap, self.p_wrap


def dump_matrix(A: sp.spmatrix) -> str:
    """Coordinate text dump: 'row col re im' per nonzero, sorted."""
    coo = A.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}"]
    for i in order:
        v = complex(coo.data[i])
        lines.append(f"{coo.row[i]} {coo.col[i]} {v.real!r} {v.imag!r}")
    return "\n".join(lines) + "\n"
