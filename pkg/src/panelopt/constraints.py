"""Volume constraint and the self-weight connectivity constraint.

The connectivity constraint solves a static, x-periodic, structural-only
problem: downward nodal loads proportional to the blueprint densities act
on the stiffness of the second eroded design, with the bottom boundary
clamped.  The compliance must stay below 1/mu_sw of the fully solid
reference.  The solve is real (damping has no static meaning) and the
gravity constant cancels from the compliance ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .design import GridSpec
from .fem import (_dofs_from_nodes, _element_nodes_reduced,
                  n_nodes_reduced, reference_element_matrices)
from .materials import MaterialCatalog

__all__ = [
    "ConstraintValues",
    "volume_constraint",
    "SelfWeightSolver",
    "connectivity_lower_bound",
    "adaptive_connectivity_bound",
]

MU_SW_DEFAULT = 15.0


@dataclass
class ConstraintValues:
    """Normalized constraint values of one design point."""

    j_vol: float
    j_conn: float
    theta_sw: float
    theta_hat_sw: float


def volume_constraint(xi_d2_p: np.ndarray, v_frac: float = 0.5):
    """Normalized volume constraint on the dilated-2 field.

    J_vol = mean(xi)/V_frac - 1; the gradient w.r.t. the physical field
    is the constant 1/(V_frac * N_e).
    """
    if not 0 < v_frac <= 1:
        raise ValueError("volume fraction must lie in (0, 1]")
    xi = np.asarray(xi_d2_p, dtype=float)
    n = xi.size
    j_vol = float(np.mean(xi)) / v_frac - 1.0
    grad = np.full(n, 1.0 / (v_frac * n))
    return j_vol, grad


class SelfWeightSolver:
    """Static self-weight compliance on the periodic cell, bottom clamped."""

    def __init__(self, grid: GridSpec, cat: MaterialCatalog,
                 mu_sw: float = MU_SW_DEFAULT):
        if mu_sw <= 0:
            raise ValueError("mu_sw must be positive")
        self.grid = grid
        self.cat = cat
        self.mu_sw = mu_sw
        h = grid.element_size
        self.ref = reference_element_matrices(h / 2, h / 2, cat.nu)
        self.area = h * h

        nodes, _ = _element_nodes_reduced(grid)
        self.nodes = nodes
        nn = n_nodes_reduced(grid)
        ud, _ = _dofs_from_nodes(nodes, nn)
        self.ud = ud
        n_udof = 2 * nn
        rows = np.repeat(ud, 8, axis=1).ravel()
        cols = np.tile(ud, (1, 8)).ravel()
        self._rows, self._cols = rows, cols

        fixed = np.zeros(n_udof, dtype=bool)
        fixed[: 2 * grid.nx] = True  # iy = 0 nodes, both components
        self.free = np.nonzero(~fixed)[0]
        self._free_pos = -np.ones(n_udof, dtype=np.int64)
        self._free_pos[self.free] = np.arange(len(self.free))
        self.n_udof = n_udof

        self.factorization_count = 0
        self._theta_hat: float | None = None

    # -- material helpers (real parts only; statics carry no damping)

    def _e_real(self, xi: np.ndarray) -> np.ndarray:
        c = self.cat
        e_solid, e_void = complex(c.E).real, complex(c.E_v).real
        ramp = xi / (1.0 + c.q * (1.0 - xi))
        return e_void + ramp * (e_solid - e_void)

    def _de_real(self, xi: np.ndarray) -> np.ndarray:
        c = self.cat
        dramp = (1.0 + c.q) / (1.0 + c.q * (1.0 - xi)) ** 2
        return dramp * (complex(c.E).real - complex(c.E_v).real)

    def _stiffness(self, xi_e2: np.ndarray) -> sp.csc_matrix:
        data = (self._e_real(xi_e2)[:, None, None] * self.ref.Ks_e).ravel()
        K = sp.coo_matrix((data, (self._rows, self._cols)),
                          shape=(self.n_udof, self.n_udof)).tocsr()
        return K[self.free][:, self.free].tocsc()

    def _load(self, xi_b: np.ndarray) -> np.ndarray:
        f = np.zeros(self.n_udof)
        w = -xi_b * self.area / 4.0
        np.add.at(f, 2 * self.nodes + 1, w[:, None])
        return f

    def _solve(self, xi_b: np.ndarray, xi_e2: np.ndarray):
        K = self._stiffness(xi_e2)
        f = self._load(xi_b)
        lu = spla.splu(K)
        self.factorization_count += 1
        u_free = lu.solve(f[self.free])
        u = np.zeros(self.n_udof)
        u[self.free] = u_free
        theta = float(u_free @ f[self.free])
        return theta, u

    def reference_compliance(self) -> float:
        """Fully solid compliance, computed once per solver and cached."""
        if self._theta_hat is None:
            ones = np.ones(self.grid.n_elements)
            self._theta_hat, _ = self._solve(ones, ones)
        return self._theta_hat

    def evaluate(self, xi_b_p: np.ndarray, xi_e2_p: np.ndarray):
        """Self-weight compliance, J_conn and its physical-field gradients.

        Returns (theta_sw, j_conn, dtheta/dxi_b, dtheta/dxi_e2); J_conn
        gradients are these scaled by 1/(mu_sw * theta_hat).  The
        compliance is self-adjoint: the one forward factorization also
        yields the gradient (asserted via factorization_count).
        """
        xi_b = np.asarray(xi_b_p, dtype=float)
        xi_e2 = np.asarray(xi_e2_p, dtype=float)
        theta_hat = self.reference_compliance()
        before = self.factorization_count
        theta, u = self._solve(xi_b, xi_e2)
        # load derivative: theta = u.F linear in F, dF/dxi_b is the element map
        uy_sum = u[2 * self.nodes + 1].sum(axis=1)
        dtheta_db = 2.0 * (-self.area / 4.0) * uy_sum
        # stiffness derivative, self-adjoint: -u^T dK u
        u_loc = u[self.ud]
        quad = np.einsum("ei,ij,ej->e", u_loc, self.ref.Ks_e, u_loc)
        dtheta_de2 = -self._de_real(xi_e2) * quad
        assert self.factorization_count == before + 1, \
            "connectivity gradient must not trigger extra factorizations"
        j_conn = theta / (self.mu_sw * theta_hat) - 1.0
        return theta, j_conn, dtheta_db, dtheta_de2

    def j_conn_gradients(self, dtheta_db: np.ndarray, dtheta_de2: np.ndarray):
        scale = 1.0 / (self.mu_sw * self.reference_compliance())
        return dtheta_db * scale, dtheta_de2 * scale


def connectivity_lower_bound(j_conn: float, j_min: float) -> float:
    """Extra constraint value j_min - j_conn (feasible when <= 0)."""
    if j_min <= -1.0:
        raise ValueError("bound j_min <= -1 is vacuous")
    if j_min > 0.0:
        raise ValueError("bound j_min must lie in (-1, 0]")
    return j_min - j_conn


def adaptive_connectivity_bound(j_conn: float) -> float:
    """Most negative multiple of -0.05 strictly above j_conn (at least one).

    The clamp n >= 1 keeps the rule defined when j_conn is already within
    0.05 of zero, where the bound lands directly at -0.05.
    """
    n = max(1, math.ceil(-j_conn / 0.05 - 1e-9) - 1)
    return -0.05 * n
