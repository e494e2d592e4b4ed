"""Adjoint gradients of the band-averaged STL and the FD verifier.

One adjoint solve per (design, frequency) reuses the forward LU through
its transposed form.  Per-element contractions lambda^T dA/dxi q are
vectorized over the element-local blocks; the result is a gradient with
respect to the physical density field, which the filter chain then pulls
back to the raw variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import ChainState, GridSpec, chain_backprop
from .fem import ReducedAssembler
from .materials import MaterialCatalog, interpolate_derivative
from .transmission import FrequencyBand, FrequencySolve, NORMALIZATION_DB

__all__ = ["GradientBundle", "stl_band_gradient", "fd_check"]

_LN10 = math.log(10.0)


@dataclass
class GradientBundle:
    """Gradients of the objectives/constraints w.r.t. the raw variables."""

    dJ_b: np.ndarray
    dJ_e: np.ndarray
    dJ_d: np.ndarray
    dJ_vol: np.ndarray
    dJ_conn: np.ndarray


def _gather(vec: np.ndarray, dofs: np.ndarray, wrap: np.ndarray, lam: complex,
            conjugate_phase: bool) -> np.ndarray:
    out = vec[dofs]
    if lam != 1.0:
        ph = np.conj(lam) if conjugate_phase else lam
        out = out * np.where(wrap, ph, 1.0)
    return out


def stl_band_gradient(assembler: ReducedAssembler, field_values: np.ndarray,
                      solves: list[FrequencySolve], band: FrequencyBand) -> np.ndarray:
    """d(band-averaged STL)/d(xi_P) via one adjoint solve per frequency."""
    cat = assembler.cat
    ref = assembler.ref
    ud, pd, u_wrap, p_wrap = assembler.element_dof_arrays()
    dprops = interpolate_derivative(field_values, cat)

    n_e = assembler.grid.n_elements
    grad = np.zeros(n_e)
    w_band = band.weights() / band.width
    if len(solves) != band.n_samples:
        raise ValueError("solve list does not match the band sampling")

    for w_i, s in zip(w_band, solves):
        adj = s.lu.solve_transposed(s.g)
        q_u = _gather(s.q, ud, u_wrap, s.lam, conjugate_phase=False)
        q_p = _gather(s.q, pd, p_wrap, s.lam, conjugate_phase=False)
        l_u = _gather(adj, ud, u_wrap, s.lam, conjugate_phase=True)
        l_p = _gather(adj, pd, p_wrap, s.lam, conjugate_phase=True)

        t_ks = np.einsum("ei,ij,ej->e", l_u, ref.Ks_e, q_u)
        t_ms = np.einsum("ei,ij,ej->e", l_u, ref.Ms_e, q_u)
        t_ka = np.einsum("ei,ij,ej->e", l_p, ref.Ka_e, q_p)
        t_ma = np.einsum("ei,ij,ej->e", l_p, ref.Ma_e, q_p)
        t_sp = np.einsum("ei,eij,ej->e", l_u, assembler.s_eff, q_p)
        t_su = np.einsum("ei,eij,ej->e", l_p, assembler.s_eff_t, q_u)

        w2 = s.omega ** 2
        lam_da_q = (dprops.E_e * t_ks + dprops.inv_rho_a_e * t_ka
                    - w2 * (dprops.rho_s_e * t_ms + dprops.inv_kappa_e * t_ma)
                    - t_sp - w2 * t_su)
        dp_t = -lam_da_q
        dtau = 2.0 * np.real(np.conj(s.p_t) * dp_t) / s.p_i ** 2
        dstl = -10.0 / (_LN10 * s.tau) * dtau
        grad += w_i * dstl
    return grad


def stl_objective_gradient(assembler: ReducedAssembler, field_values: np.ndarray,
                           solves: list[FrequencySolve], band: FrequencyBand,
                           tag: str, state: ChainState) -> np.ndarray:
    """dJ/d(raw xi) for one design realization, J = 1 - STL(band)/C."""
    g_phys = stl_band_gradient(assembler, field_values, solves, band)
    return chain_backprop(-g_phys / NORMALIZATION_DB, tag, state)


def fd_check(functional, xi: np.ndarray, grid: GridSpec, n_probes: int = 20,
             step: float = 1e-6, seed: int = 0) -> float:
    """Worst relative error of a gradient against central differences.

    ``functional(xi) -> (value, gradient)``; probes are drawn uniformly
    from the unmasked components.  The FD quotient is the oracle; the
    comparison normalizes by the larger magnitude of the two.
    """
    if step <= 0:
        raise ValueError("FD step must be positive")
    xi = np.asarray(xi, dtype=float)
    free = np.nonzero(~grid.mask())[0]
    rng = np.random.Generator(np.random.Philox(seed))
    probes = rng.choice(free, size=min(n_probes, len(free)), replace=False)

    _, grad = functional(xi)
    worst = 0.0
    for idx in probes:
        xp = xi.copy()
        xp[idx] += step
        fp, _ = functional(xp)
        xm = xi.copy()
        xm[idx] -= step
        fm, _ = functional(xm)
        fd = (fp - fm) / (2 * step)
        denom = max(abs(fd), abs(grad[idx]), 1e-30)
        worst = max(worst, abs(fd - grad[idx]) / denom)
    return worst
