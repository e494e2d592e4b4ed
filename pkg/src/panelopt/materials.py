"""RAMP material interpolation between fluid and solid element properties."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MaterialCatalog", "ElementProps", "interpolate_element",
           "interpolate_derivative", "pmma_air"]


@dataclass(frozen=True)
class MaterialCatalog:
    """Solid/fluid properties plus the artificial values and RAMP factor.

    The artificial solid values (E_v, rho_v) keep void elements
    nonsingular; the artificial fluid values (kappa_r, rho_r) stiffen the
    pseudo-fluid inside solid elements.
    """

    E: complex
    rho_s: float
    nu: float
    rho_a: float
    c_a: complex
    q: float = 8.0
    E_v: complex = None  # type: ignore[assignment]
    rho_v: float = None  # type: ignore[assignment]
    kappa_r: complex = None  # type: ignore[assignment]
    rho_r: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.E.real <= 0:
            raise ValueError("Re(E) must be positive")
        if not 0.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5)")
        if self.rho_s <= 0 or self.rho_a <= 0:
            raise ValueError("densities must be positive")
        if self.q < 0:
            raise ValueError("RAMP penalization q must be nonnegative")
        if self.E_v is None:
            object.__setattr__(self, "E_v", 1e-6 * self.E.real)
        if self.rho_v is None:
            object.__setattr__(self, "rho_v", 1e-6 * self.rho_s)
        if self.kappa_r is None:
            object.__setattr__(self, "kappa_r", 1e6 * self.kappa)
        if self.rho_r is None:
            object.__setattr__(self, "rho_r", 1e6 * self.rho_a)

    @property
    def kappa(self) -> complex:
        """Fluid bulk modulus rho_a * c_a**2."""
        return self.rho_a * self.c_a ** 2


def pmma_air() -> MaterialCatalog:
    """PMMA plates/core in air, with structural and core-fluid damping."""
    return MaterialCatalog(
        E=4.85e9 * (1 + 0.05j),
        rho_s=1188.35,
        nu=0.31,
        rho_a=1.225,
        c_a=340.0 * (1 + 2e-4j),
    )


@dataclass(frozen=True)
class ElementProps:
    """Interpolated per-element coefficients (scalars or arrays)."""

    E_e: complex | np.ndarray
    rho_s_e: float | np.ndarray
    inv_kappa_e: complex | np.ndarray
    inv_rho_a_e: complex | np.ndarray
    xi_p: float | np.ndarray


def _ramp(xi, q):
    return xi / (1.0 + q * (1.0 - xi))


def _ramp_derivative(xi, q):
    return (1.0 + q) / (1.0 + q * (1.0 - xi)) ** 2


def _check_range(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < -1e-12) or np.any(xi > 1 + 1e-12):
        raise ValueError("physical density must lie in [0, 1]")
    return np.clip(xi, 0.0, 1.0)


def interpolate_element(xi_p, cat: MaterialCatalog) -> ElementProps:
    """RAMP-interpolate element properties at physical density xi_p.

    Young's modulus and inverse fluid density follow the RAMP rational
    law; solid density and inverse bulk modulus interpolate linearly.
    Endpoints are exact: xi_p = 0 gives the void/fluid values, xi_p = 1
    the solid/artificial-fluid values.
    """
    xi = _check_range(xi_p)
    r = _ramp(xi, cat.q)
    return ElementProps(
        E_e=cat.E_v + r * (cat.E - cat.E_v),
        rho_s_e=cat.rho_v + xi * (cat.rho_s - cat.rho_v),
        inv_kappa_e=1.0 / cat.kappa + xi * (1.0 / cat.kappa_r - 1.0 / cat.kappa),
        inv_rho_a_e=1.0 / cat.rho_a + r * (1.0 / cat.rho_r - 1.0 / cat.rho_a),
        xi_p=xi,
    )


def interpolate_derivative(xi_p, cat: MaterialCatalog) -> ElementProps:
    """Analytic derivative of :func:`interpolate_element` w.r.t. xi_p."""
    xi = _check_range(xi_p)
    dr = _ramp_derivative(xi, cat.q)
    zeros = np.zeros_like(xi)
    return ElementProps(
        E_e=dr * (cat.E - cat.E_v),
        rho_s_e=zeros + (cat.rho_s - cat.rho_v),
        inv_kappa_e=zeros + (1.0 / cat.kappa_r - 1.0 / cat.kappa),
        inv_rho_a_e=dr * (1.0 / cat.rho_r - 1.0 / cat.rho_a),
        xi_p=xi,
    )
