"""Forced transmission solves, STL spectra and analytic oracles.

The unit cell couples to the two acoustic halfspaces through its top and
bottom boundaries.  Only the zeroth-order plane-wave harmonic is kept:
each boundary carries a structural path (edge-integral functional of the
normal displacement, weighted by the boundary element density, radiating
against the plane-wave impedance Z = rho_a c_a / cos(theta)) and an
acoustic path (pressure-trace functional weighted by 1 - density, Robin
admittance 1/Z).  The incident side receives the blocked 2*P_i forcing.
A fully solid boundary row reduces this to the classical plate-radiation
model; a fully fluid boundary to matched impedance terminations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .design import GridSpec
from .fem import ReducedAssembler, n_dofs_reduced, n_nodes_reduced
from .materials import MaterialCatalog

__all__ = [
    "IncidentWave",
    "FrequencyBand",
    "SpectrumResult",
    "ResonanceSingularError",
    "TransmissionSolver",
    "solve_transmission",
    "compute_stl",
    "band_average",
    "normalized_objective",
    "mass_law",
    "mass_law_band",
    "mass_spring_mass_oracle",
    "NORMALIZATION_DB",
]

NORMALIZATION_DB = 120.0


class ResonanceSingularError(RuntimeError):
    """Factorization hit an (undamped) resonance; reports the frequency."""


@dataclass(frozen=True)
class IncidentWave:
    """Incident plane wave below the panel; amplitudes are ratios."""

    f_hz: float
    theta: float = 0.0
    p_i: float = 1.0

    def __post_init__(self):
        if self.f_hz <= 0:
            raise ValueError("frequency must be positive")
        if not -math.pi / 2 < self.theta < math.pi / 2:
            raise ValueError("incidence angle must lie in (-pi/2, pi/2)")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.f_hz

    def k_a(self, c_a: float) -> float:
        return self.omega / c_a

    def k_x(self, c_a: float) -> float:
        return self.k_a(c_a) * math.sin(self.theta)

    def k_y(self, c_a: float) -> float:
        return self.k_a(c_a) * math.cos(self.theta)


@dataclass(frozen=True)
class FrequencyBand:
    """Band [f_minus, f_plus] in Hz sampled at n midpoint frequencies."""

    f_minus: float
    f_plus: float
    n_samples: int = 5

    def __post_init__(self):
        if not 0 < self.f_minus < self.f_plus:
            raise ValueError("band must satisfy 0 < f_minus < f_plus")
        if self.n_samples < 1:
            raise ValueError("need at least one band sample")

    @property
    def width(self) -> float:
        return self.f_plus - self.f_minus

    def sample_hz(self) -> np.ndarray:
        i = np.arange(self.n_samples)
        return self.f_minus + (i + 0.5) * self.width / self.n_samples

    def weights(self) -> np.ndarray:
        """Midpoint integration weights; sum to the band width."""
        return np.full(self.n_samples, self.width / self.n_samples)

    def shifted(self, excess_hz: float) -> "FrequencyBand":
        return FrequencyBand(self.f_minus + excess_hz, self.f_plus + excess_hz,
                             self.n_samples)


@dataclass
class SpectrumResult:
    """Per-sample transmission results plus the band average."""

    f_hz: np.ndarray
    tau: np.ndarray
    stl_db: np.ndarray
    band_avg_db: float
    tag: str = ""


def compute_stl(tau) -> float | np.ndarray:
    """STL in dB from the power transmission coefficient."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("transmission coefficient must be positive")
    out = -10.0 * np.log10(tau)
    return float(out) if out.ndim == 0 else out


def band_average(stl_samples, band: FrequencyBand) -> float:
    """Weighted band average; equals the plain mean for midpoint weights."""
    stl_samples = np.asarray(stl_samples, dtype=float)
    if stl_samples.shape != (band.n_samples,):
        raise ValueError("sample count does not match the band")
    w = band.weights()
    return float(np.dot(w, stl_samples) / band.width)


def normalized_objective(stl_band_db: float) -> float:
    """J = 1 - STL/C with C = 120 dB."""
    return 1.0 - stl_band_db / NORMALIZATION_DB


def mass_law(m_area: float, f_hz, rho_a: float, c_a: float, theta: float = 0.0):
    """Normal/oblique mass law STL of a limp panel with fluid on both sides."""
    if m_area <= 0 or rho_a <= 0 or c_a <= 0:
        raise ValueError("mass law needs positive parameters")
    f_hz = np.asarray(f_hz, dtype=float)
    x = 2 * np.pi * f_hz * m_area * math.cos(theta) / (2 * rho_a * c_a)
    out = 10.0 * np.log10(1.0 + x ** 2)
    return float(out) if out.ndim == 0 else out


def mass_law_band(m_area: float, band: FrequencyBand, rho_a: float, c_a: float,
                  theta: float = 0.0) -> float:
    return band_average(mass_law(m_area, band.sample_hz(), rho_a, c_a, theta), band)


def mass_spring_mass_oracle(m1: float, m2: float, k: float, f_hz,
                            rho_a: float = 1.225, c_a: float = 340.0):
    """STL of two limp panels joined by a massless spring, fluid loaded.

    The decoupling dip sits at f_d = sqrt(k (m1+m2)/(m1 m2)) / (2 pi);
    below it the pair follows the combined mass law, above it the STL
    climbs 18 dB per octave.
    """
    if min(m1, m2, k, rho_a, c_a) <= 0:
        raise ValueError("oracle needs positive parameters")
    f_hz = np.asarray(f_hz, dtype=float)
    w = 2 * np.pi * f_hz
    z = rho_a * c_a
    # (-w^2 m1 + i w Z + k) U1 - k U2 = 2 P_i ;  -k U1 + (-w^2 m2 + i w Z + k) U2 = 0
    a11 = -w ** 2 * m1 + 1j * w * z + k
    a22 = -w ** 2 * m2 + 1j * w * z + k
    det = a11 * a22 - k ** 2
    u2 = 2.0 * k / det
    p_t = 1j * w * z * u2
    tau = np.abs(p_t) ** 2
    out = -10.0 * np.log10(tau)
    return float(out) if out.ndim == 0 else out


def msm_spring_for_dip(m1: float, m2: float, f_dip_hz: float) -> float:
    """Spring constant per area placing the decoupling dip at f_dip_hz."""
    return (2 * np.pi * f_dip_hz) ** 2 * m1 * m2 / (m1 + m2)


# ---------------------------------------------------------------------------
# FE transmission solver


def _sparse_dyad(left: np.ndarray, right: np.ndarray, scale: complex,
                 ndof: int) -> sp.csc_matrix:
    """scale * outer(left, right) as a sparse matrix (vectors are sparse)."""
    li = np.nonzero(left)[0]
    ri = np.nonzero(right)[0]
    if len(li) == 0 or len(ri) == 0:
        return sp.csc_matrix((ndof, ndof), dtype=complex)
    rows = np.repeat(li, len(ri))
    cols = np.tile(ri, len(li))
    data = scale * np.outer(left[li], right[ri]).ravel()
    return sp.coo_matrix((data, (rows, cols)), shape=(ndof, ndof)).tocsc()


@dataclass
class BoundaryVectors:
    """Zeroth-harmonic boundary functionals in reduced coordinates."""

    cu_bot: np.ndarray
    cp_bot: np.ndarray
    cu_top: np.ndarray
    cp_top: np.ndarray


class LuSolve:
    """Equilibrated complex LU; shares the factorization with adjoints."""

    def __init__(self, A: sp.csc_matrix, f_hz: float):
        d = np.abs(A.diagonal())
        d[d < 1e-300] = 1.0
        self.scale = 1.0 / np.sqrt(d)
        D = sp.diags(self.scale)
        try:
            self.lu = spla.splu((D @ A @ D).tocsc())
        except RuntimeError as exc:  # pragma: no cover - needs zero damping
            raise ResonanceSingularError(
                f"singular system at f = {f_hz} Hz: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.scale * self.lu.solve(self.scale * b)

    def solve_transposed(self, b: np.ndarray) -> np.ndarray:
        return self.scale * self.lu.solve(self.scale * b, trans="T")


@dataclass
class FrequencySolve:
    """One factorized transmission solve at a single frequency."""

    f_hz: float
    tau: float
    stl_db: float
    p_t: complex
    q: np.ndarray
    g: np.ndarray  # dP_t/dq
    lu: LuSolve
    lam: complex
    omega: float
    p_i: float


class TransmissionSolver:
    """Transmission analyses for one grid/material pair.

    Reuses the cached reduced assembler; systems for distinct designs and
    frequencies are independent, so instances are safe to share read-only.
    """

    def __init__(self, grid: GridSpec, cat: MaterialCatalog):
        self.grid = grid
        self.cat = cat
        self.assembler = ReducedAssembler(grid, cat)
        self.c_exterior = cat.c_a.real  # halfspaces carry undamped air

    def impedance(self, theta: float = 0.0) -> float:
        return self.cat.rho_a * self.c_exterior / math.cos(theta)

    def boundary_vectors(self, field_values: np.ndarray, k_x: float = 0.0) -> BoundaryVectors:
        grid = self.grid
        nx, ny, h = grid.nx, grid.ny, grid.element_size
        nn = n_nodes_reduced(grid)
        ndof = n_dofs_reduced(grid)
        field_values = np.asarray(field_values, dtype=float)

        def edge(row_iy_elem: int, row_iy_node: int):
            cu = np.zeros(ndof, dtype=complex)
            cp = np.zeros(ndof, dtype=complex)
            wu = np.zeros(nx)
            wp = np.zeros(nx)
            for ex in range(nx):
                xi_e = field_values[row_iy_elem * nx + ex]
                for node_ix in (ex, (ex + 1) % nx):
                    wu[node_ix] += xi_e * h / 2.0
                    wp[node_ix] += (1.0 - xi_e) * h / 2.0
            nodes = row_iy_node * nx + np.arange(nx)
            phase = np.exp(1j * k_x * h * np.arange(nx))
            cu[2 * nodes + 1] = wu * phase
            cp[2 * nn + nodes] = wp * phase
            return cu, cp

        cu_b, cp_b = edge(0, 0)
        cu_t, cp_t = edge(ny - 1, ny)
        return BoundaryVectors(cu_b, cp_b, cu_t, cp_t)

    def operator(self, field_values: np.ndarray, wave: IncidentWave):
        """Reduced K, M and boundary vectors for one design at one k_x."""
        k_x = wave.k_x(self.c_exterior)
        lam = np.exp(-1j * k_x * self.grid.lx)
        K, M = self.assembler.system(field_values, lam if abs(k_x) > 0 else 1.0)
        bv = self.boundary_vectors(field_values, k_x)
        return K, M, bv, lam

    def solve(self, field_values: np.ndarray, wave: IncidentWave,
              system=None) -> FrequencySolve:
        """Factorize and solve the halfspace-loaded system at one frequency.

        ``system`` may pass a precomputed (K, M, bv, lam) tuple, e.g. when
        sweeping frequencies at theta = 0 where K, M are k-independent.
        """
        if system is None:
            system = self.operator(field_values, wave)
        K, M, bv, lam = system
        w = wave.omega
        z = self.impedance(wave.theta)
        lx = self.grid.lx
        ndof = K.shape[0]

        A = (K - w ** 2 * M).tocsc()
        A = A + _sparse_dyad(np.conj(bv.cu_bot), bv.cu_bot, 1j * w * z / lx, ndof)
        A = A + _sparse_dyad(np.conj(bv.cu_top), bv.cu_top, 1j * w * z / lx, ndof)
        A = A + _sparse_dyad(np.conj(bv.cp_bot), bv.cp_bot, 1j * w / (z * lx), ndof)
        A = A + _sparse_dyad(np.conj(bv.cp_top), bv.cp_top, 1j * w / (z * lx), ndof)

        rhs = 2.0 * wave.p_i * np.conj(bv.cu_bot) \
            + (2j * w * wave.p_i / z) * np.conj(bv.cp_bot)

        lu = LuSolve(A, wave.f_hz)
        q = lu.solve(rhs)
        g = (1j * w * z / lx) * bv.cu_top + (1.0 / lx) * bv.cp_top
        p_t = complex(g @ q)
        tau = abs(p_t / wave.p_i) ** 2
        return FrequencySolve(f_hz=wave.f_hz, tau=tau, stl_db=compute_stl(tau),
                              p_t=p_t, q=q, g=g, lu=lu, lam=lam, omega=w,
                              p_i=wave.p_i)

    def band_solves(self, field_values: np.ndarray, band: FrequencyBand,
                    theta: float = 0.0) -> list[FrequencySolve]:
        """Solves at all band samples, reusing K, M when theta = 0."""
        solves = []
        shared = None
        if theta == 0.0:
            shared = self.operator(field_values, IncidentWave(band.sample_hz()[0], 0.0))
        for f in band.sample_hz():
            wave = IncidentWave(float(f), theta)
            solves.append(self.solve(field_values, wave, system=shared))
        return solves

    def spectrum(self, field_values: np.ndarray, band: FrequencyBand,
                 theta: float = 0.0, tag: str = "") -> SpectrumResult:
        solves = self.band_solves(field_values, band, theta)
        stl = np.array([s.stl_db for s in solves])
        tau = np.array([s.tau for s in solves])
        return SpectrumResult(f_hz=band.sample_hz(), tau=tau, stl_db=stl,
                              band_avg_db=band_average(stl, band), tag=tag)

    def spectrum_at(self, field_values: np.ndarray, freqs_hz,
                    theta: float = 0.0, tag: str = "") -> SpectrumResult:
        """Spectrum at an explicit frequency list (no band average)."""
        freqs = np.asarray(freqs_hz, dtype=float)
        shared = self.operator(field_values, IncidentWave(float(freqs[0]), theta)) \
            if theta == 0.0 else None
        taus, stls = [], []
        for f in freqs:
            s = self.solve(field_values, IncidentWave(float(f), theta), system=shared)
            taus.append(s.tau)
            stls.append(s.stl_db)
        stls = np.array(stls)
        return SpectrumResult(f_hz=freqs, tau=np.array(taus), stl_db=stls,
                              band_avg_db=float(np.mean(stls)), tag=tag)


def solve_transmission(solver: TransmissionSolver, field_values: np.ndarray,
                       wave: IncidentWave) -> tuple[float, np.ndarray]:
    """Convenience wrapper returning (tau, reduced response vector)."""
    s = solver.solve(field_values, wave)
    return s.tau, s.q
