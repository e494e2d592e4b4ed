"""Per-iteration evaluation of objectives, constraints and gradients.

One evaluation builds the five physical fields at the stage's projection
parameters, runs the 3 x 5 transmission solves (deduplicating identical
fields when delta_eta = 0), the static connectivity solve, and assembles
gradients with respect to the raw variables.  Everything is pure per
design point; evaluators are reusable across iterations and runs on the
same grid/material pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import SelfWeightSolver, volume_constraint
from .design import (DesignVector, FilterSpec, GridSpec, PhysicalDesignSet,
                     build_physical_designs, chain_backprop)
from .materials import MaterialCatalog
from .sensitivities import stl_band_gradient
from .transmission import (FrequencyBand, NORMALIZATION_DB, TransmissionSolver,
                           band_average, mass_law_band, normalized_objective)

__all__ = ["IterationEval", "StlEvaluator"]

OBJECTIVE_TAGS = ("b", "e", "d")


@dataclass
class IterationEval:
    """Everything the optimization driver needs from one design point."""

    stl: dict[str, float]            # band-averaged STL per design tag
    j_obj: dict[str, float]          # normalized objectives
    grad_j: dict[str, np.ndarray]    # dJ/d(raw xi) per tag
    j_vol: float = 0.0
    grad_vol: np.ndarray | None = None
    j_conn: float = 0.0
    grad_conn: np.ndarray | None = None
    designs: PhysicalDesignSet | None = None

    @property
    def stl_star(self) -> float:
        return min(self.stl[t] for t in OBJECTIVE_TAGS)


class StlEvaluator:
    """Band-averaged STL objective with volume/connectivity constraints."""

    def __init__(self, grid: GridSpec, cat: MaterialCatalog, band: FrequencyBand,
                 base_filter: FilterSpec, v_frac: float = 0.5,
                 mu_sw: float = 15.0, theta: float = 0.0):
        self.grid = grid
        self.cat = cat
        self.band = band
        self.base_filter = base_filter
        self.v_frac = v_frac
        self.theta = theta
        self.solver = TransmissionSolver(grid, cat)
        self.sw = SelfWeightSolver(grid, cat, mu_sw)
        self.n_solves = 0

    def filter_for_stage(self, beta1: float, beta2: float,
                         delta_eta: float) -> FilterSpec:
        bf = self.base_filter
        return FilterSpec(r1=bf.r1, r2=bf.r2, beta1=beta1, beta2=beta2,
                          eta_b=bf.eta_b, delta_eta=delta_eta,
                          eta_erode2=bf.eta_erode2, eta_dilate2=bf.eta_dilate2)

    def mass_law_band(self, band: FrequencyBand) -> float:
        """Equal-mass single-plate reference for the given band."""
        m_area = self.cat.rho_s * self.v_frac * self.grid.ly
        return mass_law_band(m_area, band, self.cat.rho_a, self.cat.c_a.real,
                             self.theta)

    def evaluate(self, xi_values: np.ndarray, beta1: float, beta2: float,
                 delta_eta: float, omega_star: float = 0.0,
                 need_gradients: bool = True) -> IterationEval:
        spec = self.filter_for_stage(beta1, beta2, delta_eta)
        dv = DesignVector(np.asarray(xi_values, dtype=float).copy(), self.grid)
        designs, state = build_physical_designs(dv, spec, return_state=True)
        band = self.band.shifted(omega_star) if omega_star else self.band

        # identical thresholds produce identical fields; solve each once
        thresholds = spec.thresholds()
        unique: dict[float, list[str]] = {}
        for tag in OBJECTIVE_TAGS:
            unique.setdefault(thresholds[tag], []).append(tag)

        stl: dict[str, float] = {}
        grads: dict[str, np.ndarray] = {}
        for eta, tags in unique.items():
            fld = designs.field(tags[0])
            solves = self.solver.band_solves(fld, band, self.theta)
            self.n_solves += len(solves)
            stl_band = band_average([s.stl_db for s in solves], band)
            if need_gradients:
                g_phys = stl_band_gradient(self.solver.assembler, fld, solves, band)
                # same threshold -> same chain branch -> same gradient
                g_raw = chain_backprop(-g_phys / NORMALIZATION_DB, tags[0], state)
                for tag in tags:
                    grads[tag] = g_raw
            for tag in tags:
                stl[tag] = stl_band

        j_obj = {t: normalized_objective(stl[t]) for t in OBJECTIVE_TAGS}

        j_vol, g_vol_phys = volume_constraint(designs.d2, self.v_frac)
        _, j_conn, dth_b, dth_e2 = self.sw.evaluate(designs.b, designs.e2)
        out = IterationEval(stl=stl, j_obj=j_obj, grad_j=grads,
                            j_vol=j_vol, j_conn=j_conn, designs=designs)
        if need_gradients:
            out.grad_vol = chain_backprop(g_vol_phys, "d2", state)
            gb, ge2 = self.sw.j_conn_gradients(dth_b, dth_e2)
            out.grad_conn = (chain_backprop(gb, "b", state)
                             + chain_backprop(ge2, "e2", state))
        return out
