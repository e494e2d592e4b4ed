"""Staged continuation schedules and the optimization driver.

Hyperparameters stay constant within a stage; a stage ends when the
intermediate convergence criterion fires.  At that point the strategy
rule is applied first (bound ratchet, frequency reduction, robustness
step, formulation switch), then the regular beta step; frequency
reductions freeze the beta schedule until the excess is gone.  A run
terminates when a convergence produces no state change at all.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import adaptive_connectivity_bound, connectivity_lower_bound
from .mma import (MMA, MMAConfig, MoveLimitState, formulate_aggregated,
                  formulate_minmax, formulate_single, update_move_limit)

__all__ = [
    "StageState",
    "ConvergenceCriterion",
    "check_convergence",
    "beta_schedule_step",
    "Strategy",
    "STRATEGY_KINDS",
    "IterationRecord",
    "StageEvent",
    "RunRecord",
    "run_optimization",
]

BETA_CAP = 64.0
BETA_FACTOR = 1.2
DELTA_ETA_FINAL = 0.1
E3_BETA_TRIGGER = 15.0
SHIFT_BETA_TRIGGER = 50.0
HP_TRIGGER_FACTOR = 1.15
OMEGA_STAR_STEP_HZ = 100.0

STRATEGY_KINDS = ("baseline", "e1", "e2", "e3", "f1", "f2", "f3", "f4",
                  "r1", "r2", "r3")


@dataclass(frozen=True)
class StageState:
    """Hyperparameters of one continuation stage (constant within it)."""

    beta1: float = 1.0
    beta2: float = 0.5
    delta_eta: float = DELTA_ETA_FINAL
    omega_star: float = 0.0
    j_min: float | None = None
    formulation: str = "minmax"
    stage_index: int = 0

    def __post_init__(self):
        if self.formulation not in ("minmax", "aggregated", "blueprint"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.omega_star < 0:
            raise ValueError("excess frequency must be nonnegative")

    @property
    def beta_done(self) -> bool:
        return self.beta1 >= BETA_CAP - 1e-12


@dataclass(frozen=True)
class ConvergenceCriterion:
    constraint_tol: float = 0.01
    stl_tol_db: float = 0.01
    window: int = 5

    def __post_init__(self):
        if min(self.constraint_tol, self.stl_tol_db) <= 0 or self.window < 1:
            raise ValueError("convergence tolerances must be positive")


def check_convergence(min_stl_history, constraint_history,
                      crit: ConvergenceCriterion = ConvergenceCriterion()) -> bool:
    """Intermediate convergence of the current stage.

    ``min_stl_history``: per-iteration min(STL_b, STL_e, STL_d) values of
    the stage.  ``constraint_history``: per-iteration sequences of
    constraint values.  Converged when the last ``window`` iteration
    deltas of the worst STL stay below the tolerance and the constraints
    are either satisfied or changing by less than ``constraint_tol``.
    """
    stl = np.asarray(min_stl_history, dtype=float)
    if stl.size < crit.window + 1:
        return False
    deltas = np.abs(np.diff(stl[-(crit.window + 1):]))
    if np.any(deltas >= crit.stl_tol_db):
        return False
    last = np.asarray(constraint_history[-1], dtype=float)
    if last.size == 0 or np.all(last <= 1e-9):
        return True
    prev = np.asarray(constraint_history[-2], dtype=float)
    if prev.size == last.size and np.all(np.abs(last - prev) < crit.constraint_tol):
        return True
    return False


def beta_schedule_step(stage: StageState) -> StageState:
    """One geometric beta increase (x1.2, capped at 64), beta2 = beta1/2."""
    beta1 = min(stage.beta1 * BETA_FACTOR, BETA_CAP)
    return replace(stage, beta1=beta1, beta2=beta1 / 2.0,
                   stage_index=stage.stage_index + 1)


@dataclass
class StageContext:
    """Quantities a strategy rule may consult at a convergence."""

    j_conn: float
    stl_star: float
    stl_ml_shifted: float


class Strategy:
    """Stage-transition rules for one optimization run (stateful)."""

    def __init__(self, kind: str):
        kind = kind.lower()
        if kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {kind!r}; pick from {STRATEGY_KINDS}")
        self.kind = kind
        self.shift_triggered = False
        self.robust_triggered = False

    def initial_stage(self) -> StageState:
        k = self.kind
        if k == "e1":
            return StageState(j_min=-0.5)
        if k == "e2":
            return StageState(j_min=-0.05)
        if k == "e3":
            return StageState(j_min=None)  # vacuous bound (-1) until triggered
        if k.startswith("f"):
            return StageState(omega_star=1000.0 * int(k[1]))
        if k == "r1":
            return StageState(formulation="aggregated")
        if k == "r2":
            return StageState(formulation="blueprint", delta_eta=0.0)
        if k == "r3":
            return StageState(formulation="minmax", delta_eta=0.0)
        return StageState()

    def _hp_trigger(self, stage: StageState, ctx: StageContext) -> bool:
        return (ctx.stl_star >= HP_TRIGGER_FACTOR * ctx.stl_ml_shifted
                or stage.beta1 > SHIFT_BETA_TRIGGER)

    def on_convergence(self, stage: StageState, ctx: StageContext):
        """Apply strategy rule, then beta step.  Empty events = run done."""
        events: list[str] = []
        s = stage
        k = self.kind

        if k.startswith("f"):
            if not self.shift_triggered and self._hp_trigger(s, ctx):
                self.shift_triggered = True
                events.append("frequency continuation triggered")
            if self.shift_triggered and s.omega_star > 0:
                new_om = max(0.0, s.omega_star - OMEGA_STAR_STEP_HZ)
                s = replace(s, omega_star=new_om, stage_index=s.stage_index + 1)
                events.append(f"omega_star -> {new_om:g} Hz")
                return s, events  # beta frozen while excess remains

        if k == "e3" and s.beta1 > E3_BETA_TRIGGER:
            bound = adaptive_connectivity_bound(ctx.j_conn)
            if s.j_min is not None:
                bound = max(bound, s.j_min)  # ratchet toward zero only
            if s.j_min is None or bound > s.j_min + 1e-12:
                s = replace(s, j_min=bound, stage_index=s.stage_index + 1)
                events.append(f"j_min -> {bound:g}")

        if k in ("r2", "r3"):
            if not self.robust_triggered:
                if self._hp_trigger(s, ctx):
                    self.robust_triggered = True
                    form = "aggregated" if k == "r2" else "minmax"
                    s = replace(s, delta_eta=0.02, formulation=form,
                                stage_index=s.stage_index + 1)
                    events.append("robustness introduced: delta_eta -> 0.02")
            elif s.delta_eta < DELTA_ETA_FINAL - 1e-12:
                d = min(DELTA_ETA_FINAL, round(s.delta_eta + 0.02, 10))
                s = replace(s, delta_eta=d, stage_index=s.stage_index + 1)
                events.append(f"delta_eta -> {d:g}")

        if not s.beta_done:
            s = beta_schedule_step(s)
            events.append(f"beta1 -> {s.beta1:g}")
        elif (k in ("r1", "r2") and s.formulation == "aggregated"
              and s.delta_eta >= DELTA_ETA_FINAL - 1e-12):
            s = replace(s, formulation="minmax", stage_index=s.stage_index + 1)
            events.append("formulation -> minmax")

        return s, events


# ---------------------------------------------------------------------------
# Driver


@dataclass
class IterationRecord:
    iteration: int
    stl_b: float
    stl_e: float
    stl_d: float
    j_vol: float
    j_conn: float
    j_bound: float | None
    beta1: float
    mu2: float
    delta_eta: float
    omega_star: float
    formulation: str
    stage_index: int

    @property
    def min_stl(self) -> float:
        return min(self.stl_b, self.stl_e, self.stl_d)

    def constraint_values(self):
        vals = [self.j_vol, self.j_conn]
        if self.j_bound is not None:
            vals.append(self.j_bound)
        return vals


@dataclass
class StageEvent:
    iteration: int
    stage_index: int
    beta1: float
    delta_eta: float
    omega_star: float
    j_min: float | None
    formulation: str
    events: tuple[str, ...]


@dataclass
class RunRecord:
    """Outcome of one seeded optimization run."""

    strategy: str
    band: tuple[float, float]
    seed: int
    iteration_count: int
    stl_star: float
    stl_massslaw: float
    classification: str
    converged: bool
    history: list[IterationRecord] = field(default_factory=list)
    stage_log: list[StageEvent] = field(default_factory=list)
    final_xi: np.ndarray | None = None
    final_stl: dict[str, float] = field(default_factory=dict)


def _build_subproblem(stage: StageState, ev, xi, mu2):
    cons = [("vol", ev.j_vol, ev.grad_vol), ("conn", ev.j_conn, ev.grad_conn)]
    if stage.j_min is not None:
        cons.append(("conn_bound",
                     connectivity_lower_bound(ev.j_conn, stage.j_min),
                     -ev.grad_conn))
    if stage.formulation == "minmax":
        return formulate_minmax(ev.j_obj, ev.grad_j, cons, xi, mu2)
    if stage.formulation == "aggregated":
        return formulate_aggregated(ev.j_obj, ev.grad_j, cons, xi, mu2)
    return formulate_single(ev.j_obj["b"], ev.grad_j["b"], cons, xi, mu2)


def run_optimization(xi0: np.ndarray, strategy_kind: str, evaluator,
                     mma_cfg: MMAConfig = MMAConfig(),
                     criterion: ConvergenceCriterion = ConvergenceCriterion(),
                     max_iterations: int = 5000,
                     seed: int = 0,
                     on_iteration=None) -> RunRecord:
    """Run one staged optimization to schedule exhaustion or budget.

    ``evaluator`` provides evaluate(xi, beta1, beta2, delta_eta,
    omega_star, need_gradients) -> IterationEval and
    mass_law_band(band-like) plus attributes grid/band; the FEM-backed
    implementation lives in objective.StlEvaluator, tests may substitute
    synthetic stubs.
    """
    grid = evaluator.grid
    xi = np.asarray(xi0, dtype=float).copy()
    xi[grid.mask()] = 1.0

    strategy = Strategy(strategy_kind)
    stage = strategy.initial_stage()
    mma = MMA(grid.n_elements, mma_cfg)
    mls = MoveLimitState()

    history: list[IterationRecord] = []
    stage_log = [StageEvent(0, stage.stage_index, stage.beta1, stage.delta_eta,
                            stage.omega_star, stage.j_min, stage.formulation,
                            ("start",))]
    stage_minstl: list[float] = []
    stage_cons: list[list[float]] = []
    stage_stl_rows: list[tuple[float, float, float]] = []
    converged = False
    it = 0

    while it < max_iterations:
        it += 1
        ev = evaluator.evaluate(xi, stage.beta1, stage.beta2, stage.delta_eta,
                                stage.omega_star, need_gradients=True)
        j_bound = (connectivity_lower_bound(ev.j_conn, stage.j_min)
                   if stage.j_min is not None else None)
        rec = IterationRecord(
            iteration=it, stl_b=ev.stl["b"], stl_e=ev.stl["e"], stl_d=ev.stl["d"],
            j_vol=ev.j_vol, j_conn=ev.j_conn, j_bound=j_bound,
            beta1=stage.beta1, mu2=mls.mu2, delta_eta=stage.delta_eta,
            omega_star=stage.omega_star, formulation=stage.formulation,
            stage_index=stage.stage_index)
        history.append(rec)
        stage_minstl.append(rec.min_stl)
        stage_cons.append(rec.constraint_values())
        stage_stl_rows.append((rec.stl_b, rec.stl_e, rec.stl_d))
        if on_iteration is not None:
            on_iteration(rec)

        if check_convergence(stage_minstl, stage_cons, criterion):
            ctx = StageContext(
                j_conn=ev.j_conn, stl_star=ev.stl_star,
                stl_ml_shifted=evaluator.mass_law_band(
                    evaluator.band.shifted(stage.omega_star)))
            new_stage, events = strategy.on_convergence(stage, ctx)
            if not events:
                converged = True
                break
            stage = new_stage
            stage_log.append(StageEvent(it, stage.stage_index, stage.beta1,
                                        stage.delta_eta, stage.omega_star,
                                        stage.j_min, stage.formulation,
                                        tuple(events)))
            stage_minstl.clear()
            stage_cons.clear()
            stage_stl_rows.clear()
            mls.stage_reset()
            continue

        spec = _build_subproblem(stage, ev, xi, mls.mu2)
        x_new, _, _, _ = mma.step(spec)
        delta_xi = float(np.max(np.abs(x_new - xi)))
        update_move_limit(mls, np.array(stage_stl_rows), delta_xi)
        xi = x_new

    final = evaluator.evaluate(xi, stage.beta1, stage.beta2, stage.delta_eta,
                               omega_star=0.0, need_gradients=False)
    stl_ml = evaluator.mass_law_band(evaluator.band)
    stl_star = final.stl_star
    classification = "HP" if stl_star >= 1.1 * stl_ml else "LP"
    return RunRecord(
        strategy=strategy_kind, band=(evaluator.band.f_minus, evaluator.band.f_plus),
        seed=seed, iteration_count=it, stl_star=stl_star, stl_massslaw=stl_ml,
        classification=classification, converged=converged, history=history,
        stage_log=stage_log, final_xi=xi, final_stl=dict(final.stl))
