"""Method of Moving Asymptotes with the panel problem's parameterization.

The subproblem follows the standard form

    min f0(x) + a0 z + sum(c_i y_i + 0.5 d_i y_i^2)
    s.t. f_i(x) - a_i z - y_i <= 0,  alfa <= x <= beta,  y >= 0, z >= 0.

The minmax formulation puts the three design objectives into constraints
with a_i = 1 so that z tracks the worst normalized objective; volume and
connectivity rows carry a_i = 0.  The aggregated formulation sums the
objectives directly and keeps only the physical constraints.  A
primal-dual interior point method solves the convex separable subproblem
to tight KKT tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MMAConfig",
    "SubproblemSpec",
    "MoveLimitState",
    "update_move_limit",
    "formulate_minmax",
    "formulate_aggregated",
    "formulate_single",
    "MMA",
]


@dataclass(frozen=True)
class MMAConfig:
    s_init: float = 0.2
    s_decr: float = 0.65
    s_incr: float = 1.06
    mu: float = 0.1  # outer move limit
    a0: float = 1.0
    c_i: float = 1000.0
    d_i: float = 1.0
    raa0: float = 1e-8
    epsimin: float = 1e-10
    albefa: float = 0.1
    # floor low enough that oscillation shrinkage (s_decr) can damp
    # bang-bang 2-cycles instead of parking on the floor
    asy_min: float = 1e-6
    asy_max: float = 10.0

    def __post_init__(self):
        if not 0 < self.s_decr < 1 < self.s_incr:
            raise ValueError("need 0 < s_decr < 1 < s_incr")
        if not 0 < self.mu <= 1:
            raise ValueError("outer move limit must lie in (0, 1]")


@dataclass
class SubproblemSpec:
    """One linearization point handed to the MMA step."""

    x: np.ndarray
    f0val: float
    df0: np.ndarray
    fval: np.ndarray        # (m,)
    dfdx: np.ndarray        # (m, n)
    a: np.ndarray           # (m,) multipliers of z per constraint
    names: tuple[str, ...] = ()
    mu2: float = 1.0        # extra move limit intersected with [0,1] and +-mu


def formulate_minmax(j_objs: dict[str, float], j_grads: dict[str, np.ndarray],
                     constraints: list[tuple[str, float, np.ndarray]],
                     x: np.ndarray, mu2: float = 1.0) -> SubproblemSpec:
    """Slack reformulation: J_i - z <= 0 rows (a_i = 1) + physical rows."""
    tags = ("b", "e", "d")
    n = x.size
    fval = [j_objs[t] for t in tags]
    rows = [j_grads[t] for t in tags]
    a = [1.0] * 3
    names = [f"stl_{t}" for t in tags]
    for name, val, grad in constraints:
        fval.append(val)
        rows.append(grad)
        a.append(0.0)
        names.append(name)
    return SubproblemSpec(x=x, f0val=0.0, df0=np.zeros(n),
                          fval=np.array(fval), dfdx=np.vstack(rows),
                          a=np.array(a), names=tuple(names), mu2=mu2)


def formulate_aggregated(j_objs: dict[str, float], j_grads: dict[str, np.ndarray],
                         constraints: list[tuple[str, float, np.ndarray]],
                         x: np.ndarray, mu2: float = 1.0) -> SubproblemSpec:
    """Summed objective J_b + J_e + J_d, no slack variable."""
    tags = ("b", "e", "d")
    f0 = sum(j_objs[t] for t in tags)
    df0 = sum(j_grads[t] for t in tags)
    return _physical_rows_spec(f0, df0, constraints, x, mu2)


def formulate_single(j_obj: float, j_grad: np.ndarray,
                     constraints: list[tuple[str, float, np.ndarray]],
                     x: np.ndarray, mu2: float = 1.0) -> SubproblemSpec:
    """Blueprint-only objective (robustness delayed)."""
    return _physical_rows_spec(j_obj, j_grad, constraints, x, mu2)


def _physical_rows_spec(f0, df0, constraints, x, mu2):
    n = x.size
    if constraints:
        fval = np.array([v for _, v, _ in constraints])
        dfdx = np.vstack([g for _, _, g in constraints])
        names = tuple(name for name, _, _ in constraints)
    else:
        fval = np.zeros(0)
        dfdx = np.zeros((0, n))
        names = ()
    return SubproblemSpec(x=x, f0val=float(f0), df0=np.asarray(df0, dtype=float),
                          fval=fval, dfdx=dfdx, a=np.zeros(len(fval)),
                          names=names, mu2=mu2)


# ---------------------------------------------------------------------------
# Adaptive outer move limit


@dataclass
class MoveLimitState:
    """State machine for the extra move limit mu2.

    Reset to 0.05 at every stage start.  Five consecutive oscillation
    iterations shrink mu2 to (max step)/2 and record the offending value
    as the stage cap; five consecutive improvements of the worst STL grow
    mu2 by 1.5x up to that cap.
    """

    mu2: float = 0.05
    mu2_max: float = 1.0
    oscillation_count: int = 0
    improvement_count: int = 0
    osc_tol_db: float = 0.01
    imp_tol_db: float = 0.02

    def stage_reset(self):
        self.mu2 = 0.05
        self.mu2_max = 1.0
        self.oscillation_count = 0
        self.improvement_count = 0


def update_move_limit(state: MoveLimitState, stl_history: np.ndarray,
                      delta_xi: float) -> MoveLimitState:
    """Advance the mu2 state with the latest iteration's STL values.

    ``stl_history`` holds per-iteration rows (STL_b, STL_e, STL_d) of the
    current stage, newest last; ``delta_xi`` is the max componentwise
    change of the last accepted step.
    """
    hist = np.atleast_2d(np.asarray(stl_history, dtype=float))
    if hist.shape[0] >= 3:
        d_now = np.abs(hist[-1] - hist[-2])
        d_prev = np.abs(hist[-2] - hist[-3])
        osc = bool(np.any((d_prev > state.osc_tol_db) & (d_now < state.osc_tol_db)))
    else:
        osc = False
    if hist.shape[0] >= 2:
        imp = float(hist[-1].min() - hist[-2].min()) > state.imp_tol_db
    else:
        imp = False

    state.oscillation_count = state.oscillation_count + 1 if osc else 0
    state.improvement_count = state.improvement_count + 1 if imp else 0

    if state.oscillation_count >= 5:
        state.mu2_max = min(state.mu2_max, state.mu2)
        state.mu2 = max(delta_xi / 2.0, 1e-4)
        state.oscillation_count = 0
        state.improvement_count = 0
    elif state.improvement_count >= 5:
        state.mu2 = min(1.5 * state.mu2, state.mu2_max)
        state.improvement_count = 0
    return state


# ---------------------------------------------------------------------------
# The solver


class MMA:
    """Carries asymptote history between iterations; deterministic."""

    def __init__(self, n: int, cfg: MMAConfig = MMAConfig()):
        self.n = n
        self.cfg = cfg
        self.iteration = 0
        self.xold1: np.ndarray | None = None
        self.xold2: np.ndarray | None = None
        self.low = np.zeros(n)
        self.upp = np.ones(n)
        self.asy_factor = np.ones(n)
        self.kkt_residual = 0.0

    def step(self, spec: SubproblemSpec):
        """One MMA iteration; returns (x_new, z, y, lam)."""
        cfg = self.cfg
        x = np.asarray(spec.x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError("design size changed between iterations")
        if not (np.all(np.isfinite(spec.df0)) and np.all(np.isfinite(spec.dfdx))):
            raise ValueError("gradients must be finite")
        self.iteration += 1
        xmin, xmax = np.zeros(self.n), np.ones(self.n)
        xrange = xmax - xmin

        if self.iteration <= 2 or self.xold2 is None:
            self.low = x - cfg.s_init * xrange
            self.upp = x + cfg.s_init * xrange
            self.asy_factor = np.ones(self.n)
        else:
            zzz = (x - self.xold1) * (self.xold1 - self.xold2)
            factor = np.ones(self.n)
            factor[zzz > 0] = cfg.s_incr
            factor[zzz < 0] = cfg.s_decr
            self.asy_factor = factor
            low = x - factor * (self.xold1 - self.low)
            upp = x + factor * (self.upp - self.xold1)
            low = np.clip(low, x - cfg.asy_max * xrange, x - cfg.asy_min * xrange)
            upp = np.clip(upp, x + cfg.asy_min * xrange, x + cfg.asy_max * xrange)
            self.low, self.upp = low, upp

        move = min(cfg.mu, spec.mu2)
        alfa = np.maximum.reduce([xmin, self.low + cfg.albefa * (x - self.low),
                                  x - move])
        beta = np.minimum.reduce([xmax, self.upp - cfg.albefa * (self.upp - x),
                                  x + move])
        beta = np.maximum(beta, alfa + 1e-14)

        ux1 = self.upp - x
        xl1 = x - self.low
        p0 = np.maximum(spec.df0, 0.0)
        q0 = np.maximum(-spec.df0, 0.0)
        pq0 = 0.001 * (p0 + q0) + cfg.raa0 / xrange
        p0 = (p0 + pq0) * ux1 ** 2
        q0 = (q0 + pq0) * xl1 ** 2

        m = len(spec.fval)
        if m > 0:
            P = np.maximum(spec.dfdx, 0.0)
            Q = np.maximum(-spec.dfdx, 0.0)
            PQ = 0.001 * (P + Q) + cfg.raa0 / xrange
            P = (P + PQ) * ux1 ** 2
            Q = (Q + PQ) * xl1 ** 2
            b = P @ (1.0 / ux1) + Q @ (1.0 / xl1) - spec.fval
            a = np.asarray(spec.a, dtype=float)
            c = np.full(m, cfg.c_i)
            d = np.full(m, cfg.d_i)
            x_new, y, z, lam, kkt = _subsolv(
                m, self.n, cfg.epsimin, self.low, self.upp, alfa, beta,
                p0, q0, P, Q, cfg.a0, a, b, c, d)
        else:
            # box-constrained separable convex problem, closed form
            sp_ = np.sqrt(p0)
            sq = np.sqrt(q0)
            x_new = np.clip((sp_ * self.low + sq * self.upp) / (sp_ + sq), alfa, beta)
            y = np.zeros(0)
            z = 0.0
            lam = np.zeros(0)
            kkt = 0.0

        self.kkt_residual = kkt
        self.xold2 = self.xold1
        self.xold1 = x.copy()
        return x_new, z, y, lam


def _subsolv(m, n, epsimin, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d):
    """Primal-dual interior point solve of the separable MMA subproblem."""
    een = np.ones(n)
    eem = np.ones(m)
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = eem.copy()
    z = 1.0
    lam = eem.copy()
    xsi = np.maximum(een / (x - alfa), een)
    eta = np.maximum(een / (beta - x), een)
    mu = np.maximum(eem, 0.5 * c)
    zet = 1.0
    s = eem.copy()

    def residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1 = upp - x
        xl1 = x - low
        plam = p0 + P.T @ lam
        qlam = q0 + Q.T @ lam
        gvec = P @ (1 / ux1) + Q @ (1 / xl1)
        rex = plam / ux1 ** 2 - qlam / xl1 ** 2 - xsi + eta
        rey = c + d * y - mu - lam
        rez = a0 - zet - a @ lam
        relam = gvec - a * z - y + s - b
        rexsi = xsi * (x - alfa) - epsi
        reeta = eta * (beta - x) - epsi
        remu = mu * y - epsi
        rezet = zet * z - epsi
        res = lam * s - epsi
        residu = np.concatenate([rex, rey, [rez], relam, rexsi, reeta,
                                 remu, [rezet], res])
        return residu

    residu = residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
    residunorm = np.linalg.norm(residu)
    residumax = np.max(np.abs(residu))

    while epsi > epsimin:
        ittt = 0
        while residumax > 0.9 * epsi and ittt < 200:
            ittt += 1
            ux1 = upp - x
            xl1 = x - low
            ux2 = ux1 ** 2
            xl2 = xl1 ** 2
            ux3 = ux1 * ux2
            xl3 = xl1 * xl2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ (1 / ux1) + Q @ (1 / xl1)
            GG = P / ux2 - Q / xl2

            delx = plam / ux2 - qlam / xl2 - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2 * (plam / ux3 + qlam / xl3) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1.0 / diagy

            # m << n always here: condense on the multipliers
            blam = dellam + dely / diagy - GG @ (delx / diagx)
            Alam = np.diag(diaglamyi) + (GG / diagx) @ GG.T
            AA = np.zeros((m + 1, m + 1))
            AA[:m, :m] = Alam
            AA[:m, m] = a
            AA[m, :m] = a
            AA[m, m] = -zet / z
            bb = np.concatenate([blam, [delz]])
            solut = np.linalg.solve(AA, bb)
            dlam = solut[:m]
            dz = solut[m]
            dx = -delx / diagx - (GG.T @ dlam) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - (xsi * dx) / (x - alfa)
            deta = -eta + epsi / (beta - x) + (eta * dx) / (beta - x)
            dmu = -mu + epsi / y - (mu * dy) / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - (s * dlam) / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stmxx = np.max(-1.01 * dxx / xx)
            stmalfa = np.max(-1.01 * dx / (x - alfa))
            stmbeta = np.max(1.01 * dx / (beta - x))
            stminv = max(stmxx, stmalfa, stmbeta, 1.0)
            steg = 1.0 / stminv

            xold = x
            yold = y
            zold = z
            lamold = lam
            xsiold = xsi
            etaold = eta
            muold = mu
            zetold = zet
            sold = s
            resinew = 2 * residunorm
            itto = 0
            while resinew > residunorm and itto < 50:
                itto += 1
                x = xold + steg * dx
                y = yold + steg * dy
                z = zold + steg * dz
                lam = lamold + steg * dlam
                xsi = xsiold + steg * dxsi
                eta = etaold + steg * deta
                mu = muold + steg * dmu
                zet = zetold + steg * dzet
                s = sold + steg * ds
                residu = residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                resinew = np.linalg.norm(residu)
                steg *= 0.5
            residunorm = resinew
            residumax = np.max(np.abs(residu))
        last_residumax = residumax
        epsi *= 0.1
        residu = residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        residunorm = np.linalg.norm(residu)
        residumax = np.max(np.abs(residu))

    # residual of the perturbed KKT system at the final barrier level
    return x, y, z, lam, float(last_residumax)
