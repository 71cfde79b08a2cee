"""Per-slot extraction-depth subproblem.

Given the slot's association and link rates, choose local and edge
extraction depths for every served GU. The complementarity requirement
(a packet is extracted locally or at the UAV, never both) is relaxed via a
Taylor-majorized product penalty with geometrically growing weight; the
smooth subproblem is solved by coordinate bisection on monotone gradients
plus projected ascent on the multipliers.

The subproblem decomposes per served GU (each GU has one serving UAV and
its own time budget), so the solver loops GUs independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import SystemParams, WorldState


@dataclass
class DepthProblem:
    """Coefficients of one slot's depth subproblem, per GU.

    Arrays are length K; entries are meaningful only where scheduled. The
    serving UAV's link enters through the per-bit airtimes; the association
    indicator is already folded in (unserved GUs are excluded outright).
    """

    scheduled: np.ndarray      # (K,) bool
    weight: np.ndarray         # (K,) Q_k + V*w1, multiplies time-like terms
    v_weight: float            # V*w2, multiplies the value surrogate
    wait_time: np.ndarray      # (K,) (slot - gen_slot)*t_max, constant AoI offset
    extract_l: np.ndarray      # (K,) local extraction coefficient / f_local
    exp_l: float               # local extraction exponent (>= 1)
    upload_s: np.ndarray       # (K,) D / uplink rate
    upload_f: np.ndarray       # (K,) D / forward rate
    extract_u: np.ndarray      # (K,) edge extraction coefficient / f_edge
    exp_u: float               # edge extraction exponent (>= 1)
    recover: np.ndarray        # (K,) recovery coefficient / f_bs
    rec_exp: float             # recovery exponent (> 0)
    fixed_time: np.ndarray     # (K,) knowledge-construction time, depth-independent
    value_exp: np.ndarray      # (K,) value exponent value_rate * D
    t_max: float
    rho_min: float
    upload_full: bool = False  # edge extraction uploads the whole packet


@dataclass
class DepthSolution:
    rho_l: np.ndarray          # (K,) depths in [rho_min, 1] or exactly 0
    rho_u: np.ndarray
    feasible: np.ndarray       # (K,) scheduled GU fits its slot budget
    objective: float           # sum over feasible served GUs of the subproblem objective
    sweeps: int                # dual-loop sweeps used (max over GUs)
    lam1: np.ndarray           # (K,) final budget multipliers
    lam2: np.ndarray           # (K,) final complementarity multipliers


def build_depth_problem(state: WorldState, q: np.ndarray, assoc: np.ndarray,
                        rate_gu: np.ndarray, rate_bs: np.ndarray,
                        params: SystemParams) -> DepthProblem:
    """Assemble per-GU coefficients from the slot state and link rates."""
    nk = params.num_gus
    scheduled = np.zeros(nk, dtype=bool)
    upload_s = np.zeros(nk)
    upload_f = np.zeros(nk)
    for m, k in enumerate(assoc):
        if k >= 0:
            scheduled[k] = True
            upload_s[k] = state.packet_bits[k] / rate_gu[m, k]
            upload_f[k] = state.packet_bits[k] / rate_bs[m]
    d = state.packet_bits
    return DepthProblem(
        scheduled=scheduled,
        weight=q + params.lyap_v * params.w_aoi,
        v_weight=params.lyap_v * params.w_value,
        wait_time=(state.slot - state.packet_gen) * params.t_max,
        extract_l=np.full(nk, params.local_extract_coef / params.f_local),
        exp_l=params.local_extract_exp,
        upload_s=upload_s,
        upload_f=upload_f,
        extract_u=np.full(nk, params.edge_extract_coef / params.f_edge),
        exp_u=params.edge_extract_exp,
        recover=np.full(nk, params.recover_coef / params.f_bs),
        rec_exp=params.recover_exp,
        fixed_time=(params.local_knowledge_coef / params.f_local
                    + params.edge_knowledge_coef / params.f_edge) * d,
        value_exp=params.value_rate * d,
        t_max=params.t_max,
        rho_min=params.rho_min,
        upload_full=params.physical_upload,
    )


# ---------------------------------------------------------------------------
# objective pieces
# ---------------------------------------------------------------------------

def gamma1_k(prob: DepthProblem, k: int, rho_l: float, rho_u: float) -> float:
    """Depth-dependent service time of GU k (seconds).

    Extraction, upload, forward, and recovery; the depth-independent
    knowledge-construction time is carried separately in fixed_time. The
    recovery power law takes the combined depth (clamped at rho_min), so
    gamma1 + fixed_time reproduces the protocol timing exactly. Under
    upload_full any point with edge extraction active carries the whole
    packet uplink, a constant within that branch.
    """
    rho_eff = max(rho_l + rho_u, prob.rho_min)
    if prob.upload_full and rho_u > 0.0:
        t_up = prob.upload_s[k]
    else:
        t_up = prob.upload_s[k] * rho_l
    return (prob.extract_l[k] * (1.0 - rho_l) ** prob.exp_l
            + t_up
            + prob.upload_f[k] * (rho_l + rho_u)
            + prob.extract_u[k] * (1.0 - rho_u) ** prob.exp_u
            + prob.recover[k] * rho_eff ** (-prob.rec_exp))


def gamma2_k(prob: DepthProblem, k: int, rho_l: float, rho_u: float) -> float:
    """Information-value surrogate 1 - exp(-value_exp*(rho_l+rho_u)).

    Identical to the delivered value of the model, so the subproblem
    optimizes the true value, not a proxy.
    """
    return 1.0 - math.exp(-prob.value_exp[k] * (rho_l + rho_u))


def phi_taylor(rho_l: float, rho_u: float, anchor_l: float, anchor_u: float) -> float:
    """Convex majorant of the product rho_l*rho_u around the anchor point:
    0.25*[(rho_l+rho_u)^2 - delta^2 - 2*delta*(rho_l - rho_u - delta)],
    delta = anchor_l - anchor_u. Equals the product at the anchor."""
    delta = anchor_l - anchor_u
    s = rho_l + rho_u
    return 0.25 * (s * s - delta * delta - 2.0 * delta * (rho_l - rho_u - delta))


def budget_k(prob: DepthProblem, k: int, rho_l: float, rho_u: float) -> float:
    """Slot-budget slack gamma1 + fixed_time - t_max (feasible when <= 0)."""
    return gamma1_k(prob, k, rho_l, rho_u) + prob.fixed_time[k] - prob.t_max


def objective_k(prob: DepthProblem, k: int, rho_l: float, rho_u: float) -> float:
    """Subproblem objective for GU k: weight*gamma1 - v_weight*gamma2."""
    return (prob.weight[k] * gamma1_k(prob, k, rho_l, rho_u)
            - prob.v_weight * gamma2_k(prob, k, rho_l, rho_u))


def lagrangian_k(prob: DepthProblem, k: int, rho_l: float, rho_u: float,
                 varrho: float, lam1: float, lam2: float, omega0: float,
                 anchor_l: float, anchor_u: float) -> float:
    """Penalized partial Lagrangian of GU k's relaxed subproblem.

    The complementarity surrogate enters scaled by the penalty factor
    (omega0*lam2*phi - lam2*varrho), which is the only reading that keeps
    the stationarity conditions for the depths, the slack, and the
    multipliers mutually consistent.
    """
    return (objective_k(prob, k, rho_l, rho_u)
            + omega0 * varrho
            + lam1 * budget_k(prob, k, rho_l, rho_u)
            + lam2 * (omega0 * phi_taylor(rho_l, rho_u, anchor_l, anchor_u) - varrho))


# ---------------------------------------------------------------------------
# gradients (each monotone nondecreasing in its own coordinate)
# ---------------------------------------------------------------------------

def _d_gamma1_l(prob: DepthProblem, k: int, rho_l: float, rho_u: float) -> float:
    g = (-prob.extract_l[k] * prob.exp_l * (1.0 - rho_l) ** (prob.exp_l - 1.0)
         + prob.upload_f[k])
    if not (prob.upload_full and rho_u > 0.0):
        g += prob.upload_s[k]
    rho_eff = rho_l + rho_u
    if rho_eff >= prob.rho_min:
        g -= prob.recover[k] * prob.rec_exp * rho_eff ** (-prob.rec_exp - 1.0)
    return g


def _d_gamma1_u(prob: DepthProblem, k: int, rho_l: float, rho_u: float) -> float:
    g = (-prob.extract_u[k] * prob.exp_u * (1.0 - rho_u) ** (prob.exp_u - 1.0)
         + prob.upload_f[k])
    rho_eff = rho_l + rho_u
    if rho_eff >= prob.rho_min:
        g -= prob.recover[k] * prob.rec_exp * rho_eff ** (-prob.rec_exp - 1.0)
    return g


def _d_gamma2(prob: DepthProblem, k: int, rho_l: float, rho_u: float) -> float:
    return prob.value_exp[k] * math.exp(-prob.value_exp[k] * (rho_l + rho_u))


def grad_rho_l(prob: DepthProblem, k: int, rho_l: float, rho_u: float,
               lam1: float, lam2: float, omega0: float,
               anchor_l: float, anchor_u: float) -> float:
    """d lagrangian / d rho_l at fixed multipliers and anchors."""
    return ((prob.weight[k] + lam1) * _d_gamma1_l(prob, k, rho_l, rho_u)
            - prob.v_weight * _d_gamma2(prob, k, rho_l, rho_u)
            + 0.5 * omega0 * lam2 * (rho_l + rho_u - (anchor_l - anchor_u)))


def grad_rho_u(prob: DepthProblem, k: int, rho_l: float, rho_u: float,
               lam1: float, lam2: float, omega0: float,
               anchor_l: float, anchor_u: float) -> float:
    """d lagrangian / d rho_u at fixed multipliers and anchors."""
    return ((prob.weight[k] + lam1) * _d_gamma1_u(prob, k, rho_l, rho_u)
            - prob.v_weight * _d_gamma2(prob, k, rho_l, rho_u)
            + 0.5 * omega0 * lam2 * (rho_l + rho_u + (anchor_l - anchor_u)))


def grad_varrho(lam2: float, omega0: float) -> float:
    return omega0 - lam2


def grad_lam1(prob: DepthProblem, k: int, rho_l: float, rho_u: float) -> float:
    return budget_k(prob, k, rho_l, rho_u)


def grad_lam2(prob: DepthProblem, k: int, rho_l: float, rho_u: float,
              varrho: float, omega0: float, anchor_l: float, anchor_u: float) -> float:
    return omega0 * phi_taylor(rho_l, rho_u, anchor_l, anchor_u) - varrho


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def bisect_stationary(g, lo: float, hi: float, tol: float = 1e-8,
                      max_iter: int = 80) -> float:
    """Root of a nondecreasing scalar function on [lo, hi], clamped to the
    endpoint when the gradient does not change sign."""
    glo = g(lo)
    if glo >= 0.0:
        return lo
    ghi = g(hi)
    if ghi <= 0.0:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            return mid
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _feasible_interval(f, df, lo: float, hi: float, tol: float = 1e-9):
    """Sublevel interval {x in [lo,hi]: f(x) <= 0} of a convex f, or None.

    Locates the minimizer by bisection on the derivative, then the crossing
    points on each side.
    """
    x_star = bisect_stationary(df, lo, hi)
    if f(x_star) > 0.0:
        return None
    left = lo
    if f(lo) > 0.0:
        a, b = lo, x_star
        for _ in range(80):
            if b - a < tol:
                break
            mid = 0.5 * (a + b)
            if f(mid) > 0.0:
                a = mid
            else:
                b = mid
        left = b
    right = hi
    if f(hi) > 0.0:
        a, b = x_star, hi
        for _ in range(80):
            if b - a < tol:
                break
            mid = 0.5 * (a + b)
            if f(mid) <= 0.0:
                a = mid
            else:
                b = mid
        right = a
    return left, right


def _branch_candidate(prob: DepthProblem, k: int, branch: str):
    """Best single-branch depth (partner coordinate exactly 0), or None.

    The branch objective is convex, so the constrained optimum is the
    unconstrained stationary point clamped to the budget-feasible interval.
    """
    if branch == "local":
        def g(x):
            return grad_rho_l(prob, k, x, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)

        def t(x):
            return budget_k(prob, k, x, 0.0)

        def dt(x):
            return _d_gamma1_l(prob, k, x, 0.0)
    else:
        def g(x):
            return grad_rho_u(prob, k, 0.0, x, 0.0, 0.0, 1.0, 0.0, 0.0)

        def t(x):
            return budget_k(prob, k, 0.0, x)

        def dt(x):
            return _d_gamma1_u(prob, k, 0.0, x)

    span = _feasible_interval(t, dt, prob.rho_min, 1.0)
    if span is None:
        return None
    x = min(max(bisect_stationary(g, prob.rho_min, 1.0), span[0]), span[1])
    if branch == "local":
        return x, 0.0
    return 0.0, x


def solve_depths(prob: DepthProblem, anchor_l=None, anchor_u=None,
                 step1: float = 0.1, step2: float = 0.1,
                 omega0_init: float = 1.0, growth: float = 2.0,
                 tol: float = 1e-6, max_sweeps: int = 40) -> DepthSolution:
    """Solve the slot's depth subproblem for every served GU.

    Runs the penalized dual loop (coordinate bisection on the depths,
    gradient step on the slack, projected ascent on the multipliers clamped
    to [0,1], penalty factor doubled each sweep). A coordinate that reaches
    the lower clamp while its partner is active is snapped to exactly 0 and
    frozen; otherwise the growing penalty would eventually crush the
    surviving coordinate as well. The returned depths are the best
    budget-feasible point among the loop's answer, each pure branch's
    clamped stationary point, the branch boundary points, and the warm-start
    anchors, which also keeps alternating optimization monotone.
    """
    nk = len(prob.scheduled)
    rho_l = np.zeros(nk)
    rho_u = np.zeros(nk)
    feasible = prob.scheduled.copy()
    lam1_out = np.zeros(nk)
    lam2_out = np.zeros(nk)
    total_obj = 0.0
    max_sweep_used = 0

    for k in range(nk):
        if not prob.scheduled[k]:
            continue
        al = 0.5 if anchor_l is None else float(anchor_l[k])
        au = 0.5 if anchor_u is None else float(anchor_u[k])
        al = min(max(al, 0.0), 1.0)
        au = min(max(au, 0.0), 1.0)
        warm = (al, au)
        xl = al if al > 0.0 else prob.rho_min
        xu = au if au > 0.0 else prob.rho_min
        varrho = xl * xu
        lam1 = 0.0
        lam2 = 0.0
        omega0 = omega0_init
        frozen_l = False
        frozen_u = False
        sweeps = 0
        for sweep in range(max_sweeps):
            sweeps = sweep + 1
            a_l, a_u = xl, xu
            prev_l, prev_u = xl, xu
            if not frozen_l:
                xl = bisect_stationary(
                    lambda x: grad_rho_l(prob, k, x, xu, lam1, lam2, omega0, a_l, a_u),
                    prob.rho_min, 1.0)
            if not frozen_u:
                xu = bisect_stationary(
                    lambda x: grad_rho_u(prob, k, xl, x, lam1, lam2, omega0, a_l, a_u),
                    prob.rho_min, 1.0)
            # complementarity resolution: a clamped coordinate with an active
            # partner is dead weight; freeze it at 0 so the penalty force on
            # the partner vanishes and the loop can settle.
            if not frozen_l and not frozen_u:
                if xl <= prob.rho_min * (1.0 + 1e-9) and xu > 2.0 * prob.rho_min:
                    xl = 0.0
                    frozen_l = True
                elif xu <= prob.rho_min * (1.0 + 1e-9) and xl > 2.0 * prob.rho_min:
                    xu = 0.0
                    frozen_u = True
            varrho = max(varrho - step2 * grad_varrho(lam2, omega0), 0.0)
            lam1 = min(max(lam1 + step1 * grad_lam1(prob, k, xl, xu), 0.0), 1.0)
            lam2 = min(max(lam2 + step2 * grad_lam2(prob, k, xl, xu, varrho,
                                                    omega0, a_l, a_u), 0.0), 1.0)
            omega0 *= growth
            if abs(xl - prev_l) < tol and abs(xu - prev_u) < tol:
                break
        max_sweep_used = max(max_sweep_used, sweeps)
        lam1_out[k] = lam1
        lam2_out[k] = lam2

        # final snap for the loop's point, then pick the best feasible candidate
        if xl > 0.0 and xu > 0.0:
            if xl <= prob.rho_min * (1.0 + 1e-9) and xu > 2.0 * prob.rho_min:
                xl = 0.0
            elif xu <= prob.rho_min * (1.0 + 1e-9) and xl > 2.0 * prob.rho_min:
                xu = 0.0
        candidates = [(xl, xu)]
        for branch in ("local", "edge"):
            c = _branch_candidate(prob, k, branch)
            if c is not None:
                candidates.append(c)
        candidates += [(prob.rho_min, 0.0), (1.0, 0.0), (0.0, prob.rho_min), (0.0, 1.0)]
        if warm != (0.0, 0.0):
            candidates.append(warm)
        best = None
        best_obj = math.inf
        for cl, cu in candidates:
            # extracted locally or at the UAV, never both: the feasible set
            # is the union of the two pure branches
            if cl > 0.0 and cu > 0.0:
                continue
            if cl + cu > 1.0 + 1e-12:
                continue
            if budget_k(prob, k, cl, cu) > 1e-9:
                continue
            obj = objective_k(prob, k, cl, cu)
            if obj < best_obj:
                best_obj = obj
                best = (cl, cu)
        if best is None:
            feasible[k] = False
            rho_l[k] = 0.0
            rho_u[k] = 0.0
        else:
            rho_l[k], rho_u[k] = best
            total_obj += best_obj

    return DepthSolution(rho_l, rho_u, feasible, total_obj, max_sweep_used,
                         lam1_out, lam2_out)
