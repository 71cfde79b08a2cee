"""Per-slot alternating optimization over extraction depths and deployment.

With the association fixed for the slot, the drift-plus-penalty slice U
splits into a depth part and a position part coupled only through link
rates and the budget. Alternating the two convexified subproblems descends
U monotonically: the deployment pass verifies budgets with exact rates at
the incumbent depths, and the depth pass keeps the incumbent depths in its
candidate set, so no pass can increase the objective beyond float dust.

Served GUs whose slot budget cannot be met at the starting geometry (even
by pure relay-free depth choice) are de-scheduled once, up front; their
UAVs idle for the slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deploy import build_deploy_problem, solve_deployment
from .lyapunov import per_slot_objective
from .model import SlotAction, SystemParams, WorldState, compute_slot_outcome, link_rates
from .sem_extract import build_depth_problem, solve_depths


@dataclass
class AOResult:
    assoc: np.ndarray         # (M,) association actually kept (infeasible pruned)
    rho_l: np.ndarray         # (K,)
    rho_u: np.ndarray         # (K,)
    positions: np.ndarray     # (M,2)
    objective: float          # U at the returned control
    trace: list               # U per outer pass, nonincreasing
    outer_iters: int
    pruned: np.ndarray        # (K,) requested but de-scheduled


def evaluate_control(state: WorldState, q: np.ndarray, assoc: np.ndarray,
                     rho_l: np.ndarray, rho_u: np.ndarray, positions: np.ndarray,
                     params: SystemParams) -> float:
    """U for an explicit control (exact rates, exact timing)."""
    action = SlotAction(np.asarray(assoc, dtype=int), np.asarray(rho_l, dtype=float),
                        np.asarray(rho_u, dtype=float), np.asarray(positions, dtype=float))
    out = compute_slot_outcome(state, action, params)
    obj = per_slot_objective(q, state.aoi, out.scheduled, state.slot,
                             state.packet_gen, out.t_total, out.value, params)
    return obj.total


def alternate(state: WorldState, q: np.ndarray, assoc: np.ndarray,
              params: SystemParams, warm_positions: np.ndarray | None = None,
              warm_rho_l: np.ndarray | None = None,
              warm_rho_u: np.ndarray | None = None,
              max_outer: int = 10, tol: float = 1e-3) -> AOResult:
    """Alternate depth and deployment solves until U stalls.

    Convergence is declared when the relative improvement drops below tol;
    the pass count reported is the number of deployment+depth rounds taken.
    """
    nk = params.num_gus
    working = np.asarray(assoc, dtype=int).copy()
    positions = (state.uav_pos.copy() if warm_positions is None
                 else np.asarray(warm_positions, dtype=float).copy())

    rate_gu, rate_bs = link_rates(positions, state, params)
    dprob = build_depth_problem(state, q, working, rate_gu, rate_bs, params)
    dsol = solve_depths(dprob, warm_rho_l, warm_rho_u)
    pruned = np.zeros(nk, dtype=bool)
    for m, k in enumerate(working):
        if k >= 0 and not dsol.feasible[k]:
            working[m] = -1
            pruned[k] = True
    rho_l = dsol.rho_l.copy()
    rho_u = dsol.rho_u.copy()
    trace = [evaluate_control(state, q, working, rho_l, rho_u, positions, params)]

    outer = 0
    for outer in range(1, max_outer + 1):
        dep_prob = build_deploy_problem(state, q, working, rho_l, rho_u, None,
                                        positions, params)
        dep_sol = solve_deployment(dep_prob)
        new_pos = dep_sol.positions

        rate_gu, rate_bs = link_rates(new_pos, state, params)
        dprob = build_depth_problem(state, q, working, rate_gu, rate_bs, params)
        dsol = solve_depths(dprob, rho_l, rho_u)
        u_new = evaluate_control(state, q, working, dsol.rho_l, dsol.rho_u,
                                 new_pos, params)
        if u_new > trace[-1] + 1e-9 * max(1.0, abs(trace[-1])):
            outer -= 1
            break
        positions = new_pos
        rho_l = dsol.rho_l.copy()
        rho_u = dsol.rho_u.copy()
        trace.append(u_new)
        if trace[-2] - trace[-1] <= tol * max(1.0, abs(trace[-2])):
            break

    return AOResult(working, rho_l, rho_u, np.asarray(positions, dtype=float),
                    trace[-1], trace, outer, pruned)
