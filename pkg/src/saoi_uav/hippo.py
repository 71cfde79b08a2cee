"""Hierarchical and flat learned controllers.

The hierarchical controller lets the policy pick only the UAV-GU
association; extraction depths and positions then come from the per-slot
alternating optimizer, so its actions are always feasible. The flat
("conventional") controller emits association, depths, and movement from
one policy; its proposals can violate the slot budget, in which case the
offending GU is de-scheduled (its AoI grows) and the reward is penalized.

Observation layout (length M*K + 2M + K): flattened uplink channel power
gains, UAV coordinates scaled by the area, per-GU AoI scaled by the AoI
budget. Running normalization happens inside the agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ao import AOResult, alternate, evaluate_control
from .lyapunov import per_slot_objective
from .model import (SlotAction, SystemParams, WorldState, compute_slot_outcome,
                    link_gains)
from .ppo import PPOAgent, PPOConfig

CONT_PER_UAV = 4      # two depth raws + two movement raws


def obs_dim(params: SystemParams) -> int:
    return params.num_uavs * params.num_gus + 2 * params.num_uavs + params.num_gus


def build_observation(state: WorldState, params: SystemParams) -> np.ndarray:
    gain_gu, _ = link_gains(state.uav_pos, state, params)
    pos = np.asarray(state.uav_pos, dtype=float) / np.array(
        [params.area_width, params.area_height])
    return np.concatenate([gain_gu.ravel(), pos.ravel(),
                           state.aoi / params.aoi_budget])


def new_agent(params: SystemParams, scheme: str, seed: int = 0,
              cfg: PPOConfig | None = None) -> PPOAgent:
    cont = CONT_PER_UAV * params.num_uavs if scheme == "ConventionalPPO" else 0
    return PPOAgent(obs_dim(params), params.num_uavs, params.num_gus,
                    cont_dim=cont, cfg=cfg, seed=seed)


def picks_to_assoc(picks: np.ndarray, num_gus: int) -> np.ndarray:
    """Per-UAV categorical choice -> association vector (idle index = K)."""
    return np.array([int(p) if p < num_gus else -1 for p in picks], dtype=int)


@dataclass
class Decision:
    """One slot's executed control plus the learning-side bookkeeping."""

    action: SlotAction
    objective: float          # U of the executed action
    reward: float             # RL reward (-U, minus any infeasibility penalty)
    transition: dict | None   # agent-side sample, None for heuristic schemes
    ao_trace: list | None = None
    fallback: bool = False    # optimizer failure fallback was taken
    descheduled: int = 0      # GUs dropped for violating the slot budget


def decide_hierarchical(agent: PPOAgent, state: WorldState, q: np.ndarray,
                        params: SystemParams, rng: np.random.Generator,
                        train: bool = False) -> Decision:
    """Policy picks the association; the alternating optimizer supplies
    depths and positions. On optimizer failure the slot degrades to
    all-idle with held positions (flagged)."""
    obs = build_observation(state, params)
    sample = agent.act(obs, rng, update_norm=train)
    assoc = picks_to_assoc(sample["picks"], params.num_gus)
    fallback = False
    try:
        res: AOResult = alternate(state, q, assoc, params)
        action = SlotAction(res.assoc, res.rho_l, res.rho_u, res.positions)
        objective = res.objective
        trace = res.trace
    except (ValueError, FloatingPointError, ArithmeticError):
        nk = params.num_gus
        action = SlotAction(np.full(params.num_uavs, -1, dtype=int),
                            np.zeros(nk), np.zeros(nk), state.uav_pos.copy())
        objective = evaluate_control(state, q, action.assoc, action.rho_local,
                                     action.rho_edge, action.positions, params)
        trace = None
        fallback = True
    reward = -objective
    transition = {"obs_norm": sample["obs_norm"], "picks": sample["picks"],
                  "cont": None, "logp": sample["logp"], "value": sample["value"],
                  "probs": sample["probs"], "means": None, "reward": reward}
    return Decision(action, objective, reward, transition, ao_trace=trace,
                    fallback=fallback)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _resolve_collisions(proposed: np.ndarray, current: np.ndarray,
                        params: SystemParams) -> np.ndarray:
    """Cancel the moves of any pair that would breach the separation floor.

    Both members of a violating pair revert to their held positions; the
    scan repeats until clean. Held positions were feasible last slot, so
    the loop terminates with a feasible layout.
    """
    out = proposed.copy()
    moved = np.ones(len(out), dtype=bool)
    for _ in range(len(out) * len(out) + 1):
        bad = None
        for m in range(len(out)):
            for m2 in range(m + 1, len(out)):
                if math.hypot(out[m][0] - out[m2][0],
                              out[m][1] - out[m2][1]) < params.d_min - 1e-9:
                    bad = (m, m2)
                    break
            if bad:
                break
        if bad is None:
            return out
        for m in bad:
            if moved[m]:
                out[m] = current[m]
                moved[m] = False
    return current.copy()


def decide_conventional(agent: PPOAgent, state: WorldState, q: np.ndarray,
                        params: SystemParams, rng: np.random.Generator,
                        train: bool = False) -> Decision:
    """Flat controller: one policy emits association, depths, and moves.

    Depth raws are sigmoid-squashed with the smaller of the pair zeroed
    (complementarity holds exactly); movement raws are tanh-squashed into
    the speed ball. A GU whose proposed service overruns the slot is
    de-scheduled and the reward takes the documented penalty
    10 * t_max * (Q_k + V*w1) per violating GU.
    """
    nk = params.num_gus
    nm = params.num_uavs
    obs = build_observation(state, params)
    sample = agent.act(obs, rng, update_norm=train)
    assoc = picks_to_assoc(sample["picks"], nk)
    cont = sample["cont"]

    rho_l = np.zeros(nk)
    rho_u = np.zeros(nk)
    radius = params.speed_radius / math.sqrt(2.0)
    proposed = np.asarray(state.uav_pos, dtype=float).copy()
    for m in range(nm):
        base = CONT_PER_UAV * m
        move = np.tanh(cont[base + 2:base + 4]) * radius
        proposed[m] = state.uav_pos[m] + move
        proposed[m][0] = min(max(proposed[m][0], 0.0), params.area_width)
        proposed[m][1] = min(max(proposed[m][1], 0.0), params.area_height)
        k = assoc[m]
        if k < 0:
            continue
        sl = float(_sigmoid(cont[base:base + 1])[0])
        su = float(_sigmoid(cont[base + 1:base + 2])[0])
        if sl >= su:
            rho_l[k] = min(max(sl, params.rho_min), 1.0)
        else:
            rho_u[k] = min(max(su, params.rho_min), 1.0)

    positions = _resolve_collisions(proposed, np.asarray(state.uav_pos), params)
    action = SlotAction(assoc, rho_l, rho_u, positions)
    outcome = compute_slot_outcome(state, action, params)
    penalty = 0.0
    dropped = 0
    exec_assoc = assoc.copy()
    for m, k in enumerate(exec_assoc):
        if k >= 0 and not outcome.time_feasible[k]:
            exec_assoc[m] = -1
            rho_l[k] = 0.0
            rho_u[k] = 0.0
            penalty += 10.0 * params.t_max * (q[k] + params.lyap_v * params.w_aoi)
            dropped += 1
    if dropped:
        action = SlotAction(exec_assoc, rho_l, rho_u, positions)
        outcome = compute_slot_outcome(state, action, params)
    objective = per_slot_objective(q, state.aoi, outcome.scheduled, state.slot,
                                   state.packet_gen, outcome.t_total,
                                   outcome.value, params).total
    reward = -objective - penalty
    transition = {"obs_norm": sample["obs_norm"], "picks": sample["picks"],
                  "cont": cont, "logp": sample["logp"], "value": sample["value"],
                  "probs": sample["probs"], "means": sample["means"],
                  "reward": reward}
    return Decision(action, objective, reward, transition, descheduled=dropped)


def train_agent(params: SystemParams, scheme: str, episodes: int,
                seed: int, horizon: int | None = None,
                cfg: PPOConfig | None = None, agent: PPOAgent | None = None):
    """Train a policy online for a number of episodes; one update per episode.

    Environment and policy randomness derive from the master seed exactly as
    in evaluation runs, so training is reproducible. Returns the agent and
    the per-episode mean reward history.
    """
    from .sim import run_episode   # cycle: sim dispatches back into this module

    if agent is None:
        agent = new_agent(params, scheme, seed=seed, cfg=cfg)
    history = []
    for ep in range(episodes):
        log = run_episode(params, scheme, seed=seed + 1000 * ep,
                          horizon=horizon, agent=agent, train=True)
        buf = agent.pending_buffer
        stats = agent.update(buf)
        buf.clear()
        history.append((float(np.mean(log.reward_column())), stats))
    return agent, history
