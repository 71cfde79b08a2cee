"""Episode simulation: the slot protocol loop, scheme dispatch, and logging.

Every episode owns three named random substreams spawned from the master
seed: fading (small-scale channel draws), arrivals (GU layout and packet
generation), and policy (action sampling). The environment streams are
advanced identically on every slot regardless of decisions, so runs of
different schemes under the same seed share the exact same channel and
traffic realizations (paired comparisons).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import hippo
from .ao import alternate
from .deploy import build_deploy_problem, solve_deployment
from .lyapunov import per_slot_objective, queue_step
from .model import (SlotAction, SystemParams, WorldState, compute_slot_outcome,
                    information_value)

SCHEMES = ("LyaHiPPO", "ConventionalPPO", "MaxAoI", "MaxValue", "NoExtraction")


class MetricLog:
    """Per-slot metric rows with a fixed, documented column order.

    Columns: slot, per-GU AoI, per-GU value, mean SAoI term, per-GU queue,
    reward, per-UAV position (x, y), per-UAV association, per-GU depths
    (local then edge), per-GU total service time.
    """

    def __init__(self, scheme: str, seed: int, num_uavs: int, num_gus: int):
        self.scheme = scheme
        self.seed = seed
        self.num_uavs = num_uavs
        self.num_gus = num_gus
        ks = range(num_gus)
        ms = range(num_uavs)
        self.header = (["slot"]
                       + [f"aoi_{k}" for k in ks]
                       + [f"value_{k}" for k in ks]
                       + ["saoi"]
                       + [f"queue_{k}" for k in ks]
                       + ["reward"]
                       + [x for m in ms for x in (f"uav_x_{m}", f"uav_y_{m}")]
                       + [f"assoc_{m}" for m in ms]
                       + [f"rho_l_{k}" for k in ks]
                       + [f"rho_u_{k}" for k in ks]
                       + [f"t_total_{k}" for k in ks])
        self.rows: list[list[float]] = []
        self.gu_pos: np.ndarray | None = None  # (K, 2), static per episode

    def append_slot(self, slot: int, aoi_next, value, saoi: float, queues,
                    reward: float, positions, assoc, rho_l, rho_u, t_total) -> None:
        row = ([float(slot)] + [float(a) for a in aoi_next]
               + [float(v) for v in value] + [float(saoi)]
               + [float(x) for x in queues] + [float(reward)]
               + [float(c) for p in positions for c in p]
               + [float(a) for a in assoc]
               + [float(r) for r in rho_l] + [float(r) for r in rho_u]
               + [float(t) for t in t_total])
        self.rows.append(row)

    # -- column accessors used by tests and the summary

    def _block(self, start: int, width: int) -> np.ndarray:
        data = np.asarray(self.rows, dtype=float)
        return data[:, start:start + width]

    def aoi_matrix(self) -> np.ndarray:
        return self._block(1, self.num_gus)

    def value_matrix(self) -> np.ndarray:
        return self._block(1 + self.num_gus, self.num_gus)

    def saoi_column(self) -> np.ndarray:
        return self._block(1 + 2 * self.num_gus, 1)[:, 0]

    def queue_matrix(self) -> np.ndarray:
        return self._block(2 + 2 * self.num_gus, self.num_gus)

    def reward_column(self) -> np.ndarray:
        return self._block(2 + 3 * self.num_gus, 1)[:, 0]

    def assoc_matrix(self) -> np.ndarray:
        start = 3 + 3 * self.num_gus + 2 * self.num_uavs
        return self._block(start, self.num_uavs).astype(int)

    def positions_tensor(self) -> np.ndarray:
        start = 3 + 3 * self.num_gus
        flat = self._block(start, 2 * self.num_uavs)
        return flat.reshape(len(self.rows), self.num_uavs, 2)

    def depth_matrices(self):
        start = 3 + 3 * self.num_gus + 3 * self.num_uavs
        return (self._block(start, self.num_gus),
                self._block(start + self.num_gus, self.num_gus))

    def t_total_matrix(self) -> np.ndarray:
        start = 3 + 5 * self.num_gus + 3 * self.num_uavs
        return self._block(start, self.num_gus)

    def to_csv(self, path: str) -> None:
        """Stable rendering: header row, then %.9g floats (slot and
        association as integers)."""
        int_cols = {0} | {self.header.index(f"assoc_{m}")
                          for m in range(self.num_uavs)}
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(self.header) + "\n")
            for row in self.rows:
                cells = []
                for i, x in enumerate(row):
                    if i in int_cols:
                        cells.append(str(int(x)))
                    else:
                        cells.append("%.9g" % x)
                fh.write(",".join(cells) + "\n")


def summarize(log: MetricLog) -> dict:
    """Time-averaged metrics for one episode.

    value_mean averages over deliveries only (what a received packet is
    worth); value_slot_mean averages over every GU-slot including empty
    ones (value throughput).
    """
    aoi = log.aoi_matrix()
    val = log.value_matrix()
    delivered = val > 0.0
    value_mean = float(val[delivered].mean()) if delivered.any() else 0.0
    return {"aoi_mean": float(aoi.mean()),
            "value_mean": value_mean,
            "value_slot_mean": float(val.mean()),
            "saoi_mean": float(log.saoi_column().mean()),
            "slots": len(log.rows)}


# ---------------------------------------------------------------------------
# episode state
# ---------------------------------------------------------------------------

def substreams(seed: int) -> dict:
    """Named independent generators spawned from one master seed."""
    fading_ss, arrivals_ss, policy_ss = np.random.SeedSequence(seed).spawn(3)
    return {"fading": np.random.default_rng(fading_ss),
            "arrivals": np.random.default_rng(arrivals_ss),
            "policy": np.random.default_rng(policy_ss)}


def initial_uav_positions(params: SystemParams) -> np.ndarray:
    """Evenly spaced line across the area's horizontal midline."""
    nm = params.num_uavs
    spacing = params.area_width / (nm + 1)
    if nm > 1 and spacing < params.d_min:
        raise ValueError("initial layout cannot satisfy the separation floor")
    return np.array([[spacing * (m + 1), params.area_height / 2.0]
                     for m in range(nm)])


def init_state(params: SystemParams, arrivals: np.random.Generator) -> WorldState:
    nk = params.num_gus
    nm = params.num_uavs
    gu_pos = np.column_stack([arrivals.uniform(0.0, params.area_width, nk),
                              arrivals.uniform(0.0, params.area_height, nk)])
    sizes = arrivals.uniform(params.size_min_bits, params.size_max_bits, nk)
    return WorldState(slot=0,
                      uav_pos=initial_uav_positions(params),
                      gu_pos=gu_pos,
                      aoi=np.zeros(nk),
                      packet_bits=sizes,
                      packet_gen=np.zeros(nk, dtype=int),
                      fading_gu=np.zeros((nm, nk), dtype=complex),
                      fading_bs=np.zeros(nm, dtype=complex))


def draw_fading(state: WorldState, fading: np.random.Generator) -> None:
    nm, nk = state.fading_gu.shape
    re = fading.standard_normal((nm, nk))
    im = fading.standard_normal((nm, nk))
    state.fading_gu = (re + 1j * im) / math.sqrt(2.0)
    re_b = fading.standard_normal(nm)
    im_b = fading.standard_normal(nm)
    state.fading_bs = (re_b + 1j * im_b) / math.sqrt(2.0)


def draw_arrivals(state: WorldState, params: SystemParams,
                  arrivals: np.random.Generator) -> None:
    """Bernoulli regeneration; draws are consumed every slot so the stream
    stays aligned across schemes and parameter values."""
    nk = params.num_gus
    fresh = arrivals.random(nk) < params.p_gen
    sizes = arrivals.uniform(params.size_min_bits, params.size_max_bits, nk)
    for k in range(nk):
        if fresh[k]:
            state.packet_bits[k] = sizes[k]
            state.packet_gen[k] = state.slot


# ---------------------------------------------------------------------------
# baseline associations
# ---------------------------------------------------------------------------

def baseline_assoc_max_aoi(state: WorldState, params: SystemParams) -> np.ndarray:
    """UAVs in index order claim the stalest unclaimed GU within coverage;
    AoI ties break to the lowest GU index; nothing in range means idle."""
    assoc = np.full(params.num_uavs, -1, dtype=int)
    claimed = np.zeros(params.num_gus, dtype=bool)
    for m in range(params.num_uavs):
        best = -1
        best_aoi = -1.0
        for k in range(params.num_gus):
            if claimed[k]:
                continue
            dx = state.uav_pos[m][0] - state.gu_pos[k][0]
            dy = state.uav_pos[m][1] - state.gu_pos[k][1]
            if math.hypot(dx, dy) > params.cov_radius:
                continue
            if state.aoi[k] > best_aoi:
                best_aoi = state.aoi[k]
                best = k
        if best >= 0:
            assoc[m] = best
            claimed[best] = True
    return assoc


def baseline_assoc_max_value(state: WorldState, params: SystemParams) -> np.ndarray:
    """Same claiming rules, ranked by the full-depth value proxy
    1 - exp(-value_rate * D) (depth is decided after association)."""
    assoc = np.full(params.num_uavs, -1, dtype=int)
    claimed = np.zeros(params.num_gus, dtype=bool)
    for m in range(params.num_uavs):
        best = -1
        best_v = -1.0
        for k in range(params.num_gus):
            if claimed[k]:
                continue
            dx = state.uav_pos[m][0] - state.gu_pos[k][0]
            dy = state.uav_pos[m][1] - state.gu_pos[k][1]
            if math.hypot(dx, dy) > params.cov_radius:
                continue
            v = information_value(float(state.packet_bits[k]), 1.0, params.value_rate)
            if v > best_v + 1e-15:
                best_v = v
                best = k
        if best >= 0:
            assoc[m] = best
            claimed[best] = True
    return assoc


# ---------------------------------------------------------------------------
# continuous variables per scheme
# ---------------------------------------------------------------------------

def _deschedule_infeasible(state: WorldState, action: SlotAction,
                           params: SystemParams):
    """Drop scheduled GUs whose realized service overruns the slot."""
    outcome = compute_slot_outcome(state, action, params)
    changed = False
    for m, k in enumerate(action.assoc):
        if k >= 0 and not outcome.time_feasible[k]:
            action.assoc[m] = -1
            action.rho_local[k] = 0.0
            action.rho_edge[k] = 0.0
            action.relay[k] = False
            changed = True
    if changed:
        outcome = compute_slot_outcome(state, action, params)
    return action, outcome


def _pinned_depth_control(state: WorldState, q: np.ndarray, assoc: np.ndarray,
                          rho: float, relay_mode: bool, params: SystemParams):
    """Fixed depths (or pure relay), deployment optimized, violators dropped."""
    nk = params.num_gus
    rho_l = np.zeros(nk)
    rho_u = np.zeros(nk)
    relay = np.zeros(nk, dtype=bool)
    for k in assoc:
        if k >= 0:
            rho_l[k] = 1.0 if relay_mode else rho
            relay[k] = relay_mode
    prob = build_deploy_problem(state, q, assoc, rho_l, rho_u, relay,
                                state.uav_pos, params)
    sol = solve_deployment(prob)
    action = SlotAction(np.asarray(assoc, dtype=int).copy(), rho_l, rho_u,
                        sol.positions, relay=relay)
    return _deschedule_infeasible(state, action, params)


def scheme_continuous_vars(scheme: str, state: WorldState, q: np.ndarray,
                           assoc: np.ndarray, params: SystemParams):
    """(action, outcome) for the heuristic-association schemes.

    MaxAoI/MaxValue run the full alternating optimizer (or hold depths at
    the forced value when a depth sweep pins them); NoExtraction forwards
    raw packets (relay mode) and only optimizes deployment.
    """
    if scheme == "NoExtraction":
        return _pinned_depth_control(state, q, assoc, 1.0, True, params)
    if params.forced_rho is not None:
        return _pinned_depth_control(state, q, assoc, params.forced_rho,
                                     False, params)
    res = alternate(state, q, assoc, params)
    action = SlotAction(res.assoc, res.rho_l, res.rho_u, res.positions)
    return action, compute_slot_outcome(state, action, params)


# ---------------------------------------------------------------------------
# episode loop
# ---------------------------------------------------------------------------

def run_episode(params: SystemParams, scheme: str, seed: int,
                horizon: int | None = None, agent=None, train: bool = False,
                force_idle: bool = False) -> MetricLog:
    """Simulate one episode; deterministic per (params, scheme, seed).

    PPO schemes take their association (and, for the flat baseline, all
    controls) from `agent`; a fresh, untrained agent seeded from the master
    seed is created when none is given. Actions are always sampled from the
    policy distribution through the seeded policy substream; train=True
    additionally updates the observation statistics and appends transitions
    to agent.pending_buffer, while evaluation keeps both frozen.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    horizon = params.horizon if horizon is None else int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rngs = substreams(seed)
    state = init_state(params, rngs["arrivals"])
    q = np.zeros(params.num_gus)
    if agent is None and scheme in ("LyaHiPPO", "ConventionalPPO"):
        agent = hippo.new_agent(params, scheme, seed=seed)
    log = MetricLog(scheme, seed, params.num_uavs, params.num_gus)
    log.gu_pos = np.asarray(state.gu_pos, dtype=float).copy()

    for slot in range(horizon):
        draw_fading(state, rngs["fading"])
        if slot > 0:
            draw_arrivals(state, params, rngs["arrivals"])

        transition = None
        if force_idle:
            action = SlotAction(np.full(params.num_uavs, -1, dtype=int),
                                np.zeros(params.num_gus), np.zeros(params.num_gus),
                                np.asarray(state.uav_pos, dtype=float).copy())
            outcome = compute_slot_outcome(state, action, params)
            reward = -per_slot_objective(q, state.aoi, outcome.scheduled,
                                         state.slot, state.packet_gen,
                                         outcome.t_total, outcome.value,
                                         params).total
        elif scheme == "LyaHiPPO" and params.forced_rho is None:
            decision = hippo.decide_hierarchical(agent, state, q, params,
                                                 rngs["policy"], train=train)
            action = decision.action
            outcome = compute_slot_outcome(state, action, params)
            reward = decision.reward
            transition = decision.transition
        elif scheme == "ConventionalPPO":
            decision = hippo.decide_conventional(agent, state, q, params,
                                                 rngs["policy"], train=train)
            action = decision.action
            outcome = compute_slot_outcome(state, action, params)
            reward = decision.reward
            transition = decision.transition
        else:
            if scheme == "LyaHiPPO":
                sample = agent.act(hippo.build_observation(state, params),
                                   rngs["policy"], update_norm=train)
                assoc = hippo.picks_to_assoc(sample["picks"], params.num_gus)
            elif scheme == "MaxAoI" or scheme == "NoExtraction":
                assoc = baseline_assoc_max_aoi(state, params)
            else:
                assoc = baseline_assoc_max_value(state, params)
            action, outcome = scheme_continuous_vars(scheme, state, q, assoc, params)
            reward = -per_slot_objective(q, state.aoi, outcome.scheduled,
                                         state.slot, state.packet_gen,
                                         outcome.t_total, outcome.value,
                                         params).total
            if scheme == "LyaHiPPO":
                transition = {"obs_norm": sample["obs_norm"],
                              "picks": sample["picks"], "cont": None,
                              "logp": sample["logp"], "value": sample["value"],
                              "probs": sample["probs"], "means": None,
                              "reward": reward}

        q = queue_step(q, outcome.aoi_next, params.aoi_budget)
        saoi = float(np.mean(params.w_aoi * outcome.aoi_next
                             - params.w_value * outcome.value))
        log.append_slot(slot, outcome.aoi_next, outcome.value, saoi, q, reward,
                        action.positions, action.assoc, action.rho_local,
                        action.rho_edge, outcome.t_total)

        if train and transition is not None and agent is not None:
            agent.pending_buffer.add(transition["obs_norm"], transition["picks"],
                                     transition["cont"], transition["logp"],
                                     transition["value"], transition["reward"],
                                     1.0 if slot == horizon - 1 else 0.0,
                                     transition["probs"], transition["means"])

        state.uav_pos = np.asarray(action.positions, dtype=float).copy()
        state.aoi = outcome.aoi_next.copy()
        state.slot += 1

    return log
