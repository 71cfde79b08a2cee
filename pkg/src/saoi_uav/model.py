"""System model: geometry, air-to-ground channel, semantic-extraction cycle
models, protocol timing, information value, and age-of-information updates.

Everything here is a pure function of explicit inputs; stochastic draws
(fading, packet arrivals) are made by the simulator and passed in, so the
same slot can be re-evaluated by optimizers without touching the RNG.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

LOG2E = math.log2(math.e)


def dbm_to_watts(dbm: float) -> float:
    """Convert a dBm figure to watts (35 dBm -> ~3.162 W)."""
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass
class SystemParams:
    """Physical constants, cycle-model coefficients, and control weights.

    Defaults give a desk-scale instance: 3 UAVs serving 5 ground units on a
    1000 m x 1000 m area with the base station at (900, 500).
    """

    num_uavs: int = 3
    num_gus: int = 5
    area_width: float = 1000.0
    area_height: float = 1000.0
    bs_pos: tuple[float, float] = (900.0, 500.0)
    altitude: float = 100.0            # UAV flight height (m), fixed
    t_max: float = 1.0                 # slot length (s)
    v_max: float = 30.0                # UAV speed limit (m/s)
    d_min: float = 30.0                # pairwise UAV separation (m)

    tx_power_gu: float = dbm_to_watts(35.0)   # GU uplink power (W)
    tx_power_uav: float = dbm_to_watts(35.0)  # UAV forward power (W)
    noise_power: float = 1e-10         # receiver noise (W)
    ref_gain: float = 1e-3             # channel power gain at 1 m
    rician_k: float = 10.0             # LoS-to-scatter power ratio
    bandwidth: float = 1e6             # link bandwidth (Hz)

    # extraction cycle models: cycles = knowledge_coef*D + extract_coef*(1-rho)^extract_exp
    local_knowledge_coef: float = 150.0
    local_extract_coef: float = 1e8
    local_extract_exp: float = 2.0
    edge_knowledge_coef: float = 150.0
    edge_extract_coef: float = 1e8
    edge_extract_exp: float = 2.0
    # recovery cycles = recover_coef * rho_eff^(-recover_exp)
    recover_coef: float = 1e8
    recover_exp: float = 1.0
    value_rate: float = 5e-7           # information-value exponent per bit

    f_local: float = 1e9               # GU CPU (cycles/s)
    f_edge: float = 3e9                # UAV CPU (cycles/s)
    f_bs: float = 1e10                 # BS CPU (cycles/s)

    w_aoi: float = 1.0                 # AoI weight in the semantic-aware age
    w_value: float = 10.0              # value weight in the semantic-aware age
    lyap_v: float = 100.0              # drift-vs-penalty trade-off
    aoi_budget: float = 5.0            # per-GU long-run AoI target (s)

    p_gen: float = 1.0                 # per-slot packet arrival probability
    size_min_bits: float = 1e6
    size_max_bits: float = 3.5e6
    rho_min: float = 1e-3              # depth clamp for the recovery singularity
    relay_size_bits: float = 0.0       # packets at most this size skip processing in relay mode
    physical_upload: bool = True       # if True, edge extraction uploads the full packet
    cov_radius: float = 400.0          # coverage gate for the greedy baselines
    forced_rho: float | None = None    # pin local depth (forced-depth sweeps)
    uav_init: str = "line"             # initial UAV layout rule

    horizon: int = 500

    def __post_init__(self) -> None:
        if self.num_uavs < 1 or self.num_gus < 1:
            raise ValueError("need at least one UAV and one GU")
        if self.t_max <= 0 or self.v_max < 0 or self.d_min < 0:
            raise ValueError("t_max must be positive, v_max/d_min nonnegative")
        if self.local_extract_exp < 1 or self.edge_extract_exp < 1:
            raise ValueError("extraction exponents must be >= 1")
        if self.recover_exp <= 0:
            raise ValueError("recovery exponent must be positive")
        if not 0 < self.rho_min < 1:
            raise ValueError("rho_min must lie in (0, 1)")
        if not 0 <= self.p_gen <= 1:
            raise ValueError("p_gen is a probability")
        if self.size_min_bits <= 0 or self.size_max_bits < self.size_min_bits:
            raise ValueError("packet size range is invalid")
        if self.forced_rho is not None and not 0 < self.forced_rho <= 1:
            raise ValueError("forced_rho must lie in (0, 1]")

    @property
    def speed_radius(self) -> float:
        """Per-slot movement budget t_max * v_max (m)."""
        return self.t_max * self.v_max


@dataclass
class DataPacket:
    """Freshest sensed packet buffered at a GU."""

    size_bits: float
    gen_slot: int


@dataclass
class SlotAction:
    """One slot's control: association, extraction depths, UAV positions.

    assoc[m] is the GU index served by UAV m, or -1 for idle. Depths are
    stored per GU (column sums of the association are at most one, so each
    GU has at most one serving UAV). relay[k] marks pure-relay service:
    the packet is forwarded raw and extraction/recovery sub-slots vanish.
    """

    assoc: np.ndarray                  # (M,) int
    rho_local: np.ndarray              # (K,) float in [0,1]
    rho_edge: np.ndarray               # (K,) float in [0,1]
    positions: np.ndarray              # (M,2) float
    relay: np.ndarray | None = None    # (K,) bool

    def __post_init__(self) -> None:
        if self.relay is None:
            self.relay = np.zeros(len(self.rho_local), dtype=bool)
        served = [k for k in np.asarray(self.assoc).tolist() if k >= 0]
        if len(served) != len(set(served)):
            raise ValueError("each GU may be claimed by at most one UAV")

    def beta(self, num_gus: int) -> np.ndarray:
        """Binary association matrix (M,K); rows and columns sum to <= 1."""
        b = np.zeros((len(self.assoc), num_gus))
        for m, k in enumerate(self.assoc):
            if k >= 0:
                b[m, k] = 1.0
        return b

    def serving_uav(self, num_gus: int) -> np.ndarray:
        """(K,) index of the UAV serving each GU, -1 when unserved."""
        out = np.full(num_gus, -1, dtype=int)
        for m, k in enumerate(self.assoc):
            if k >= 0:
                out[k] = m
        return out


@dataclass
class WorldState:
    """Simulator state at the start of a slot (before the slot's control)."""

    slot: int
    uav_pos: np.ndarray                # (M,2)
    gu_pos: np.ndarray                 # (K,2)
    aoi: np.ndarray                    # (K,) seconds
    packet_bits: np.ndarray            # (K,) freshest packet size
    packet_gen: np.ndarray             # (K,) generation slot of that packet
    fading_gu: np.ndarray              # (M,K) complex small-scale draws
    fading_bs: np.ndarray              # (M,) complex small-scale draws

    def copy(self) -> "WorldState":
        return WorldState(
            self.slot, self.uav_pos.copy(), self.gu_pos.copy(), self.aoi.copy(),
            self.packet_bits.copy(), self.packet_gen.copy(),
            self.fading_gu.copy(), self.fading_bs.copy())


@dataclass
class TimingBreakdown:
    """The five protocol sub-slots of one served GU, in seconds."""

    t_local_extract: float
    t_upload: float
    t_edge_extract: float
    t_forward: float
    t_recover: float

    @property
    def total(self) -> float:
        return (self.t_local_extract + self.t_upload + self.t_edge_extract
                + self.t_forward + self.t_recover)


@dataclass
class SlotOutcome:
    """Realized effect of executing a SlotAction."""

    scheduled: np.ndarray              # (K,) bool
    t_total: np.ndarray                # (K,) seconds (0 when unscheduled)
    value: np.ndarray                  # (K,) information value in [0,1)
    aoi_next: np.ndarray               # (K,)
    time_feasible: np.ndarray          # (K,) bool, t_total <= t_max where scheduled
    timing: list                       # per GU TimingBreakdown or None


# ---------------------------------------------------------------------------
# channel
# ---------------------------------------------------------------------------

def los_fading_mix(rician_k: float, fading: complex) -> complex:
    """Combine the deterministic LoS phase (taken as 1) with a scattered draw."""
    if math.isinf(rician_k):
        return 1.0 + 0.0j
    return math.sqrt(rician_k / (rician_k + 1.0)) + math.sqrt(1.0 / (rician_k + 1.0)) * fading


def channel_gain(dist: float, fading: complex, ref_gain: float, rician_k: float) -> complex:
    """Rician air-to-ground amplitude h = (sqrt(xi)/d) * mix(LoS, scatter).

    dist is the 3D separation; must be positive.
    """
    if dist <= 0:
        raise ValueError("distance must be positive")
    return (math.sqrt(ref_gain) / dist) * los_fading_mix(rician_k, fading)


def link_rate(gain_sq: float, tx_power: float, noise_power: float, bandwidth: float) -> float:
    """Shannon rate W*log2(1 + p*|h|^2/sigma^2) in bits/s."""
    if gain_sq < 0 or tx_power < 0 or noise_power <= 0 or bandwidth <= 0:
        raise ValueError("invalid link budget inputs")
    return bandwidth * math.log2(1.0 + tx_power * gain_sq / noise_power)


def dist3(p: np.ndarray, q: np.ndarray, altitude: float) -> float:
    """3D distance between a flying node at p and a ground node at q."""
    dx = p[0] - q[0]
    dy = p[1] - q[1]
    return math.sqrt(dx * dx + dy * dy + altitude * altitude)


def link_gains(positions: np.ndarray, state: WorldState, params: SystemParams):
    """|h|^2 for every UAV-GU link and every UAV-BS link at given positions.

    Returns (gain_gu (M,K), gain_bs (M,)). The slot's fading draws are fixed,
    so gains are a deterministic function of candidate positions; optimizers
    rely on this when they move UAVs inside a slot.
    """
    nm = len(positions)
    nk = len(state.gu_pos)
    gain_gu = np.empty((nm, nk))
    gain_bs = np.empty(nm)
    bs = np.asarray(params.bs_pos)
    for m in range(nm):
        for k in range(nk):
            h = channel_gain(dist3(positions[m], state.gu_pos[k], params.altitude),
                             state.fading_gu[m, k], params.ref_gain, params.rician_k)
            gain_gu[m, k] = abs(h) ** 2
        hb = channel_gain(dist3(positions[m], bs, params.altitude),
                          state.fading_bs[m], params.ref_gain, params.rician_k)
        gain_bs[m] = abs(hb) ** 2
    return gain_gu, gain_bs


def link_rates(positions: np.ndarray, state: WorldState, params: SystemParams):
    """Uplink rates (M,K) and forward rates (M,) at given positions."""
    gain_gu, gain_bs = link_gains(positions, state, params)
    rate_gu = params.bandwidth * np.log2(1.0 + params.tx_power_gu * gain_gu / params.noise_power)
    rate_bs = params.bandwidth * np.log2(1.0 + params.tx_power_uav * gain_bs / params.noise_power)
    return rate_gu, rate_bs


# ---------------------------------------------------------------------------
# semantic extraction cycle models
# ---------------------------------------------------------------------------

def extract_cycles(size_bits: float, rho: float, knowledge_coef: float,
                   extract_coef: float, extract_exp: float) -> float:
    """Cycles to build the knowledge graph and extract to depth rho:
    knowledge_coef*D + extract_coef*(1-rho)^extract_exp."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("depth must lie in [0, 1]")
    return knowledge_coef * size_bits + extract_coef * (1.0 - rho) ** extract_exp


def recovery_cycles(rho_eff: float, recover_coef: float, recover_exp: float,
                    rho_min: float) -> float:
    """Cycles to recover semantics at the BS: recover_coef * rho_eff^(-recover_exp).

    rho_eff below rho_min is clamped (the power law diverges at 0).
    """
    if rho_eff > 1.0:
        raise ValueError("combined depth cannot exceed 1")
    if rho_eff < rho_min:
        warnings.warn("combined depth below rho_min; clamped for recovery",
                      RuntimeWarning, stacklevel=2)
        rho_eff = rho_min
    return recover_coef * rho_eff ** (-recover_exp)


def information_value(size_bits: float, rho_eff: float, value_rate: float) -> float:
    """Delivered semantic value 1 - exp(-value_rate * rho_eff * D), in [0,1)."""
    if rho_eff < 0:
        raise ValueError("combined depth must be nonnegative")
    return 1.0 - math.exp(-value_rate * rho_eff * size_bits)


# ---------------------------------------------------------------------------
# protocol timing
# ---------------------------------------------------------------------------

def timing_breakdown(size_bits: float, rho_l: float, rho_u: float,
                     rate_up: float, rate_fwd: float, params: SystemParams,
                     relay: bool = False) -> TimingBreakdown:
    """Per-GU service time split into the five protocol sub-slots.

    Pure relay (relay=True, or rho_l=1/rho_u=0 with the packet at most
    relay_size_bits) skips extraction and recovery entirely. Otherwise
    upload carries rho_l*D bits (or the full packet under physical_upload
    when edge extraction is chosen) and forward carries (rho_l+rho_u)*D.
    """
    if rate_up <= 0 or rate_fwd <= 0:
        raise ValueError("rates must be positive for a scheduled GU")
    if relay or (rho_l == 1.0 and rho_u == 0.0 and size_bits <= params.relay_size_bits):
        return TimingBreakdown(0.0, size_bits / rate_up, 0.0, size_bits / rate_fwd, 0.0)
    t_le = extract_cycles(size_bits, rho_l, params.local_knowledge_coef,
                          params.local_extract_coef, params.local_extract_exp) / params.f_local
    upload_bits = rho_l * size_bits
    if params.physical_upload and rho_u > 0.0:
        upload_bits = size_bits
    t_s = upload_bits / rate_up
    t_ue = extract_cycles(size_bits, rho_u, params.edge_knowledge_coef,
                          params.edge_extract_coef, params.edge_extract_exp) / params.f_edge
    t_f = (rho_l + rho_u) * size_bits / rate_fwd
    t_r = recovery_cycles(rho_l + rho_u, params.recover_coef, params.recover_exp,
                          params.rho_min) / params.f_bs
    return TimingBreakdown(t_le, t_s, t_ue, t_f, t_r)


# ---------------------------------------------------------------------------
# age of information
# ---------------------------------------------------------------------------

def aoi_step(aoi: float, t_max: float, scheduled: bool, slot: int = 0,
             gen_slot: int = 0, t_total: float = 0.0) -> float:
    """Next AoI: grow by t_max when idle, reset to the delivered packet's age
    (slot - gen_slot)*t_max + t_total when served."""
    if not scheduled:
        return aoi + t_max
    return (slot - gen_slot) * t_max + t_total


def check_trajectory(old_pos: np.ndarray, new_pos: np.ndarray, params: SystemParams,
                     tol: float = 1e-6):
    """Feasibility of a UAV move: speed budget, pairwise separation, area box.

    Returns (ok, speed_ok (M,), separation_ok, area_ok).
    """
    nm = len(new_pos)
    radius = params.speed_radius + tol
    speed_ok = np.array([
        math.hypot(new_pos[m][0] - old_pos[m][0], new_pos[m][1] - old_pos[m][1]) <= radius
        for m in range(nm)])
    separation_ok = True
    for m in range(nm):
        for m2 in range(m + 1, nm):
            d = math.hypot(new_pos[m][0] - new_pos[m2][0], new_pos[m][1] - new_pos[m2][1])
            if d < params.d_min - tol:
                separation_ok = False
    area_ok = bool(np.all(new_pos[:, 0] >= -tol) and np.all(new_pos[:, 1] >= -tol)
                   and np.all(new_pos[:, 0] <= params.area_width + tol)
                   and np.all(new_pos[:, 1] <= params.area_height + tol))
    ok = bool(np.all(speed_ok)) and separation_ok and area_ok
    return ok, speed_ok, separation_ok, area_ok


def compute_slot_outcome(state: WorldState, action: SlotAction,
                         params: SystemParams) -> SlotOutcome:
    """Evaluate a slot action: timing, value, and next AoI for every GU.

    Uses the slot's frozen fading at the action's (post-move) positions.
    A scheduled GU whose service does not fit in the slot is flagged
    time-infeasible; callers de-schedule before executing.
    """
    nk = params.num_gus
    rate_gu, rate_bs = link_rates(action.positions, state, params)
    scheduled = np.zeros(nk, dtype=bool)
    t_total = np.zeros(nk)
    value = np.zeros(nk)
    aoi_next = np.empty(nk)
    feasible = np.ones(nk, dtype=bool)
    timing: list = [None] * nk
    for m, k in enumerate(action.assoc):
        if k < 0:
            continue
        scheduled[k] = True
        tb = timing_breakdown(state.packet_bits[k], float(action.rho_local[k]),
                              float(action.rho_edge[k]), float(rate_gu[m, k]),
                              float(rate_bs[m]), params, relay=bool(action.relay[k]))
        timing[k] = tb
        t_total[k] = tb.total
        feasible[k] = tb.total <= params.t_max + 1e-9
        rho_eff = 1.0 if action.relay[k] else float(action.rho_local[k] + action.rho_edge[k])
        value[k] = information_value(state.packet_bits[k], rho_eff, params.value_rate)
    for k in range(nk):
        if scheduled[k]:
            aoi_next[k] = aoi_step(state.aoi[k], params.t_max, True, state.slot,
                                   int(state.packet_gen[k]), float(t_total[k]))
        else:
            aoi_next[k] = aoi_step(state.aoi[k], params.t_max, False)
    return SlotOutcome(scheduled, t_total, value, aoi_next, feasible, timing)
