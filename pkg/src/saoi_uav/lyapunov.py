"""Virtual AoI queues and the drift-plus-penalty machinery.

Each GU carries a virtual queue that accumulates realized AoI above the
long-run budget a_max. The per-slot controller minimizes the drift-plus-
penalty upper bound, which splits into a constant part (independent of the
slot's control) and a control-dependent part; only the latter is optimized.
All quantities here are realized values, not expectations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SystemParams


@dataclass
class QueueState:
    """Virtual queue backlog per GU (seconds of accumulated AoI excess)."""

    q: np.ndarray

    @classmethod
    def zeros(cls, num_gus: int) -> "QueueState":
        return cls(np.zeros(num_gus))


@dataclass
class PerSlotObjective:
    """Control-dependent part of the drift-plus-penalty bound, decomposed."""

    total: float
    per_gu: np.ndarray       # (K,) contributions
    aoi_candidate: np.ndarray  # (K,) the AoI each GU ends the slot with


def queue_step(q: np.ndarray, aoi_next: np.ndarray, aoi_budget: float) -> np.ndarray:
    """Q(i+1) = max(Q(i) - a_max, 0) + a(i+1), elementwise."""
    return np.maximum(q - aoi_budget, 0.0) + aoi_next


def lyapunov_value(q: np.ndarray) -> float:
    """Quadratic Lyapunov function L = 0.5 * sum_k Q_k^2."""
    return 0.5 * float(np.dot(q, q))


def drift_bound_const(q: np.ndarray, aoi: np.ndarray, params: SystemParams) -> float:
    """Control-independent bound term:
    sum_k [ (a_max^2 + (a_k + t_max)^2)/2 - Q_k * a_max ]."""
    grown = aoi + params.t_max
    return float(np.sum(0.5 * (params.aoi_budget ** 2 + grown ** 2) - q * params.aoi_budget))


def per_slot_objective(q: np.ndarray, aoi: np.ndarray, scheduled: np.ndarray,
                       slot: int, gen_slot: np.ndarray, t_total: np.ndarray,
                       value: np.ndarray, params: SystemParams) -> PerSlotObjective:
    """Control-dependent bound term U.

    U = sum_k (Q_k + V*w1) * a_k(i+1) - V*w2 * v_k, where a_k(i+1) follows the
    AoI recursion for the slot's schedule. Minimizing U per slot is the
    drift-plus-penalty policy.
    """
    sched = np.asarray(scheduled, dtype=bool)
    aoi_cand = np.where(sched,
                        (slot - np.asarray(gen_slot)) * params.t_max + np.asarray(t_total),
                        aoi + params.t_max)
    weight = q + params.lyap_v * params.w_aoi
    per_gu = weight * aoi_cand - params.lyap_v * params.w_value * np.asarray(value)
    return PerSlotObjective(float(np.sum(per_gu)), per_gu, aoi_cand)


def drift_plus_penalty_check(q: np.ndarray, q_next: np.ndarray, aoi: np.ndarray,
                             aoi_next: np.ndarray, value: np.ndarray,
                             u_value: float, params: SystemParams):
    """Verify the realized drift-plus-penalty against its bound.

    lhs = L(Q(i+1)) - L(Q(i)) + V * sum_k (w1*a_k(i+1) - w2*v_k)
    rhs = drift_bound_const + U
    Returns (lhs, rhs, lhs <= rhs + 1e-9). Diagnostic; every slot of every
    scheme is expected to satisfy it.
    """
    penalty = params.lyap_v * float(np.sum(params.w_aoi * aoi_next - params.w_value * value))
    lhs = lyapunov_value(q_next) - lyapunov_value(q) + penalty
    rhs = drift_bound_const(q, aoi, params) + u_value
    return lhs, rhs, bool(lhs <= rhs + 1e-9)


def saoi_average(aoi_next: np.ndarray, value: np.ndarray, params: SystemParams) -> float:
    """Mean semantic-aware age w1*a - w2*v over a (slots, GUs) history."""
    a = np.asarray(aoi_next, dtype=float)
    v = np.asarray(value, dtype=float)
    if a.size == 0 or v.size == 0:
        raise ValueError("cannot average an empty history")
    return float(np.mean(params.w_aoi * a - params.w_value * v))
