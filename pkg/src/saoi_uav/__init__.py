"""Semantic-aware age-of-information minimization in a UAV relay network.

A desk-scale simulator plus the optimization stack around it: per-slot
drift-plus-penalty control, alternating depth/deployment optimization, a
hierarchical PPO association policy, and the heuristic baselines.
"""

__version__ = "0.1.0"

from .model import (SlotAction, SlotOutcome, SystemParams, TimingBreakdown,
                    WorldState)
from .lyapunov import QueueState, per_slot_objective, queue_step
from .sim import SCHEMES, MetricLog, run_episode, summarize

__all__ = [
    "SystemParams", "WorldState", "SlotAction", "SlotOutcome",
    "TimingBreakdown", "QueueState", "per_slot_objective", "queue_step",
    "SCHEMES", "MetricLog", "run_episode", "summarize", "__version__",
]
