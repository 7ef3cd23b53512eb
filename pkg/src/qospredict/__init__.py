"""QoS violation prediction by model checking birth-death CTMCs of monitored KPIs."""

from .ctmc import (
    Ctmc,
    CtmcError,
    ReachabilityQuery,
    build_ctmc,
    check_prob_bound,
    transient_reach_prob,
    uniformize,
)
from .queue_model import ValuePartition, QueueSpec, build_birth_death, classify_value, value_to_state

__version__ = "0.1.0"
