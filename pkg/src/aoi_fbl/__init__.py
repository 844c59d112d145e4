"""Blocklength allocation for age-of-information minimization in finite-blocklength sensor uplinks."""

__version__ = "0.1.0"

from .fbl import (  # noqa: E402
    ChannelSpec,
    InfeasibleError,
    channel_dispersion,
    gaussian_q,
    min_blocklength,
    packet_error_rate,
    shannon_capacity,
)
from .mdp import MdpPolicy, MdpSpec, QTable, extract_policy, train  # noqa: E402
from .policies import (  # noqa: E402
    MinPerPolicy,
    OneStepPolicy,
    UniformPolicy,
    allocate,
    feasibility_check,
    min_per_allocation,
    one_step_allocation,
    uniform_allocation,
)
from .simulation import Scenario, SimMetrics, discounted_aoi, make_policy, monte_carlo, run_episode  # noqa: E402

__all__ = [
    "ChannelSpec",
    "InfeasibleError",
    "MdpPolicy",
    "MdpSpec",
    "MinPerPolicy",
    "OneStepPolicy",
    "QTable",
    "Scenario",
    "SimMetrics",
    "UniformPolicy",
    "allocate",
    "channel_dispersion",
    "discounted_aoi",
    "extract_policy",
    "feasibility_check",
    "gaussian_q",
    "make_policy",
    "min_blocklength",
    "min_per_allocation",
    "monte_carlo",
    "one_step_allocation",
    "packet_error_rate",
    "run_episode",
    "shannon_capacity",
    "train",
    "uniform_allocation",
]
