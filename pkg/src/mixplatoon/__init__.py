"""Learned longitudinal control of mixed CAV/HDV platoons.

The platoon is split into HDV-led subsystems, each driven by a control module
``M_k`` (an actor-critic network for ``k`` cooperating CAVs) trained with
distributed PPO on a car-following environment.
"""

from .errors import ConfigError, InvalidInputError, NumericAbort, PlatoonError, RangeError
from .topology import CAV, HDV, SubsystemAssignment, TopologyVector, decompose, verify_partition

__all__ = [
    "CAV", "HDV", "TopologyVector", "SubsystemAssignment", "decompose", "verify_partition",
    "PlatoonError", "InvalidInputError", "RangeError", "ConfigError", "NumericAbort",
]
__version__ = "0.1.0"
