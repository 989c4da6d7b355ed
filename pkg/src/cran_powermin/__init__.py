"""Joint computation and transmission power minimization for cloud radio
access networks.

Modules
-------
scenario
    Network instances, configs and JSON round-trips.
largesystem
    Deterministic equivalents of rates and powers, plus Monte-Carlo oracles.
scheduler
    VM placement and sizing: branch and bound, greedy heuristic, brute force.
sdpcore
    Interior-point SDP solver, log-barrier solver and rank-one extraction.
transmit
    Reweighted coordinate descent for beamforming and fronthaul compression.
joint
    Dual decomposition over computation and transmission.
cli
    Command-line front end (``cran-powermin``).
"""

from .errors import (ConfigError, ConvergenceError, CranError, DomainError, ExtractionFail,
                     InfeasibleError, NumericalLimitError, ResourceLimitError)
from .joint import JointPlan, JointResult, alg5
from .largesystem import TransmitPlan
from .scenario import Scenario, ScenarioConfig, generate_scenario, load_scenario, save_scenario
from .scheduler import (SchedulePlan, SchedulingInstance, branch_and_bound, brute_force_oracle,
                        combinational, heuristic)
from .transmit import solve_p1

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConvergenceError", "CranError", "DomainError", "ExtractionFail",
    "InfeasibleError", "NumericalLimitError", "ResourceLimitError",
    "JointPlan", "JointResult", "alg5", "TransmitPlan",
    "Scenario", "ScenarioConfig", "generate_scenario", "load_scenario", "save_scenario",
    "SchedulePlan", "SchedulingInstance", "branch_and_bound", "brute_force_oracle",
    "combinational", "heuristic", "solve_p1",
]
