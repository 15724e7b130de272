"""Chains in which some coordinates diverge while others settle in law.

Analytics and simulators for partly overloaded stochastic systems: Jackson
networks, FCFS-ALIS skill-based queues, CSMA line networks and polling
systems, plus a backward-coupling exact sampler and a heavy-tailed
counterexample in which local stability fails.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .core import RandomDriver, Recursion, Trajectory, make_driver, iterate, check_monotone

__all__ = [
    "__version__", "BACKEND", "RandomDriver", "Recursion", "Trajectory",
    "make_driver", "iterate", "check_monotone",
]
