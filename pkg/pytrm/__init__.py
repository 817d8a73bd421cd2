from pytrm.lab import Lab  # noqa: F401
from pytrm import settings
__version__ = '0.1.0'
__name__ = 'PyTRM'

"""
Trajectory reachability metrics for latent planning:

Train a pairwise temporal-separation head on logged trajectories and use it
as the terminal cost of a CEM planner over a frozen latent world model, on a
two-room navigation testbed with exact geodesic oracles.
"""


def set_progress_hook(func):
    """Sets a function to execute on every finished episode during manifest evaluation.

    Accepts one argument, the episode row (``dict``).

    :param function func: Function to execute per episode, or None to clear it.
    """
    settings.PROGRESS_HOOK = func if func else None
