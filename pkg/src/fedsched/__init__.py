"""Federated DQN scheduling for cloud-edge-terminal IoT networks."""

from . import tasks  # noqa: F401  registers the concrete task models

__version__ = "0.1.0"
