"""Storage usage values for multinode systems by price decomposition."""

from .model import Arc, Node, Storage, SystemModel, ThermalCluster, Timeline
from .scenarios import ScenarioSet

__version__ = "0.1.0"

__all__ = ["Arc", "Node", "Storage", "SystemModel", "ThermalCluster", "Timeline", "ScenarioSet"]
