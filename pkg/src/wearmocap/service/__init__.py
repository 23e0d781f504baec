"""Hub runtime and its HTTP API."""

from .app import ApiServer, create_app
from .hub import STARVED_AFTER_S, STATS_INTERVAL_S, Hub

__all__ = ["ApiServer", "create_app", "STARVED_AFTER_S", "STATS_INTERVAL_S", "Hub"]
