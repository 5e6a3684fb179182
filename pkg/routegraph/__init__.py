"""
routegraph - shared route graph for web agents

Distills browser captures into reusable API skills, publishes them to a
paid shared registry and resolves agent intents through a local cache, the
registry, or fresh discovery.
"""

__version__ = "0.1.0"

from routegraph.errors import RouteGraphError
from routegraph.orchestrator import Orchestrator
from routegraph.protocol import RouteProtocol
from routegraph.registry import SkillRegistry

__all__ = ["Orchestrator", "RouteGraphError", "RouteProtocol", "SkillRegistry"]
