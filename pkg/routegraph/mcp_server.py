"""
MCP server for routegraph.

Exposes intent resolution, registry search and the ledger as tools so an
assistant that speaks MCP can use shared routes instead of driving a
browser itself.
"""

from typing import Any

import httpx
import structlog
from mcp.server.fastmcp import FastMCP

from routegraph.errors import RouteGraphError
from routegraph.ledger import Ledger
from routegraph.models import IntentQuery
from routegraph.orchestrator import Orchestrator
from routegraph.server import build_orchestrator, load_wallet, registry_http_client
from routegraph.settings import RouteGraphSettings, load_settings

logger = structlog.get_logger(__name__)

_settings: RouteGraphSettings | None = None
_orchestrator: Orchestrator | None = None

mcp = FastMCP(
    name="routegraph",
    instructions=(
        "Resolve web tasks through shared API routes. "
        "Call resolve_intent with a short description of what you need and the "
        "target domain; it answers from the local cache, the shared registry, "
        "or a fresh capture, and reports the fees it paid."
    ),
)


def _get_settings() -> RouteGraphSettings:
    global _settings
    if _settings is None:
        _settings = load_settings()
    return _settings


def _get_orchestrator() -> Orchestrator:
    """Agent for this server, built from settings on first use."""
    global _orchestrator
    if _orchestrator is None:
        settings = _get_settings()
        wallet = load_wallet(settings)
        registry_client, registry_url = registry_http_client(settings, wallet)
        web_client = httpx.AsyncClient(timeout=30.0, follow_redirects=True)
        _orchestrator = build_orchestrator(
            settings, wallet, registry_client, registry_url, web_client
        )
    return _orchestrator


def set_orchestrator(orchestrator: Orchestrator | None) -> None:
    """Use a prebuilt agent (None resets to the settings-built one)"""
    global _orchestrator
    _orchestrator = orchestrator


def _failure(e: RouteGraphError, message: str) -> dict[str, Any]:
    logger.info("mcp_tool_failed", error=e.__class__.__name__, detail=str(e))
    return {"success": False, "error": e.to_dict(), "message": message}


@mcp.tool()
async def resolve_intent(
    text: str, domain: str | None = None, params: dict[str, Any] | None = None
) -> dict[str, Any]:
    """
    Resolve a web intent to data via cached, shared or newly discovered routes.

    Args:
        text: What you want, e.g. "list products in a category"
        domain: Site to target, e.g. "shop.example"
        params: Parameters for the call, e.g. {"category": "boots"}

    Returns:
        Dictionary with the data, where it came from, latency and fees paid
    """
    try:
        query = IntentQuery(text=text, domain_hint=domain, params=params or {})
        result = await _get_orchestrator().resolve_intent(query)
    except RouteGraphError as e:
        return _failure(e, "Could not resolve the intent")
    return {
        "success": True,
        "data": result.data,
        "source": result.timing.source.value,
        "latency_ms": result.timing.total_ms,
        "fees_paid": [f.model_dump(mode="json") for f in result.fees_paid],
        "message": f"Resolved via {result.timing.source.value}",
    }


@mcp.tool()
async def search_skills(query: str, k: int = 5) -> dict[str, Any]:
    """
    Search the shared registry (a paid call).

    Args:
        query: Natural-language description of the task
        k: Maximum number of results

    Returns:
        Ranked skills with their score components and install prices
    """
    try:
        results, receipt = await _get_orchestrator().registry.search(query, k)
    except RouteGraphError as e:
        return _failure(e, "Search failed")
    return {
        "success": True,
        "count": len(results),
        "results": [r.model_dump(mode="json") for r in results],
        "fee": receipt.amount if receipt else 0,
        "message": f"Found {len(results)} skill(s)",
    }


@mcp.tool()
def ledger_balances(party: str | None = None) -> dict[str, Any]:
    """
    Ledger balances in micro-dollars.

    Args:
        party: Only report this party

    Returns:
        Balances per party
    """
    balances = Ledger(_get_settings().path_for("ledger_path")).balances(party)
    return {"success": True, "balances": balances}


@mcp.tool()
def list_cached_routes() -> dict[str, Any]:
    """List the intent bindings in this agent's route cache, newest first."""
    entries = _get_orchestrator().cache.get_all()
    return {
        "success": True,
        "count": len(entries),
        "routes": [e.model_dump(mode="json") for e in entries],
    }


def run_server(transport: str = "stdio") -> None:
    """
    Run the MCP server with the specified transport.

    Args:
        transport: Transport type - "stdio", "sse", or "streamable-http"
    """
    logger.info("mcp_server_starting", transport=transport)
    mcp.run(transport=transport)


if __name__ == "__main__":
    from routegraph.logging_config import configure_logging

    configure_logging()
    run_server(transport="stdio")
