"""
Tests for intent resolution: parameter binding, skill execution and the three paths.
"""

import json
import shutil
from collections.abc import AsyncIterator, Callable
from pathlib import Path
from typing import Any

import httpx
import pytest

from routegraph.capture import load_archive
from routegraph.client import RegistryClient
from routegraph.errors import (
    AuthMissing,
    DiscoveryEmpty,
    EndpointFailed,
    SchemaMismatch,
    Unresolvable,
)
from routegraph.ledger import Ledger
from routegraph.models import (
    AuthDescriptor,
    AuthKind,
    CostModel,
    EndpointExample,
    FeeSchedule,
    IntentQuery,
    LedgerKind,
    QueryParam,
    ResolutionSource,
    SkillRecord,
)
from routegraph.orchestrator import (
    ArchiveDiscoverer,
    InstalledSkills,
    Orchestrator,
    bind_params,
    select_endpoint,
)
from routegraph.payments import MockSettlementAdapter, PaymentGate, PaymentHandler, Wallet
from routegraph.registry import SkillRegistry, record_from_package
from routegraph.route_cache import RouteCache
from routegraph.server import create_registry_app
from routegraph.vault import CredentialVault

from .conftest import FIXTURES, NOW, FakeClock, make_endpoint, make_package

Handler = Callable[[httpx.Request], httpx.Response]
COST = CostModel(c_latency=50_000, c_compute=20_000, c_tokens=200_000, c_retry=130_000, p_fail=0.3)
BEARER = AuthDescriptor(
    kind=AuthKind.BEARER, location="Authorization", value_ref="a.example:bearer:authorization"
)
SHOES = IntentQuery(
    text="list shoe products", domain_hint="shop.example", params={"category": "shoes"}
)


def _record(*endpoints: Any) -> SkillRecord:
    package = make_package("a.example").model_copy(update={"endpoints": list(endpoints)})
    return record_from_package(package, [1.0], NOW)


def _replay(archive_name: str) -> Handler:
    """Answers requests with the bodies recorded in a fixture capture"""
    bodies = {
        entry.url: entry.response_body
        for entry in load_archive(FIXTURES / archive_name).entries
        if entry.method == "GET" and entry.response_body
    }

    def handler(request: httpx.Request) -> httpx.Response:
        body = bodies.get(str(request.url))
        if body is None:
            return httpx.Response(404, json={"error": "not found"})
        return httpx.Response(200, content=body, headers={"Content-Type": "application/json"})

    return handler


def _ok(request: httpx.Request) -> httpx.Response:
    return httpx.Response(200, json={})


class Refresher:
    def __init__(self, token: str | None) -> None:
        self.token = token
        self.calls = 0

    async def refresh(self, domain: str, auth: AuthDescriptor) -> str | None:
        self.calls += 1
        return self.token


def _orchestrator(
    web: Handler, registry: Handler = _ok, vault: CredentialVault | None = None, **kw: Any
) -> Orchestrator:
    wallet = Wallet({"agent": "secret"})
    payments = PaymentHandler(wallet, "agent")
    registry_client = RegistryClient(
        httpx.AsyncClient(transport=httpx.MockTransport(registry)), payments, "http://r.test"
    )
    return Orchestrator(
        registry_client,
        httpx.AsyncClient(transport=httpx.MockTransport(web)),
        vault or CredentialVault(),
        payments,
        clock=lambda: NOW,
        **kw,
    )


def test_bind_params_falls_back_to_example() -> None:
    """Test intent params win and the recorded example fills the gaps."""
    endpoint = make_endpoint("/api/items/{id}").model_copy(
        update={
            "example": EndpointExample(path="/api/items/7", query={"lang": "en"}),
            "query_schema": {"lang": QueryParam(required=True), "page": QueryParam()},
        }
    )
    call = bind_params(endpoint, {})
    assert call is not None
    assert (call.path_values, call.query) == ({"id": "7"}, {"lang": "en"})

    call = bind_params(endpoint, {"id": 9, "page": 2, "lang": "de"})
    assert call is not None
    assert (call.path_values, call.query) == ({"id": "9"}, {"lang": "de", "page": "2"})

    bare = endpoint.model_copy(update={"example": None})
    assert bind_params(bare, {}) is None


def test_select_endpoint_prefers_consumed_params() -> None:
    """Test the endpoint that uses the intent's params wins and unsafe ones never do."""
    listing = make_endpoint("/api/items").model_copy(
        update={"query_schema": {"category": QueryParam(required=True)}, "example": None}
    )
    detail = make_endpoint("/api/items/{id}")
    writer = make_endpoint("/api/cart").model_copy(update={"method": "POST", "safe": False})
    record = _record(listing, detail, writer)

    by_category = IntentQuery(text="items", params={"category": "shoes"})
    assert select_endpoint(record, by_category).endpoint.key == "GET /api/items"
    by_id = IntentQuery(text="items", params={"id": 4})
    assert select_endpoint(record, by_id).endpoint.key == "GET /api/items/{id}"

    with pytest.raises(EndpointFailed):
        select_endpoint(_record(writer), IntentQuery(text="cart"))


async def test_execute_skill_returns_data() -> None:
    """Test a clean response comes back as parsed data."""
    seen: list[str] = []

    def web(request: httpx.Request) -> httpx.Response:
        seen.append(str(request.url))
        return httpx.Response(200, json={"id": "3", "name": "lamp"})

    orchestrator = _orchestrator(web)
    record = _record(make_endpoint("/api/items/{id}"))
    data = await orchestrator.execute_skill(record, "GET /api/items/{id}", {"id": 3})
    assert data == {"id": "3", "name": "lamp"}
    assert seen == ["https://a.example/api/items/3"]

    with pytest.raises(EndpointFailed):
        await orchestrator.execute_skill(record, "GET /nope")


async def test_execute_skill_drift_raises_with_data() -> None:
    """Test a critical drift raises SchemaMismatch and reports it to the registry."""
    feedback: list[dict[str, Any]] = []

    def registry(request: httpx.Request) -> httpx.Response:
        feedback.append(json.loads(request.content))
        return httpx.Response(200, json={})

    def web(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json={"id": 3})

    orchestrator = _orchestrator(web, registry)
    record = _record(make_endpoint("/api/items"))
    with pytest.raises(SchemaMismatch) as excinfo:
        await orchestrator.execute_skill(record, "GET /api/items")
    assert excinfo.value.data == {"id": 3}
    assert excinfo.value.drift.removed_fields == ["name"]
    assert excinfo.value.drift.type_changes == [("id", "string", "number")]
    assert feedback == [
        {"endpoint_key": "GET /api/items", "outcome": "success", "drift_critical": True}
    ]


def _bearer_web(request: httpx.Request) -> httpx.Response:
    if request.headers.get("Authorization") != "Bearer good":
        return httpx.Response(401, json={"error": "unauthorized"})
    return httpx.Response(200, json={"id": "1", "name": "n"})


async def test_missing_credential_without_refresher() -> None:
    """Test an authenticated endpoint with an empty vault raises AuthMissing."""
    record = _record(make_endpoint("/api/items", auth=BEARER))
    with pytest.raises(AuthMissing):
        await _orchestrator(_bearer_web).execute_skill(record, "GET /api/items")


async def test_missing_credential_is_refreshed() -> None:
    """Test an absent credential is obtained through the refresher and stored."""
    vault = CredentialVault()
    refresher = Refresher("good")
    orchestrator = _orchestrator(_bearer_web, vault=vault, refresher=refresher)
    record = _record(make_endpoint("/api/items", auth=BEARER))
    assert await orchestrator.execute_skill(record, "GET /api/items") == {"id": "1", "name": "n"}
    assert vault.get("a.example:bearer:authorization") == "good"
    assert refresher.calls == 1


async def test_rejected_credential_refreshes_once() -> None:
    """Test a 401 triggers one refresh and one retry."""
    vault = CredentialVault()
    vault.put("a.example:bearer:authorization", "stale")
    refresher = Refresher("good")
    orchestrator = _orchestrator(_bearer_web, vault=vault, refresher=refresher)
    record = _record(make_endpoint("/api/items", auth=BEARER))

    assert await orchestrator.execute_skill(record, "GET /api/items") == {"id": "1", "name": "n"}
    assert vault.get("a.example:bearer:authorization") == "good"
    assert refresher.calls == 1

    vault.put("a.example:bearer:authorization", "stale")
    refused = _orchestrator(_bearer_web, vault=vault, refresher=Refresher(None))
    with pytest.raises(EndpointFailed):
        await refused.execute_skill(record, "GET /api/items")


async def test_archive_discoverer(tmp_path: Path) -> None:
    """Test captures are looked up by the intent's domain."""
    (tmp_path / "shop.example.har").write_bytes(b"{}")
    discoverer = ArchiveDiscoverer(tmp_path)
    assert await discoverer.discover(IntentQuery(text="x", domain_hint="Shop.Example")) == b"{}"
    with pytest.raises(DiscoveryEmpty):
        await discoverer.discover(IntentQuery(text="x"))
    with pytest.raises(DiscoveryEmpty):
        await discoverer.discover(IntentQuery(text="x", domain_hint="other.example"))


def test_installed_skills_persist(tmp_path: Path) -> None:
    """Test installs are written as skill directories and read back."""
    record = _record(make_endpoint("/api/items"))
    InstalledSkills(tmp_path).put(record)
    assert (tmp_path / record.id / "manifest.md").exists()
    reopened = InstalledSkills(tmp_path)
    assert record.id in reopened
    assert reopened.get(record.id) == record


# Three-path resolution against an in-process registry


@pytest.fixture
async def registry_http(clock: FakeClock) -> AsyncIterator[tuple[httpx.AsyncClient, Wallet]]:
    wallet = Wallet({"agent-a": "secret-a", "agent-b": "secret-b"})
    registry = SkillRegistry(cost_model=COST, install_base=20_000)
    gate = PaymentGate(Ledger(), MockSettlementAdapter(wallet), clock)
    app = create_registry_app(registry, gate, search_fee=5_000, clock=clock)
    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(transport=transport, base_url="http://registry.test") as client:
        yield client, wallet


def _agent(
    registry_http: tuple[httpx.AsyncClient, Wallet], agent_id: str, captures: Path, **kw: Any
) -> Orchestrator:
    client, wallet = registry_http
    payments = PaymentHandler(wallet, agent_id)
    return Orchestrator(
        RegistryClient(client, payments, "http://registry.test"),
        httpx.AsyncClient(transport=httpx.MockTransport(_replay("shop.har"))),
        CredentialVault(),
        payments,
        cache=RouteCache(),
        discoverer=ArchiveDiscoverer(captures),
        agent_id=agent_id,
        clock=lambda: NOW,
        cost_model=COST,
        **kw,
    )


async def test_discovery_then_cache_then_graph(
    registry_http: tuple[httpx.AsyncClient, Wallet], tmp_path: Path
) -> None:
    """Test the first agent discovers and publishes, then a second agent buys the skill."""
    shutil.copy(FIXTURES / "shop.har", tmp_path / "shop.example.har")

    first = _agent(registry_http, "agent-a", tmp_path)
    discovered = await first.resolve_intent(SHOES)
    assert discovered.timing.source == ResolutionSource.DISCOVERY
    assert discovered.fees_paid == []
    assert discovered.endpoint_key == "GET /api/products"
    assert discovered.data["total"] == 2

    cached = await first.resolve_intent(SHOES)
    assert cached.timing.source == ResolutionSource.CACHE
    assert cached.fees_paid == []
    assert cached.data == discovered.data

    second = _agent(
        registry_http, "agent-b", tmp_path / "none", acceptance_threshold=0.0, min_similarity=0.0
    )
    bought = await second.resolve_intent(SHOES)
    assert bought.timing.source == ResolutionSource.GRAPH
    assert [(f.kind, f.amount) for f in bought.fees_paid] == [
        (LedgerKind.TIER3, 5_000),
        (LedgerKind.TIER1, 15_000),
    ]
    assert bought.skill_id == discovered.skill_id
    assert second.spend_by_tier() == {"tier1": 15_000, "tier3": 5_000}
    assert (await second.resolve_intent(SHOES)).timing.source == ResolutionSource.CACHE


async def test_unresolvable_when_every_path_fails(
    registry_http: tuple[httpx.AsyncClient, Wallet], tmp_path: Path
) -> None:
    """Test an empty registry with no capture is unresolvable."""
    agent = _agent(registry_http, "agent-a", tmp_path)
    with pytest.raises(Unresolvable) as excinfo:
        await agent.resolve_intent(SHOES)
    assert any(f.startswith("discovery:") for f in excinfo.value.context["failures"])


async def test_expensive_graph_defects_to_browser(
    registry_http: tuple[httpx.AsyncClient, Wallet], tmp_path: Path
) -> None:
    """Test fees above the rediscovery cost skip the registry search."""
    shutil.copy(FIXTURES / "shop.har", tmp_path / "shop.example.har")
    agent = _agent(
        registry_http,
        "agent-a",
        tmp_path,
        expected_fees=FeeSchedule(f_search=400_000, f_install=0),
    )
    result = await agent.resolve_intent(SHOES)
    assert result.timing.source == ResolutionSource.DISCOVERY
    assert agent.cumulative_spend() == 0
