"""
Deterministic simulated web and agent fleet.

Sites serve HTML pages and JSON endpoints with configured latencies on a
``VirtualClock``; nothing sleeps. ``SimTransport`` plugs the web into httpx,
``SimBrowser`` records HAR captures the way a browser session would, and
``SimWorld`` wires a shared registry, ledger and any number of agents
together for the bench and fleet runs.

All outputs are pure functions of the site definitions and the seed.
"""

import asyncio
import csv
import heapq
import io
import json
import random
import statistics
from collections import Counter
from collections.abc import Callable
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Literal, NamedTuple

import httpx
import structlog
from pydantic import BaseModel, Field, field_validator, model_validator

from routegraph.capture import serialize_archive
from routegraph.client import RegistryClient
from routegraph.distill import match_path
from routegraph.economics import breakeven
from routegraph.errors import (
    BotBlocked,
    DiscoveryEmpty,
    NotFound,
    PaymentError,
    RouteGraphError,
    SimError,
    Unamortizable,
)
from routegraph.ledger import Ledger
from routegraph.models import (
    AuthDescriptor,
    CaptureArchive,
    CaptureEntry,
    CostModel,
    FeeSchedule,
    FeeSplit,
    FleetConfig,
    FleetMetrics,
    IntentQuery,
    LedgerKind,
    Micros,
    ParamKind,
    PathParam,
    ResolutionSource,
)
from routegraph.orchestrator import InstalledSkills, Orchestrator
from routegraph.payments import (
    MockSettlementAdapter,
    PaymentGate,
    PaymentHandler,
    Wallet,
    decode_proof_header,
    payment_required_body,
)
from routegraph.protocol import Header
from routegraph.registry import SkillRegistry
from routegraph.route_cache import RouteCache
from routegraph.server import create_registry_app
from routegraph.vault import CredentialVault

logger = structlog.get_logger(__name__)

SIM_EPOCH = 1_760_000_000.0

# Latency profile around the observed medians: browser answer ~3.4 s,
# cached execution ~630 ms, cold discovery ~8.2 s.
BROWSER_LAUNCH_MS = 372
EXTRACT_MS = 400
ANALYSIS_MS = 1_800
REGISTRY_LATENCY_MS = 120
REFRESH_MS = 250
STEP_INTERVAL_S = 600.0

DriftKind = Literal["remove-field", "change-type", "add-field"]
FieldKind = Literal["string", "number", "integer", "boolean"]


class VirtualClock:
    """Millisecond logical clock; callable as a unix-seconds clock"""

    def __init__(self, start: float = SIM_EPOCH) -> None:
        self.start = start
        self._ms = 0

    def __call__(self) -> float:
        return self.start + self._ms / 1000.0

    def now(self) -> float:
        return self()

    @property
    def elapsed_ms(self) -> int:
        return self._ms

    def timer(self) -> float:
        return float(self._ms)

    def advance(self, ms: int) -> None:
        if ms < 0:
            raise ValueError("Time only moves forward")
        self._ms += ms

    def advance_to(self, timestamp: float) -> None:
        target = round((timestamp - self.start) * 1000)
        if target > self._ms:
            self._ms = target

    async def sleep(self, seconds: float) -> None:
        self.advance(round(seconds * 1000))


# Site definitions


class SimEndpoint(BaseModel):
    method: str = "GET"
    path: str = Field(description="Path template, e.g. /api/products/{id}")
    latency_ms: int = Field(80, ge=0)
    kind: Literal["object", "list"] = "object"
    fields: dict[str, FieldKind] = Field(default_factory=dict)
    count: int = Field(3, ge=1, description="Items per list response")
    auth: bool = False

    @field_validator("method")
    @classmethod
    def _upper(cls, value: str) -> str:
        return value.upper()

    @property
    def key(self) -> str:
        return f"{self.method} {self.path}"

    def path_params(self) -> list[PathParam]:
        names = [s[1:-1] for s in self.path.split("/") if s.startswith("{") and s.endswith("}")]
        return [PathParam(name=n, kind=ParamKind.OPAQUE) for n in names]


class SimAsset(BaseModel):
    url: str = Field(description="Absolute URL, or a path on the page's host")
    media_type: str
    latency_ms: int = Field(15, ge=0)
    body: str = ""


class SimXhr(BaseModel):
    method: str = "GET"
    path: str
    body: dict[str, Any] | None = None


class SimPage(BaseModel):
    latency_ms: int = Field(2_000, ge=0, description="Render time")
    title: str = ""
    xhr: list[SimXhr] = Field(default_factory=list)
    assets: list[SimAsset] = Field(default_factory=list)
    beacons: list[SimAsset] = Field(default_factory=list)


class SimIntent(BaseModel):
    text: str
    params: dict[str, Any] = Field(default_factory=dict)
    page: str = Field("/", description="Page a browser would read to answer it")


class DriftMutation(BaseModel):
    kind: DriftKind
    field: str


class SimSite(BaseModel):
    host: str
    pages: dict[str, SimPage] = Field(default_factory=dict)
    endpoints: list[SimEndpoint] = Field(default_factory=list)
    intents: list[SimIntent] = Field(default_factory=list)
    bot_protected: bool = False
    html_only: bool = False
    tier2_opt_in: bool = False
    tier2_fee: Micros | None = Field(None, ge=0)
    token_ttl_s: float | None = Field(None, gt=0, description="Bearer token rotation period")
    token_version: int = 1
    seed: int = 0
    drift: dict[str, list[DriftMutation]] = Field(default_factory=dict)

    @field_validator("host")
    @classmethod
    def _lower_host(cls, value: str) -> str:
        return value.lower()

    @model_validator(mode="after")
    def _tier2_consistent(self) -> "SimSite":
        if self.tier2_opt_in != (self.tier2_fee is not None):
            raise ValueError("tier2_fee is set exactly when tier2_opt_in")
        return self

    def current_token(self, now: float) -> str:
        epoch = 0 if self.token_ttl_s is None else int((now - SIM_EPOCH) // self.token_ttl_s)
        return f"tok-{self.host}-{self.token_version}-{epoch}"

    def endpoint_for(self, method: str, path: str) -> tuple[SimEndpoint, dict[str, str]] | None:
        for endpoint in self.endpoints:
            if endpoint.method != method.upper():
                continue
            bound = match_path(endpoint.path, endpoint.path_params(), path)
            if bound is not None:
                return endpoint, bound
        return None


def load_sites(path: Path | None = None) -> list[SimSite]:
    """Site definitions from a JSON file, or the bundled set"""
    if path is None:
        raw = resources.files("routegraph.data").joinpath("sites.json").read_text("utf-8")
    else:
        raw = path.read_text(encoding="utf-8")
    return [SimSite.model_validate(s) for s in json.loads(raw)["sites"]]


def rotate_token(site: SimSite) -> str:
    """Invalidate the site's current bearer token"""
    site.token_version += 1
    return f"v{site.token_version}"


def inject_drift(site: SimSite, endpoint_key: str, kind: DriftKind, field_name: str) -> None:
    """Mutate every later response of an endpoint"""
    if not any(e.key == endpoint_key for e in site.endpoints):
        raise ValueError(f"{site.host} has no endpoint {endpoint_key}")
    site.drift.setdefault(endpoint_key, []).append(DriftMutation(kind=kind, field=field_name))
    logger.info("drift_injected", host=site.host, endpoint=endpoint_key, kind=kind)


def clear_drift(site: SimSite, endpoint_key: str | None = None) -> None:
    if endpoint_key is None:
        site.drift.clear()
    else:
        site.drift.pop(endpoint_key, None)


# Response generation


def _value(kind: FieldKind, name: str, rng: random.Random) -> Any:
    if kind == "integer":
        return rng.randint(1, 99_999)
    if kind == "number":
        return round(rng.uniform(1.0, 500.0), 2)
    if kind == "boolean":
        return rng.random() < 0.5
    return f"{name}-{rng.randint(100, 999)}"


def _echo(kind: FieldKind, value: str) -> Any:
    """Request value echoed into a response field, keeping the field's type"""
    try:
        if kind == "integer":
            return int(value)
        if kind == "number":
            return float(value)
    except ValueError:
        return value
    if kind == "boolean":
        return value.lower() == "true"
    return value


def _mutate(obj: dict[str, Any], mutation: DriftMutation, is_item: bool) -> None:
    if mutation.kind == "remove-field":
        obj.pop(mutation.field, None)
    elif mutation.kind == "change-type":
        if mutation.field in obj:
            value = obj[mutation.field]
            obj[mutation.field] = len(value) if isinstance(value, str) else str(value)
    elif is_item:
        obj[mutation.field] = f"{mutation.field}-drift"


def generate_body(
    site: SimSite,
    endpoint: SimEndpoint,
    path_values: dict[str, str],
    query: dict[str, str],
) -> Any:
    """Deterministic JSON body for a request, with the site's drift applied"""
    seed = json.dumps(
        [site.seed, site.host, endpoint.key, sorted(path_values.items()), sorted(query.items())]
    )
    rng = random.Random(seed)
    mutations = site.drift.get(endpoint.key, [])

    def item() -> dict[str, Any]:
        obj = {name: _value(kind, name, rng) for name, kind in endpoint.fields.items()}
        for name, value in [*path_values.items(), *query.items()]:
            if name in obj:
                obj[name] = _echo(endpoint.fields[name], value)
        for mutation in mutations:
            _mutate(obj, mutation, is_item=True)
        return obj

    if endpoint.kind == "object":
        return item()
    items = [item() for _ in range(endpoint.count)]
    body: dict[str, Any] = {"items": items, "total": endpoint.count}
    for mutation in mutations:
        if mutation.kind != "add-field":
            _mutate(body, mutation, is_item=False)
    return body


def _require_browser(site: SimSite, request: httpx.Request) -> None:
    if site.bot_protected and Header.BROWSER_MARKER not in request.headers:
        raise BotBlocked(f"{site.host} blocks automated clients", host=site.host)


def serve(site: SimSite, request: httpx.Request, clock: VirtualClock) -> httpx.Response:
    """
    Answer one request with the site's configured latency.

    Raises:
        BotBlocked: The site is protected and the request lacks the browser marker
        NotFound: No page or endpoint at this path
    """
    _require_browser(site, request)
    path = request.url.path
    page = site.pages.get(path)
    if request.method == "GET" and page is not None:
        clock.advance(page.latency_ms)
        html = f"<html><head><title>{page.title}</title></head><body>{page.title}</body></html>"
        return httpx.Response(
            200, headers={"content-type": "text/html; charset=utf-8"}, content=html.encode()
        )

    match = site.endpoint_for(request.method, path)
    if match is None:
        raise NotFound(f"{request.method} {path} not found on {site.host}", host=site.host)
    endpoint, path_values = match
    clock.advance(endpoint.latency_ms)
    if endpoint.auth:
        expected = f"Bearer {site.current_token(clock())}"
        if request.headers.get(Header.AUTHORIZATION) != expected:
            return httpx.Response(401, json={"error": "unauthorized"})
    query = dict(request.url.params)
    return httpx.Response(200, json=generate_body(site, endpoint, path_values, query))


class TraceEntry(NamedTuple):
    method: str
    url: str
    status: int
    browser: bool


class SimWeb:
    """
    Host name to site, plus the Tier-2 payment gate sites charge through.

    Browser traffic (carrying the browser marker) is the site's own UI and is
    never charged.
    """

    def __init__(
        self,
        sites: list[SimSite],
        clock: VirtualClock,
        ledger: Ledger | None = None,
        wallet: Wallet | None = None,
    ) -> None:
        self.sites = {s.host: s for s in sites}
        self.clock = clock
        self.trace: list[TraceEntry] = []
        self.gate: PaymentGate | None = None
        if ledger is not None and wallet is not None:
            self.gate = PaymentGate(ledger, MockSettlementAdapter(wallet), clock)

    def site_for(self, host: str) -> SimSite:
        site = self.sites.get(host.lower())
        if site is None:
            raise NotFound(f"No such host {host}", host=host)
        return site

    def handle(self, request: httpx.Request) -> httpx.Response:
        site = self.site_for(request.url.host)
        _require_browser(site, request)
        browser = Header.BROWSER_MARKER in request.headers
        match = site.endpoint_for(request.method, request.url.path)
        fee = site.tier2_fee or 0
        if self.gate is None or browser or match is None or fee <= 0:
            return serve(site, request, self.clock)

        endpoint, _ = match
        resource = f"{request.method} {site.host}{request.url.path}"
        proof_header = request.headers.get(Header.PAYMENT_PROOF)
        if proof_header is None:
            self.clock.advance(endpoint.latency_ms)
            terms = self.gate.challenge(resource, fee)
            return httpx.Response(402, json=payment_required_body(terms))
        terms, proof = decode_proof_header(proof_header)
        entry = self.gate.verify_and_settle(
            proof,
            terms,
            resource=resource,
            expected_amount=fee,
            kind=LedgerKind.TIER2,
            payee=f"site:{site.host}",
        )
        response = serve(site, request, self.clock)
        response.headers[Header.PAYMENT_RECEIPT] = entry.entry_id
        return response


class SimTransport(httpx.AsyncBaseTransport):
    """httpx transport into a ``SimWeb``; every request lands in ``web.trace``"""

    def __init__(self, web: SimWeb) -> None:
        self.web = web

    async def handle_async_request(self, request: httpx.Request) -> httpx.Response:
        await request.aread()
        try:
            response = self.web.handle(request)
        except (SimError, PaymentError) as e:
            response = httpx.Response(e.http_status, json=e.to_dict())
        self.web.trace.append(
            TraceEntry(
                request.method,
                str(request.url),
                response.status_code,
                Header.BROWSER_MARKER in request.headers,
            )
        )
        return response


class LatencyTransport(httpx.AsyncBaseTransport):
    """Adds a fixed round-trip latency on the virtual clock and traces requests"""

    def __init__(
        self, inner: httpx.AsyncBaseTransport, clock: VirtualClock, latency_ms: int
    ) -> None:
        self.inner = inner
        self.clock = clock
        self.latency_ms = latency_ms
        self.trace: list[TraceEntry] = []

    async def handle_async_request(self, request: httpx.Request) -> httpx.Response:
        self.clock.advance(self.latency_ms)
        response = await self.inner.handle_async_request(request)
        self.trace.append(
            TraceEntry(request.method, str(request.url), response.status_code, False)
        )
        return response

    async def aclose(self) -> None:
        await self.inner.aclose()


# Browser


def browse_baseline(
    site: SimSite,
    page_path: str = "/",
    launch_ms: int = BROWSER_LAUNCH_MS,
    extract_ms: int = EXTRACT_MS,
) -> int:
    """Browser-automation cost of answering one intent from a page, in ms"""
    page = site.pages.get(page_path)
    if page is None:
        raise NotFound(f"No page {page_path} on {site.host}", host=site.host)
    xhr_ms = 0
    if not site.html_only:
        for call in page.xhr:
            match = site.endpoint_for(call.method, call.path.split("?")[0])
            xhr_ms += match[0].latency_ms if match else 0
    return launch_ms + page.latency_ms + xhr_ms + extract_ms


class SimBrowser:
    """
    Scripted browser: loads pages, fires their XHRs, loads assets and
    beacons, and records everything as a capture.
    """

    def __init__(
        self,
        web: SimWeb,
        launch_ms: int = BROWSER_LAUNCH_MS,
        analysis_ms: int = ANALYSIS_MS,
    ) -> None:
        self.web = web
        self.clock = web.clock
        self.launch_ms = launch_ms
        self.analysis_ms = analysis_ms

    async def _fetch(
        self,
        client: httpx.AsyncClient,
        method: str,
        url: str,
        headers: dict[str, str] | None = None,
        body: dict[str, Any] | None = None,
    ) -> CaptureEntry:
        started = self.clock()
        start_ms = self.clock.elapsed_ms
        response = await client.request(method, url, headers=headers, json=body)
        sent = response.request
        return CaptureEntry(
            method=method,
            url=url,
            request_headers=dict(sent.headers),
            request_body=sent.content or None,
            request_media_type=sent.headers.get("content-type"),
            response_status=response.status_code,
            response_media_type=response.headers.get("content-type", ""),
            response_body=response.content,
            started_at=started,
            duration_ms=float(self.clock.elapsed_ms - start_ms),
        )

    def _asset_entry(self, host: str, asset: SimAsset, started: float) -> CaptureEntry:
        url = asset.url if "://" in asset.url else f"https://{host}{asset.url}"
        return CaptureEntry(
            method="GET",
            url=url,
            response_status=200,
            response_media_type=asset.media_type,
            response_body=asset.body.encode() if asset.body else None,
            started_at=started,
            duration_ms=float(asset.latency_ms),
        )

    async def capture(self, host: str, pages: list[str] | None = None) -> CaptureArchive:
        """Visit pages of a site (all by default) and record the session"""
        site = self.web.site_for(host)
        self.clock.advance(self.launch_ms)
        entries: list[CaptureEntry] = []
        async with httpx.AsyncClient(
            transport=SimTransport(self.web), headers={Header.BROWSER_MARKER: "1"}
        ) as client:
            for path in pages or sorted(site.pages):
                page = site.pages[path]
                entries.append(await self._fetch(client, "GET", f"https://{site.host}{path}"))
                # assets and beacons load in parallel with the render
                for asset in [*page.assets, *page.beacons]:
                    entries.append(self._asset_entry(site.host, asset, self.clock()))
                if site.html_only:
                    continue
                for call in page.xhr:
                    headers: dict[str, str] = {}
                    match = site.endpoint_for(call.method, call.path.split("?")[0])
                    if match is not None and match[0].auth:
                        token = site.current_token(self.clock())
                        headers[Header.AUTHORIZATION] = f"Bearer {token}"
                    url = f"https://{site.host}{call.path}"
                    entries.append(await self._fetch(client, call.method, url, headers, call.body))
        logger.debug("browser_capture", host=site.host, entries=len(entries))
        return CaptureArchive(entries=tuple(entries), source_label=f"sim:{site.host}")

    async def discover(self, query: IntentQuery) -> bytes:
        """Capture the intent's site and spend the analysis time; returns HAR"""
        if not query.domain_hint:
            raise DiscoveryEmpty("Discovery needs a target domain", intent=query.text)
        archive = await self.capture(query.domain_hint)
        self.clock.advance(self.analysis_ms)
        return serialize_archive(archive)


class SimAuthRefresher:
    """Re-login through the site: returns the token the site currently accepts"""

    def __init__(self, web: SimWeb, refresh_ms: int = REFRESH_MS) -> None:
        self.web = web
        self.refresh_ms = refresh_ms

    async def refresh(self, domain: str, auth: AuthDescriptor) -> str | None:
        site = self.web.sites.get(domain)
        if site is None or not any(e.auth for e in site.endpoints):
            return None
        self.web.clock.advance(self.refresh_ms)
        return site.current_token(self.web.clock())


# World


class SimWorld:
    """
    A shared registry, ledger and simulated web, plus agents on top of them.

    Use as an async context manager so the agents' httpx clients are closed.
    """

    def __init__(
        self,
        sites: list[SimSite],
        *,
        fees: FeeSchedule | None = None,
        cost_model: CostModel | None = None,
        fee_split: FeeSplit | None = None,
        registry_latency_ms: int = REGISTRY_LATENCY_MS,
        registry_root: Path | None = None,
        clock: VirtualClock | None = None,
    ) -> None:
        self.fees = fees or FeeSchedule(f_search=5_000, f_install=20_000)
        self.cost_model = cost_model or FleetConfig().cost_model
        self.clock = clock or VirtualClock()
        self.ledger = Ledger()
        self.wallet = Wallet()
        self.web = SimWeb(sites, self.clock, self.ledger, self.wallet)
        self.registry = SkillRegistry(
            registry_root, cost_model=self.cost_model, install_base=self.fees.f_install
        )
        self.gate = PaymentGate(self.ledger, MockSettlementAdapter(self.wallet), self.clock)
        self.app = create_registry_app(
            self.registry,
            self.gate,
            search_fee=self.fees.f_search,
            fee_split=fee_split or FeeSplit(),
            clock=self.clock,
        )
        self.registry_transport = LatencyTransport(
            httpx.ASGITransport(app=self.app), self.clock, registry_latency_ms
        )
        self.browser = SimBrowser(self.web)
        self.refresher = SimAuthRefresher(self.web)
        self.agents: dict[str, Orchestrator] = {}
        self._clients: list[httpx.AsyncClient] = []

    def agent(
        self,
        agent_id: str,
        *,
        cache: RouteCache | None = None,
        installed: InstalledSkills | None = None,
        vault: CredentialVault | None = None,
    ) -> Orchestrator:
        """An agent with its own wallet key, vault, cache and install store"""
        if agent_id in self.agents:
            return self.agents[agent_id]
        self.wallet.create(agent_id)
        payments = PaymentHandler(self.wallet, agent_id)
        registry_client = httpx.AsyncClient(transport=self.registry_transport)
        web_client = httpx.AsyncClient(transport=SimTransport(self.web))
        self._clients += [registry_client, web_client]
        orchestrator = Orchestrator(
            RegistryClient(registry_client, payments, base_url="http://registry.sim"),
            web_client,
            vault or CredentialVault(),
            payments,
            cache=cache or RouteCache(),
            installed=installed or InstalledSkills(),
            discoverer=self.browser,
            refresher=self.refresher,
            agent_id=agent_id,
            clock=self.clock,
            timer=self.clock.timer,
            cost_model=self.cost_model,
            expected_fees=self.fees,
        )
        self.agents[agent_id] = orchestrator
        return orchestrator

    def sync_site_fees(self) -> None:
        """Site owners opt their published records into Tier 2"""
        for site in self.web.sites.values():
            record = self.registry.by_domain(site.host)
            if site.tier2_opt_in and record is not None and not record.tier2_opt_in:
                self.registry.register_site_fee(site.host, site.tier2_fee, self.clock())

    async def aclose(self) -> None:
        for client in self._clients:
            await client.aclose()
        self._clients.clear()

    async def __aenter__(self) -> "SimWorld":
        return self

    async def __aexit__(self, *exc: object) -> None:
        await self.aclose()


# Bench


class BenchRow(BaseModel):
    host: str
    baseline_ms: float
    cold_ms: float
    cached_ms: float
    cold_source: ResolutionSource
    cached_source: ResolutionSource
    speedup: float = Field(description="baseline / cached")
    cold_over_cached: float
    breakeven: int | None = None


async def run_bench(world: SimWorld) -> list[BenchRow]:
    """Cold then cached resolution of each site's first intent, against the browser baseline"""
    rows: list[BenchRow] = []
    for host in sorted(world.web.sites):
        site = world.web.sites[host]
        if not site.intents or site.html_only or site.bot_protected:
            continue
        intent = site.intents[0]
        query = IntentQuery(text=intent.text, domain_hint=host, params=intent.params)
        agent = world.agent(f"bench-{host}")
        cold = await agent.resolve_intent(query)
        cached = await agent.resolve_intent(query)
        baseline = float(browse_baseline(site, intent.page))
        try:
            even: int | None = breakeven(cold.timing.total_ms, cached.timing.total_ms, baseline)
        except Unamortizable:
            even = None
        rows.append(
            BenchRow(
                host=host,
                baseline_ms=baseline,
                cold_ms=cold.timing.total_ms,
                cached_ms=cached.timing.total_ms,
                cold_source=cold.timing.source,
                cached_source=cached.timing.source,
                speedup=baseline / max(1.0, cached.timing.total_ms),
                cold_over_cached=cold.timing.total_ms / max(1.0, cached.timing.total_ms),
                breakeven=even,
            )
        )
        logger.info("bench_site", host=host, speedup=rows[-1].speedup)
    return rows


# Fleet


@dataclass(order=True)
class FleetEvent:
    ts: float
    seq: int
    agent: int = field(compare=False)


class EventQueue:
    def __init__(self) -> None:
        self._heap: list[FleetEvent] = []
        self._seq = 0

    def push(self, ts: float, agent: int) -> None:
        heapq.heappush(self._heap, FleetEvent(ts, self._seq, agent))
        self._seq += 1

    def pop(self) -> FleetEvent | None:
        return heapq.heappop(self._heap) if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


def _mean(values: list[float]) -> float | None:
    return statistics.fmean(values) if values else None


async def simulate_fleet(
    config: FleetConfig,
    sites: list[SimSite] | None = None,
    on_result: Callable[[str, IntentQuery, ResolutionSource | None], None] | None = None,
) -> FleetMetrics:
    """
    Stepped fleet run: every step each agent draws a site and one of its
    intents and resolves it against the shared registry.
    """
    pool = sites if sites is not None else load_sites(
        Path(config.sites_file) if config.sites_file else None
    )
    pool = [s for s in pool if s.intents][: config.n_sites]
    if not pool:
        raise ValueError("Fleet needs at least one site with intents")
    rng = random.Random(config.seed)

    durations: dict[ResolutionSource, list[float]] = {s: [] for s in ResolutionSource}
    browser_ms: list[float] = []
    failures = 0
    async with SimWorld(pool, fees=config.fees, cost_model=config.cost_model) as world:
        agent_ids = [f"agent-{i + 1:02d}" for i in range(config.n_agents)]
        agents = [world.agent(a) for a in agent_ids]
        queue = EventQueue()
        for step in range(config.steps):
            for index in range(config.n_agents):
                queue.push(SIM_EPOCH + step * STEP_INTERVAL_S, index)

        while (event := queue.pop()) is not None:
            world.clock.advance_to(event.ts)
            site = rng.choice(pool)
            intent = rng.choice(site.intents)
            query = IntentQuery(text=intent.text, domain_hint=site.host, params=intent.params)
            browser_ms.append(float(browse_baseline(site, intent.page)))
            source: ResolutionSource | None = None
            try:
                result = await agents[event.agent].resolve_intent(query)
                source = result.timing.source
                durations[source].append(result.timing.total_ms)
            except RouteGraphError as e:
                failures += 1
                logger.info("fleet_resolution_failed", agent=agent_ids[event.agent], error=str(e))
            world.sync_site_fees()
            if on_result is not None:
                on_result(agent_ids[event.agent], query, source)

        by_source = {s.value: len(durations[s]) for s in ResolutionSource}
        resolved = sum(by_source.values())
        fees_by_tier: Counter[str] = Counter()
        payouts: Counter[str] = Counter()
        for entry in world.ledger.entries():
            if entry.kind == LedgerKind.PAYOUT:
                payouts[entry.payee] += entry.amount
            else:
                fees_by_tier[entry.kind.value] += entry.amount

        mean_cached = _mean(durations[ResolutionSource.CACHE])
        mean_discovery = _mean(durations[ResolutionSource.DISCOVERY])
        mean_browser = _mean(browser_ms)
        observed: int | None = None
        if mean_cached is not None and mean_discovery is not None and mean_browser is not None:
            try:
                observed = breakeven(mean_discovery, mean_cached, mean_browser)
            except Unamortizable:
                observed = None

        metrics = FleetMetrics(
            resolutions=resolved,
            failures=failures,
            resolutions_by_source=by_source,
            cache_hit_rate=by_source[ResolutionSource.CACHE.value] / resolved if resolved else 0.0,
            mean_cached_ms=mean_cached,
            mean_graph_ms=_mean(durations[ResolutionSource.GRAPH]),
            mean_discovery_ms=mean_discovery,
            mean_browser_ms=mean_browser,
            total_fees_by_tier=dict(sorted(fees_by_tier.items())),
            payouts_by_contributor=dict(sorted(payouts.items())),
            records_created=len(world.registry),
            observed_breakeven=observed,
            cumulative_spend_by_agent={
                agent_id: agent.cumulative_spend()
                for agent_id, agent in zip(agent_ids, agents, strict=True)
            },
        )
    logger.info("fleet_done", resolutions=resolved, failures=failures)
    return metrics


def run_fleet(config: FleetConfig, sites: list[SimSite] | None = None) -> FleetMetrics:
    return asyncio.run(simulate_fleet(config, sites))


def metrics_to_json(metrics: FleetMetrics) -> str:
    return json.dumps(metrics.model_dump(mode="json"), sort_keys=True, indent=2)


def metrics_to_csv(metrics: FleetMetrics) -> str:
    """One ``metric,value`` row per scalar; dict metrics flatten to ``name.key``"""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for name, value in sorted(metrics.model_dump(mode="json").items()):
        if isinstance(value, dict):
            for key, inner in sorted(value.items()):
                writer.writerow([f"{name}.{key}", inner])
        else:
            writer.writerow([name, "" if value is None else value])
    return out.getvalue()
