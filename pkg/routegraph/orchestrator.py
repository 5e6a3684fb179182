"""
Intent resolution for an agent.

``resolve_intent`` walks three paths in order: a cached route binding, a
paid lookup in the shared registry, and discovery through a browser capture
with publish-back. Skills always execute locally with credentials from the
agent's own vault.
"""

import json
import time
from collections import defaultdict
from collections.abc import Callable
from pathlib import Path
from typing import Any, NamedTuple, Protocol
from urllib.parse import urlsplit

import httpx
import structlog

from routegraph.capture import filter_archive, parse_archive
from routegraph.client import RegistryClient
from routegraph.distill import distill, fill_template, match_path, write_skill_dir
from routegraph.economics import adoption_decision
from routegraph.embedding import Embedder, HashingEmbedder, cosine
from routegraph.errors import (
    AuthMissing,
    DiscoveryEmpty,
    EmptyIndex,
    EndpointFailed,
    NoApiEntries,
    PaymentRefused,
    ResolutionError,
    RouteGraphError,
    SchemaMismatch,
    Unresolvable,
)
from routegraph.models import (
    AdoptionDecision,
    AuthDescriptor,
    AuthKind,
    CaptureEntry,
    CostModel,
    DriftReport,
    EndpointTemplate,
    ExecutionResult,
    ExecutionTiming,
    FeeReceipt,
    FeeSchedule,
    FilterPolicy,
    IntentQuery,
    LedgerKind,
    Micros,
    Outcome,
    ResolutionSource,
    RouteCacheEntry,
    ScoredResult,
    SkillPackage,
    SkillRecord,
)
from routegraph.payments import PaymentHandler
from routegraph.protocol import ACCEPTANCE_THRESHOLD, CACHE_TTL_S, MIN_SIMILARITY
from routegraph.route_cache import RouteCache, intent_key
from routegraph.trust import live_drift
from routegraph.vault import CredentialVault

logger = structlog.get_logger(__name__)

SEARCH_K = 5


class Discoverer(Protocol):
    """Drives a browser at the intent's site and returns the HAR it recorded"""

    async def discover(self, query: IntentQuery) -> bytes: ...


class AuthRefresher(Protocol):
    """Obtains a fresh credential after the target rejected the stored one"""

    async def refresh(self, domain: str, auth: AuthDescriptor) -> str | None: ...


class BoundCall(NamedTuple):
    endpoint: EndpointTemplate
    path_values: dict[str, str]
    query: dict[str, str]


class CallOutcome(NamedTuple):
    data: Any
    drift: DriftReport
    fees: list[FeeReceipt]


def bind_params(endpoint: EndpointTemplate, params: dict[str, Any]) -> BoundCall | None:
    """
    Fill an endpoint's parameters from intent params, falling back to its example.

    Returns None when a required parameter has no value from either source.
    """
    example_path: dict[str, str] = {}
    example_query: dict[str, str] = {}
    if endpoint.example is not None:
        bound = match_path(endpoint.path_template, endpoint.path_params, endpoint.example.path)
        example_path = bound or {}
        example_query = endpoint.example.query

    path_values: dict[str, str] = {}
    for param in endpoint.path_params:
        value = params.get(param.name, example_path.get(param.name))
        if value is None:
            return None
        path_values[param.name] = str(value)

    query: dict[str, str] = {}
    for name, spec in endpoint.query_schema.items():
        if name in params:
            query[name] = str(params[name])
        elif spec.required:
            if name not in example_query:
                return None
            query[name] = example_query[name]
    return BoundCall(endpoint, path_values, query)


def select_endpoint(
    record: SkillRecord, query: IntentQuery, embedder: Embedder | None = None
) -> BoundCall:
    """
    Pick the safe endpoint of a skill that best serves an intent.

    Endpoints whose required parameters cannot be filled are skipped. The rest
    rank by how many intent params they consume, then by similarity between
    the intent text and the endpoint documentation, then by key.

    Raises:
        EndpointFailed: No safe endpoint can be called with these params
    """
    embedder = embedder or HashingEmbedder()
    intent_vector = embedder.embed(query.text)
    ranked: list[tuple[int, float, str, BoundCall]] = []
    for endpoint in record.endpoints:
        if not endpoint.safe:
            continue
        call = bind_params(endpoint, query.params)
        if call is None:
            continue
        accepted = {p.name for p in endpoint.path_params} | set(endpoint.query_schema)
        used = sum(1 for name in query.params if name in accepted)
        text = f"{endpoint.description} {endpoint.path_template}"
        similarity = cosine(intent_vector, embedder.embed(text))
        ranked.append((-used, -similarity, endpoint.key, call))
    if not ranked:
        raise EndpointFailed(
            f"No callable endpoint on {record.domain} for these params",
            domain=record.domain,
            params=sorted(query.params),
        )
    ranked.sort(key=lambda item: item[:3])
    return ranked[0][3]


class InstalledSkills:
    """
    Skills installed on this agent.

    Each install is a skill directory (manifest, endpoints, client stub, local
    auth) plus the registry record it came from, under ``root/<record id>``.
    """

    def __init__(self, root: Path | None = None) -> None:
        self.root = root
        self._records: dict[str, SkillRecord] = {}

    def get(self, record_id: str) -> SkillRecord | None:
        record = self._records.get(record_id)
        if record is None and self.root is not None:
            path = self.root / record_id / "record.json"
            if path.exists():
                record = SkillRecord.model_validate_json(path.read_bytes())
                self._records[record_id] = record
        return record

    def put(self, record: SkillRecord, package: SkillPackage | None = None) -> None:
        self._records[record.id] = record
        if self.root is None:
            return
        directory = self.root / record.id
        write_skill_dir(package or record.as_package(), directory)
        (directory / "record.json").write_text(record.model_dump_json(indent=2))

    def __contains__(self, record_id: object) -> bool:
        return isinstance(record_id, str) and self.get(record_id) is not None


class ArchiveDiscoverer:
    """Discovery from saved browser captures: ``<directory>/<domain>.har``"""

    def __init__(self, directory: Path) -> None:
        self.directory = directory

    async def discover(self, query: IntentQuery) -> bytes:
        if not query.domain_hint:
            raise DiscoveryEmpty("Discovery needs a target domain", intent=query.text)
        path = self.directory / f"{query.domain_hint.lower()}.har"
        if not path.exists():
            raise DiscoveryEmpty(f"No capture for {query.domain_hint}", path=str(path))
        return path.read_bytes()


def _captured_response(
    entries: list[CaptureEntry], endpoint: EndpointTemplate, domain: str
) -> Any | None:
    """Body the browser already saw for this endpoint, if any"""
    for entry in entries:
        parts = urlsplit(entry.url)
        if (parts.hostname or "").lower() != domain or entry.method != endpoint.method:
            continue
        if match_path(endpoint.path_template, endpoint.path_params, parts.path) is None:
            continue
        if entry.response_status < 400 and entry.response_body:
            try:
                return json.loads(entry.response_body)
            except (json.JSONDecodeError, UnicodeDecodeError):
                continue
    return None


class Orchestrator:
    """
    One agent's resolver.

    Args:
        registry: Client for the shared registry
        web: httpx client used to call target sites
        vault: Local credential vault
        payments: Handler answering 402 challenges from sites (Tier 2)
        cache: Route cache binding intents to installed skills
        installed: Local skill install store
        discoverer: Browser capture for Path 3; without one Path 3 is unavailable
        refresher: Auth refresh hook used once on a 401
        agent_id: Contributor id used when publishing discoveries
        clock: Unix-seconds clock for TTLs and timestamps
        timer: Millisecond timer for ``ExecutionResult.timing``
        cost_model: Rediscovery cost model for the adoption decision
        expected_fees: Fees the agent expects to pay on the graph path
    """

    def __init__(
        self,
        registry: RegistryClient,
        web: httpx.AsyncClient,
        vault: CredentialVault,
        payments: PaymentHandler,
        *,
        cache: RouteCache | None = None,
        installed: InstalledSkills | None = None,
        discoverer: Discoverer | None = None,
        refresher: AuthRefresher | None = None,
        agent_id: str = "agent-local",
        clock: Callable[[], float] = time.time,
        timer: Callable[[], float] | None = None,
        cost_model: CostModel | None = None,
        expected_fees: FeeSchedule | None = None,
        acceptance_threshold: float = ACCEPTANCE_THRESHOLD,
        min_similarity: float = MIN_SIMILARITY,
        cache_ttl: float = CACHE_TTL_S,
        policy: FilterPolicy | None = None,
        embedder: Embedder | None = None,
        scheme: str = "https",
    ) -> None:
        self.registry = registry
        self.web = web
        self.vault = vault
        self.payments = payments
        self.cache = cache or RouteCache()
        self.installed = installed or InstalledSkills()
        self.discoverer = discoverer
        self.refresher = refresher
        self.agent_id = agent_id
        self.clock = clock
        self.timer = timer or (lambda: time.monotonic() * 1000.0)
        self.cost_model = cost_model or CostModel()
        self.expected_fees = expected_fees or FeeSchedule()
        self.acceptance_threshold = acceptance_threshold
        self.min_similarity = min_similarity
        self.cache_ttl = cache_ttl
        self.policy = policy or FilterPolicy.default()
        self.embedder = embedder or HashingEmbedder()
        self.scheme = scheme
        self._spend: dict[LedgerKind, Micros] = defaultdict(int)

    # Metrics

    def cumulative_spend(self, kind: LedgerKind | None = None) -> Micros:
        if kind is None:
            return sum(self._spend.values())
        return self._spend.get(kind, 0)

    def spend_by_tier(self) -> dict[str, Micros]:
        return {k.value: v for k, v in sorted(self._spend.items(), key=lambda kv: kv[0].value)}

    def _paid(self, fees: list[FeeReceipt], receipt: FeeReceipt | None) -> None:
        if receipt is not None:
            fees.append(receipt)
            self._spend[receipt.kind] += receipt.amount

    # Execution

    async def _send(
        self, call: BoundCall, url: str, headers: dict[str, str]
    ) -> tuple[httpx.Response, FeeReceipt | None]:
        try:
            return await self.payments.request(
                self.web,
                call.endpoint.method,
                url,
                kind=LedgerKind.TIER2,
                headers=headers,
                params=call.query,
            )
        except httpx.HTTPError as e:
            raise EndpointFailed(f"{call.endpoint.key} unreachable: {e}") from e

    async def _auth_headers(self, domain: str, endpoint: EndpointTemplate) -> dict[str, str]:
        """Vault credential for an endpoint; a missing one is obtained through the refresher"""
        try:
            return self.vault.auth_headers(endpoint.auth)
        except AuthMissing:
            fresh = None
            if self.refresher is not None and endpoint.auth.value_ref is not None:
                fresh = await self.refresher.refresh(domain, endpoint.auth)
            if fresh is None or endpoint.auth.value_ref is None:
                raise
            self.vault.put(endpoint.auth.value_ref, fresh)
            return self.vault.auth_headers(endpoint.auth)

    async def _call(self, record: SkillRecord, call: BoundCall) -> CallOutcome:
        endpoint = call.endpoint
        path = fill_template(endpoint.path_template, call.path_values)
        url = f"{self.scheme}://{record.domain}{path}"
        fees: list[FeeReceipt] = []
        headers = await self._auth_headers(record.domain, endpoint)
        response, receipt = await self._send(call, url, headers)
        self._paid(fees, receipt)

        # one refresh-and-retry on an auth rejection
        if response.status_code == 401 and endpoint.auth.kind != AuthKind.NONE:
            fresh = None
            if self.refresher is not None:
                fresh = await self.refresher.refresh(record.domain, endpoint.auth)
            if fresh is None or endpoint.auth.value_ref is None:
                raise EndpointFailed(f"{endpoint.key} rejected credentials", status=401)
            self.vault.refresh(endpoint.auth.value_ref, fresh)
            response, receipt = await self._send(
                call, url, self.vault.auth_headers(endpoint.auth)
            )
            self._paid(fees, receipt)

        if response.status_code >= 400:
            raise EndpointFailed(
                f"{endpoint.key} on {record.domain} answered {response.status_code}",
                status=response.status_code,
            )
        try:
            data: Any = response.json()
        except ValueError:
            data = response.text
        return CallOutcome(data, live_drift(endpoint, data), fees)

    async def execute_skill(
        self, record: SkillRecord, endpoint_key: str, params: dict[str, Any] | None = None
    ) -> Any:
        """
        Call one endpoint of an installed skill and check its response.

        Raises:
            AuthMissing: The endpoint needs a credential the vault lacks
            EndpointFailed: Transport error or error status
            SchemaMismatch: The response drifted critically (carries data and drift)
        """
        endpoint = record.endpoint(endpoint_key)
        if endpoint is None:
            raise EndpointFailed(f"No endpoint {endpoint_key} on {record.domain}")
        call = bind_params(endpoint, params or {})
        if call is None:
            raise EndpointFailed(f"Missing parameters for {endpoint_key}")
        outcome = await self._call(record, call)
        if outcome.drift.critical:
            await self._feedback(record.id, endpoint.key, Outcome.SUCCESS, drift_critical=True)
            raise SchemaMismatch(
                f"{endpoint_key} response drifted", data=outcome.data, drift=outcome.drift
            )
        return outcome.data

    async def _feedback(
        self, record_id: str, endpoint_key: str, outcome: Outcome, drift_critical: bool = False
    ) -> None:
        try:
            await self.registry.feedback(record_id, endpoint_key, outcome, drift_critical)
        except (RouteGraphError, httpx.HTTPError) as e:
            logger.warning("feedback_failed", record_id=record_id, error=str(e))

    def _result(
        self,
        outcome: CallOutcome | Any,
        source: ResolutionSource,
        fees: list[FeeReceipt],
        record: SkillRecord,
        call: BoundCall,
        started_ms: float,
    ) -> ExecutionResult:
        if isinstance(outcome, CallOutcome):
            data, drift = outcome.data, (None if outcome.drift.empty else outcome.drift)
        else:
            data, drift = outcome, None
        result = ExecutionResult(
            data=data,
            timing=ExecutionTiming(total_ms=max(0.0, self.timer() - started_ms), source=source),
            fees_paid=list(fees),
            skill_id=record.id,
            endpoint_key=call.endpoint.key,
            drift=drift,
        )
        logger.info(
            "intent_resolved",
            source=source.value,
            skill_id=record.id,
            endpoint=call.endpoint.key,
            total_ms=result.timing.total_ms,
            fees=sum(f.amount for f in fees),
        )
        return result

    def _bind_cache(self, key: str, record: SkillRecord, call: BoundCall, now: float) -> None:
        self.cache.put(
            RouteCacheEntry(
                intent_key=key,
                skill_id=record.id,
                endpoint_key=call.endpoint.key,
                resolved_at=now,
                ttl=self.cache_ttl,
            )
        )

    # Paths

    async def _cache_path(
        self, query: IntentQuery, key: str, now: float, started_ms: float
    ) -> ExecutionResult | None:
        entry = self.cache.get(key, now)
        if entry is None:
            return None
        record = self.installed.get(entry.skill_id)
        endpoint = record.endpoint(entry.endpoint_key) if record is not None else None
        call = bind_params(endpoint, query.params) if endpoint is not None else None
        if record is None or call is None:
            self.cache.remove(key)
            return None
        fees: list[FeeReceipt] = []
        try:
            outcome = await self._call(record, call)
        except ResolutionError as e:
            logger.info("cached_route_failed", skill_id=record.id, error=str(e))
            self.cache.remove(key)
            return None
        fees.extend(outcome.fees)
        if outcome.drift.critical:
            self.cache.remove(key)
            await self._feedback(record.id, call.endpoint.key, Outcome.SUCCESS, True)
        return self._result(outcome, ResolutionSource.CACHE, fees, record, call, started_ms)

    def _accept(self, results: list[ScoredResult], query: IntentQuery) -> ScoredResult | None:
        hint = (query.domain_hint or "").lower()
        for result in results:
            if hint and result.domain != hint:
                continue
            if result.composite < self.acceptance_threshold:
                continue
            if result.components.similarity < self.min_similarity:
                continue
            return result
        return None

    def _search_text(self, query: IntentQuery) -> str:
        return f"{query.text} {query.domain_hint}" if query.domain_hint else query.text

    async def _graph_path(
        self,
        query: IntentQuery,
        key: str,
        now: float,
        fees: list[FeeReceipt],
        started_ms: float,
    ) -> ExecutionResult | None:
        try:
            results, receipt = await self.registry.search(self._search_text(query), SEARCH_K)
        except EmptyIndex:
            return None
        self._paid(fees, receipt)
        best = self._accept(results, query)
        if best is None:
            logger.info("graph_no_suitable_result", candidates=len(results))
            return None

        record = self.installed.get(best.record_id)
        if record is None:
            record, receipt = await self.registry.install(best.record_id)
            self._paid(fees, receipt)
            self.installed.put(record)

        call = select_endpoint(record, query, self.embedder)
        try:
            outcome = await self._call(record, call)
        except EndpointFailed:
            await self._feedback(record.id, call.endpoint.key, Outcome.FAILURE)
            raise
        fees.extend(outcome.fees)
        if outcome.drift.critical:
            result = self._result(outcome, ResolutionSource.GRAPH, fees, record, call, started_ms)
            await self._feedback(record.id, call.endpoint.key, Outcome.SUCCESS, True)
            return result
        self._bind_cache(key, record, call, now)
        result = self._result(outcome, ResolutionSource.GRAPH, fees, record, call, started_ms)
        await self._feedback(record.id, call.endpoint.key, Outcome.SUCCESS)
        return result

    async def _discover(
        self, query: IntentQuery, now: float
    ) -> tuple[SkillPackage, SkillRecord, list[CaptureEntry]]:
        if self.discoverer is None:
            raise DiscoveryEmpty("No browser available for discovery")
        archive = parse_archive(await self.discoverer.discover(query))
        entries = filter_archive(archive, self.policy)
        try:
            packages = distill(entries, contributor=self.agent_id, now=now, vault=self.vault)
        except NoApiEntries as e:
            raise DiscoveryEmpty(
                f"No API traffic found for {query.domain_hint or query.text!r}",
                domain=query.domain_hint,
            ) from e
        hint = (query.domain_hint or "").lower()
        package = next((p for p in packages if not hint or p.domain == hint), None)
        if package is None:
            raise DiscoveryEmpty(f"No API traffic from {hint}", domain=hint)
        published = await self.registry.publish(package)
        self.installed.put(published.record, package)
        return package, published.record, entries

    async def fallback_discover(self, query: IntentQuery, now: float | None = None) -> SkillPackage:
        """
        Capture the site in a browser, distill it, and publish the skill.

        Raises:
            DiscoveryEmpty: The capture held no API traffic
        """
        package, _, _ = await self._discover(query, self.clock() if now is None else now)
        return package

    async def _discovery_path(
        self,
        query: IntentQuery,
        key: str,
        now: float,
        fees: list[FeeReceipt],
        started_ms: float,
    ) -> ExecutionResult:
        _, record, entries = await self._discover(query, now)
        call = select_endpoint(record, query, self.embedder)
        try:
            outcome = await self._call(record, call)
        except ResolutionError as e:
            captured = _captured_response(entries, call.endpoint, record.domain)
            if captured is None:
                raise
            logger.info("serving_captured_response", skill_id=record.id, error=str(e))
            return self._result(
                captured, ResolutionSource.DISCOVERY, fees, record, call, started_ms
            )
        fees.extend(outcome.fees)
        if not outcome.drift.critical:
            self._bind_cache(key, record, call, now)
        return self._result(outcome, ResolutionSource.DISCOVERY, fees, record, call, started_ms)

    async def resolve_intent(self, query: IntentQuery, now: float | None = None) -> ExecutionResult:
        """
        Answer an intent through cache, graph, then discovery.

        The adoption decision runs before the graph path; when the expected
        fees are not below the rediscovery cost the agent goes straight to
        discovery.

        Raises:
            Unresolvable: Every path failed
            PaymentRefused: A 402 challenge was refused
        """
        now = self.clock() if now is None else now
        started_ms = self.timer()
        key = intent_key(query)

        cached = await self._cache_path(query, key, now, started_ms)
        if cached is not None:
            return cached

        failures: list[str] = []
        fees: list[FeeReceipt] = []
        decision = adoption_decision(self.expected_fees, 1, self.cost_model)
        if decision == AdoptionDecision.USE_GRAPH:
            try:
                result = await self._graph_path(query, key, now, fees, started_ms)
                if result is not None:
                    return result
            except PaymentRefused:
                raise
            except RouteGraphError as e:
                failures.append(f"graph: {e}")
                logger.info("graph_path_failed", error=str(e))
        else:
            logger.info("defecting_to_browser", expected_fees=self.expected_fees.model_dump())

        try:
            return await self._discovery_path(query, key, now, fees, started_ms)
        except PaymentRefused:
            raise
        except RouteGraphError as e:
            failures.append(f"discovery: {e}")
            logger.warning("intent_unresolvable", intent=query.text, failures=failures)
            raise Unresolvable(
                f"Could not resolve {query.text!r}", failures=failures
            ) from e
