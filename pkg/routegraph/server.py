"""
FastAPI apps for the skill registry and the local agent.

The registry app charges through a ``PaymentGate``: a paid route without a
proof answers 402 with terms, a retry carrying a valid proof is settled on
the ledger before the route runs. Errors render as
``RouteGraphError.to_dict`` with the class's HTTP status.
"""

import asyncio
import contextlib
import time
from collections.abc import AsyncIterator, Callable
from contextlib import asynccontextmanager
from typing import Any

import httpx
import structlog
from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from routegraph import __version__
from routegraph.client import RegistryClient
from routegraph.errors import RouteGraphError, ValidationFailed
from routegraph.ledger import Ledger
from routegraph.models import (
    ExecutionResult,
    FeedbackRequest,
    FeeSplit,
    InstallResponse,
    IntentQuery,
    LedgerEntry,
    LedgerKind,
    Micros,
    PublishResponse,
    ScoringWeights,
    SiteFeeRequest,
    SkillPackage,
    SkillRecord,
)
from routegraph.orchestrator import ArchiveDiscoverer, InstalledSkills, Orchestrator
from routegraph.payments import (
    MockSettlementAdapter,
    PaymentGate,
    PaymentHandler,
    Wallet,
    decode_proof_header,
    payment_required_body,
)
from routegraph.protocol import PLATFORM_PARTY, Header, RegistryPath
from routegraph.registry import SkillRegistry, validate_for_publish
from routegraph.route_cache import RouteCache
from routegraph.settings import RouteGraphSettings
from routegraph.trust import HttpProber, VerificationLoop
from routegraph.vault import CredentialVault

logger = structlog.get_logger(__name__)


def _install_error_handlers(app: FastAPI) -> None:
    @app.exception_handler(RouteGraphError)
    async def _routegraph_error(request: Request, exc: RouteGraphError) -> JSONResponse:
        logger.info("request_failed", path=request.url.path, error=exc.__class__.__name__)
        return JSONResponse(status_code=exc.http_status, content=exc.to_dict())

    @app.exception_handler(RequestValidationError)
    async def _invalid_body(request: Request, exc: RequestValidationError) -> JSONResponse:
        failures = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        error = ValidationFailed(failures)
        return JSONResponse(status_code=error.http_status, content=error.to_dict())


def _add_cors(app: FastAPI) -> None:
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )


def create_registry_app(
    registry: SkillRegistry,
    gate: PaymentGate,
    *,
    search_fee: Micros,
    fee_split: FeeSplit | None = None,
    weights: ScoringWeights | None = None,
    clock: Callable[[], float] = time.time,
    verification_loop: VerificationLoop | None = None,
) -> FastAPI:
    """
    Build the registry HTTP app.

    Args:
        registry: Record store served by the app
        gate: Payment gate shared with the ledger
        search_fee: Tier-3 fee per search; 0 makes search free
        fee_split: Tier-1 revenue split
        weights: Search scoring weights
        clock: Unix-seconds clock
        verification_loop: Started for the app's lifetime when given
    """
    split = fee_split or FeeSplit()

    @asynccontextmanager
    async def lifespan(app: FastAPI) -> AsyncIterator[None]:
        logger.info("registry_starting", records=len(registry))
        stop = asyncio.Event()
        task: asyncio.Task[None] | None = None
        if verification_loop is not None:
            task = asyncio.create_task(verification_loop.run_forever(stop))
        yield
        stop.set()
        if task is not None:
            task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await task
        logger.info("registry_stopped")

    app = FastAPI(
        title="routegraph registry",
        description="Shared registry of distilled site API skills",
        version=__version__,
        lifespan=lifespan,
    )
    _add_cors(app)
    _install_error_handlers(app)

    def charge(
        request: Request,
        fee: Micros,
        *,
        kind: LedgerKind,
        payee: str,
        record: SkillRecord | None = None,
        quoted: bool = False,
    ) -> LedgerEntry | JSONResponse | None:
        """402 terms without a proof, the settled entry with one, None when free"""
        if fee <= 0:
            return None
        resource = f"{request.method} {request.url.path}"
        if request.url.query:
            resource += f"?{request.url.query}"
        header = request.headers.get(Header.PAYMENT_PROOF)
        if header is None:
            terms = gate.challenge(resource, fee)
            return JSONResponse(status_code=402, content=payment_required_body(terms))
        terms, proof = decode_proof_header(header)
        return gate.verify_and_settle(
            proof,
            terms,
            resource=resource,
            expected_amount=None if quoted else fee,
            kind=kind,
            payee=payee,
            record=record,
            split=split,
        )

    def receipt_headers(entry: LedgerEntry | None) -> dict[str, str]:
        return {Header.PAYMENT_RECEIPT: entry.entry_id} if entry is not None else {}

    @app.get("/health")
    async def health() -> dict[str, Any]:
        return {"status": "ok", "records": len(registry), "pending_payments": gate.pending}

    @app.get(RegistryPath.SEARCH)
    async def search(request: Request, q: str, k: int = Query(5, ge=1)) -> JSONResponse:
        now = clock()
        # an empty index is reported before anything is charged
        results = registry.search(q, k=k, weights=weights, now=now)
        paid = charge(request, search_fee, kind=LedgerKind.TIER3, payee=PLATFORM_PARTY)
        if isinstance(paid, JSONResponse):
            return paid
        body = {"results": [r.model_dump(mode="json") for r in results]}
        return JSONResponse(content=body, headers=receipt_headers(paid))

    @app.post(RegistryPath.SKILLS)
    async def publish(package: SkillPackage) -> PublishResponse:
        report = validate_for_publish(package)
        record = registry.publish(package, report, clock())
        return PublishResponse(record=record, report=report)

    @app.get(RegistryPath.SKILL)
    async def get_skill(skill_id: str) -> SkillRecord:
        return registry.get(skill_id)

    @app.get(RegistryPath.INSTALL)
    async def install(request: Request, skill_id: str) -> JSONResponse:
        now = clock()
        record = registry.get(skill_id)
        price = registry.install_price(record, now)
        paid = charge(
            request,
            price,
            kind=LedgerKind.TIER1,
            payee=PLATFORM_PARTY,
            record=record,
            quoted=True,
        )
        if isinstance(paid, JSONResponse):
            return paid
        record = registry.record_install(skill_id, now)
        fee = paid.amount if paid is not None else 0
        body = InstallResponse(record=record, fee=fee).model_dump(mode="json")
        return JSONResponse(content=body, headers=receipt_headers(paid))

    @app.post(RegistryPath.FEEDBACK)
    async def feedback(skill_id: str, body: FeedbackRequest) -> dict[str, Any]:
        record = registry.record_feedback(
            skill_id, body.endpoint_key, body.outcome, clock(), drift_critical=body.drift_critical
        )
        return {"reliability": record.reliability, "lifecycle": record.lifecycle.value}

    @app.post(RegistryPath.SITE_FEE)
    async def site_fee(domain: str, body: SiteFeeRequest) -> SkillRecord:
        return registry.register_site_fee(domain, body.fee, clock())

    @app.get(RegistryPath.BALANCES)
    async def balances(party: str | None = None) -> dict[str, Any]:
        return {"balances": gate.ledger.balances(party)}

    return app


def create_agent_app(orchestrator: Orchestrator) -> FastAPI:
    """Local agent surface: resolve an intent through the three paths"""
    app = FastAPI(
        title="routegraph agent",
        description="Resolve intents through cache, shared graph or discovery",
        version=__version__,
    )
    _add_cors(app)
    _install_error_handlers(app)

    @app.get("/health")
    async def health() -> dict[str, Any]:
        return {
            "status": "ok",
            "agent_id": orchestrator.agent_id,
            "cached_routes": len(orchestrator.cache),
            "spend": orchestrator.spend_by_tier(),
        }

    @app.post(RegistryPath.RESOLVE)
    async def resolve(query: IntentQuery) -> ExecutionResult:
        return await orchestrator.resolve_intent(query)

    return app


# Factories used by ``routegraph serve`` and the CLI

LOCAL_REGISTRY_URL = "http://registry.local"


def load_wallet(settings: RouteGraphSettings) -> Wallet:
    """On-disk wallet, with a key for this agent's payer id"""
    wallet = Wallet.load(settings.path_for("wallet_path"))
    wallet.create(settings.payer_id)
    return wallet


def registry_app_from_settings(
    settings: RouteGraphSettings,
    *,
    wallet: Wallet | None = None,
    clock: Callable[[], float] = time.time,
    verify: bool = True,
) -> FastAPI:
    wallet = wallet or Wallet.load(settings.path_for("wallet_path"))
    registry = SkillRegistry(
        settings.path_for("registry_dir"),
        cost_model=settings.cost_model,
        install_base=settings.install_base,
        verification=settings.verification,
    )
    ledger = Ledger(settings.path_for("ledger_path"))
    gate = PaymentGate(ledger, MockSettlementAdapter(wallet), clock)
    loop = None
    if verify:
        prober = HttpProber(httpx.AsyncClient(timeout=10.0, follow_redirects=True))
        loop = VerificationLoop(registry, prober, settings.verification, clock)
    return create_registry_app(
        registry,
        gate,
        search_fee=settings.search_fee,
        fee_split=settings.fee_split,
        weights=settings.weights,
        clock=clock,
        verification_loop=loop,
    )


def registry_http_client(
    settings: RouteGraphSettings, wallet: Wallet, clock: Callable[[], float] = time.time
) -> tuple[httpx.AsyncClient, str]:
    """
    Client and base URL for the configured registry.

    With ``local_registry`` the registry app runs in-process over the local
    registry directory and ledger.
    """
    if not settings.local_registry:
        return httpx.AsyncClient(timeout=30.0), settings.registry_url
    app = registry_app_from_settings(settings, wallet=wallet, clock=clock, verify=False)
    return httpx.AsyncClient(transport=httpx.ASGITransport(app=app)), LOCAL_REGISTRY_URL


def build_orchestrator(
    settings: RouteGraphSettings,
    wallet: Wallet,
    registry_client: httpx.AsyncClient,
    registry_url: str,
    web_client: httpx.AsyncClient,
    clock: Callable[[], float] = time.time,
) -> Orchestrator:
    """Agent wired to the on-disk vault, cache and install store"""
    payments = PaymentHandler(wallet, settings.payer_id)
    captures = settings.data_dir.expanduser() / "captures"
    return Orchestrator(
        RegistryClient(registry_client, payments, base_url=registry_url),
        web_client,
        CredentialVault(settings.path_for("vault_path")),
        payments,
        cache=RouteCache(settings.path_for("cache_path")),
        installed=InstalledSkills(settings.path_for("install_dir")),
        discoverer=ArchiveDiscoverer(captures),
        agent_id=settings.contributor_id,
        clock=clock,
        cost_model=settings.cost_model,
        expected_fees=settings.expected_fees(),
        acceptance_threshold=settings.acceptance_threshold,
        min_similarity=settings.min_similarity,
    )


def agent_app_from_settings(settings: RouteGraphSettings) -> FastAPI:
    wallet = load_wallet(settings)
    registry_client, registry_url = registry_http_client(settings, wallet)
    web_client = httpx.AsyncClient(timeout=30.0, follow_redirects=True)
    orchestrator = build_orchestrator(settings, wallet, registry_client, registry_url, web_client)
    return create_agent_app(orchestrator)
