"""
HTTP client for the registry service.

Paid calls go through ``PaymentHandler`` so a 402 turns into one signed
retry; error bodies are mapped back onto the ``RouteGraphError`` they were
rendered from.
"""

from typing import Any

import httpx
import structlog
from pydantic import ValidationError

from routegraph.errors import RouteGraphError, error_from_payload
from routegraph.models import (
    FeeReceipt,
    InstallResponse,
    LedgerKind,
    Micros,
    Outcome,
    PublishResponse,
    ScoredResult,
    SkillPackage,
    SkillRecord,
)
from routegraph.payments import PaymentHandler
from routegraph.protocol import RegistryPath

logger = structlog.get_logger(__name__)


def _raise_for_error(response: httpx.Response) -> None:
    if response.status_code < 400:
        return
    try:
        payload = response.json()
    except ValueError:
        payload = {}
    if not isinstance(payload, dict) or "error" not in payload:
        payload = {"error": "RouteGraphError", "detail": response.text[:200]}
    raise error_from_payload(payload)


def _json(response: httpx.Response) -> Any:
    _raise_for_error(response)
    try:
        return response.json()
    except ValueError as e:
        raise RouteGraphError(f"Registry returned non-JSON: {e}") from e


class RegistryClient:
    """
    Async client for one registry.

    Args:
        client: httpx client; its transport decides where requests go
        payments: Handler that answers 402 challenges
        base_url: Registry root URL
    """

    def __init__(
        self, client: httpx.AsyncClient, payments: PaymentHandler, base_url: str = ""
    ) -> None:
        self.client = client
        self.payments = payments
        self.base_url = base_url.rstrip("/")

    def _url(self, path: str) -> str:
        return f"{self.base_url}{path}"

    async def search(self, query: str, k: int = 5) -> tuple[list[ScoredResult], FeeReceipt | None]:
        """Tier-3 paid search"""
        response, receipt = await self.payments.request(
            self.client,
            "GET",
            self._url(RegistryPath.SEARCH),
            kind=LedgerKind.TIER3,
            params={"q": query, "k": k},
        )
        payload = _json(response)
        try:
            results = [ScoredResult.model_validate(r) for r in payload["results"]]
        except (KeyError, TypeError, ValidationError) as e:
            raise RouteGraphError(f"Malformed search response: {e}") from e
        logger.debug("registry_search", query=query, results=len(results))
        return results, receipt

    async def install(self, record_id: str) -> tuple[SkillRecord, FeeReceipt | None]:
        """Tier-1 paid install"""
        response, receipt = await self.payments.request(
            self.client,
            "GET",
            self._url(RegistryPath.INSTALL.format(skill_id=record_id)),
            kind=LedgerKind.TIER1,
        )
        installed = InstallResponse.model_validate(_json(response))
        logger.info("skill_installed", record_id=record_id, fee=installed.fee)
        return installed.record, receipt

    async def get(self, record_id: str) -> SkillRecord:
        response = await self.client.get(self._url(RegistryPath.SKILL.format(skill_id=record_id)))
        return SkillRecord.model_validate(_json(response))

    async def publish(self, package: SkillPackage) -> PublishResponse:
        response = await self.client.post(
            self._url(RegistryPath.SKILLS), json=package.publishable()
        )
        published = PublishResponse.model_validate(_json(response))
        logger.info(
            "skill_published",
            record_id=published.record.id,
            caveats=len(published.report.caveats),
        )
        return published

    async def feedback(
        self,
        record_id: str,
        endpoint_key: str,
        outcome: Outcome,
        drift_critical: bool = False,
    ) -> None:
        response = await self.client.post(
            self._url(RegistryPath.FEEDBACK.format(skill_id=record_id)),
            json={
                "endpoint_key": endpoint_key,
                "outcome": outcome.value,
                "drift_critical": drift_critical,
            },
        )
        _raise_for_error(response)

    async def register_site_fee(self, domain: str, fee: Micros | None) -> SkillRecord:
        response = await self.client.post(
            self._url(RegistryPath.SITE_FEE.format(domain=domain)), json={"fee": fee}
        )
        return SkillRecord.model_validate(_json(response))

    async def balances(self, party: str | None = None) -> dict[str, Micros]:
        params = {"party": party} if party else None
        response = await self.client.get(self._url(RegistryPath.BALANCES), params=params)
        return {str(k): int(v) for k, v in _json(response)["balances"].items()}
