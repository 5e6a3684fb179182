"""
Trust signals: reliability, freshness, schema drift and the verification loop.
"""

import asyncio
from collections.abc import Awaitable, Callable
from functools import partial
from typing import TYPE_CHECKING, Protocol
from urllib.parse import urlencode

import httpx
import structlog

from routegraph.distill import fill_template, infer_shape, match_path
from routegraph.errors import AuthMissing, NegativeAge, NotStructured
from routegraph.models import (
    DriftReport,
    EndpointTemplate,
    Lifecycle,
    LifecycleEvent,
    Outcome,
    ProbeResult,
    ReliabilityStats,
    ResponseShape,
    SkillRecord,
    VerificationConfig,
    VerificationResult,
    VerificationStatus,
)
from routegraph.protocol import FRESHNESS_HALF_LIFE_DAYS
from routegraph.vault import CredentialVault

if TYPE_CHECKING:
    from routegraph.registry import SkillRegistry

logger = structlog.get_logger(__name__)

SECONDS_PER_DAY = 86400.0


def record_outcome(
    stats: ReliabilityStats, outcome: Outcome, now: float | None = None
) -> ReliabilityStats:
    """Stats after one more execution outcome; reliability is ``stats.reliability``"""
    last = now if now is not None else stats.last_outcome_at
    update: dict[str, object] = {"last_outcome_at": last}
    if outcome == Outcome.SUCCESS:
        update["successes"] = stats.successes + 1
        update["consecutive_failures"] = 0
    elif outcome == Outcome.FAILURE:
        update["failures"] = stats.failures + 1
        update["consecutive_failures"] = stats.consecutive_failures + 1
    else:
        update["timeouts"] = stats.timeouts + 1
        update["consecutive_failures"] = stats.consecutive_failures + 1
    return stats.model_copy(update=update)


def combined_reliability(stats: list[ReliabilityStats]) -> float:
    """Laplace estimate over the summed counts of several endpoints"""
    return ReliabilityStats(
        successes=sum(s.successes for s in stats),
        failures=sum(s.failures for s in stats),
        timeouts=sum(s.timeouts for s in stats),
    ).reliability


def freshness(days_since_update: float) -> float:
    """
    Trust discount for age: ``1 / (1 + d/30)``.

    Raises:
        NegativeAge: d < 0
    """
    if days_since_update < 0:
        raise NegativeAge(f"Negative age: {days_since_update} days")
    return 1.0 / (1.0 + days_since_update / FRESHNESS_HALF_LIFE_DAYS)


def freshness_at(last_verified_at: float, now: float) -> float:
    # clock skew between writer and reader is treated as age zero
    return freshness(max(0.0, now - last_verified_at) / SECONDS_PER_DAY)


def _diff(doc: ResponseShape, live: ResponseShape, path: str, report: DriftReport) -> None:
    if doc.kind == "null":
        return
    if live.kind == "null":
        if not (doc.optional or path.endswith("[]")):
            report.type_changes.append((path or "$", doc.kind, live.kind))
        return
    if doc.kind != live.kind:
        report.type_changes.append((path or "$", doc.kind, live.kind))
        return
    if doc.kind == "object":
        doc_fields, live_fields = doc.fields or {}, live.fields or {}
        for name, child in doc_fields.items():
            child_path = f"{path}.{name}" if path else name
            if name in live_fields:
                _diff(child, live_fields[name], child_path, report)
            elif not child.optional:
                report.removed_fields.append(child_path)
        for name in live_fields:
            if name not in doc_fields:
                report.added_fields.append(f"{path}.{name}" if path else name)
    elif doc.kind == "array" and doc.element is not None and live.element is not None:
        _diff(doc.element, live.element, f"{path}[]", report)


def detect_drift(documented: ResponseShape, live: ResponseShape) -> DriftReport:
    """
    Structural diff of a live response shape against the documented one.

    Removed fields and kind changes are critical; added fields are not.
    Fields the documentation marks optional may be absent.
    """
    report = DriftReport()
    _diff(documented, live, "", report)
    report.removed_fields.sort()
    report.added_fields.sort()
    report.type_changes.sort()
    return report


def live_drift(endpoint: EndpointTemplate, body: object) -> DriftReport:
    """Drift of a parsed live body; a non-JSON body counts as a root kind change"""
    try:
        live = infer_shape(body)
    except NotStructured:
        return DriftReport(type_changes=[("$", endpoint.response_schema.kind, "unstructured")])
    return detect_drift(endpoint.response_schema, live)


# Probing


class Prober(Protocol):
    async def probe(self, record: SkillRecord, endpoint: EndpointTemplate) -> ProbeResult: ...


def example_request(endpoint: EndpointTemplate) -> tuple[str, dict[str, str]]:
    """Path and query for re-issuing the endpoint's recorded example"""
    if endpoint.example is None:
        return endpoint.path_template, {}
    bound = match_path(endpoint.path_template, endpoint.path_params, endpoint.example.path)
    path = fill_template(endpoint.path_template, bound) if bound else endpoint.example.path
    return path, dict(endpoint.example.query)


class HttpProber:
    """
    Issues the recorded example request of a safe endpoint over httpx.

    Only GET is ever sent; callers must not hand it unsafe endpoints.
    """

    def __init__(
        self,
        client: httpx.AsyncClient,
        vault: CredentialVault | None = None,
        scheme: str = "https",
    ) -> None:
        self.client = client
        self.vault = vault
        self.scheme = scheme

    async def probe(self, record: SkillRecord, endpoint: EndpointTemplate) -> ProbeResult:
        if not endpoint.safe:
            raise ValueError(f"Refusing to probe unsafe endpoint {endpoint.key}")
        path, query = example_request(endpoint)
        url = f"{self.scheme}://{record.domain}{path}"
        if query:
            url += "?" + urlencode(query)
        headers: dict[str, str] = {}
        if self.vault is not None:
            try:
                headers = self.vault.auth_headers(endpoint.auth)
            except AuthMissing:
                headers = {}
        try:
            response = await self.client.get(url, headers=headers)
        except httpx.TimeoutException:
            return ProbeResult(outcome=Outcome.TIMEOUT, url=url)
        except httpx.HTTPError as e:
            logger.debug("probe_transport_error", url=url, error=str(e))
            return ProbeResult(outcome=Outcome.FAILURE, url=url)
        if response.status_code >= 400:
            return ProbeResult(outcome=Outcome.FAILURE, status=response.status_code, url=url)
        try:
            body = response.json()
        except ValueError:
            return ProbeResult(outcome=Outcome.FAILURE, status=response.status_code, url=url)
        return ProbeResult(outcome=Outcome.SUCCESS, status=response.status_code, body=body, url=url)


def _endpoint_age(record: SkillRecord, endpoint: EndpointTemplate, now: float) -> float:
    stats = record.endpoint_stats.get(endpoint.key)
    last = stats.last_outcome_at if stats and stats.last_outcome_at is not None else None
    return now - (last if last is not None else record.last_verified_at)


def _apply_probe(
    record: SkillRecord,
    endpoint: EndpointTemplate,
    result: ProbeResult,
    config: VerificationConfig,
    now: float,
    was_flagged: bool,
) -> tuple[SkillRecord, DriftReport | None, LifecycleEvent | None]:
    """
    Fold one probe into ``record``, the registry's current copy.

    ``was_flagged`` is the endpoint's flag when the probe started. A clean
    probe clears only that flag, never one set by feedback during the probe.
    """
    stats = record.endpoint_stats.get(endpoint.key, ReliabilityStats())
    stats = record_outcome(stats, result.outcome, now)
    endpoint_stats = {**record.endpoint_stats, endpoint.key: stats}
    flagged = list(record.drift_flagged)
    drift: DriftReport | None = None
    event: LifecycleEvent | None = None
    last_verified_at = record.last_verified_at

    if result.outcome == Outcome.SUCCESS:
        drift = live_drift(endpoint, result.body)
        if drift.critical:
            if endpoint.key not in flagged:
                flagged.append(endpoint.key)
        else:
            if was_flagged and endpoint.key in flagged:
                flagged.remove(endpoint.key)
            last_verified_at = now
            threshold = config.deprecate_after
            failing = [s for s in endpoint_stats.values() if s.consecutive_failures >= threshold]
            if record.lifecycle != Lifecycle.ACTIVE and not flagged and not failing:
                event = LifecycleEvent.REVERIFIED_OK
    elif was_flagged:
        event = LifecycleEvent.CONFIRMED_FAILURE
    elif stats.consecutive_failures >= config.deprecate_after:
        event = LifecycleEvent.LOW_RELIABILITY_WARNING

    if flagged:
        status = VerificationStatus.DRIFT_FLAGGED
    elif any(s.successes for s in endpoint_stats.values()):
        status = VerificationStatus.VERIFIED
    else:
        status = record.verification_status
    updated = record.model_copy(
        update={
            "endpoint_stats": endpoint_stats,
            "drift_flagged": sorted(flagged),
            "reliability": combined_reliability(list(endpoint_stats.values())),
            "verification_status": status,
            "last_verified_at": last_verified_at,
        }
    )
    return updated, drift, event


async def verification_pass(
    registry: "SkillRegistry", prober: Prober, config: VerificationConfig, now: float
) -> list[VerificationResult]:
    """
    Probe every safe endpoint once, most stale first.

    Each probe updates the endpoint's reliability stats. Critical drift flags
    the endpoint; failures past ``deprecate_after`` emit a low-reliability
    warning; a failed re-probe of a flagged endpoint emits confirmed-failure;
    a clean probe of a deprecated or disabled record emits reverified-ok.
    """
    queue: list[tuple[float, str, EndpointTemplate]] = []
    for record in registry.snapshot().values():
        for endpoint in record.endpoints:
            if endpoint.safe:
                queue.append((_endpoint_age(record, endpoint, now), record.id, endpoint))
    queue.sort(key=lambda item: (-item[0], item[1], item[2].key))
    stale = sum(1 for age, _, _ in queue if age > config.stale_after_s)

    results: list[VerificationResult] = []
    for _, record_id, endpoint in queue:
        record = registry.get(record_id)
        was_flagged = endpoint.key in record.drift_flagged
        probe = await prober.probe(record, endpoint)
        _, drift, event = registry.apply_verification(
            record_id,
            endpoint.key,
            probe.outcome,
            partial(
                _apply_probe,
                endpoint=endpoint,
                result=probe,
                config=config,
                now=now,
                was_flagged=was_flagged,
            ),
            now,
        )
        results.append(
            VerificationResult(
                record_id=record_id,
                endpoint_key=endpoint.key,
                outcome=probe.outcome,
                drift=drift,
                lifecycle_event=event,
            )
        )
    logger.info("verification_pass_done", probed=len(results), stale=stale)
    return results


class VerificationLoop:
    """
    Runs ``verification_pass`` on a cadence.

    Time comes from the injected ``clock`` and waiting goes through the
    injected ``sleeper`` so tests drive the loop without real time.
    """

    def __init__(
        self,
        registry: "SkillRegistry",
        prober: Prober,
        config: VerificationConfig,
        clock: Callable[[], float],
        sleeper: Callable[[float], Awaitable[None]] = asyncio.sleep,
    ) -> None:
        self.registry = registry
        self.prober = prober
        self.config = config
        self.clock = clock
        self.sleeper = sleeper
        self.last_run: float | None = None
        self.passes = 0

    def due(self) -> bool:
        return self.last_run is None or self.clock() - self.last_run >= self.config.cadence_s

    async def tick(self) -> list[VerificationResult] | None:
        """Run a pass if one is due"""
        if not self.due():
            return None
        now = self.clock()
        self.last_run = now
        self.passes += 1
        return await verification_pass(self.registry, self.prober, self.config, now)

    async def run_forever(self, stop: asyncio.Event | None = None) -> None:
        while stop is None or not stop.is_set():
            try:
                await self.tick()
            except Exception:
                logger.exception("verification_pass_failed")
            await self.sleeper(self.config.cadence_s)
