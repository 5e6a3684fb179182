"""
Shared skill registry.

One ``SkillRecord`` per domain. Publication runs pre-publish validation and
merges into an existing record; search ranks records by the composite of
similarity, reliability, freshness and verification. Writers build a new
record map and swap it in under a lock, so readers always see one consistent
snapshot.

On disk a registry is a directory of canonical JSON records
(``records/<id>.json``) plus an append-only ``events.jsonl``.
"""

import json
import os
import re
import threading
from collections.abc import Callable, Mapping
from pathlib import Path
from types import MappingProxyType
from typing import Any

import structlog
from pydantic import ValidationError

from routegraph.distill import merge_skills, render_manifest
from routegraph.economics import delta_score, price_install
from routegraph.embedding import Embedder, HashingEmbedder, cosine
from routegraph.errors import EmptyIndex, SkillNotFound, ValidationFailed
from routegraph.models import (
    CostModel,
    DriftReport,
    Lifecycle,
    LifecycleEvent,
    Micros,
    Outcome,
    ReliabilityStats,
    ScoreComponents,
    ScoredResult,
    ScoringWeights,
    SkillPackage,
    SkillRecord,
    ValidationReport,
    VerificationConfig,
    VerificationStatus,
)
from routegraph.protocol import (
    DEMAND_WINDOW_S,
    DEPRECATED_RANK_PENALTY,
    RELIABILITY_PRIOR,
    RouteProtocol,
)
from routegraph.trust import (
    Prober,
    combined_reliability,
    freshness_at,
    record_outcome,
)

logger = structlog.get_logger(__name__)

LIVE_SUCCESS_FLOOR = 0.5
DEFAULT_INSTALL_BASE: Micros = 10_000

ProbeUpdate = Callable[
    [SkillRecord], tuple[SkillRecord, DriftReport | None, LifecycleEvent | None]
]

_PLACEHOLDER = re.compile(r"\{([^{}/]+)\}")

_VERIFICATION_SCORE = {
    VerificationStatus.VERIFIED: 1.0,
    VerificationStatus.DRIFT_FLAGGED: 0.5,
    VerificationStatus.UNVERIFIED: 0.0,
}


def lifecycle_transition(lifecycle: Lifecycle, event: LifecycleEvent) -> Lifecycle:
    """
    Next lifecycle state for an event.

    active + low-reliability-warning -> deprecated; any + confirmed-failure ->
    disabled; deprecated/disabled + reverified-ok -> active. Everything else
    leaves the state alone.
    """
    if event == LifecycleEvent.CONFIRMED_FAILURE:
        return Lifecycle.DISABLED
    if event == LifecycleEvent.LOW_RELIABILITY_WARNING and lifecycle == Lifecycle.ACTIVE:
        return Lifecycle.DEPRECATED
    if event == LifecycleEvent.REVERIFIED_OK and lifecycle != Lifecycle.ACTIVE:
        return Lifecycle.ACTIVE
    return lifecycle


def record_from_package(
    package: SkillPackage, embedding: list[float], now: float
) -> SkillRecord:
    """A fresh, unverified record for a package (before any commit is scored)"""
    return SkillRecord(
        id=RouteProtocol.skill_id_for(package.domain),
        domain=package.domain,
        endpoints=list(package.endpoints),
        manifest_text=package.manifest_text or render_manifest(package),
        embedding=embedding,
        reliability=RELIABILITY_PRIOR,
        last_verified_at=now,
        created_at=now,
        updated_at=now,
    )


# Pre-publish validation


def _hard_failures(package: SkillPackage) -> list[str]:
    failures: list[str] = []
    if not (package.domain or "").strip():
        failures.append("domain is missing")
    if not (package.contributor or "").strip():
        failures.append("contributor is missing")
    endpoints = list(package.endpoints or [])
    if not endpoints:
        failures.append("package has no endpoints")
    seen: set[str] = set()
    for ep in endpoints:
        if ep.key in seen:
            failures.append(f"{ep.key}: duplicate endpoint")
        seen.add(ep.key)
        if not ep.path_template.startswith("/"):
            failures.append(f"{ep.key}: path template must start with '/'")
        placeholders = set(_PLACEHOLDER.findall(ep.path_template))
        declared = {p.name for p in ep.path_params}
        if placeholders != declared:
            failures.append(
                f"{ep.key}: path parameters {sorted(declared)} "
                f"do not match template placeholders {sorted(placeholders)}"
            )
        if not ep.description.strip():
            failures.append(f"{ep.key}: description is empty")
    try:
        SkillPackage.model_validate(package.model_dump(mode="json"))
    except ValidationError as e:
        failures.extend(f"schema: {err['msg']}" for err in e.errors())
    return failures


def validate_for_publish(
    package: SkillPackage,
    live_outcomes: Mapping[str, Outcome] | None = None,
    *,
    strict: bool = True,
) -> ValidationReport:
    """
    Pre-publish checks.

    Hard checks reject the package. Soft checks only add caveats: missing
    response examples always, and safe endpoints left unprobed when
    ``live_outcomes`` (live-check mode) is given. In live-check mode a success
    rate below 0.5 over at least one probed endpoint is a hard failure.

    Raises:
        ValidationFailed: Hard checks failed and ``strict`` is set
    """
    failures = _hard_failures(package)
    caveats: list[str] = []
    for ep in package.endpoints or []:
        if ep.example is None or ep.example.response is None:
            caveats.append(f"{ep.key}: no response example")

    rate: float | None = None
    verified = 0
    if live_outcomes is not None:
        probed = [o for key, o in live_outcomes.items() if package.endpoint(key) is not None]
        verified = sum(1 for o in probed if o == Outcome.SUCCESS)
        if probed:
            rate = verified / len(probed)
            if rate < LIVE_SUCCESS_FLOOR:
                failures.append(
                    f"live success rate {rate:.2f} is below {LIVE_SUCCESS_FLOOR:.2f}"
                )
        for ep in package.endpoints or []:
            if ep.key not in live_outcomes:
                caveats.append(f"{ep.key}: unverified endpoint")

    report = ValidationReport(
        passed=not failures,
        hard_failures=failures,
        caveats=caveats,
        live_success_rate=rate,
        live_verified=verified,
    )
    if failures and strict:
        raise ValidationFailed(failures)
    return report


async def validate_live(
    package: SkillPackage, prober: Prober, now: float = 0.0, *, strict: bool = True
) -> ValidationReport:
    """Live-check mode: probe every safe endpoint once, then validate"""
    record = record_from_package(package, HashingEmbedder().embed(package.domain), now)
    outcomes: dict[str, Outcome] = {}
    for ep in package.endpoints:
        if ep.safe:
            outcomes[ep.key] = (await prober.probe(record, ep)).outcome
    logger.debug("live_validation", domain=package.domain, probed=len(outcomes))
    return validate_for_publish(package, outcomes, strict=strict)


class SkillRegistry:
    """
    In-process registry, optionally persisted under ``root``.

    Args:
        root: Registry directory; ``None`` keeps everything in memory
        embedder: Text embedder for records and queries
        cost_model: Rediscovery cost model used for install price quotes
        install_base: Base Tier-1 fee before reliability/freshness/demand scaling
        verification: Thresholds for feedback-driven lifecycle warnings
    """

    def __init__(
        self,
        root: Path | None = None,
        embedder: Embedder | None = None,
        cost_model: CostModel | None = None,
        install_base: Micros = DEFAULT_INSTALL_BASE,
        verification: VerificationConfig | None = None,
    ) -> None:
        self.root = root
        self.embedder: Embedder = embedder or HashingEmbedder()
        self.cost_model = cost_model or CostModel()
        self.install_base = install_base
        self.verification = verification or VerificationConfig()
        self._lock = threading.RLock()
        self._records: dict[str, SkillRecord] = {}
        self.events: list[dict[str, Any]] = []
        self._load()

    # Persistence

    @property
    def _records_dir(self) -> Path | None:
        return self.root / "records" if self.root is not None else None

    @property
    def _events_path(self) -> Path | None:
        return self.root / "events.jsonl" if self.root is not None else None

    def _load(self) -> None:
        records_dir, events_path = self._records_dir, self._events_path
        if records_dir is None or events_path is None:
            return
        if records_dir.exists():
            for path in sorted(records_dir.glob("*.json")):
                try:
                    record = SkillRecord.model_validate_json(path.read_bytes())
                except ValidationError as e:
                    logger.error("registry_record_invalid", path=str(path), error=str(e))
                    continue
                self._records[record.id] = record
        if events_path.exists():
            for line in events_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    try:
                        self.events.append(json.loads(line))
                    except json.JSONDecodeError:
                        logger.error("registry_event_invalid", path=str(events_path))
        logger.info("registry_loaded", root=str(self.root), records=len(self._records))

    def _persist(self, record: SkillRecord) -> None:
        records_dir = self._records_dir
        if records_dir is None:
            return
        records_dir.mkdir(parents=True, exist_ok=True)
        target = records_dir / f"{record.id}.json"
        tmp = target.with_suffix(".json.tmp")
        tmp.write_bytes(RouteProtocol.canonical_json(record.model_dump(mode="json")))
        os.replace(tmp, target)

    def _event(self, kind: str, record_id: str, now: float, **fields: Any) -> None:
        event = {"timestamp": now, "event": kind, "record_id": record_id, **fields}
        self.events.append(event)
        events_path = self._events_path
        if events_path is None:
            return
        events_path.parent.mkdir(parents=True, exist_ok=True)
        with open(events_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")

    def _store(self, record: SkillRecord) -> None:
        # copy-on-write swap; callers hold the lock
        records = dict(self._records)
        records[record.id] = record
        self._persist(record)
        self._records = records

    # Reads

    def snapshot(self) -> Mapping[str, SkillRecord]:
        return MappingProxyType(self._records)

    def get(self, record_id: str) -> SkillRecord:
        record = self._records.get(record_id)
        if record is None:
            raise SkillNotFound(f"No skill {record_id}", record_id=record_id)
        return record

    def by_domain(self, domain: str) -> SkillRecord | None:
        return self._records.get(RouteProtocol.skill_id_for(domain))

    def __len__(self) -> int:
        return len(self._records)

    # Writes

    def publish(self, package: SkillPackage, report: ValidationReport, now: float) -> SkillRecord:
        """
        Publish a validated package, merging into the domain's record if one exists.

        Raises:
            ValidationFailed: The report did not pass
        """
        if not report.passed:
            raise ValidationFailed(report.hard_failures)
        with self._lock:
            existing = self.by_domain(package.domain)
            if existing is None:
                record = self._create(package, now)
            else:
                record = self._merge(existing, package, now)
            self._store(record)
        return record

    def _create(self, package: SkillPackage, now: float) -> SkillRecord:
        manifest = package.manifest_text or render_manifest(package)
        record = record_from_package(package, self.embedder.embed(manifest), now)
        commit = delta_score(None, record, package.contributor, now=now)
        record = record.model_copy(
            update={
                "attributions": {package.contributor: commit.delta_score},
                "commits": [commit],
            }
        )
        self._event(
            "published",
            record.id,
            now,
            domain=record.domain,
            contributor=package.contributor,
            delta_score=commit.delta_score,
            endpoints=len(record.endpoints),
        )
        logger.info("skill_published", record_id=record.id, domain=record.domain)
        return record

    def _merge(self, existing: SkillRecord, package: SkillPackage, now: float) -> SkillRecord:
        merged, delta = merge_skills(existing.as_package(), package)
        if delta.empty:
            self._event("republished", existing.id, now, contributor=package.contributor)
            return existing.model_copy(update={"updated_at": now})
        after = existing.model_copy(
            update={
                "endpoints": merged.endpoints,
                "manifest_text": merged.manifest_text,
                "embedding": self.embedder.embed(merged.manifest_text),
                "updated_at": now,
            }
        )
        commit = delta_score(existing, after, package.contributor, now=now)
        attributions = dict(existing.attributions)
        attributions[package.contributor] = (
            attributions.get(package.contributor, 0.0) + commit.delta_score
        )
        record = after.model_copy(
            update={"attributions": attributions, "commits": [*existing.commits, commit]}
        )
        self._event(
            "merged",
            record.id,
            now,
            contributor=package.contributor,
            new_endpoints=delta.new_endpoints,
            changed_endpoints=delta.changed_endpoints,
            delta_score=commit.delta_score,
        )
        logger.info(
            "skill_merged",
            record_id=record.id,
            new_endpoints=len(delta.new_endpoints),
            delta_score=commit.delta_score,
        )
        return record

    def apply_event(self, record_id: str, event: LifecycleEvent, now: float) -> SkillRecord:
        with self._lock:
            record = self.get(record_id)
            lifecycle = lifecycle_transition(record.lifecycle, event)
            if lifecycle != record.lifecycle:
                record = record.model_copy(update={"lifecycle": lifecycle, "updated_at": now})
                self._store(record)
                logger.info("lifecycle_changed", record_id=record_id, lifecycle=lifecycle.value)
            self._event("lifecycle", record_id, now, trigger=event.value, lifecycle=lifecycle.value)
        return record

    def apply_verification(
        self,
        record_id: str,
        endpoint_key: str,
        outcome: Outcome,
        update: ProbeUpdate,
        now: float,
    ) -> tuple[SkillRecord, DriftReport | None, LifecycleEvent | None]:
        """
        Fold a finished probe into the current record and apply its lifecycle event.

        ``update`` runs under the registry lock against the record as it is now,
        so feedback and publishes that landed during the probe are kept. Only
        verification-owned fields are taken from its result.
        """
        with self._lock:
            current = self.get(record_id)
            updated, drift, event = update(current)
            record = current.model_copy(
                update={
                    "endpoint_stats": updated.endpoint_stats,
                    "drift_flagged": updated.drift_flagged,
                    "reliability": updated.reliability,
                    "verification_status": updated.verification_status,
                    "last_verified_at": updated.last_verified_at,
                }
            )
            if event is not None:
                record = record.model_copy(
                    update={"lifecycle": lifecycle_transition(record.lifecycle, event)}
                )
            self._store(record)
            self._event(
                "verification",
                record.id,
                now,
                endpoint_key=endpoint_key,
                outcome=outcome.value,
                drift=drift.summary() if drift is not None else None,
                lifecycle_event=event.value if event is not None else None,
                lifecycle=record.lifecycle.value,
            )
        return record, drift, event

    def record_feedback(
        self,
        record_id: str,
        endpoint_key: str,
        outcome: Outcome,
        now: float,
        drift_critical: bool = False,
    ) -> SkillRecord:
        """
        Execution telemetry from an agent.

        Updates the endpoint's reliability; a critical schema mismatch flags
        the endpoint for the next verification pass.
        """
        with self._lock:
            record = self.get(record_id)
            if record.endpoint(endpoint_key) is None:
                raise SkillNotFound(
                    f"No endpoint {endpoint_key} on {record_id}", endpoint_key=endpoint_key
                )
            stats = record.endpoint_stats.get(endpoint_key, ReliabilityStats())
            stats = record_outcome(stats, outcome, now)
            endpoint_stats = {**record.endpoint_stats, endpoint_key: stats}
            flagged = set(record.drift_flagged)
            status = record.verification_status
            if drift_critical:
                flagged.add(endpoint_key)
                status = VerificationStatus.DRIFT_FLAGGED
            lifecycle = record.lifecycle
            if stats.consecutive_failures >= self.verification.deprecate_after:
                lifecycle = lifecycle_transition(
                    lifecycle, LifecycleEvent.LOW_RELIABILITY_WARNING
                )
            record = record.model_copy(
                update={
                    "endpoint_stats": endpoint_stats,
                    "reliability": combined_reliability(list(endpoint_stats.values())),
                    "drift_flagged": sorted(flagged),
                    "verification_status": status,
                    "lifecycle": lifecycle,
                }
            )
            self._store(record)
            self._event(
                "feedback",
                record_id,
                now,
                endpoint_key=endpoint_key,
                outcome=outcome.value,
                drift_critical=drift_critical,
            )
        return record

    def register_site_fee(self, domain: str, fee: Micros | None, now: float) -> SkillRecord:
        """Site-owner Tier-2 opt-in (``fee=None`` opts out)"""
        with self._lock:
            record = self.by_domain(domain)
            if record is None:
                raise SkillNotFound(f"No skill for {domain}", domain=domain)
            if fee is not None and fee < 0:
                raise ValueError("Tier-2 fee must be >= 0")
            record = record.model_copy(
                update={"tier2_opt_in": fee is not None, "tier2_fee": fee, "updated_at": now}
            )
            self._store(record)
            self._event("site_fee", record.id, now, domain=record.domain, fee=fee)
        logger.info("site_fee_registered", domain=record.domain, fee=fee)
        return record

    def record_install(self, record_id: str, now: float) -> SkillRecord:
        with self._lock:
            record = self.get(record_id)
            recent = [t for t in record.install_times if now - t < DEMAND_WINDOW_S]
            record = record.model_copy(update={"install_times": [*recent, now]})
            self._store(record)
        return record

    def demand(self, record: SkillRecord, now: float) -> int:
        """Installs in the trailing demand window"""
        return sum(1 for t in record.install_times if 0 <= now - t < DEMAND_WINDOW_S)

    def install_price(self, record: SkillRecord, now: float) -> Micros:
        return price_install(
            record, self.demand(record, now), self.cost_model, self.install_base, now
        )

    # Search

    def search(
        self,
        query: str,
        k: int = 5,
        weights: ScoringWeights | None = None,
        now: float = 0.0,
    ) -> list[ScoredResult]:
        """
        Top-k records by composite score.

        Disabled records are never returned; deprecated records have their
        composite multiplied by the rank penalty. Ties go to the lower id.

        Raises:
            EmptyIndex: No searchable (non-disabled) records
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        weights = weights or ScoringWeights()
        records = [r for r in self.snapshot().values() if r.lifecycle != Lifecycle.DISABLED]
        if not records:
            raise EmptyIndex("Registry has no searchable skills")

        query_vector = self.embedder.embed(query)
        results: list[ScoredResult] = []
        for record in records:
            components = ScoreComponents(
                similarity=min(1.0, max(0.0, cosine(query_vector, record.embedding))),
                reliability=record.reliability,
                freshness=freshness_at(record.last_verified_at, now),
                verification=_VERIFICATION_SCORE[record.verification_status],
            )
            composite = (
                weights.w_sim * components.similarity
                + weights.w_rel * components.reliability
                + weights.w_fresh * components.freshness
                + weights.w_ver * components.verification
            )
            if record.lifecycle == Lifecycle.DEPRECATED:
                composite *= DEPRECATED_RANK_PENALTY
            results.append(
                ScoredResult(
                    record_id=record.id,
                    domain=record.domain,
                    composite=min(1.0, max(0.0, composite)),
                    components=components,
                    lifecycle=record.lifecycle,
                    install_price=self.install_price(record, now),
                )
            )
        results.sort(key=lambda r: (-r.composite, r.record_id))
        logger.debug("registry_search", query=query, candidates=len(results), k=k)
        return results[:k]
