"""
Pydantic models for data validation and API schemas.
"""

import json
import math
from enum import Enum
from importlib import resources
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from routegraph.protocol import (
    BODY_CAP_BYTES,
    CACHE_TTL_S,
    HTTP_METHODS,
    RELIABILITY_PRIOR,
    STATIC_MEDIA_PREFIXES,
    STRUCTURED_MEDIA_MARKERS,
    WRITE_METHODS,
    RouteProtocol,
)

Micros = int  # money in integer micro-dollars


# Capture


class CaptureEntry(BaseModel):
    """One HAR request/response pair"""

    model_config = ConfigDict(frozen=True)

    method: str = Field(description="HTTP method token")
    url: str = Field(description="Absolute URL")
    request_headers: dict[str, str] = Field(default_factory=dict)
    request_body: bytes | None = None
    request_media_type: str | None = None
    response_status: int = Field(ge=100, le=599)
    response_media_type: str = ""
    response_body: bytes | None = None
    response_truncated: bool = False
    started_at: float = Field(description="Unix timestamp, millisecond precision")
    duration_ms: float = Field(ge=0)

    @field_validator("method")
    @classmethod
    def _method_token(cls, value: str) -> str:
        method = value.upper()
        if method not in HTTP_METHODS:
            raise ValueError(f"Not an HTTP method: {value}")
        return method

    def header(self, name: str) -> str | None:
        """Case-insensitive request header lookup"""
        lowered = name.lower()
        for key, value in self.request_headers.items():
            if key.lower() == lowered:
                return value
        return None


class CaptureArchive(BaseModel):
    """Ordered capture of one browsing session"""

    model_config = ConfigDict(frozen=True)

    entries: tuple[CaptureEntry, ...] = ()
    source_label: str = ""


class SkippedEntry(BaseModel):
    index: int
    url: str
    reason: str


class ParseDiagnostics(BaseModel):
    """Sidecar report for entries that were skipped or truncated"""

    skipped: list[SkippedEntry] = Field(default_factory=list)
    truncated: list[int] = Field(default_factory=list)


class FilterReason(str, Enum):
    """Rule identifiers reported by the traffic filter"""

    NOISE_DOMAIN = "noise-domain"
    STATIC_ASSET = "static-asset"
    CONTENT_TYPE = "content-type"
    METHOD = "method"
    URL_PATTERN = "url-pattern"
    RESPONSE_STRUCTURE = "response-structure"
    NO_API_SIGNAL = "no-api-signal"

    @property
    def negative(self) -> bool:
        return self in NEGATIVE_REASONS


NEGATIVE_REASONS = frozenset(
    {FilterReason.NOISE_DOMAIN, FilterReason.STATIC_ASSET, FilterReason.NO_API_SIGNAL}
)


class FilterVerdict(BaseModel):
    keep: bool
    reasons: list[FilterReason]

    @model_validator(mode="after")
    def _reasons_match_verdict(self) -> "FilterVerdict":
        if self.keep and not any(not r.negative for r in self.reasons):
            raise ValueError("A kept entry needs a positive reason")
        if not self.keep and not any(r.negative for r in self.reasons):
            raise ValueError("A dropped entry needs a negative reason")
        return self


class FilterPolicy(BaseModel):
    """Knobs for the API-traffic filter"""

    model_config = ConfigDict(frozen=True)

    noise_hosts: tuple[str, ...] = Field(
        default=(), description="Host glob patterns treated as noise"
    )
    static_media_prefixes: tuple[str, ...] = STATIC_MEDIA_PREFIXES
    structured_media_markers: tuple[str, ...] = STRUCTURED_MEDIA_MARKERS
    write_methods: frozenset[str] = WRITE_METHODS
    body_cap: int = Field(default=BODY_CAP_BYTES, ge=1, description="Response body cap in bytes")

    @classmethod
    def default(cls) -> "FilterPolicy":
        """Policy with the bundled analytics/ads/CDN blocklist"""
        raw = resources.files("routegraph.data").joinpath("noise_hosts.json").read_text("utf-8")
        return cls(noise_hosts=tuple(json.loads(raw)["hosts"]))

    def with_noise_host(self, pattern: str) -> "FilterPolicy":
        return self.model_copy(update={"noise_hosts": (*self.noise_hosts, pattern)})


# Shapes and routes


ShapeKind = Literal["object", "array", "string", "number", "boolean", "null"]
SCALAR_KINDS: tuple[str, ...] = ("string", "number", "boolean", "null")


class ResponseShape(BaseModel):
    """Recursive structural type of a JSON value"""

    kind: ShapeKind
    fields: dict[str, "ResponseShape"] | None = None
    element: "ResponseShape | None" = None
    optional: bool = False

    @model_validator(mode="after")
    def _consistent(self) -> "ResponseShape":
        if self.kind == "object" and self.fields is None:
            self.fields = {}
        if self.kind == "array" and self.element is None:
            raise ValueError("Array shapes carry one element shape")
        if self.kind != "object" and self.fields is not None:
            raise ValueError("Only objects have fields")
        return self


ResponseShape.model_rebuild()


class ParamKind(str, Enum):
    INTEGER = "integer"
    UUID = "uuid"
    OPAQUE = "opaque"


class AuthKind(str, Enum):
    NONE = "none"
    COOKIE = "cookie"
    BEARER = "bearer"
    API_KEY_HEADER = "api-key-header"


class AuthDescriptor(BaseModel):
    """How an endpoint authenticates; never the credential itself"""

    kind: AuthKind = AuthKind.NONE
    location: str | None = Field(None, description="Header or cookie name")
    value_ref: str | None = Field(None, description="Local vault key")

    @model_validator(mode="after")
    def _none_is_empty(self) -> "AuthDescriptor":
        if self.kind == AuthKind.NONE and (self.location or self.value_ref):
            raise ValueError("kind=none carries no location or vault ref")
        if self.kind != AuthKind.NONE and not self.location:
            raise ValueError(f"kind={self.kind.value} needs a location")
        return self


class PathParam(BaseModel):
    name: str
    kind: ParamKind


class QueryParam(BaseModel):
    kind: Literal["string", "number", "boolean"] = "string"
    required: bool = False


class EndpointExample(BaseModel):
    path: str
    query: dict[str, str] = Field(default_factory=dict)
    response: Any = None


class EndpointTemplate(BaseModel):
    """A normalized callable route"""

    method: str
    path_template: str
    path_params: list[PathParam] = Field(default_factory=list)
    query_schema: dict[str, QueryParam] = Field(default_factory=dict)
    body_schema: ResponseShape | None = None
    response_schema: ResponseShape
    auth: AuthDescriptor = Field(default_factory=AuthDescriptor)
    safe: bool = False
    description: str = ""
    example: EndpointExample | None = None

    @model_validator(mode="after")
    def _route_invariants(self) -> "EndpointTemplate":
        self.method = self.method.upper()
        if self.safe != (self.method == "GET"):
            raise ValueError("safe must be true exactly for GET endpoints")
        names = [p.name for p in self.path_params]
        if len(names) != len(set(names)):
            raise ValueError(f"Duplicate path parameter in {self.path_template}")
        return self

    @property
    def key(self) -> str:
        """Endpoint identity: method plus path template"""
        return f"{self.method} {self.path_template}"


class SkillPackage(BaseModel):
    """Packaged route knowledge for one domain"""

    domain: str
    endpoints: list[EndpointTemplate] = Field(min_length=1)
    manifest_text: str = ""
    auth_local: list[AuthDescriptor] = Field(default_factory=list)
    contributor: str
    created_at: float

    @field_validator("domain")
    @classmethod
    def _lower_domain(cls, value: str) -> str:
        return value.lower()

    def publishable(self) -> dict[str, Any]:
        """Serialization safe to send to the registry: no local auth material"""
        return self.model_dump(mode="json", exclude={"auth_local"})

    def endpoint(self, key: str) -> EndpointTemplate | None:
        return next((e for e in self.endpoints if e.key == key), None)


class ValidationReport(BaseModel):
    passed: bool
    hard_failures: list[str] = Field(default_factory=list)
    caveats: list[str] = Field(default_factory=list)
    live_success_rate: float | None = None
    live_verified: int = 0


# Registry and trust


class Lifecycle(str, Enum):
    ACTIVE = "active"
    DEPRECATED = "deprecated"
    DISABLED = "disabled"


class LifecycleEvent(str, Enum):
    LOW_RELIABILITY_WARNING = "low-reliability-warning"
    CONFIRMED_FAILURE = "confirmed-failure"
    REVERIFIED_OK = "reverified-ok"


class VerificationStatus(str, Enum):
    UNVERIFIED = "unverified"
    VERIFIED = "verified"
    DRIFT_FLAGGED = "drift-flagged"


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    TIMEOUT = "timeout"


class ReliabilityStats(BaseModel):
    successes: int = Field(0, ge=0)
    failures: int = Field(0, ge=0)
    timeouts: int = Field(0, ge=0)
    consecutive_failures: int = Field(0, ge=0)
    last_outcome_at: float | None = None

    @model_validator(mode="after")
    def _streak_bounded(self) -> "ReliabilityStats":
        if self.consecutive_failures > self.failures + self.timeouts:
            raise ValueError("consecutive_failures exceeds failures + timeouts")
        return self

    @property
    def attempts(self) -> int:
        return self.successes + self.failures + self.timeouts

    @property
    def reliability(self) -> float:
        """Laplace-smoothed success rate"""
        return (self.successes + 1) / (self.attempts + 2)


class DeltaCommit(BaseModel):
    contributor: str
    schema_line_delta: int = Field(0, ge=0)
    embedding_dissimilarity: float = Field(0.0, ge=0.0, le=2.0)
    delta_score: float = Field(0.0, ge=0.0)
    committed_at: float = 0.0


class SkillRecord(BaseModel):
    """Registry entry for one domain"""

    id: str
    domain: str
    endpoints: list[EndpointTemplate]
    manifest_text: str
    embedding: list[float]
    reliability: float = Field(RELIABILITY_PRIOR, ge=0.0, le=1.0)
    last_verified_at: float
    verification_status: VerificationStatus = VerificationStatus.UNVERIFIED
    lifecycle: Lifecycle = Lifecycle.ACTIVE
    attributions: dict[str, float] = Field(default_factory=dict)
    commits: list[DeltaCommit] = Field(default_factory=list)
    tier2_opt_in: bool = False
    tier2_fee: Micros | None = Field(None, ge=0)
    endpoint_stats: dict[str, ReliabilityStats] = Field(default_factory=dict)
    drift_flagged: list[str] = Field(default_factory=list)
    install_times: list[float] = Field(default_factory=list)
    created_at: float
    updated_at: float

    @model_validator(mode="after")
    def _record_invariants(self) -> "SkillRecord":
        norm = math.sqrt(sum(v * v for v in self.embedding))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"Embedding must be unit norm, got {norm}")
        if self.tier2_opt_in != (self.tier2_fee is not None):
            raise ValueError("tier2_fee is present exactly when tier2_opt_in")
        return self

    def endpoint(self, key: str) -> EndpointTemplate | None:
        return next((e for e in self.endpoints if e.key == key), None)

    def as_package(self) -> SkillPackage:
        """The record's route knowledge as a package (used for merges and installs)"""
        contributor = self.commits[0].contributor if self.commits else "unknown"
        return SkillPackage(
            domain=self.domain,
            endpoints=self.endpoints,
            manifest_text=self.manifest_text,
            contributor=contributor,
            created_at=self.created_at,
        )


class ScoringWeights(BaseModel):
    w_sim: float = Field(0.40, ge=0.0)
    w_rel: float = Field(0.30, ge=0.0)
    w_fresh: float = Field(0.15, ge=0.0)
    w_ver: float = Field(0.15, ge=0.0)

    @model_validator(mode="after")
    def _sums_to_one(self) -> "ScoringWeights":
        total = self.w_sim + self.w_rel + self.w_fresh + self.w_ver
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"Scoring weights must sum to 1, got {total}")
        return self


class ScoreComponents(BaseModel):
    similarity: float = Field(ge=0.0, le=1.0)
    reliability: float = Field(ge=0.0, le=1.0)
    freshness: float = Field(ge=0.0, le=1.0)
    verification: float = Field(ge=0.0, le=1.0)


class ScoredResult(BaseModel):
    record_id: str
    domain: str = ""
    composite: float = Field(ge=0.0, le=1.0)
    components: ScoreComponents
    lifecycle: Lifecycle = Lifecycle.ACTIVE
    install_price: Micros | None = None


class DriftReport(BaseModel):
    removed_fields: list[str] = Field(default_factory=list)
    type_changes: list[tuple[str, str, str]] = Field(default_factory=list)
    added_fields: list[str] = Field(default_factory=list)

    @property
    def critical(self) -> bool:
        return bool(self.removed_fields or self.type_changes)

    @property
    def empty(self) -> bool:
        return not (self.removed_fields or self.type_changes or self.added_fields)

    def summary(self) -> dict[str, Any]:
        return {
            "critical": self.critical,
            "removed": len(self.removed_fields),
            "type_changes": len(self.type_changes),
            "added": len(self.added_fields),
        }


class VerificationConfig(BaseModel):
    cadence_s: float = Field(6 * 3600.0, gt=0)
    stale_after_s: float = Field(24 * 3600.0, gt=0)
    deprecate_after: int = Field(3, gt=0)


class ProbeResult(BaseModel):
    """What a prober observed when calling one endpoint"""

    outcome: Outcome
    status: int | None = None
    body: Any = None
    method: str = "GET"
    url: str = ""


class VerificationResult(BaseModel):
    record_id: str
    endpoint_key: str
    outcome: Outcome
    drift: DriftReport | None = None
    lifecycle_event: LifecycleEvent | None = None


# Economics


class CostModel(BaseModel):
    """Expected cost of rediscovering a route with a browser"""

    c_latency: Micros = Field(0, ge=0)
    c_compute: Micros = Field(0, ge=0)
    c_tokens: Micros = Field(0, ge=0)
    c_retry: Micros = Field(0, ge=0)
    p_fail: float = Field(0.0, ge=0.0, le=1.0)


class FeeSchedule(BaseModel):
    f_search: Micros = Field(0, ge=0, description="Tier 3 per-query fee")
    f_install: Micros = Field(0, ge=0, description="Tier 1 one-time install fee")
    f_exec: Micros | None = Field(None, ge=0, description="Tier 2 per-execution fee")


class FeeSplit(BaseModel):
    contributors: float = Field(0.70, ge=0.0)
    maintainers: float = Field(0.15, ge=0.0)
    infrastructure: float = Field(0.10, ge=0.0)
    treasury: float = Field(0.05, ge=0.0)

    @model_validator(mode="after")
    def _sums_to_one(self) -> "FeeSplit":
        total = self.contributors + self.maintainers + self.infrastructure + self.treasury
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"Fee split must sum to 1, got {total}")
        return self


class SplitAmounts(BaseModel):
    contributors: Micros
    maintainers: Micros
    infrastructure: Micros
    treasury: Micros

    @property
    def total(self) -> Micros:
        return self.contributors + self.maintainers + self.infrastructure + self.treasury


class AdoptionDecision(str, Enum):
    USE_GRAPH = "use_graph"
    DEFECT_TO_BROWSER = "defect_to_browser"


class LedgerKind(str, Enum):
    TIER1 = "tier1"
    TIER2 = "tier2"
    TIER3 = "tier3"
    PAYOUT = "payout"


class LedgerEntry(BaseModel):
    entry_id: str
    timestamp: float
    kind: LedgerKind
    payer: str
    payee: str
    amount: Micros = Field(gt=0)
    reference: str = ""


# Payments


class PaymentTerms(BaseModel):
    amount: Micros = Field(gt=0)
    currency: str = "USD"
    network: str = "mock"
    resource: str
    nonce: str = Field(min_length=32, max_length=32, description="128-bit hex nonce")
    issued_at: float
    expires_at: float

    @model_validator(mode="after")
    def _expires_after_issue(self) -> "PaymentTerms":
        if self.expires_at <= self.issued_at:
            raise ValueError("expires_at must be after issue time")
        return self

    def digest(self) -> str:
        return RouteProtocol.digest(self.model_dump(mode="json"))


class PaymentProof(BaseModel):
    payer: str
    terms_digest: str
    signature: str


# Orchestration


class IntentQuery(BaseModel):
    text: str = Field(min_length=1)
    domain_hint: str | None = None
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("text")
    @classmethod
    def _non_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("Intent text must not be blank")
        return value


class RouteCacheEntry(BaseModel):
    intent_key: str
    skill_id: str
    endpoint_key: str
    resolved_at: float
    ttl: float = Field(CACHE_TTL_S, gt=0)

    def valid_at(self, now: float) -> bool:
        return now - self.resolved_at < self.ttl


class RouteCacheFile(BaseModel):
    """On-disk layout of the route cache"""

    entries: dict[str, RouteCacheEntry] = Field(default_factory=dict)

    model_config = ConfigDict(extra="allow")


class ResolutionSource(str, Enum):
    CACHE = "cache"
    GRAPH = "graph"
    DISCOVERY = "discovery"


class ExecutionTiming(BaseModel):
    total_ms: float = Field(ge=0)
    source: ResolutionSource


class FeeReceipt(BaseModel):
    entry_id: str
    kind: LedgerKind
    amount: Micros


class ExecutionResult(BaseModel):
    data: Any
    timing: ExecutionTiming
    fees_paid: list[FeeReceipt] = Field(default_factory=list)
    skill_id: str | None = None
    endpoint_key: str | None = None
    drift: DriftReport | None = None


# HTTP request bodies


class FeedbackRequest(BaseModel):
    endpoint_key: str
    outcome: Outcome
    drift_critical: bool = False


class SiteFeeRequest(BaseModel):
    fee: Micros | None = Field(None, ge=0, description="Tier-2 per-call fee; null opts out")


class PublishResponse(BaseModel):
    record: SkillRecord
    report: ValidationReport


class InstallResponse(BaseModel):
    record: SkillRecord
    fee: Micros = 0


# Fleet simulation


class FleetConfig(BaseModel):
    n_agents: int = Field(2, ge=1)
    n_sites: int = Field(2, ge=1)
    steps: int = Field(10, ge=1)
    seed: int = 7
    fees: FeeSchedule = Field(
        default_factory=lambda: FeeSchedule(f_search=5_000, f_install=20_000)
    )
    cost_model: CostModel = Field(
        default_factory=lambda: CostModel(
            c_latency=50_000, c_compute=20_000, c_tokens=200_000, c_retry=130_000, p_fail=0.3
        )
    )
    sites_file: str | None = Field(None, description="Site definitions; bundled sites if unset")


class FleetMetrics(BaseModel):
    resolutions: int = 0
    failures: int = 0
    resolutions_by_source: dict[str, int] = Field(default_factory=dict)
    cache_hit_rate: float = 0.0
    mean_cached_ms: float | None = None
    mean_graph_ms: float | None = None
    mean_discovery_ms: float | None = None
    mean_browser_ms: float | None = None
    total_fees_by_tier: dict[str, Micros] = Field(default_factory=dict)
    payouts_by_contributor: dict[str, Micros] = Field(default_factory=dict)
    records_created: int = 0
    observed_breakeven: int | None = None
    cumulative_spend_by_agent: dict[str, Micros] = Field(default_factory=dict)
