"""
Wire-level constants for routegraph.

Header names, registry paths, media type tables and the numeric defaults
shared by the registry, the agent and the simulated web, plus a helper
class for the canonical encodings every component must agree on.
"""

import base64
import hashlib
import json
import re
from typing import Any, Final


class Header:
    """HTTP header names used on the wire"""

    PAYMENT_PROOF: Final[str] = "X-Payment-Proof"
    PAYMENT_RECEIPT: Final[str] = "X-Payment-Receipt"
    BROWSER_MARKER: Final[str] = "X-Sim-Browser"
    AUTHORIZATION: Final[str] = "Authorization"
    COOKIE: Final[str] = "Cookie"
    CONTENT_TYPE: Final[str] = "Content-Type"


class RegistryPath:
    """Registry and agent HTTP routes"""

    SEARCH: Final[str] = "/v1/skills/search"
    SKILLS: Final[str] = "/v1/skills"
    SKILL: Final[str] = "/v1/skills/{skill_id}"
    INSTALL: Final[str] = "/v1/skills/{skill_id}/install"
    FEEDBACK: Final[str] = "/v1/skills/{skill_id}/feedback"
    SITE_FEE: Final[str] = "/v1/sites/{domain}/fee"
    BALANCES: Final[str] = "/v1/ledger/balances"
    RESOLVE: Final[str] = "/v1/intent/resolve"


HTTP_METHODS: Final[frozenset[str]] = frozenset(
    {"GET", "HEAD", "POST", "PUT", "PATCH", "DELETE", "OPTIONS", "CONNECT", "TRACE"}
)
WRITE_METHODS: Final[frozenset[str]] = frozenset({"POST", "PUT", "PATCH"})

STATIC_MEDIA_PREFIXES: Final[tuple[str, ...]] = (
    "image/",
    "font/",
    "audio/",
    "video/",
    "text/css",
    "text/javascript",
    "application/javascript",
    "application/x-javascript",
    "application/font-woff",
    "application/wasm",
)
STRUCTURED_MEDIA_MARKERS: Final[tuple[str, ...]] = ("json", "xml")

# Path shapes that point at programmatic interfaces
API_PATH_PATTERN: Final[re.Pattern[str]] = re.compile(
    r"(/api/|/graphql|/v\d+/|\.json$)", re.IGNORECASE
)
UUID_SEGMENT: Final[re.Pattern[str]] = re.compile(
    r"^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$"
)
INTEGER_SEGMENT: Final[re.Pattern[str]] = re.compile(r"^\d+$")
API_KEY_HEADER: Final[re.Pattern[str]] = re.compile(r"^x-[a-z0-9-]*key$", re.IGNORECASE)
SESSION_COOKIE: Final[re.Pattern[str]] = re.compile(
    r"(sess|sid|auth|token|jwt|login)", re.IGNORECASE
)

# Defaults
BODY_CAP_BYTES: Final[int] = 1024 * 1024
EMBEDDING_DIM: Final[int] = 256
EMBEDDING_SEED: Final[str] = "routegraph-embed-v1"
RELIABILITY_PRIOR: Final[float] = 0.5
DEPRECATED_RANK_PENALTY: Final[float] = 0.5
FRESHNESS_HALF_LIFE_DAYS: Final[float] = 30.0
CACHE_TTL_S: Final[float] = 24 * 3600.0
PAYMENT_EXPIRY_S: Final[float] = 60.0
NONCE_BYTES: Final[int] = 16
ACCEPTANCE_THRESHOLD: Final[float] = 0.35
MIN_SIMILARITY: Final[float] = 0.1
MAINTAINER_WINDOW_S: Final[float] = 90 * 86400.0
DEMAND_WINDOW_S: Final[float] = 24 * 3600.0
EXAMPLE_BODY_CAP: Final[int] = 2048

PLATFORM_PARTY: Final[str] = "platform"
INFRASTRUCTURE_PARTY: Final[str] = "infrastructure"
TREASURY_PARTY: Final[str] = "treasury"
REGISTRY_PARTY: Final[str] = "registry"


class RouteProtocol:
    """
    Helper class for the canonical encodings shared across components.
    """

    @staticmethod
    def canonical_json(value: Any) -> bytes:
        """Sorted-key, whitespace-free UTF-8 JSON"""
        return json.dumps(
            value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
        ).encode("utf-8")

    @staticmethod
    def digest(value: Any) -> str:
        """sha256 hex digest over the canonical JSON of value"""
        return hashlib.sha256(RouteProtocol.canonical_json(value)).hexdigest()

    @staticmethod
    def encode_header(payload: dict[str, Any]) -> str:
        """base64 of canonical JSON, as carried in X-Payment-Proof"""
        return base64.b64encode(RouteProtocol.canonical_json(payload)).decode("ascii")

    @staticmethod
    def decode_header(value: str) -> dict[str, Any]:
        """Inverse of encode_header; raises ValueError on garbage"""
        try:
            decoded = json.loads(base64.b64decode(value.encode("ascii"), validate=True))
        except (ValueError, UnicodeError) as e:
            raise ValueError(f"Undecodable header payload: {e}") from e
        if not isinstance(decoded, dict):
            raise ValueError("Header payload is not a JSON object")
        return decoded

    @staticmethod
    def is_static_media_type(media_type: str) -> bool:
        """True for images, fonts, stylesheets, scripts and other page assets"""
        media = media_type.split(";")[0].strip().lower()
        return any(media.startswith(prefix) for prefix in STATIC_MEDIA_PREFIXES)

    @staticmethod
    def is_structured_media_type(media_type: str) -> bool:
        """True for JSON and XML media types (including +json / +xml suffixes)"""
        media = media_type.split(";")[0].strip().lower()
        return any(marker in media for marker in STRUCTURED_MEDIA_MARKERS)

    @staticmethod
    def skill_id_for(domain: str) -> str:
        """Registry record id for a domain (one record per domain)"""
        return "sk_" + hashlib.sha256(domain.lower().encode("utf-8")).hexdigest()[:12]

    @staticmethod
    def vault_key_for(domain: str, kind: str, location: str) -> str:
        """Vault key a credential of the given kind and location is stored under"""
        return f"{domain.lower()}:{kind}:{location.lower()}"
