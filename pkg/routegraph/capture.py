"""
HAR capture ingestion and API-traffic filtering.

``parse_archive`` turns HAR 1.2 JSON into a ``CaptureArchive``;
``classify_entry`` / ``filter_archive`` separate first-party API calls from
page assets and third-party noise.
"""

import base64
import binascii
import json
from datetime import datetime, timezone
from fnmatch import fnmatch
from pathlib import Path
from typing import Any
from urllib.parse import urlsplit

import structlog
from pydantic import ValidationError

from routegraph.errors import EmptyArchive, MalformedArchive
from routegraph.models import (
    CaptureArchive,
    CaptureEntry,
    FilterPolicy,
    FilterReason,
    FilterVerdict,
    ParseDiagnostics,
    SkippedEntry,
)
from routegraph.protocol import API_PATH_PATTERN, BODY_CAP_BYTES

logger = structlog.get_logger(__name__)

TRUNCATED_MARKER = "_routegraphTruncated"


def _parse_timestamp(value: Any) -> float:
    if isinstance(value, (int, float)):
        return round(float(value), 3)
    dt = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return round(dt.timestamp(), 3)


def _format_timestamp(ts: float) -> str:
    ms = round(ts * 1000)
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    dt = dt.replace(microsecond=(ms % 1000) * 1000)
    return dt.isoformat(timespec="milliseconds").replace("+00:00", "Z")


def _decode_text(content: dict[str, Any]) -> bytes | None:
    text = content.get("text")
    if text is None:
        return None
    if content.get("encoding") == "base64":
        return base64.b64decode(text, validate=True)
    return str(text).encode("utf-8")


def _encode_text(body: bytes) -> dict[str, str]:
    try:
        return {"text": body.decode("utf-8")}
    except UnicodeDecodeError:
        return {"text": base64.b64encode(body).decode("ascii"), "encoding": "base64"}


def _valid_url(url: str) -> bool:
    try:
        parts = urlsplit(url)
    except ValueError:
        return False
    return parts.scheme in ("http", "https") and bool(parts.hostname)


def _entry_from_har(raw: dict[str, Any], body_cap: int) -> CaptureEntry:
    request = raw.get("request") or {}
    response = raw.get("response") or {}
    content = response.get("content") or {}
    post = request.get("postData")

    headers = {h["name"]: str(h.get("value", "")) for h in request.get("headers") or []}
    body = _decode_text(content)
    truncated = bool(content.get(TRUNCATED_MARKER, False))
    if body is not None and len(body) > body_cap:
        body = body[:body_cap]
        truncated = True

    return CaptureEntry(
        method=request.get("method", ""),
        url=request.get("url", ""),
        request_headers=headers,
        request_body=_decode_text(post) if post else None,
        request_media_type=(post.get("mimeType") or None) if post else None,
        response_status=response.get("status", 0),
        response_media_type=content.get("mimeType", "") or "",
        response_body=body,
        response_truncated=truncated,
        started_at=_parse_timestamp(raw.get("startedDateTime", 0)),
        duration_ms=max(0.0, float(raw.get("time", 0) or 0)),
    )


def parse_archive(
    raw: bytes,
    *,
    source_label: str = "",
    body_cap: int = BODY_CAP_BYTES,
    diagnostics: ParseDiagnostics | None = None,
) -> CaptureArchive:
    """
    Parse HAR 1.2 JSON into a capture archive.

    Entries with unparseable URLs (or otherwise invalid fields) are skipped
    and reported in ``diagnostics`` when one is passed, as are bodies
    truncated at ``body_cap``.

    Raises:
        MalformedArchive: Not JSON, or no ``log.entries`` list
        EmptyArchive: ``log.entries`` is empty
    """
    try:
        doc = json.loads(raw)
        har_entries = doc["log"]["entries"]
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise MalformedArchive(f"Capture is not valid JSON: {e}") from e
    except (KeyError, TypeError) as e:
        raise MalformedArchive("Capture has no log.entries") from e
    if not isinstance(har_entries, list):
        raise MalformedArchive("log.entries is not a list")
    if not har_entries:
        raise EmptyArchive("Capture holds zero entries")

    source_label = source_label or str(doc["log"].get("comment", "") or "")
    diag = diagnostics if diagnostics is not None else ParseDiagnostics()
    parsed: list[tuple[float, int, CaptureEntry]] = []
    for index, item in enumerate(har_entries):
        url = str(((item or {}).get("request") or {}).get("url", ""))
        if not _valid_url(url):
            diag.skipped.append(SkippedEntry(index=index, url=url, reason="unparseable-url"))
            continue
        try:
            entry = _entry_from_har(item, body_cap)
        except (ValidationError, ValueError, KeyError, TypeError, binascii.Error) as e:
            reason = e.errors()[0]["msg"] if isinstance(e, ValidationError) else str(e)
            diag.skipped.append(SkippedEntry(index=index, url=url, reason=reason))
            continue
        if entry.response_truncated:
            diag.truncated.append(index)
        parsed.append((entry.started_at, index, entry))

    parsed.sort(key=lambda item: (item[0], item[1]))
    if diag.skipped:
        logger.warning("capture_entries_skipped", count=len(diag.skipped), label=source_label)
    logger.debug("capture_parsed", entries=len(parsed), label=source_label)
    return CaptureArchive(entries=tuple(e for _, _, e in parsed), source_label=source_label)


def load_archive(
    path: Path, *, body_cap: int = BODY_CAP_BYTES, diagnostics: ParseDiagnostics | None = None
) -> CaptureArchive:
    return parse_archive(
        path.read_bytes(), source_label=path.name, body_cap=body_cap, diagnostics=diagnostics
    )


def serialize_archive(archive: CaptureArchive) -> bytes:
    """Render an archive back to HAR 1.2 JSON"""
    entries: list[dict[str, Any]] = []
    for entry in archive.entries:
        request: dict[str, Any] = {
            "method": entry.method,
            "url": entry.url,
            "httpVersion": "HTTP/1.1",
            "headers": [{"name": k, "value": v} for k, v in entry.request_headers.items()],
            "queryString": [],
            "cookies": [],
            "headersSize": -1,
            "bodySize": len(entry.request_body or b""),
        }
        if entry.request_body is not None:
            request["postData"] = _encode_text(entry.request_body)
            if entry.request_media_type is not None:
                request["postData"]["mimeType"] = entry.request_media_type
        content: dict[str, Any] = {
            "size": len(entry.response_body or b""),
            "mimeType": entry.response_media_type,
        }
        if entry.response_body is not None:
            content.update(_encode_text(entry.response_body))
        if entry.response_truncated:
            content[TRUNCATED_MARKER] = True
        entries.append(
            {
                "startedDateTime": _format_timestamp(entry.started_at),
                "time": entry.duration_ms,
                "request": request,
                "response": {
                    "status": entry.response_status,
                    "statusText": "",
                    "httpVersion": "HTTP/1.1",
                    "headers": [],
                    "cookies": [],
                    "content": content,
                    "redirectURL": "",
                    "headersSize": -1,
                    "bodySize": content["size"],
                },
                "cache": {},
                "timings": {"send": 0, "wait": entry.duration_ms, "receive": 0},
            }
        )
    doc = {
        "log": {
            "version": "1.2",
            "creator": {"name": "routegraph", "version": "1.0.0"},
            "comment": archive.source_label,
            "entries": entries,
        }
    }
    return json.dumps(doc, indent=2, ensure_ascii=False).encode("utf-8")


def write_diagnostics(diagnostics: ParseDiagnostics, path: Path) -> None:
    """Write the diagnostics sidecar as JSON lines"""
    with open(path, "w", encoding="utf-8") as f:
        for skipped in diagnostics.skipped:
            f.write(json.dumps({"kind": "skipped", **skipped.model_dump()}) + "\n")
        for index in diagnostics.truncated:
            f.write(json.dumps({"kind": "truncated", "index": index}) + "\n")


def _has_structured_body(entry: CaptureEntry) -> bool:
    if not entry.response_body or entry.response_truncated:
        return False
    text = entry.response_body.decode("utf-8", errors="replace").lstrip()
    if text.startswith("<?xml"):
        return True
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        return False
    return isinstance(value, (dict, list))


def classify_entry(entry: CaptureEntry, policy: FilterPolicy) -> FilterVerdict:
    """
    Decide whether an entry is first-party API traffic.

    Rules run in a fixed order: noise-domain blocklist, static-asset media
    types, JSON/XML content type, write-method boost, URL pattern, then the
    response-structure probe. The two negative rules short-circuit.
    """
    host = (urlsplit(entry.url).hostname or "").lower()
    if any(fnmatch(host, pattern) for pattern in policy.noise_hosts):
        return FilterVerdict(keep=False, reasons=[FilterReason.NOISE_DOMAIN])

    media = entry.response_media_type.split(";")[0].strip().lower()
    if any(media.startswith(prefix) for prefix in policy.static_media_prefixes):
        return FilterVerdict(keep=False, reasons=[FilterReason.STATIC_ASSET])

    reasons: list[FilterReason] = []
    structured_type = any(marker in media for marker in policy.structured_media_markers)
    if structured_type:
        reasons.append(FilterReason.CONTENT_TYPE)
    if entry.method in policy.write_methods:
        reasons.append(FilterReason.METHOD)
    if API_PATH_PATTERN.search(urlsplit(entry.url).path):
        reasons.append(FilterReason.URL_PATTERN)
    structured_body = _has_structured_body(entry)
    if structured_body:
        reasons.append(FilterReason.RESPONSE_STRUCTURE)

    if structured_type or structured_body:
        return FilterVerdict(keep=True, reasons=reasons)
    return FilterVerdict(keep=False, reasons=[*reasons, FilterReason.NO_API_SIGNAL])


def filter_archive(archive: CaptureArchive, policy: FilterPolicy) -> list[CaptureEntry]:
    """Entries the filter keeps, in capture order"""
    kept = [e for e in archive.entries if classify_entry(e, policy).keep]
    logger.info(
        "capture_filtered", label=archive.source_label, total=len(archive.entries), kept=len(kept)
    )
    return kept
