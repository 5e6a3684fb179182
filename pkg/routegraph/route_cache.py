"""
Route cache binding intents to installed skills.

Entries map an intent key to a (skill id, endpoint key) pair and are served
only within their TTL. The cache is a JSON file so bindings survive a
restart.
"""

import json
import threading
from pathlib import Path

import structlog

from routegraph.models import IntentQuery, RouteCacheEntry, RouteCacheFile
from routegraph.protocol import RouteProtocol

logger = structlog.get_logger(__name__)


def intent_key(query: IntentQuery) -> str:
    """
    Canonical cache key for an intent.

    Digest of the lowercased, whitespace-collapsed text, the params in sorted
    order and the domain hint, so reordering params hits the same entry.
    """
    return RouteProtocol.digest(
        {
            "text": " ".join(query.text.lower().split()),
            "params": {k: str(v) for k, v in sorted(query.params.items())},
            "domain": (query.domain_hint or "").lower(),
        }
    )


class RouteCache:
    """
    Manages a persistent cache of intent-to-route bindings.

    With ``cache_file=None`` the cache lives in memory only.
    """

    def __init__(self, cache_file: Path | str | None = None) -> None:
        self.cache_file = Path(cache_file) if cache_file is not None else None
        self._lock = threading.Lock()
        self.config = self._load()

    def _load(self) -> RouteCacheFile:
        """Load cache from disk."""
        if self.cache_file is None or not self.cache_file.exists():
            return RouteCacheFile()

        try:
            with open(self.cache_file) as f:
                config = RouteCacheFile(**json.load(f))
            logger.info("route_cache_loaded", entries=len(config.entries))
            return config
        except Exception as e:
            logger.error("route_cache_unreadable", path=str(self.cache_file), error=str(e))
            return RouteCacheFile()

    def _save(self) -> None:
        if self.cache_file is None:
            return
        try:
            self.cache_file.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.cache_file.with_suffix(".tmp")
            with open(tmp, "w") as f:
                json.dump(self.config.model_dump(mode="json"), f, indent=2)
            tmp.replace(self.cache_file)
        except OSError as e:
            logger.error("route_cache_save_failed", path=str(self.cache_file), error=str(e))

    def get(self, key: str, now: float) -> RouteCacheEntry | None:
        """
        Get a binding if it is still within its TTL.

        Args:
            key: Intent key from ``intent_key``
            now: Current time, unix seconds

        Returns:
            The entry, or None on a miss or an expired entry
        """
        entry = self.config.entries.get(key)
        if entry is None:
            return None
        if not entry.valid_at(now):
            logger.debug("route_cache_expired", intent_key=key, age_s=now - entry.resolved_at)
            return None
        return entry

    def put(self, entry: RouteCacheEntry) -> None:
        """Store a binding, overwriting any earlier one for the same intent"""
        with self._lock:
            self.config.entries[entry.intent_key] = entry
            self._save()
        logger.debug("route_cache_put", intent_key=entry.intent_key, skill_id=entry.skill_id)

    def get_all(self) -> list[RouteCacheEntry]:
        """All entries, newest first"""
        return sorted(self.config.entries.values(), key=lambda e: e.resolved_at, reverse=True)

    def remove(self, key: str) -> bool:
        with self._lock:
            if key not in self.config.entries:
                return False
            del self.config.entries[key]
            self._save()
        logger.info("route_cache_removed", intent_key=key)
        return True

    def prune(self, now: float) -> int:
        """Drop expired entries; returns how many were dropped"""
        with self._lock:
            expired = [k for k, e in self.config.entries.items() if not e.valid_at(now)]
            for key in expired:
                del self.config.entries[key]
            if expired:
                self._save()
        return len(expired)

    def clear(self) -> None:
        with self._lock:
            count = len(self.config.entries)
            self.config.entries.clear()
            self._save()
        logger.info("route_cache_cleared", removed=count)

    def __len__(self) -> int:
        return len(self.config.entries)
