"""
Tests for the persistent route cache.
"""

from pathlib import Path

from routegraph.models import IntentQuery, RouteCacheEntry
from routegraph.route_cache import RouteCache, intent_key

from .conftest import NOW

DAY = 86400.0


def _entry(key: str, resolved_at: float = NOW) -> RouteCacheEntry:
    return RouteCacheEntry(
        intent_key=key, skill_id="sk_1", endpoint_key="GET /api/items", resolved_at=resolved_at
    )


def test_intent_key_is_canonical() -> None:
    """Test text case, whitespace and param order do not change the key."""
    a = IntentQuery(text="Shoe  Prices", params={"category": "shoes", "page": 2})
    b = IntentQuery(text="shoe prices", params={"page": "2", "category": "shoes"})
    assert intent_key(a) == intent_key(b)

    hinted = IntentQuery(text="shoe prices", domain_hint="shop.sim")
    assert intent_key(hinted) != intent_key(IntentQuery(text="shoe prices"))
    assert intent_key(hinted) == intent_key(IntentQuery(text="shoe prices", domain_hint="SHOP.sim"))


def test_entries_expire_after_a_day() -> None:
    """Test an entry is served up to, but not at, its 24 hour TTL."""
    cache = RouteCache()
    cache.put(_entry("k"))
    assert cache.get("k", NOW + DAY - 0.001) is not None
    assert cache.get("k", NOW + DAY) is None
    assert cache.get("missing", NOW) is None


def test_cache_survives_restart(tmp_path: Path) -> None:
    """Test bindings written to disk are read back."""
    path = tmp_path / "routes.json"
    RouteCache(path).put(_entry("k"))

    reopened = RouteCache(path)
    entry = reopened.get("k", NOW + 60)
    assert entry is not None
    assert entry.endpoint_key == "GET /api/items"


def test_unreadable_file_starts_empty(tmp_path: Path) -> None:
    """Test a corrupt cache file is ignored."""
    path = tmp_path / "routes.json"
    path.write_text("{not json")
    assert len(RouteCache(path)) == 0


def test_prune_remove_and_clear() -> None:
    """Test housekeeping operations."""
    cache = RouteCache()
    cache.put(_entry("old", NOW - 2 * DAY))
    cache.put(_entry("new"))
    assert [e.intent_key for e in cache.get_all()] == ["new", "old"]

    assert cache.prune(NOW) == 1
    assert len(cache) == 1
    assert cache.remove("new")
    assert not cache.remove("new")

    cache.put(_entry("again"))
    cache.clear()
    assert len(cache) == 0
