"""
Basic tests for routegraph protocol helpers.
"""

import pytest

from routegraph.protocol import API_KEY_HEADER, API_PATH_PATTERN, RouteProtocol


def test_canonical_json() -> None:
    """Test canonical JSON sorts keys and drops whitespace."""
    assert RouteProtocol.canonical_json({"b": 1, "a": [1, 2]}) == b'{"a":[1,2],"b":1}'
    assert RouteProtocol.canonical_json({"name": "café"}) == '{"name":"café"}'.encode()


def test_digest_ignores_key_order() -> None:
    """Test the digest is over canonical JSON."""
    assert RouteProtocol.digest({"a": 1, "b": 2}) == RouteProtocol.digest({"b": 2, "a": 1})
    assert len(RouteProtocol.digest({})) == 64


def test_header_encoding() -> None:
    """Test proof header payloads decode back and garbage is refused."""
    payload = {"terms": {"amount": 5000}, "payer": "agent-a"}
    assert RouteProtocol.decode_header(RouteProtocol.encode_header(payload)) == payload

    with pytest.raises(ValueError):
        RouteProtocol.decode_header("%%%")
    with pytest.raises(ValueError):
        RouteProtocol.decode_header("WzEsMl0=")  # base64 of [1,2]


def test_media_types() -> None:
    """Test static and structured media type classification."""
    assert RouteProtocol.is_static_media_type("image/png")
    assert RouteProtocol.is_static_media_type("text/css; charset=utf-8")
    assert not RouteProtocol.is_static_media_type("application/json")
    assert RouteProtocol.is_structured_media_type("application/vnd.api+json")
    assert RouteProtocol.is_structured_media_type("text/xml")
    assert not RouteProtocol.is_structured_media_type("text/html")


def test_identifiers() -> None:
    """Test skill ids and vault keys are case-insensitive in the domain."""
    assert RouteProtocol.skill_id_for("Shop.Example") == RouteProtocol.skill_id_for("shop.example")
    assert RouteProtocol.skill_id_for("shop.example").startswith("sk_")
    assert len(RouteProtocol.skill_id_for("shop.example")) == 15
    key = RouteProtocol.vault_key_for("News.Example", "bearer", "Authorization")
    assert key == "news.example:bearer:authorization"


def test_patterns() -> None:
    """Test the API path and key header patterns."""
    assert API_PATH_PATTERN.search("/api/products")
    assert API_PATH_PATTERN.search("/v2/items")
    assert API_PATH_PATTERN.search("/data/feed.json")
    assert not API_PATH_PATTERN.search("/product/48213")
    assert API_KEY_HEADER.match("X-Api-Key")
    assert not API_KEY_HEADER.match("Authorization")
