"""
Tests for the hashing embedder.
"""

import math

import pytest

from routegraph.embedding import HashingEmbedder, cosine, embed_text, tokenize


def test_tokenize_drops_stopwords_and_plurals() -> None:
    """Test tokens are lowercased, stopword-free and singular."""
    assert tokenize("List the Products in a Category") == ["list", "product", "category"]
    assert tokenize("class glass") == ["class", "glass"]


def test_embedding_is_unit_norm_and_deterministic() -> None:
    """Test two embedders with the same seed agree and produce unit vectors."""
    a = HashingEmbedder().embed("latest news articles")
    b = HashingEmbedder().embed("latest news articles")
    assert a == b
    assert len(a) == 256
    assert math.isclose(math.sqrt(sum(v * v for v in a)), 1.0)


def test_empty_text_still_unit_norm() -> None:
    """Test text with no tokens maps to a fixed unit vector."""
    vector = embed_text("the of and")
    assert vector[0] == 1.0
    assert sum(vector) == 1.0


def test_similarity_orders_related_text() -> None:
    """Test overlapping vocabulary scores above unrelated text."""
    query = embed_text("product price")
    related = embed_text("Fetch api products; returns id, name, price, stock")
    unrelated = embed_text("weather forecast for a city")
    assert cosine(query, related) > cosine(query, unrelated)
    assert cosine(query, query) == pytest.approx(1.0)


def test_cosine_of_zero_vector() -> None:
    """Test cosine with a zero vector is zero rather than NaN."""
    assert cosine([0.0, 0.0], [1.0, 0.0]) == 0.0


def test_dimension_must_be_positive() -> None:
    """Test a zero-dimension embedder is rejected."""
    with pytest.raises(ValueError):
        HashingEmbedder(dimension=0)
