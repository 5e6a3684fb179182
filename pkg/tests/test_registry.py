"""
Tests for the skill registry: publication, search ranking, lifecycle and persistence.
"""

import json
import random
import time
from pathlib import Path

import pytest

from routegraph.embedding import HashingEmbedder, cosine
from routegraph.errors import EmptyIndex, SkillNotFound, ValidationFailed
from routegraph.models import (
    CostModel,
    Lifecycle,
    LifecycleEvent,
    Outcome,
    ScoringWeights,
    SkillRecord,
    VerificationStatus,
)
from routegraph.protocol import RouteProtocol
from routegraph.registry import (
    SkillRegistry,
    lifecycle_transition,
    record_from_package,
    validate_for_publish,
)

from .conftest import NOW, make_endpoint, make_package

DAY = 86400.0
COST = CostModel(c_latency=50_000, c_compute=20_000, c_tokens=200_000, c_retry=130_000, p_fail=0.3)
WORDS = ["product", "price", "news", "article", "weather", "forecast", "flight", "hotel", "stock"]


def _publish(registry: SkillRegistry, domain: str, contributor: str = "alice", **kw) -> SkillRecord:
    package = make_package(domain, contributor, **kw)
    return registry.publish(package, validate_for_publish(package), NOW)


def test_composite_matches_weights_on_random_records(tmp_path: Path) -> None:
    """Test composite = 0.4 sim + 0.3 rel + 0.15 fresh + 0.15 ver on 100 seeded records."""
    rng = random.Random(1234)
    embedder = HashingEmbedder()
    records_dir = tmp_path / "records"
    records_dir.mkdir()
    by_id: dict[str, SkillRecord] = {}
    for i in range(100):
        package = make_package(f"site{i:03d}.example")
        text = " ".join(rng.choice(WORDS) for _ in range(5))
        record = record_from_package(package, embedder.embed(text), NOW).model_copy(
            update={
                "reliability": rng.random(),
                "last_verified_at": NOW - rng.uniform(0.0, 120.0) * DAY,
                "verification_status": rng.choice(list(VerificationStatus)),
            }
        )
        (records_dir / f"{record.id}.json").write_text(record.model_dump_json())
        by_id[record.id] = record

    registry = SkillRegistry(tmp_path, embedder=embedder)
    query = "product price news"
    started = time.perf_counter()
    results = registry.search(query, k=100, now=NOW)
    assert time.perf_counter() - started < 1.0
    assert len(results) == 100

    verification = {"verified": 1.0, "drift-flagged": 0.5, "unverified": 0.0}
    query_vector = embedder.embed(query)
    for result in results:
        record = by_id[result.record_id]
        c = result.components
        assert c.similarity == pytest.approx(
            min(1.0, max(0.0, cosine(query_vector, record.embedding))), abs=1e-12
        )
        assert c.reliability == record.reliability
        days = (NOW - record.last_verified_at) / DAY
        assert c.freshness == pytest.approx(1.0 / (1.0 + days / 30.0), abs=1e-12)
        assert c.verification == verification[record.verification_status.value]
        expected = 0.4 * c.similarity + 0.3 * c.reliability + 0.15 * c.freshness
        expected += 0.15 * c.verification
        assert result.composite == pytest.approx(expected, abs=1e-12)

    composites = [r.composite for r in results]
    assert composites == sorted(composites, reverse=True)


def test_search_respects_k_and_custom_weights() -> None:
    """Test k truncates results and weights change the ranking inputs."""
    registry = SkillRegistry()
    for name in ("a", "b", "c"):
        _publish(registry, f"{name}.example")
    assert len(registry.search("items", k=2, now=NOW)) == 2

    only_similarity = ScoringWeights(w_sim=1.0, w_rel=0.0, w_fresh=0.0, w_ver=0.0)
    [best] = registry.search("items", k=1, weights=only_similarity, now=NOW)
    assert best.composite == pytest.approx(best.components.similarity)
    with pytest.raises(ValueError):
        registry.search("items", k=0)


def test_empty_registry_raises() -> None:
    """Test searching an empty registry raises EmptyIndex."""
    with pytest.raises(EmptyIndex):
        SkillRegistry().search("anything", now=NOW)


def test_publish_creates_record_with_attribution() -> None:
    """Test a first publication creates one unverified record credited to its author."""
    registry = SkillRegistry()
    record = _publish(registry, "Shop.Example")

    assert record.id == RouteProtocol.skill_id_for("shop.example")
    assert record.domain == "shop.example"
    assert record.reliability == 0.5
    assert record.verification_status == VerificationStatus.UNVERIFIED
    assert record.attributions["alice"] > 0
    assert len(record.commits) == 1
    assert registry.events[-1]["event"] == "published"


def test_publish_merges_same_domain() -> None:
    """Test a second contributor's new endpoint merges into the existing record."""
    registry = SkillRegistry()
    first = _publish(registry, "shop.example")
    second = _publish(registry, "shop.example", "bob", paths=("/api/items", "/api/stores"))

    assert len(registry) == 1
    assert second.id == first.id
    assert [e.key for e in second.endpoints] == ["GET /api/items", "GET /api/stores"]
    assert set(second.attributions) == {"alice", "bob"}
    assert second.attributions["bob"] > 0
    assert registry.events[-1]["new_endpoints"] == ["GET /api/stores"]


def test_republish_identical_package_adds_no_commit() -> None:
    """Test republishing the same routes changes nothing but the timestamp."""
    registry = SkillRegistry()
    first = _publish(registry, "shop.example")
    again = _publish(registry, "shop.example", "bob")
    assert again.commits == first.commits
    assert "bob" not in again.attributions
    assert registry.events[-1]["event"] == "republished"


def test_validation_hard_failures() -> None:
    """Test mismatched placeholders fail publication."""
    package = make_package("a.example")
    broken = package.model_copy(
        update={
            "endpoints": [
                make_endpoint("/api/items/{id}").model_copy(update={"path_params": []})
            ]
        }
    )
    with pytest.raises(ValidationFailed) as excinfo:
        validate_for_publish(broken)
    assert "placeholders" in excinfo.value.failures[0]

    report = validate_for_publish(broken, strict=False)
    assert not report.passed
    with pytest.raises(ValidationFailed):
        SkillRegistry().publish(broken, report, NOW)


def test_validation_live_mode() -> None:
    """Test live outcomes set the success rate and caveat unprobed endpoints."""
    package = make_package("a.example", paths=("/api/a", "/api/b"))
    report = validate_for_publish(package, {"GET /api/a": Outcome.SUCCESS})
    assert report.passed
    assert report.live_success_rate == 1.0
    assert report.caveats == ["GET /api/b: unverified endpoint"]

    with pytest.raises(ValidationFailed):
        validate_for_publish(package, {"GET /api/a": Outcome.FAILURE})


def test_lifecycle_transitions() -> None:
    """Test the lifecycle state machine."""
    warn, fail, ok = (
        LifecycleEvent.LOW_RELIABILITY_WARNING,
        LifecycleEvent.CONFIRMED_FAILURE,
        LifecycleEvent.REVERIFIED_OK,
    )
    assert lifecycle_transition(Lifecycle.ACTIVE, warn) == Lifecycle.DEPRECATED
    assert lifecycle_transition(Lifecycle.DEPRECATED, warn) == Lifecycle.DEPRECATED
    assert lifecycle_transition(Lifecycle.ACTIVE, fail) == Lifecycle.DISABLED
    assert lifecycle_transition(Lifecycle.DEPRECATED, ok) == Lifecycle.ACTIVE
    assert lifecycle_transition(Lifecycle.DISABLED, ok) == Lifecycle.ACTIVE
    assert lifecycle_transition(Lifecycle.ACTIVE, ok) == Lifecycle.ACTIVE


def test_feedback_deprecates_and_penalizes() -> None:
    """Test three consecutive failures deprecate a record and halve its rank."""
    registry = SkillRegistry()
    record = _publish(registry, "a.example")
    [before] = registry.search("items", now=NOW)

    for _ in range(3):
        record = registry.record_feedback(record.id, "GET /api/items", Outcome.FAILURE, NOW)
    assert record.lifecycle == Lifecycle.DEPRECATED
    assert record.reliability == pytest.approx(1 / 5)

    [after] = registry.search("items", now=NOW)
    assert after.lifecycle == Lifecycle.DEPRECATED
    components = after.components
    raw = (
        0.4 * components.similarity
        + 0.3 * components.reliability
        + 0.15 * components.freshness
        + 0.15 * components.verification
    )
    assert after.composite == pytest.approx(raw * 0.5)
    assert after.composite < before.composite


def test_feedback_drift_flag() -> None:
    """Test critical drift feedback flags the endpoint."""
    registry = SkillRegistry()
    record = _publish(registry, "a.example")
    record = registry.record_feedback(
        record.id, "GET /api/items", Outcome.SUCCESS, NOW, drift_critical=True
    )
    assert record.drift_flagged == ["GET /api/items"]
    assert record.verification_status == VerificationStatus.DRIFT_FLAGGED
    with pytest.raises(SkillNotFound):
        registry.record_feedback(record.id, "GET /nope", Outcome.SUCCESS, NOW)


def test_disabled_records_leave_search() -> None:
    """Test a confirmed failure hides a record until it is reverified."""
    registry = SkillRegistry()
    a = _publish(registry, "a.example")
    _publish(registry, "b.example")

    registry.apply_event(a.id, LifecycleEvent.CONFIRMED_FAILURE, NOW)
    assert a.id not in {r.record_id for r in registry.search("items", k=10, now=NOW)}

    registry.apply_event(a.id, LifecycleEvent.REVERIFIED_OK, NOW)
    assert a.id in {r.record_id for r in registry.search("items", k=10, now=NOW)}


def test_all_disabled_is_empty_index() -> None:
    """Test a registry holding only disabled records is empty for search."""
    registry = SkillRegistry()
    a = _publish(registry, "a.example")
    registry.apply_event(a.id, LifecycleEvent.CONFIRMED_FAILURE, NOW)
    with pytest.raises(EmptyIndex):
        registry.search("items", now=NOW)


def test_site_fee_opt_in_and_out() -> None:
    """Test site owners opt a record into Tier 2 and back out."""
    registry = SkillRegistry()
    _publish(registry, "a.example")
    record = registry.register_site_fee("a.example", 1_000, NOW)
    assert record.tier2_opt_in and record.tier2_fee == 1_000
    record = registry.register_site_fee("a.example", None, NOW)
    assert not record.tier2_opt_in and record.tier2_fee is None
    with pytest.raises(SkillNotFound):
        registry.register_site_fee("missing.example", 1, NOW)


def test_install_price_grows_with_demand() -> None:
    """Test recent installs raise the quoted price, capped below rediscovery."""
    registry = SkillRegistry(cost_model=COST, install_base=20_000)
    record = _publish(registry, "a.example")
    first = registry.install_price(record, NOW)
    assert first == 15_000

    for _ in range(50):
        record = registry.record_install(record.id, NOW)
    assert registry.demand(record, NOW) == 50
    assert registry.install_price(record, NOW) == 22_500
    assert registry.demand(record, NOW + 2 * DAY) == 0


def test_registry_persists(tmp_path: Path) -> None:
    """Test records and the event log survive a restart."""
    registry = SkillRegistry(tmp_path)
    record = _publish(registry, "a.example")
    registry.record_feedback(record.id, "GET /api/items", Outcome.SUCCESS, NOW)

    reopened = SkillRegistry(tmp_path)
    assert reopened.get(record.id).endpoint_stats["GET /api/items"].successes == 1
    events = [json.loads(line) for line in (tmp_path / "events.jsonl").read_text().splitlines()]
    assert [e["event"] for e in events] == ["published", "feedback"]
    assert [e["event"] for e in reopened.events] == ["published", "feedback"]


def test_get_unknown_record() -> None:
    """Test an unknown id raises SkillNotFound."""
    with pytest.raises(SkillNotFound):
        SkillRegistry().get("sk_missing")
