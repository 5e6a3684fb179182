"""
Shared fixtures for the routegraph test suite.
"""

import json
from pathlib import Path
from typing import Any

import pytest

from routegraph.capture import load_archive
from routegraph.models import (
    CaptureArchive,
    EndpointExample,
    EndpointTemplate,
    FilterPolicy,
    ParamKind,
    PathParam,
    ResponseShape,
    SkillPackage,
)
from routegraph.settings import RouteGraphSettings

FIXTURES = Path(__file__).parent / "fixtures"

NOW = 1_760_000_000.0


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def policy() -> FilterPolicy:
    return FilterPolicy.default()


@pytest.fixture
def shop_archive() -> CaptureArchive:
    return load_archive(FIXTURES / "shop.har")


@pytest.fixture
def news_archive() -> CaptureArchive:
    return load_archive(FIXTURES / "news.har")


def labels(name: str) -> list[str]:
    """Per-entry ``comment`` labels of a fixture, in capture order"""
    doc: dict[str, Any] = json.loads((FIXTURES / name).read_text())
    entries = sorted(
        enumerate(doc["log"]["entries"]), key=lambda item: (item[1]["startedDateTime"], item[0])
    )
    return [entry["comment"] for _, entry in entries]


class FakeClock:
    """Settable unix-seconds clock"""

    def __init__(self, now: float = NOW) -> None:
        self.now = now

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def settings(tmp_path: Path) -> RouteGraphSettings:
    """Settings with every path under a temporary data directory"""
    return RouteGraphSettings(data_dir=tmp_path / "data")


def make_endpoint(
    path: str, fields: tuple[str, ...] = ("id", "name"), **extra: Any
) -> EndpointTemplate:
    """A safe GET endpoint returning an object with string fields"""
    names = [s[1:-1] for s in path.split("/") if s.startswith("{")]
    params = [PathParam(name=n, kind=ParamKind.OPAQUE) for n in names]
    return EndpointTemplate(
        method="GET",
        path_template=path,
        path_params=params,
        response_schema=ResponseShape(
            kind="object", fields={f: ResponseShape(kind="string") for f in fields}
        ),
        safe=True,
        description=f"Fetch {path.strip('/').replace('/', ' ')}; returns {', '.join(fields)}",
        example=EndpointExample(path=path, response={f: "x" for f in fields}),
        **extra,
    )


def make_package(
    domain: str, contributor: str = "alice", paths: tuple[str, ...] = ("/api/items",)
) -> SkillPackage:
    return SkillPackage(
        domain=domain,
        endpoints=[make_endpoint(p) for p in paths],
        contributor=contributor,
        created_at=NOW,
    )
