"""
Tests for the command-line interface.
"""

import json
from collections.abc import Iterator
from pathlib import Path
from typing import Any

import pytest
import structlog
from typer.testing import CliRunner

from routegraph.cli import app

from .conftest import FIXTURES

runner = CliRunner()


@pytest.fixture(autouse=True)
def _isolated(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> Iterator[None]:
    monkeypatch.setenv("ROUTEGRAPH_CONFIG", str(tmp_path / "absent.json"))
    yield
    # the CLI binds log output to the runner's stderr, which is closed afterwards
    structlog.reset_defaults()


def _run(data_dir: Path, *args: str) -> dict[str, Any]:
    result = runner.invoke(
        app, ["--data-dir", str(data_dir), "--now", "1760000000", "--log-level", "WARNING", *args]
    )
    assert result.exit_code == 0, result.output
    out: dict[str, Any] = json.loads(result.stdout)
    return out


def test_ledger_on_empty_data_dir(tmp_path: Path) -> None:
    """Test a fresh data directory has no balances."""
    assert _run(tmp_path / "data", "ledger") == {"balances": {}}


def test_ingest_reports_filter_verdicts(tmp_path: Path) -> None:
    """Test ingest lists every entry with the filter's verdict."""
    out = _run(tmp_path, "ingest", str(FIXTURES / "shop.har"))
    assert out["entries"] == len(out["verdicts"])
    assert 0 < out["kept"] < out["entries"]
    dropped = [v for v in out["verdicts"] if not v["keep"]]
    assert all(v["reasons"] for v in dropped)


def test_malformed_capture_exit_code(tmp_path: Path) -> None:
    """Test a capture that is not JSON exits with the input error code."""
    bad = tmp_path / "bad.har"
    bad.write_text("not json")
    result = runner.invoke(app, ["--data-dir", str(tmp_path), "ingest", str(bad)])
    assert result.exit_code == 2


def test_distill_publish_search_and_ledger(tmp_path: Path) -> None:
    """Test a capture goes through distill, publish and a paid search end to end."""
    data = tmp_path / "data"
    skill_dir = tmp_path / "skill"

    distilled = _run(data, "distill", str(FIXTURES / "shop.har"), "--out", str(skill_dir))
    [skill] = distilled["skills"]
    assert skill["domain"] == "shop.example"
    assert (skill_dir / "manifest.md").exists()
    assert (skill_dir / "endpoints.json").exists()

    published = _run(data, "publish", str(skill_dir))
    assert published["record"]["domain"] == "shop.example"

    found = _run(data, "search", "list shoe products shop.example")
    assert found["results"][0]["domain"] == "shop.example"
    assert found["fee"]["amount"] == 5_000

    balances = _run(data, "ledger", "--party", "agent-local")
    assert balances == {"balances": {"agent-local": -5_000}}


def test_simulate_csv(tmp_path: Path) -> None:
    """Test a small fleet run renders metric,value rows."""
    config = tmp_path / "fleet.json"
    config.write_text(json.dumps({"n_agents": 1, "n_sites": 1, "steps": 2, "seed": 3}))
    result = runner.invoke(
        app, ["--data-dir", str(tmp_path), "simulate", str(config), "--format", "csv"]
    )
    assert result.exit_code == 0, result.output
    lines = result.stdout.splitlines()
    assert lines[0] == "metric,value"
    assert any(line.startswith("resolutions,") for line in lines)
