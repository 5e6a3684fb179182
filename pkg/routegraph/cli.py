"""
Command-line interface for routegraph.

Every command prints JSON on stdout (``--pretty`` renders tables instead)
and exits with the failing error's ``exit_code``.
"""

import asyncio
import json
import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import httpx
import typer
from pydantic import BaseModel
from rich.console import Console
from rich.table import Table

from routegraph import simnet
from routegraph.capture import classify_entry, filter_archive, load_archive, write_diagnostics
from routegraph.client import RegistryClient
from routegraph.distill import distill as distill_entries
from routegraph.distill import read_skill_dir, write_skill_dir
from routegraph.errors import RouteGraphError
from routegraph.ledger import Ledger
from routegraph.logging_config import configure_logging
from routegraph.models import FilterPolicy, FleetConfig, IntentQuery, ParseDiagnostics
from routegraph.payments import PaymentHandler
from routegraph.registry import SkillRegistry, validate_live
from routegraph.server import (
    agent_app_from_settings,
    build_orchestrator,
    load_wallet,
    registry_app_from_settings,
    registry_http_client,
)
from routegraph.settings import RouteGraphSettings, load_settings
from routegraph.trust import HttpProber, VerificationLoop, verification_pass
from routegraph.vault import CredentialVault

app = typer.Typer(help="routegraph - shared API route graph for web agents")
console = Console()
err_console = Console(stderr=True)


@dataclass
class CliState:
    settings: RouteGraphSettings
    pretty: bool = False
    now: float | None = None

    def clock(self) -> float:
        return self.now if self.now is not None else time.time()


def _state(ctx: typer.Context) -> CliState:
    state = ctx.obj
    if not isinstance(state, CliState):
        state = CliState(load_settings())
        ctx.obj = state
    return state


def _jsonable(payload: Any) -> Any:
    if isinstance(payload, BaseModel):
        return payload.model_dump(mode="json")
    if isinstance(payload, list):
        return [_jsonable(p) for p in payload]
    if isinstance(payload, dict):
        return {k: _jsonable(v) for k, v in payload.items()}
    return payload


def _emit(state: CliState, payload: Any, table: Table | None = None) -> None:
    if state.pretty and table is not None:
        console.print(table)
    elif state.pretty:
        console.print_json(data=_jsonable(payload))
    else:
        typer.echo(json.dumps(_jsonable(payload), sort_keys=True, indent=2, ensure_ascii=False))


@contextmanager
def _errors() -> Iterator[None]:
    try:
        yield
    except RouteGraphError as e:
        err_console.print_json(data=e.to_dict())
        raise typer.Exit(e.exit_code) from e


@app.callback()
def main(
    ctx: typer.Context,
    pretty: bool = typer.Option(False, "--pretty", help="Human-readable output"),
    now: float | None = typer.Option(None, "--now", help="Fixed unix time for replayable runs"),
    config: Path | None = typer.Option(None, "--config", help="JSON config file"),
    data_dir: Path | None = typer.Option(None, "--data-dir", help="Wallet, vault and store root"),
    log_level: str | None = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING"),
) -> None:
    """Distill, share and resolve site API routes."""
    settings = load_settings(config, data_dir=data_dir, log_level=log_level)
    configure_logging(settings.log_level, settings.json_logs)
    ctx.obj = CliState(settings=settings, pretty=pretty, now=now)


@app.command()
def ingest(
    ctx: typer.Context,
    har: Path = typer.Argument(..., exists=True, dir_okay=False, help="HAR capture"),
    diagnostics: Path | None = typer.Option(None, "--diagnostics", help="Write skipped entries"),
) -> None:
    """Parse a capture and show which entries the filter keeps."""
    state = _state(ctx)
    with _errors():
        diag = ParseDiagnostics()
        archive = load_archive(har, diagnostics=diag)
        if diagnostics is not None:
            write_diagnostics(diag, diagnostics)
        policy = FilterPolicy.default()
        verdicts = []
        for index, entry in enumerate(archive.entries):
            verdict = classify_entry(entry, policy)
            verdicts.append(
                {
                    "index": index,
                    "method": entry.method,
                    "url": entry.url,
                    "keep": verdict.keep,
                    "reasons": [r.value for r in verdict.reasons],
                }
            )

    table = Table(title=f"{archive.source_label}: {len(archive.entries)} entries")
    table.add_column("#", style="dim")
    table.add_column("Method", style="cyan")
    table.add_column("URL", style="magenta")
    table.add_column("Keep", style="green")
    table.add_column("Reasons")
    for v in verdicts:
        keep = "yes" if v["keep"] else "no"
        table.add_row(str(v["index"]), v["method"], v["url"], keep, ", ".join(v["reasons"]))
    _emit(
        state,
        {
            "source": archive.source_label,
            "entries": len(archive.entries),
            "kept": sum(1 for v in verdicts if v["keep"]),
            "skipped": diag.skipped,
            "truncated": diag.truncated,
            "verdicts": verdicts,
        },
        table,
    )


@app.command()
def distill(
    ctx: typer.Context,
    har: Path = typer.Argument(..., exists=True, dir_okay=False, help="HAR capture"),
    out: Path = typer.Option(..., "--out", "-o", help="Skill directory to write"),
    contributor: str | None = typer.Option(None, "--contributor", help="Contributor id"),
) -> None:
    """Distill a capture into skill directories (one per site)."""
    state = _state(ctx)
    settings = state.settings
    with _errors():
        entries = filter_archive(load_archive(har), FilterPolicy.default())
        vault = CredentialVault(settings.path_for("vault_path"))
        packages = distill_entries(
            entries,
            contributor=contributor or settings.contributor_id,
            now=state.clock(),
            vault=vault,
        )
    skills = []
    for package in packages:
        directory = out if len(packages) == 1 else out / package.domain
        write_skill_dir(package, directory)
        skills.append(
            {
                "domain": package.domain,
                "path": str(directory),
                "endpoints": [e.key for e in package.endpoints],
            }
        )
    _emit(state, {"skills": skills})


@app.command()
def publish(
    ctx: typer.Context,
    skill_dir: Path = typer.Argument(..., exists=True, file_okay=False, help="Skill directory"),
    live: bool = typer.Option(False, "--live", help="Probe safe endpoints before publishing"),
) -> None:
    """Validate and publish a skill directory to the registry."""
    state = _state(ctx)
    settings = state.settings

    async def _publish() -> dict[str, Any]:
        package = read_skill_dir(skill_dir)
        report = None
        if live:
            async with httpx.AsyncClient(timeout=10.0, follow_redirects=True) as probe_client:
                vault = CredentialVault(settings.path_for("vault_path"))
                prober = HttpProber(probe_client, vault)
                report = await validate_live(package, prober, state.clock())
        wallet = load_wallet(settings)
        client, base_url = registry_http_client(settings, wallet, state.clock)
        async with client:
            registry = RegistryClient(client, PaymentHandler(wallet, settings.payer_id), base_url)
            published = await registry.publish(package)
        payload = published.model_dump(mode="json")
        if report is not None:
            payload["live_report"] = report.model_dump(mode="json")
        return payload

    with _errors():
        _emit(state, asyncio.run(_publish()))


@app.command()
def search(
    ctx: typer.Context,
    query: str = typer.Argument(..., help="What the agent wants to do"),
    k: int = typer.Option(5, "-k", min=1, help="Results to return"),
) -> None:
    """Paid search of the registry."""
    state = _state(ctx)
    settings = state.settings

    async def _search() -> dict[str, Any]:
        wallet = load_wallet(settings)
        client, base_url = registry_http_client(settings, wallet, state.clock)
        async with client:
            registry = RegistryClient(client, PaymentHandler(wallet, settings.payer_id), base_url)
            results, receipt = await registry.search(query, k)
        return {"results": results, "fee": receipt}

    with _errors():
        payload = asyncio.run(_search())

    table = Table(title=f"Skills for {query!r}")
    for column in ("Record", "Domain", "Score", "Sim", "Rel", "Fresh", "Ver", "Price"):
        table.add_column(column)
    for r in payload["results"]:
        c = r.components
        table.add_row(
            r.record_id[:12],
            r.domain,
            f"{r.composite:.3f}",
            f"{c.similarity:.2f}",
            f"{c.reliability:.2f}",
            f"{c.freshness:.2f}",
            f"{c.verification:.2f}",
            str(r.install_price),
        )
    _emit(state, payload, table)


def _parse_params(values: list[str]) -> dict[str, Any]:
    params: dict[str, Any] = {}
    for item in values:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise typer.BadParameter(f"Expected name=value, got {item!r}")
        try:
            params[name] = json.loads(value)
        except json.JSONDecodeError:
            params[name] = value
    return params


@app.command()
def resolve(
    ctx: typer.Context,
    intent: str = typer.Argument(..., help="Natural-language intent"),
    domain: str | None = typer.Option(None, "--domain", "-d", help="Target site"),
    param: list[str] = typer.Option([], "--param", "-p", help="Intent parameter name=value"),
) -> None:
    """Resolve an intent via cache, the shared registry or discovery."""
    state = _state(ctx)
    settings = state.settings
    query = IntentQuery(text=intent, domain_hint=domain, params=_parse_params(param))

    async def _resolve() -> Any:
        wallet = load_wallet(settings)
        registry_client, registry_url = registry_http_client(settings, wallet, state.clock)
        async with registry_client, httpx.AsyncClient(
            timeout=30.0, follow_redirects=True
        ) as web_client:
            orchestrator = build_orchestrator(
                settings, wallet, registry_client, registry_url, web_client, state.clock
            )
            return await orchestrator.resolve_intent(query)

    with _errors():
        _emit(state, asyncio.run(_resolve()))


@app.command()
def verify(
    ctx: typer.Context,
    once: bool = typer.Option(False, "--once", help="Run one pass and exit"),
) -> None:
    """Re-probe registry skills and update trust signals."""
    state = _state(ctx)
    settings = state.settings
    registry = SkillRegistry(
        settings.path_for("registry_dir"),
        cost_model=settings.cost_model,
        install_base=settings.install_base,
        verification=settings.verification,
    )

    async def _verify() -> list[Any]:
        async with httpx.AsyncClient(timeout=10.0, follow_redirects=True) as client:
            vault = CredentialVault(settings.path_for("vault_path"))
            prober = HttpProber(client, vault)
            if once:
                return await verification_pass(
                    registry, prober, settings.verification, state.clock()
                )
            loop = VerificationLoop(registry, prober, settings.verification, time.time)
            await loop.run_forever()
            return []

    with _errors():
        results = asyncio.run(_verify())

    table = Table(title="Verification pass")
    for column in ("Record", "Endpoint", "Outcome", "Event"):
        table.add_column(column)
    for r in results:
        event = r.lifecycle_event.value if r.lifecycle_event else ""
        table.add_row(r.record_id[:12], r.endpoint_key, r.outcome.value, event)
    _emit(state, {"results": results}, table)


@app.command()
def ledger(
    ctx: typer.Context,
    party: str | None = typer.Option(None, "--party", help="Only this party's balance"),
) -> None:
    """Show ledger balances per party."""
    state = _state(ctx)
    with _errors():
        balances = Ledger(state.settings.path_for("ledger_path")).balances(party)

    table = Table(title="Balances (micro-dollars)")
    table.add_column("Party", style="cyan")
    table.add_column("Balance", justify="right", style="magenta")
    for name, amount in sorted(balances.items()):
        table.add_row(name, str(amount))
    _emit(state, {"balances": dict(sorted(balances.items()))}, table)


@app.command()
def simulate(
    ctx: typer.Context,
    fleet_config: Path | None = typer.Argument(
        None, exists=True, dir_okay=False, help="Fleet config JSON; bundled default if omitted"
    ),
    output: str = typer.Option("json", "--format", "-f", help="json or csv"),
) -> None:
    """Run a seeded agent fleet over the simulated web."""
    state = _state(ctx)
    if output not in ("json", "csv"):
        raise typer.BadParameter("--format must be json or csv")
    with _errors():
        if fleet_config is None:
            config = FleetConfig()
        else:
            config = FleetConfig.model_validate_json(fleet_config.read_bytes())
            if config.sites_file and not Path(config.sites_file).is_absolute():
                sites_path = fleet_config.parent / config.sites_file
                config = config.model_copy(update={"sites_file": str(sites_path)})
        metrics = simnet.run_fleet(config)

    if output == "csv":
        typer.echo(simnet.metrics_to_csv(metrics), nl=False)
    elif state.pretty:
        table = Table(title="Fleet metrics")
        table.add_column("Metric", style="cyan")
        table.add_column("Value", style="magenta")
        for name, value in metrics.model_dump(mode="json").items():
            table.add_row(name, json.dumps(value, sort_keys=True))
        console.print(table)
    else:
        typer.echo(simnet.metrics_to_json(metrics))


@app.command()
def bench(
    ctx: typer.Context,
    sites_file: Path | None = typer.Argument(
        None, exists=True, dir_okay=False, help="Simulated site definitions"
    ),
) -> None:
    """Cold vs cached resolution against the browser baseline, per site."""
    state = _state(ctx)

    async def _bench() -> list[simnet.BenchRow]:
        async with simnet.SimWorld(simnet.load_sites(sites_file)) as world:
            return await simnet.run_bench(world)

    with _errors():
        rows = asyncio.run(_bench())

    table = Table(title="Latency bench (ms)")
    for column in ("Site", "Browser", "Cold", "Cached", "Speedup", "Breakeven"):
        table.add_column(column)
    for row in rows:
        table.add_row(
            row.host,
            f"{row.baseline_ms:.0f}",
            f"{row.cold_ms:.0f}",
            f"{row.cached_ms:.0f}",
            f"{row.speedup:.1f}x",
            str(row.breakeven),
        )
    _emit(state, {"sites": rows}, table)


@app.command()
def serve(
    ctx: typer.Context,
    role: str = typer.Option("registry", "--role", help="registry or agent"),
    host: str | None = typer.Option(None, "--host"),
    port: int | None = typer.Option(None, "--port"),
) -> None:
    """Serve the registry or the local agent API over HTTP."""
    import uvicorn

    settings = _state(ctx).settings
    if role == "registry":
        application = registry_app_from_settings(settings)
        default_port = settings.port
    elif role == "agent":
        application = agent_app_from_settings(settings)
        default_port = settings.agent_port
    else:
        raise typer.BadParameter("--role must be registry or agent")
    uvicorn.run(
        application,
        host=host or settings.host,
        port=port or default_port,
        log_level=settings.log_level.lower(),
    )


if __name__ == "__main__":
    app()
