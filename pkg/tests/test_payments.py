"""
Tests for the 402 payment handshake against the registry app.
"""

import asyncio
from collections.abc import AsyncIterator

import httpx
import pytest
from fastapi import FastAPI
from structlog.testing import capture_logs

from routegraph.client import RegistryClient
from routegraph.errors import BadSignature, Expired, PaymentRefused, UnknownWallet
from routegraph.ledger import Ledger
from routegraph.models import CostModel, LedgerKind, PaymentTerms
from routegraph.payments import (
    MockSettlementAdapter,
    PaymentGate,
    PaymentHandler,
    Wallet,
    decode_proof_header,
    encode_proof_header,
    sign_proof,
)
from routegraph.protocol import Header, RouteProtocol
from routegraph.registry import SkillRegistry, validate_for_publish
from routegraph.server import create_registry_app

from .conftest import NOW, FakeClock, make_package

SEARCH = "/v1/skills/search?q=items"
BASE = "http://registry.test"
COST = CostModel(c_latency=50_000, c_compute=20_000, c_tokens=200_000, c_retry=130_000, p_fail=0.3)


@pytest.fixture
def wallet() -> Wallet:
    return Wallet({"agent-a": "secret-a"})


@pytest.fixture
def ledger() -> Ledger:
    return Ledger()


@pytest.fixture
def gate(ledger: Ledger, wallet: Wallet, clock: FakeClock) -> PaymentGate:
    return PaymentGate(ledger, MockSettlementAdapter(wallet), clock)


@pytest.fixture
def app(gate: PaymentGate, clock: FakeClock) -> FastAPI:
    registry = SkillRegistry(cost_model=COST, install_base=20_000)
    package = make_package("a.example")
    registry.publish(package, validate_for_publish(package), NOW)
    return create_registry_app(registry, gate, search_fee=5_000, clock=clock)


@pytest.fixture
async def client(app: FastAPI) -> AsyncIterator[httpx.AsyncClient]:
    async with httpx.AsyncClient(transport=httpx.ASGITransport(app=app), base_url=BASE) as c:
        yield c


async def _terms(client: httpx.AsyncClient, url: str = SEARCH) -> PaymentTerms:
    response = await client.get(url)
    assert response.status_code == 402
    return PaymentTerms.model_validate(response.json()["payment_terms"])


async def test_search_handshake(
    client: httpx.AsyncClient, wallet: Wallet, ledger: Ledger, gate: PaymentGate
) -> None:
    """Test an unpaid search gets terms and a signed retry settles exactly once."""
    terms = await _terms(client)
    assert terms.amount == 5_000
    assert terms.resource == "GET /v1/skills/search?q=items"
    assert len(terms.nonce) == 32
    assert terms.expires_at - terms.issued_at == 60
    assert gate.pending == 1

    header = encode_proof_header(terms, sign_proof(terms, wallet, "agent-a"))
    with capture_logs() as logs:
        paid = await client.get(SEARCH, headers={Header.PAYMENT_PROOF: header})
    assert paid.status_code == 200
    assert paid.headers[Header.PAYMENT_RECEIPT] == "le_00000001"
    assert paid.json()["results"][0]["domain"] == "a.example"
    settled = [log for log in logs if log["event"] == "payment_settled"]
    assert settled == [
        {
            "event": "payment_settled",
            "log_level": "info",
            "kind": "tier3",
            "payer": "agent-a",
            "amount": 5_000,
            "entry_id": "le_00000001",
        }
    ]

    [entry] = ledger.entries_of(LedgerKind.TIER3)
    assert (entry.payer, entry.payee, entry.amount) == ("agent-a", "platform", 5_000)
    assert gate.pending == 0

    replay = await client.get(SEARCH, headers={Header.PAYMENT_PROOF: header})
    assert replay.status_code == 402
    assert replay.json()["error"] == "Replay"
    assert len(ledger) == 1


async def test_tampered_terms_are_rejected(
    client: httpx.AsyncClient, wallet: Wallet, ledger: Ledger
) -> None:
    """Test lowering the amount after signing breaks the proof."""
    terms = await _terms(client)
    proof = sign_proof(terms, wallet, "agent-a")
    cheaper = terms.model_copy(update={"amount": 1})
    header = encode_proof_header(cheaper, proof)

    response = await client.get(SEARCH, headers={Header.PAYMENT_PROOF: header})
    assert response.status_code == 402
    assert response.json()["error"] == "BadSignature"

    resigned = encode_proof_header(cheaper, sign_proof(cheaper, wallet, "agent-a"))
    response = await client.get(SEARCH, headers={Header.PAYMENT_PROOF: resigned})
    assert response.json()["error"] == "BadSignature"
    assert len(ledger) == 0


async def test_forged_signature_is_rejected(client: httpx.AsyncClient) -> None:
    """Test a proof signed with the wrong secret does not settle."""
    terms = await _terms(client)
    forger = Wallet({"agent-a": "guessed"})
    header = encode_proof_header(terms, sign_proof(terms, forger, "agent-a"))
    response = await client.get(SEARCH, headers={Header.PAYMENT_PROOF: header})
    assert response.json()["error"] == "BadSignature"


async def test_expired_terms(client: httpx.AsyncClient, wallet: Wallet, clock: FakeClock) -> None:
    """Test a proof presented after expiry is refused."""
    terms = await _terms(client)
    header = encode_proof_header(terms, sign_proof(terms, wallet, "agent-a"))
    clock.advance(61)
    response = await client.get(SEARCH, headers={Header.PAYMENT_PROOF: header})
    assert response.status_code == 402
    assert response.json()["error"] == "Expired"


async def test_terms_bound_to_resource(client: httpx.AsyncClient, wallet: Wallet) -> None:
    """Test terms issued for one query cannot pay for another."""
    terms = await _terms(client)
    header = encode_proof_header(terms, sign_proof(terms, wallet, "agent-a"))
    response = await client.get(
        "/v1/skills/search?q=other", headers={Header.PAYMENT_PROOF: header}
    )
    assert response.json()["error"] == "AmountMismatch"


async def test_garbage_header(client: httpx.AsyncClient) -> None:
    """Test an undecodable proof header is a bad signature."""
    response = await client.get(SEARCH, headers={Header.PAYMENT_PROOF: "not base64!"})
    assert response.status_code == 402
    assert response.json()["error"] == "BadSignature"
    with pytest.raises(BadSignature):
        decode_proof_header(RouteProtocol.encode_header({"terms": {}}))


async def test_unknown_payer_cannot_sign(client: httpx.AsyncClient, wallet: Wallet) -> None:
    """Test signing needs a secret for the payer."""
    terms = await _terms(client)
    with pytest.raises(UnknownWallet):
        sign_proof(terms, wallet, "stranger")


async def test_registry_client_pays_search_and_install(
    client: httpx.AsyncClient, wallet: Wallet, ledger: Ledger
) -> None:
    """Test the client answers 402s for a Tier-3 search and a quoted Tier-1 install."""
    registry = RegistryClient(client, PaymentHandler(wallet, "agent-a"), base_url=BASE)
    results, search_receipt = await registry.search("items")
    assert search_receipt is not None
    assert search_receipt.kind == LedgerKind.TIER3
    assert search_receipt.amount == 5_000

    record, install_receipt = await registry.install(results[0].record_id)
    assert record.domain == "a.example"
    assert install_receipt is not None
    assert install_receipt.amount == 15_000
    [charge] = ledger.entries_of(LedgerKind.TIER1)
    assert charge.entry_id == install_receipt.entry_id
    payouts = ledger.entries_of(LedgerKind.PAYOUT)
    assert sum(p.amount for p in payouts) == 15_000
    assert ledger.balances("agent-a") == {"agent-a": -20_000}
    assert await registry.balances("agent-a") == {"agent-a": -20_000}


async def test_handler_refuses_and_surfaces_rejections(client: httpx.AsyncClient) -> None:
    """Test the fee cap and a rejected retry both raise."""
    capped = PaymentHandler(Wallet({"agent-a": "secret-a"}), "agent-a", max_fee=1_000)
    with pytest.raises(PaymentRefused):
        await capped.request(client, "GET", SEARCH, kind=LedgerKind.TIER3)

    wrong_key = PaymentHandler(Wallet({"agent-a": "nope"}), "agent-a")
    with pytest.raises(BadSignature):
        await wrong_key.request(client, "GET", SEARCH, kind=LedgerKind.TIER3)


async def test_free_search_skips_payment(gate: PaymentGate, clock: FakeClock) -> None:
    """Test a zero search fee never challenges."""
    registry = SkillRegistry()
    package = make_package("a.example")
    registry.publish(package, validate_for_publish(package), NOW)
    app = create_registry_app(registry, gate, search_fee=0, clock=clock)
    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(transport=transport, base_url=BASE) as client:
        response = await client.get(SEARCH)
    assert response.status_code == 200
    assert Header.PAYMENT_RECEIPT not in response.headers


async def test_concurrent_retries_settle_once(
    client: httpx.AsyncClient, wallet: Wallet, ledger: Ledger
) -> None:
    """Test many simultaneous retries carrying one proof produce a single charge."""
    terms = await _terms(client)
    header = encode_proof_header(terms, sign_proof(terms, wallet, "agent-a"))

    responses = await asyncio.gather(
        *(client.get(SEARCH, headers={Header.PAYMENT_PROOF: header}) for _ in range(8))
    )

    assert sorted(r.status_code for r in responses) == [200] + [402] * 7
    assert {r.json()["error"] for r in responses if r.status_code == 402} == {"Replay"}
    assert len(ledger.entries_of(LedgerKind.TIER3)) == 1


async def test_handshake_costs_one_extra_round_trip(app: FastAPI, wallet: Wallet) -> None:
    """Test a gated resource takes exactly one more request than a free one."""
    sent: list[str] = []

    async def count(request: httpx.Request) -> None:
        sent.append(request.url.path)

    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(
        transport=transport, base_url=BASE, event_hooks={"request": [count]}
    ) as client:
        handler = PaymentHandler(wallet, "agent-a")
        _, free_receipt = await handler.request(client, "GET", "/health", kind=LedgerKind.TIER3)
        free = len(sent)
        _, paid_receipt = await handler.request(client, "GET", SEARCH, kind=LedgerKind.TIER3)
        paid = len(sent) - free

    assert free_receipt is None
    assert paid_receipt is not None
    assert (free, paid) == (1, 2)


def test_expired_challenges_are_dropped(
    gate: PaymentGate, wallet: Wallet, clock: FakeClock
) -> None:
    """Test unanswered terms and used nonces are forgotten once they expire."""
    for _ in range(3):
        gate.challenge("GET /x", 5_000)
    terms = gate.challenge("GET /x", 5_000)
    proof = sign_proof(terms, wallet, "agent-a")

    def settle() -> None:
        gate.verify_and_settle(
            proof,
            terms,
            resource="GET /x",
            expected_amount=5_000,
            kind=LedgerKind.TIER3,
            payee="platform",
        )

    settle()
    assert gate.pending == 3

    clock.advance(61)
    gate.challenge("GET /x", 5_000)
    assert gate.pending == 1
    # the used nonce is no longer tracked; expiry alone still refuses it
    with pytest.raises(Expired):
        settle()
