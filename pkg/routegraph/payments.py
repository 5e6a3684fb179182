"""
HTTP 402 payment handshake.

Server side, ``PaymentGate`` issues ``PaymentTerms`` in a 402 response and
verifies the proof the client retries with. Client side, ``PaymentHandler``
turns a 402 into exactly one signed retry. Settlement goes through a
``SettlementAdapter``; the bundled ``MockSettlementAdapter`` checks an
HMAC-SHA256 over the terms digest with the payer's wallet secret.
"""

import hashlib
import hmac
import json
import secrets
import threading
from collections.abc import Callable
from pathlib import Path
from typing import Any, Protocol

import httpx
import structlog
from pydantic import ValidationError

from routegraph.errors import (
    AmountMismatch,
    BadSignature,
    Expired,
    PaymentRefused,
    Replay,
    UnknownWallet,
    error_from_payload,
)
from routegraph.ledger import Ledger
from routegraph.models import (
    FeeReceipt,
    FeeSplit,
    LedgerEntry,
    LedgerKind,
    Micros,
    PaymentProof,
    PaymentTerms,
    SkillRecord,
)
from routegraph.protocol import NONCE_BYTES, PAYMENT_EXPIRY_S, Header, RouteProtocol

logger = structlog.get_logger(__name__)


class Wallet:
    """Payer id to signing secret, optionally backed by a JSON file"""

    def __init__(self, keys: dict[str, str] | None = None, path: Path | None = None) -> None:
        self.path = path
        self._keys: dict[str, str] = dict(keys or {})

    @classmethod
    def load(cls, path: Path) -> "Wallet":
        keys: dict[str, str] = {}
        if path.exists():
            keys = json.loads(path.read_text())
        return cls(keys, path)

    def save(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self._keys, sort_keys=True, indent=2))
        self.path.chmod(0o600)

    def create(self, payer: str) -> str:
        """Generate and store a secret for ``payer`` unless one exists"""
        if payer not in self._keys:
            self._keys[payer] = secrets.token_hex(32)
            self.save()
        return self._keys[payer]

    def secret(self, payer: str) -> str | None:
        return self._keys.get(payer)


def _mac(secret: str, digest: str) -> str:
    return hmac.new(secret.encode("utf-8"), digest.encode("ascii"), hashlib.sha256).hexdigest()


def sign_proof(terms: PaymentTerms, wallet: Wallet, payer: str) -> PaymentProof:
    """
    Sign issued terms with the payer's wallet secret.

    Raises:
        UnknownWallet: The wallet has no secret for ``payer``
    """
    secret = wallet.secret(payer)
    if secret is None:
        raise UnknownWallet(f"No wallet secret for {payer}", payer=payer)
    digest = terms.digest()
    return PaymentProof(payer=payer, terms_digest=digest, signature=_mac(secret, digest))


class SettlementAdapter(Protocol):
    """Seam for swapping the mock settlement for a real network"""

    network: str

    def verify(self, proof: PaymentProof, digest: str) -> bool: ...

    def settle(self, proof: PaymentProof, terms: PaymentTerms) -> str: ...


class MockSettlementAdapter:
    """Keyed-MAC settlement against a wallet the server can read"""

    network = "mock"

    def __init__(self, wallet: Wallet) -> None:
        self.wallet = wallet

    def verify(self, proof: PaymentProof, digest: str) -> bool:
        secret = self.wallet.secret(proof.payer)
        if secret is None:
            return False
        return hmac.compare_digest(_mac(secret, digest), proof.signature)

    def settle(self, proof: PaymentProof, terms: PaymentTerms) -> str:
        return f"mock:{proof.terms_digest[:16]}"


def encode_proof_header(terms: PaymentTerms, proof: PaymentProof) -> str:
    return RouteProtocol.encode_header(
        {"terms": terms.model_dump(mode="json"), "proof": proof.model_dump(mode="json")}
    )


def decode_proof_header(value: str) -> tuple[PaymentTerms, PaymentProof]:
    try:
        payload = RouteProtocol.decode_header(value)
        return (
            PaymentTerms.model_validate(payload["terms"]),
            PaymentProof.model_validate(payload["proof"]),
        )
    except (ValueError, KeyError, ValidationError) as e:
        raise BadSignature(f"Undecodable payment proof: {e}") from e


def payment_required_body(terms: PaymentTerms) -> dict[str, Any]:
    return {"payment_terms": terms.model_dump(mode="json")}


class PaymentGate:
    """
    Server-side issuer and verifier of payment terms.

    Nonces are registered at challenge time and consumed atomically on
    settlement, so a proof settles at most once.
    """

    def __init__(
        self,
        ledger: Ledger,
        adapter: SettlementAdapter,
        clock: Callable[[], float],
        expiry_s: float = PAYMENT_EXPIRY_S,
    ) -> None:
        self.ledger = ledger
        self.adapter = adapter
        self.clock = clock
        self.expiry_s = expiry_s
        self._lock = threading.Lock()
        self._pending: dict[str, PaymentTerms] = {}
        self._consumed: dict[str, float] = {}

    def _prune(self, now: float) -> None:
        # a nonce past expiry is refused as Expired without either map
        self._pending = {n: t for n, t in self._pending.items() if t.expires_at >= now}
        self._consumed = {n: exp for n, exp in self._consumed.items() if exp >= now}

    def challenge(self, resource: str, fee: Micros) -> PaymentTerms:
        if fee <= 0:
            raise ValueError("Only positive fees are challenged")
        now = self.clock()
        terms = PaymentTerms(
            amount=fee,
            network=self.adapter.network,
            resource=resource,
            nonce=secrets.token_hex(NONCE_BYTES),
            issued_at=now,
            expires_at=now + self.expiry_s,
        )
        with self._lock:
            self._prune(now)
            self._pending[terms.nonce] = terms
        logger.debug("payment_challenged", resource=resource, amount=fee, nonce=terms.nonce)
        return terms

    def _consume(
        self,
        proof: PaymentProof,
        terms: PaymentTerms,
        resource: str,
        expected_amount: Micros | None,
    ) -> PaymentTerms:
        with self._lock:
            now = self.clock()
            self._prune(now)
            if terms.nonce in self._consumed:
                raise Replay("Payment nonce already used", nonce=terms.nonce)
            issued = self._pending.get(terms.nonce)
            if issued is None:
                if now > terms.expires_at:
                    raise Expired("Payment terms expired", nonce=terms.nonce)
                raise BadSignature("Terms were never issued", nonce=terms.nonce)
            if now > issued.expires_at:
                raise Expired("Payment terms expired", nonce=terms.nonce)
            digest = issued.digest()
            signed = proof.terms_digest == digest and self.adapter.verify(proof, digest)
            if terms.digest() != digest or not signed:
                raise BadSignature("Proof does not match the issued terms", nonce=terms.nonce)
            amount_ok = expected_amount is None or issued.amount == expected_amount
            if not amount_ok or issued.resource != resource:
                raise AmountMismatch(
                    f"Terms for {issued.amount} on {issued.resource}, "
                    f"resource requires {expected_amount}",
                    nonce=terms.nonce,
                )
            self._pending.pop(terms.nonce)
            self._consumed[terms.nonce] = issued.expires_at
            return issued

    def verify_and_settle(
        self,
        proof: PaymentProof,
        terms: PaymentTerms,
        *,
        resource: str,
        expected_amount: Micros | None,
        kind: LedgerKind,
        payee: str,
        record: SkillRecord | None = None,
        split: FeeSplit | None = None,
    ) -> LedgerEntry:
        """
        Check a proof and record the charge.

        ``expected_amount=None`` honours whatever amount was quoted in the
        issued terms (dynamically priced resources).

        Checks run in order: replay, expiry, signature, amount. Tier-1 charges
        for a record are written together with their payouts.

        Raises:
            Replay, Expired, BadSignature, AmountMismatch
        """
        issued = self._consume(proof, terms, resource, expected_amount)
        reference = self.adapter.settle(proof, issued)
        now = self.clock()
        if kind == LedgerKind.TIER1 and record is not None:
            entries = self.ledger.settle_install(
                proof.payer, issued.amount, record, split or FeeSplit(), now, reference
            )
            entry = entries[0]
        else:
            entry = self.ledger.append(kind, proof.payer, payee, issued.amount, reference, now)
        logger.info(
            "payment_settled",
            kind=kind.value,
            payer=proof.payer,
            amount=issued.amount,
            entry_id=entry.entry_id,
        )
        return entry

    @property
    def pending(self) -> int:
        return len(self._pending)


class PaymentHandler:
    """
    Client side of the handshake: one signed retry per 402.

    Refuses terms above ``max_fee`` (when set) or terms whose amount differs
    from what the caller expected to pay.
    """

    def __init__(self, wallet: Wallet, payer: str, max_fee: Micros | None = None) -> None:
        self.wallet = wallet
        self.payer = payer
        self.max_fee = max_fee

    async def request(
        self,
        client: httpx.AsyncClient,
        method: str,
        url: str,
        *,
        kind: LedgerKind,
        headers: dict[str, str] | None = None,
        **kwargs: Any,
    ) -> tuple[httpx.Response, FeeReceipt | None]:
        headers = dict(headers or {})
        response = await client.request(method, url, headers=headers, **kwargs)
        if response.status_code != 402:
            return response, None

        try:
            terms = PaymentTerms.model_validate(response.json()["payment_terms"])
        except (ValueError, KeyError, ValidationError) as e:
            raise PaymentRefused(f"Malformed 402 from {url}: {e}") from e
        if self.max_fee is not None and terms.amount > self.max_fee:
            raise PaymentRefused(
                f"Fee {terms.amount} exceeds limit {self.max_fee}", amount=terms.amount
            )

        proof = sign_proof(terms, self.wallet, self.payer)
        headers[Header.PAYMENT_PROOF] = encode_proof_header(terms, proof)
        retry = await client.request(method, url, headers=headers, **kwargs)
        if retry.status_code == 402:
            try:
                payload = retry.json()
            except ValueError:
                payload = {}
            raise error_from_payload(payload, default=PaymentRefused)
        receipt = FeeReceipt(
            entry_id=retry.headers.get(Header.PAYMENT_RECEIPT, ""), kind=kind, amount=terms.amount
        )
        logger.debug("payment_made", url=url, kind=kind.value, amount=terms.amount)
        return retry, receipt
