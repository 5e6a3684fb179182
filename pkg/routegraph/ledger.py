"""
Append-only ledger of fee charges and payouts.

One ``LedgerEntry`` per JSON line, fsync'd per append. A Tier-1 charge and
its payouts are written in a single append so the log never holds a charge
without its payouts.
"""

import os
import threading
from collections import defaultdict
from pathlib import Path

import structlog
from pydantic import ValidationError

from routegraph.economics import distribute_contributor_share, split_fee
from routegraph.errors import NoAttributions
from routegraph.models import FeeSplit, LedgerEntry, LedgerKind, Micros, SkillRecord
from routegraph.protocol import (
    INFRASTRUCTURE_PARTY,
    MAINTAINER_WINDOW_S,
    REGISTRY_PARTY,
    TREASURY_PARTY,
)

logger = structlog.get_logger(__name__)

Charge = tuple[LedgerKind, str, str, Micros, str]  # kind, payer, payee, amount, reference


class Ledger:
    """
    Serialized appender over an optional JSON-lines file.

    With ``path=None`` entries are kept in memory only.
    """

    def __init__(self, path: Path | None = None) -> None:
        self.path = path
        self._lock = threading.Lock()
        self._entries: list[LedgerEntry] = []
        self._load()

    def _load(self) -> None:
        if self.path is None or not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    self._entries.append(LedgerEntry.model_validate_json(line))
                except ValidationError as e:
                    # a torn final write is the only expected cause
                    logger.error(
                        "ledger_line_invalid", path=str(self.path), line=lineno, error=str(e)
                    )
        logger.debug("ledger_loaded", path=str(self.path), entries=len(self._entries))

    def _write(self, entries: list[LedgerEntry]) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        payload = "".join(e.model_dump_json() + "\n" for e in entries)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())

    def append_many(self, charges: list[Charge], timestamp: float) -> list[LedgerEntry]:
        """Append several entries atomically: all are written or none"""
        positive = [c for c in charges if c[3] > 0]
        with self._lock:
            start = len(self._entries)
            entries = [
                LedgerEntry(
                    entry_id=f"le_{start + i + 1:08d}",
                    timestamp=timestamp,
                    kind=kind,
                    payer=payer,
                    payee=payee,
                    amount=amount,
                    reference=reference,
                )
                for i, (kind, payer, payee, amount, reference) in enumerate(positive)
            ]
            self._write(entries)
            self._entries.extend(entries)
        return entries

    def append(
        self,
        kind: LedgerKind,
        payer: str,
        payee: str,
        amount: Micros,
        reference: str,
        timestamp: float,
    ) -> LedgerEntry:
        if amount <= 0:
            raise ValueError("Ledger amounts must be positive")
        entry = self.append_many([(kind, payer, payee, amount, reference)], timestamp)[0]
        logger.info("ledger_append", entry_id=entry.entry_id, kind=kind.value, amount=amount)
        return entry

    def settle_install(
        self,
        payer: str,
        fee: Micros,
        record: SkillRecord,
        split: FeeSplit,
        now: float,
        reference: str = "",
    ) -> list[LedgerEntry]:
        """
        Tier-1 charge plus its payouts, in one atomic append.

        Contributors share C by cumulative delta score. M goes to contributors
        with commits in the last 90 days (all contributors when none are
        recent). I and T go to the infrastructure and treasury parties.
        """
        parts = split_fee(fee, split)
        reference = reference or record.id
        charges: list[Charge] = [(LedgerKind.TIER1, payer, REGISTRY_PARTY, fee, reference)]

        def payouts(amount: Micros, scores: dict[str, float]) -> None:
            if amount <= 0:
                return
            try:
                shares = distribute_contributor_share(amount, scores)
            except NoAttributions:
                shares = {TREASURY_PARTY: amount}
            for party, share in shares.items():
                if share <= 0:
                    continue
                charges.append((LedgerKind.PAYOUT, REGISTRY_PARTY, party, share, reference))

        payouts(parts.contributors, record.attributions)
        recent = {
            c.contributor
            for c in record.commits
            if c.delta_score > 0 and now - c.committed_at <= MAINTAINER_WINDOW_S
        }
        maintainers = {c: s for c, s in record.attributions.items() if c in recent}
        payouts(parts.maintainers, maintainers or record.attributions)
        payouts(parts.infrastructure, {INFRASTRUCTURE_PARTY: 1.0})
        payouts(parts.treasury, {TREASURY_PARTY: 1.0})

        entries = self.append_many(charges, now)
        logger.info(
            "install_settled",
            record_id=record.id,
            fee=fee,
            payouts=len(entries) - 1,
            entry_id=entries[0].entry_id,
        )
        return entries

    def entries(self) -> list[LedgerEntry]:
        return list(self._entries)

    def entries_of(self, kind: LedgerKind) -> list[LedgerEntry]:
        return [e for e in self._entries if e.kind == kind]

    def get(self, entry_id: str) -> LedgerEntry | None:
        return next((e for e in self._entries if e.entry_id == entry_id), None)

    def balances(self, party: str | None = None) -> dict[str, Micros]:
        """Net position per party: received minus paid"""
        net: dict[str, Micros] = defaultdict(int)
        for e in self._entries:
            net[e.payer] -= e.amount
            net[e.payee] += e.amount
        if party is not None:
            return {party: net.get(party, 0)}
        return dict(sorted(net.items()))

    def cumulative_spend(self, payer: str, kind: LedgerKind | None = None) -> Micros:
        return sum(
            e.amount
            for e in self._entries
            if e.payer == payer and (kind is None or e.kind == kind)
        )

    def __len__(self) -> int:
        return len(self._entries)
