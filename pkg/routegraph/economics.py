"""
Fee and cost arithmetic.

All money is integer micro-dollars. Every split is exact: fractional parts
are floored and the remainder is handed out by a fixed rule, so parts always
sum to the whole.
"""

import math
from fractions import Fraction

from routegraph.distill import count_changed_lines, schema_lines
from routegraph.embedding import cosine
from routegraph.errors import DomainMismatch, NoAttributions, Unamortizable
from routegraph.models import (
    AdoptionDecision,
    CostModel,
    DeltaCommit,
    FeeSchedule,
    FeeSplit,
    Micros,
    SkillRecord,
    SplitAmounts,
)
from routegraph.trust import freshness_at

DELTA_EPSILON = 0.01
PRICE_CLAMP = Fraction(9, 10)


def _exact(value: float) -> Fraction:
    # decimal reading of the float, so 0.3 is 3/10
    return Fraction(repr(value))


def rediscovery_cost(m: CostModel) -> Micros:
    """``c_latency + c_compute + c_tokens + p_fail * c_retry``, rounded half up"""
    total = Fraction(m.c_latency + m.c_compute + m.c_tokens) + _exact(m.p_fail) * m.c_retry
    return math.floor(total + Fraction(1, 2))


def total_fees(fees: FeeSchedule, n_exec: int) -> Micros:
    return fees.f_search + fees.f_install + n_exec * (fees.f_exec or 0)


def adoption_decision(fees: FeeSchedule, n_exec: int, m: CostModel) -> AdoptionDecision:
    """Use the graph only when total fees are strictly below the rediscovery cost"""
    if n_exec < 0:
        raise ValueError("n_exec must be >= 0")
    if total_fees(fees, n_exec) < rediscovery_cost(m):
        return AdoptionDecision.USE_GRAPH
    return AdoptionDecision.DEFECT_TO_BROWSER


def split_fee(fee: Micros, split: FeeSplit) -> SplitAmounts:
    """
    Divide a fee into contributor, maintainer, infrastructure and treasury parts.

    Parts are floored; leftover micro-dollars go one at a time to the parts
    with the largest ratio, ties in C, M, I, T order.
    """
    if fee <= 0:
        raise ValueError("fee must be > 0")
    names = ("contributors", "maintainers", "infrastructure", "treasury")
    ratios = [_exact(getattr(split, name)) for name in names]
    whole = sum(ratios, Fraction(0))
    ratios = [r / whole for r in ratios]
    parts = [math.floor(fee * r) for r in ratios]
    order = sorted(range(len(names)), key=lambda i: (-ratios[i], i))
    remainder = fee - sum(parts)
    i = 0
    while remainder > 0:
        parts[order[i % len(order)]] += 1
        remainder -= 1
        i += 1
    return SplitAmounts(**dict(zip(names, parts, strict=True)))


def raw_delta(
    changed_lines: int,
    total_lines_after: int,
    dissimilarity: float,
    w_lines: float = 0.5,
    w_embed: float = 0.5,
) -> float:
    return w_lines * (changed_lines / max(1, total_lines_after)) + w_embed * dissimilarity


def delta_score(
    before: SkillRecord | None,
    after: SkillRecord,
    contributor: str,
    *,
    w_lines: float = 0.5,
    w_embed: float = 0.5,
    epsilon: float = DELTA_EPSILON,
    now: float = 0.0,
) -> DeltaCommit:
    """
    Marginal contribution of a commit that turned ``before`` into ``after``.

    ``before=None`` scores an initial discovery against an empty record.
    Scores below ``epsilon`` are zeroed.
    """
    if before is not None and before.id != after.id:
        raise DomainMismatch(f"Delta across records {before.id} and {after.id}")
    lines_before = schema_lines(before.endpoints) if before is not None else []
    lines_after = schema_lines(after.endpoints)
    changed = count_changed_lines(lines_before, lines_after)
    if before is not None:
        before_embedding = before.embedding
    else:
        before_embedding = [1.0] + [0.0] * (len(after.embedding) - 1)
    dissimilarity = min(2.0, max(0.0, 1.0 - cosine(before_embedding, after.embedding)))
    raw = raw_delta(changed, len(lines_after), dissimilarity, w_lines, w_embed)
    return DeltaCommit(
        contributor=contributor,
        schema_line_delta=changed,
        embedding_dissimilarity=dissimilarity,
        delta_score=raw if raw >= epsilon else 0.0,
        committed_at=now,
    )


def distribute_contributor_share(
    amount: Micros, attributions: dict[str, float]
) -> dict[str, Micros]:
    """
    Split ``amount`` in proportion to cumulative delta scores.

    The floored remainder goes to the highest score, ties to the lowest id.

    Raises:
        NoAttributions: No contributor has a positive score
    """
    scores = {c: Fraction(s) for c, s in attributions.items() if s > 0}
    if not scores:
        raise NoAttributions("No contributor has a positive delta score")
    total = sum(scores.values(), Fraction(0))
    payouts = {c: math.floor(amount * s / total) for c, s in scores.items()}
    top = min(scores, key=lambda c: (-scores[c], c))
    payouts[top] += amount - sum(payouts.values())
    return dict(sorted(payouts.items()))


def price_install(
    record: SkillRecord, demand: int, m: CostModel, base: Micros, now: float
) -> Micros:
    """
    Dynamic Tier-1 price, always strictly below the rediscovery cost.

    base scaled by reliability, freshness and recent demand, then clamped to
    ``0.9 * rediscovery_cost``.
    """
    ceiling = rediscovery_cost(m)
    if ceiling <= 0:
        return 0
    fresh = freshness_at(record.last_verified_at, now)
    fee = (
        _exact(float(base))
        * (Fraction(1, 2) + _exact(record.reliability) / 2)
        * (Fraction(1, 2) + _exact(fresh) / 2)
        * (1 + min(Fraction(1), Fraction(max(0, demand), 100)))
    )
    return min(math.floor(fee), math.floor(PRICE_CLAMP * ceiling))


def breakeven(cold_cost_ms: float, cached_cost_ms: float, baseline_cost_ms: float) -> int:
    """
    Uses after which discovery has paid for itself against the browser baseline.

    Smallest n with ``cold + n * cached <= (n + 1) * baseline``.

    Raises:
        Unamortizable: cached >= baseline
    """
    cold = _exact(float(cold_cost_ms))
    cached = _exact(float(cached_cost_ms))
    baseline = _exact(float(baseline_cost_ms))
    if cached >= baseline:
        raise Unamortizable(
            "Cached cost is not below the baseline",
            cached=cached_cost_ms,
            baseline=baseline_cost_ms,
        )
    return max(0, math.ceil((cold - baseline) / (baseline - cached)))
