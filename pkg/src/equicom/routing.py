"""Recipient resolution for routing directives.

Everything here is a pure function of its arguments, except that
``resolve_recipients`` advances the caller-owned round-robin counters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple


class Mechanism(enum.IntEnum):
    PRIVATE = 1
    BROADCAST = 2
    GROUP_BROADCAST = 3
    BALANCE = 4

    @classmethod
    def parse(cls, name: str) -> "Mechanism":
        key = name.strip().upper().replace("-", "_")
        if key == "GROUP":
            key = "GROUP_BROADCAST"
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown mechanism {name!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower()


class InvalidDirective(ValueError):
    pass


class EmptyMembers(ValueError):
    pass


@dataclass(frozen=True)
class RoutingDirective:
    mechanism: Mechanism
    tag: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        if self.mechanism in (Mechanism.PRIVATE, Mechanism.BALANCE) and not self.tag:
            raise InvalidDirective(f"{self.mechanism.label} requires a non-empty tag")
        if self.mechanism is Mechanism.BROADCAST and self.tag:
            raise InvalidDirective("broadcast takes no tag")


# node id -> tags that node subscribed to
SubscriptionTable = Mapping[int, frozenset]
# tag -> number of BALANCE resolutions performed so far
RoundRobinState = dict


class Recipient(NamedTuple):
    node: int
    mechanism: Mechanism
    tag: str


@dataclass
class Resolution:
    recipients: list[Recipient] = field(default_factory=list)
    no_recipients: int = 0
    private_conflicts: int = 0
    dedup_suppressed: int = 0


def match_tag(subscription: str, message_tag: str) -> bool:
    """Prefix match; the empty subscription matches every tag."""
    return message_tag.startswith(subscription)


def next_balance_index(members: list[int], counter: int) -> int:
    if not members:
        raise EmptyMembers("no balance members")
    return members[counter % len(members)]


def apply_subscription_update(subs: SubscriptionTable, node: int, op: str, tag: str) -> dict:
    """Return a new table with ``tag`` added to / removed from ``node``'s set."""
    out = dict(subs)
    current = frozenset(out.get(node, frozenset()))
    if op == "add":
        out[node] = current | {tag}
    elif op == "remove":
        if tag in current:
            out[node] = current - {tag}
    else:
        raise ValueError(f"unknown subscription op {op!r}")
    return out


def _group_members(candidates: Iterable[int], subs: SubscriptionTable, tag: str) -> list[int]:
    return sorted(
        n for n in candidates if any(match_tag(s, tag) for s in subs.get(n, ()))
    )


def resolve_recipients(
    directives: list[RoutingDirective],
    table: Iterable[int],
    subs: SubscriptionTable,
    rr: RoundRobinState,
    sender: int,
) -> Resolution:
    """Compute who receives a message sent with ``directives``.

    ``table`` is the set of known node ids (a port mapping table's keys work).
    ``rr`` is mutated: each BALANCE directive that finds a member bumps the
    counter for its tag. Result recipients are unique by node id, keep the
    mechanism of the earliest directive that reached them, and are sorted
    by node id.
    """
    if not directives:
        raise InvalidDirective("at least one directive is required")
    candidates = sorted(n for n in table if n != sender)
    res = Resolution()
    chosen: dict[int, Recipient] = {}

    for d in directives:
        if d.mechanism is Mechanism.PRIVATE:
            hits = [n for n in candidates if d.tag in subs.get(n, ())]
            if len(hits) > 1:
                res.private_conflicts += 1
            hits = hits[:1]
        elif d.mechanism is Mechanism.BROADCAST:
            hits = candidates
        elif d.mechanism is Mechanism.GROUP_BROADCAST:
            hits = _group_members(candidates, subs, d.tag)
        else:
            members = _group_members(candidates, subs, d.tag)
            if members:
                counter = rr.get(d.tag, 0)
                hits = [next_balance_index(members, counter)]
                rr[d.tag] = counter + 1
            else:
                hits = []

        if not hits:
            res.no_recipients += 1
        for n in hits:
            if n in chosen:
                res.dedup_suppressed += 1
            else:
                chosen[n] = Recipient(n, d.mechanism, d.tag)

    res.recipients = [chosen[n] for n in sorted(chosen)]
    return res
