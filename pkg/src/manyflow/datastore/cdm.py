"""Collective data movement: plan broadcast / scatter / gather at file level."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..errors import BadHint, MissingArtifact
from .store import SHARED, ArtifactRef, ArtifactStore, _node_key

PATTERNS = ("direct", "broadcast", "scatter", "gather")


@dataclass(frozen=True)
class CdmHint:
    pattern: str
    subject: object          # artifact name, or a sequence of names for gather
    targets: tuple
    result: Optional[str] = None


@dataclass(frozen=True)
class PlanStep:
    round: int
    src: str
    dst: str
    artifact: str
    bytes: int
    offset: int = 0
    length: int = -1
    part: Optional[str] = None


@dataclass
class TransferPlan:
    hint: CdmHint
    origin: str
    steps: list = field(default_factory=list)
    result: Optional[str] = None

    @property
    def rounds(self):
        return max((s.round for s in self.steps), default=0)

    @property
    def total_copies(self):
        return len(self.steps)

    def egress(self, node):
        return sum(1 for s in self.steps if s.src == node)

    @property
    def origin_egress(self):
        return self.egress(self.origin)


def _split(size, k):
    base, extra = divmod(size, k)
    out, off = [], 0
    for i in range(k):
        n = base + (1 if i < extra else 0)
        out.append((off, n))
        off += n
    return out


def _origin(store: ArtifactStore, name, prefer=()):
    holders = store.holders(name)
    for t in prefer:
        if t in holders:
            return t
    if holders:
        return sorted(holders, key=_node_key)[0]
    if store.available(name):
        return SHARED
    raise MissingArtifact(name)


def plan_transfers(hint: CdmHint, store: ArtifactStore) -> TransferPlan:
    """Order the copies a hint implies; pure with respect to ``store``."""
    if hint.pattern not in PATTERNS:
        raise BadHint(f"unknown pattern {hint.pattern!r}")
    targets = list(dict.fromkeys(hint.targets))
    if not targets:
        raise BadHint(f"{hint.pattern} hint needs at least one target")

    if hint.pattern == "gather":
        names = [hint.subject] if isinstance(hint.subject, str) else list(hint.subject)
        if not names:
            raise BadHint("gather needs at least one part")
        if len(targets) != 1:
            raise BadHint("gather has exactly one destination")
        dest = targets[0]
        plan = TransferPlan(hint, origin=dest, result=hint.result or names[0] + ".gathered")
        for i, name in enumerate(names):
            if not store.available(name):
                raise MissingArtifact(name)
            if dest in store.holders(name):
                continue
            src = _origin(store, name)
            plan.steps.append(PlanStep(1, src, dest, name, store.ref(name).size, part=str(i)))
        return plan

    if not isinstance(hint.subject, str):
        raise BadHint(f"{hint.pattern} subject must be a single artifact")
    name = hint.subject
    if not store.available(name):
        raise MissingArtifact(name)
    size = store.ref(name).size

    if hint.pattern == "scatter":
        origin = _origin(store, name)
        plan = TransferPlan(hint, origin=origin)
        for i, (t, (off, n)) in enumerate(zip(targets, _split(size, len(targets)))):
            plan.steps.append(PlanStep(1, origin, t, name, n, off, n, part=f"{name}.part{i}"))
        return plan

    holding = store.holders(name)
    if hint.pattern == "direct":
        origin = _origin(store, name)
        plan = TransferPlan(hint, origin=origin)
        for t in targets:
            if t not in holding:
                plan.steps.append(PlanStep(1, origin, t, name, size))
        return plan

    # broadcast: every holder forwards to one new target per round
    holders = [t for t in targets if t in holding]
    origin = holders[0] if holders else _origin(store, name)
    if not holders:
        holders = [origin]
    pending = [t for t in targets if t not in holding and t != origin]
    plan = TransferPlan(hint, origin=origin)
    rnd = 0
    while pending:
        rnd += 1
        senders = list(holders)
        for src in senders:
            if not pending:
                break
            dst = pending.pop(0)
            plan.steps.append(PlanStep(rnd, src, dst, name, size))
            holders.append(dst)
    return plan


def execute_plan(plan: TransferPlan, store: ArtifactStore) -> list:
    """Apply ``plan`` to ``store``; returns the transfer records."""
    pattern = plan.hint.pattern
    records = []
    if pattern in ("direct", "broadcast"):
        for step in sorted(plan.steps, key=lambda s: s.round):
            records.extend(store.stage_to(step.artifact, step.dst, src=step.src))
        return records
    if pattern == "scatter":
        content = store.get(plan.hint.subject)
        src_ref = store.ref(plan.hint.subject)
        for step in plan.steps:
            piece = content[step.offset:step.offset + step.length]
            store.put_local(ArtifactRef(step.part, persistence=src_ref.persistence), piece, step.dst)
            records.append(store._record(step.src, step.dst, len(piece), step.part))
        return records
    # gather
    dest = plan.hint.targets[0]
    for step in plan.steps:
        records.extend(store.stage_to(step.artifact, dest, src=step.src))
    names = [plan.hint.subject] if isinstance(plan.hint.subject, str) else list(plan.hint.subject)
    merged = b"".join(store.get(n) for n in names)
    persistent = all(store.ref(n).persistent for n in names)
    store.put_local(ArtifactRef(plan.result, persistence="persistent" if persistent else "volatile"), merged, dest)
    return records
