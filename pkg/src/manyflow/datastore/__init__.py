"""Artifact location, storage backends and collective transfer planning."""

from .cdm import CdmHint, PlanStep, TransferPlan, execute_plan, plan_transfers
from .ring import HashRing, fmix64, fnv1a64, locate, ring_hash
from .store import (
    KINDS, SHARED, ArtifactRef, ArtifactStore, NodeStore, SharedFS, Transfer, content_digest,
)


def put(store: ArtifactStore, a: ArtifactRef, content: bytes, origin=None) -> ArtifactRef:
    return store.put(a, content, origin)


def stage_to(store: ArtifactStore, a, dest) -> list:
    return store.stage_to(a, dest)


__all__ = [
    "KINDS", "SHARED", "ArtifactRef", "ArtifactStore", "CdmHint", "HashRing", "NodeStore",
    "PlanStep", "SharedFS", "Transfer", "TransferPlan", "content_digest", "execute_plan",
    "fmix64", "fnv1a64", "locate", "plan_transfers", "put", "ring_hash", "stage_to",
]
