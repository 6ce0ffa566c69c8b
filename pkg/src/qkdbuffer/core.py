"""Slot-level state of one end-to-end key buffering unit.

Time advances in fixed slots of ``slot_seconds`` simulated seconds.  Each
node pair owns one buffer holding whole key blocks and one FIFO of unserved
application requests; retrieving a key for a request takes zero service
time, so at the end of every slot at most one of the two sides is
non-empty.  The signed level ``key_blocks - backlog`` follows the per-slot
update: previous level, minus requests that arrived, plus key blocks that
were delivered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Slots are plain non-negative ints counted from scenario start.
SlotIndex = int


def round_half_up(x: float) -> int:
    """Round to the nearest integer, with .5 rounding away from zero-ward up."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SlotEvents:
    """What happened to one buffer during a single slot.

    arrivals:  application requests that arrived this slot.
    delivered: relayed key blocks that arrived this slot.
    sent:      relay requests the controller emitted this slot.
    """

    arrivals: int = 0
    delivered: int = 0
    sent: int = 0

    def __post_init__(self) -> None:
        for name in ("arrivals", "delivered", "sent"):
            if getattr(self, name) < 0:
                raise ValueError(f"SlotEvents.{name} must be non-negative")


@dataclass(frozen=True)
class RelayBatch:
    """Relay requests sent in one slot, with their realized delays in slots.

    Delays are sampled once at send time so a run is fully determined by
    its seed; each entry in ``delays`` is one outstanding request.
    """

    send_slot: SlotIndex
    delays: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.delays)


@dataclass(frozen=True)
class BufferState:
    """End-of-slot state of one buffering unit.

    Exactly one of ``key_blocks``/``backlog`` may be non-zero (zero service
    time: queued requests are served the moment keys exist).  ``in_flight``
    is carried through untouched by :func:`apply_slot`; the delivery engine
    owns it.
    """

    key_blocks: int = 0
    backlog: int = 0
    in_flight: tuple[RelayBatch, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.key_blocks < 0 or self.backlog < 0:
            raise ValueError("key_blocks and backlog must be non-negative")
        if self.key_blocks and self.backlog:
            raise ValueError("key_blocks and backlog cannot both be non-zero")

    @property
    def signed_level(self) -> int:
        """Buffered blocks when positive, request backlog when negative."""
        return self.key_blocks - self.backlog


def apply_slot(state: BufferState, events: SlotEvents) -> BufferState:
    """Advance one buffer by one slot.

    Keys delivered during the slot are added first, then requests (old
    backlog before new arrivals) are served FIFO against whatever is
    available.  The new signed level is the old one minus arrivals plus
    deliveries, and the end-of-slot exclusivity invariant holds by
    construction.
    """
    keys = state.key_blocks + events.delivered
    requests = state.backlog + events.arrivals
    served = min(keys, requests)
    return BufferState(
        key_blocks=keys - served,
        backlog=requests - served,
        in_flight=state.in_flight,
    )


def deliveries_for_slot(
    in_flight: tuple[RelayBatch, ...] | list[RelayBatch],
    current: SlotIndex,
) -> tuple[int, tuple[RelayBatch, ...]]:
    """Collect relay requests whose realized delay lands on ``current``.

    Returns the number of blocks delivered this slot and the remaining
    in-flight batches with delivered entries removed.  Called once per
    slot in order, every request is delivered exactly once.
    """
    delivered = 0
    remaining: list[RelayBatch] = []
    for batch in in_flight:
        due = [d for d in batch.delays if batch.send_slot + d == current]
        left = tuple(d for d in batch.delays if batch.send_slot + d != current)
        delivered += len(due)
        if left:
            remaining.append(RelayBatch(batch.send_slot, left))
    return delivered, tuple(remaining)


@dataclass(frozen=True)
class DelayDistribution:
    """Relay-delay pmf over whole slots 1..K.

    ``omega[j-1]`` is the probability that a relay request is satisfied
    exactly ``j`` slots after it was sent.  The support maximum K is tight:
    the last entry must be positive.
    """

    omega: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.omega, dtype=float)
        object.__setattr__(self, "omega", arr)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("omega must be a non-empty 1-d probability vector")
        if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
            raise ValueError("omega entries must lie in [0, 1]")
        if abs(float(arr.sum()) - 1.0) > 1e-9:
            raise ValueError("omega must sum to 1 within 1e-9")
        if arr[-1] <= 0:
            raise ValueError("omega[K] must be positive (K is tight)")

    @property
    def k(self) -> int:
        """Maximum possible delay in slots."""
        return int(self.omega.size)

    @classmethod
    def from_counts(cls, counts: dict[int, float]) -> "DelayDistribution":
        """Normalize a delay histogram {delay_slots: weight} into a pmf.

        Trailing zero-weight delays are trimmed so K stays tight.
        Normalizing twice is a no-op.
        """
        positive = {d: w for d, w in counts.items() if w > 0}
        if not positive:
            raise ValueError("delay histogram has no positive mass")
        if min(positive) < 1:
            raise ValueError("delays must be at least one slot")
        k = max(positive)
        omega = np.zeros(k, dtype=float)
        for d, w in positive.items():
            omega[d - 1] = w
        return cls(omega / omega.sum())

    def survival(self) -> np.ndarray:
        """P(delay > u) for u = 0..K-1."""
        return 1.0 - np.cumsum(np.concatenate(([0.0], self.omega[:-1])))
