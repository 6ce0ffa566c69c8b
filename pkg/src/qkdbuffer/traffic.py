"""Seeded per-slot request generators and per-application bookkeeping.

Two arrival models are supported: plain Poisson counts, and a bursty
composite where Poisson-timed send events each carry a Pareto-distributed
batch of requests.  Generation for an application stops exactly at its
total key demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidShape


@dataclass(frozen=True)
class PoissonTraffic:
    """Requests arrive as a Poisson process at the application's rate."""

    kind: str = field(default="poisson", init=False)


@dataclass(frozen=True)
class PpbpTraffic:
    """Poisson-Pareto burst process.

    Send events arrive as a Poisson process with ``event_rate`` events per
    second; each event carries round(Pareto(shape, scale)) requests, at
    least one.  ``scale=None`` derives the scale so the composite mean
    equals the application's request rate:
    rate = event_rate * shape * scale / (shape - 1).
    """

    event_rate: float = 1.0
    pareto_shape: float = 2.0
    pareto_scale: float | None = None

    kind: str = field(default="ppbp", init=False)

    def __post_init__(self) -> None:
        if self.pareto_shape <= 1:
            raise InvalidShape(
                f"pareto shape must exceed 1 for a finite mean, got {self.pareto_shape}"
            )
        if self.event_rate <= 0:
            raise ValueError("event_rate must be positive")
        if self.pareto_scale is not None and self.pareto_scale <= 0:
            raise ValueError("pareto_scale must be positive")

    def scale_for_rate(self, rate_rps: float) -> float:
        if self.pareto_scale is not None:
            return self.pareto_scale
        return rate_rps * (self.pareto_shape - 1) / (self.pareto_shape * self.event_rate)


TrafficModel = PoissonTraffic | PpbpTraffic


@dataclass(frozen=True)
class AppSpec:
    """One secure application: endpoints, arrival model, and total demand."""

    source: int
    destination: int
    start_s: float
    rate_rps: float
    process: TrafficModel
    demand_blocks: int

    def __post_init__(self) -> None:
        if self.source == self.destination:
            raise ValueError("source and destination must differ")
        if self.rate_rps <= 0:
            raise ValueError("rate_rps must be positive")
        if self.demand_blocks <= 0:
            raise ValueError("demand_blocks must be positive")
        if self.start_s < 0:
            raise ValueError("start_s must be non-negative")

    @property
    def pair(self) -> tuple[int, int]:
        return (self.source, self.destination)


def gen_poisson(rate_rps: float, slot_seconds: float, rng: np.random.Generator) -> int:
    """One slot's Poisson request count."""
    lam = rate_rps * slot_seconds
    if lam <= 0:
        return 0
    return int(rng.poisson(lam))


def _pareto_batches(
    shape: float, scale: float, count: int, rng: np.random.Generator
) -> np.ndarray:
    # Pareto type I starting at `scale`; rounded half-up, floor one request.
    raw = (1.0 + rng.pareto(shape, size=count)) * scale
    return np.maximum(1, np.floor(raw + 0.5).astype(np.int64))


def gen_ppbp(
    event_rate: float,
    shape: float,
    scale: float,
    slot_seconds: float,
    rng: np.random.Generator,
) -> int:
    """One slot's burst-process request count."""
    if shape <= 1:
        raise InvalidShape(f"pareto shape must exceed 1, got {shape}")
    events = int(rng.poisson(event_rate * slot_seconds)) if event_rate > 0 else 0
    if events == 0:
        return 0
    return int(_pareto_batches(shape, scale, events, rng).sum())


def sample_poisson_slots(
    rate_rps: float, slot_seconds: float, slots: int, rng: np.random.Generator
) -> np.ndarray:
    lam = rate_rps * slot_seconds
    if lam <= 0:
        return np.zeros(slots, dtype=np.int64)
    return rng.poisson(lam, size=slots).astype(np.int64)


def sample_ppbp_slots(
    event_rate: float,
    shape: float,
    scale: float,
    slot_seconds: float,
    slots: int,
    rng: np.random.Generator,
) -> np.ndarray:
    if shape <= 1:
        raise InvalidShape(f"pareto shape must exceed 1, got {shape}")
    events = rng.poisson(event_rate * slot_seconds, size=slots)
    total_events = int(events.sum())
    counts = np.zeros(slots, dtype=np.int64)
    if total_events == 0:
        return counts
    sizes = _pareto_batches(shape, scale, total_events, rng)
    slot_of_event = np.repeat(np.arange(slots), events)
    np.add.at(counts, slot_of_event, sizes)
    return counts


@dataclass(frozen=True)
class RequestTrace:
    """Per-slot request counts of one application over the whole horizon.

    Counts are zero before the start slot and after demand is exhausted;
    the final batch is truncated so the lifetime sum equals the demand
    exactly.  ``completion_slot`` is where the last request was generated,
    or None if the horizon ended first.
    """

    counts: np.ndarray
    demand_blocks: int
    completion_slot: int | None

    def __post_init__(self) -> None:
        total = int(self.counts.sum())
        if self.completion_slot is not None and total != self.demand_blocks:
            raise ValueError("completed trace must sum exactly to demand")
        if total > self.demand_blocks:
            raise ValueError("trace exceeds demand")


def build_trace(
    app: AppSpec, horizon_slots: int, slot_seconds: float, rng: np.random.Generator
) -> RequestTrace:
    """Generate one application's whole request trace, capped at demand."""
    start_slot = int(app.start_s / slot_seconds)
    counts = np.zeros(horizon_slots, dtype=np.int64)
    active = horizon_slots - start_slot
    if active > 0:
        if isinstance(app.process, PoissonTraffic):
            raw = sample_poisson_slots(app.rate_rps, slot_seconds, active, rng)
        else:
            scale = app.process.scale_for_rate(app.rate_rps)
            raw = sample_ppbp_slots(
                app.process.event_rate,
                app.process.pareto_shape,
                scale,
                slot_seconds,
                active,
                rng,
            )
        cumulative = np.cumsum(raw)
        capped = np.minimum(cumulative, app.demand_blocks)
        counts[start_slot:] = np.diff(np.concatenate(([0], capped)))
    completion = None
    if int(counts.sum()) == app.demand_blocks:
        nonzero = np.nonzero(counts)[0]
        completion = int(nonzero[-1]) if nonzero.size else start_slot
    return RequestTrace(
        counts=counts, demand_blocks=app.demand_blocks, completion_slot=completion
    )
