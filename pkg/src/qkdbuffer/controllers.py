"""Per-buffer relay policies deciding how many blocks to request each slot.

All controllers implement ``step(observation) -> int`` and are driven
exactly once per slot by the simulation loop.  The adaptive controller
runs a two-phase loop: a probing/adjusting phase that measures the
arrival process and the relay-delay distribution, sizes the buffer from
them, and steers the level onto the target; then a stable phase that
simply matches relay requests to arrivals and re-probes only if the
buffer falls below a conservative threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from .analytics import (
    OpCounter,
    SizingResult,
    buffer_change_std,
    estimate_autocovariance,
    sizing_from_std,
)
from .core import DelayDistribution, round_half_up
from .errors import EmptyProbe

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeliveryEvent:
    """One batch of key blocks arriving, with its realized delay in slots."""

    delay_slots: int
    blocks: int


@dataclass(frozen=True)
class SlotObservation:
    """End-of-slot view handed to a controller.

    ``buffer_level`` is the non-negative buffered block count after this
    slot's deliveries and request service.
    """

    slot: int
    arrivals: int
    deliveries: tuple[DeliveryEvent, ...]
    buffer_level: int


class Controller:
    """Base policy: subclasses override :meth:`step`."""

    #: slots of startup the metrics should treat as warmup, None while unknown
    warmup_end_slot: int | None = 0

    def step(self, obs: SlotObservation) -> int:
        raise NotImplementedError


class NoBufferController(Controller):
    """Relay on demand; every request rides out its own relay delay."""

    def step(self, obs: SlotObservation) -> int:
        return obs.arrivals


class FixedRateController(Controller):
    """Constant relaying rate, never stops.

    Non-integer per-slot rates are honored exactly in the long run through
    a fractional accumulator.
    """

    def __init__(self, rate_rps: float, slot_seconds: float):
        if rate_rps <= 0:
            raise ValueError("rate_rps must be positive")
        self.per_slot = rate_rps * slot_seconds
        self._acc = 0.0

    def step(self, obs: SlotObservation) -> int:
        self._acc += self.per_slot
        send = int(self._acc)
        self._acc -= send
        return send


class DoubleRateController(Controller):
    """Relay a fixed multiple of each slot's arrivals; stops with the app."""

    def __init__(self, multiplier: float = 2.0):
        if multiplier < 1:
            raise ValueError("multiplier must be at least 1")
        self.multiplier = multiplier

    def step(self, obs: SlotObservation) -> int:
        return round_half_up(self.multiplier * obs.arrivals)


class ThresholdBurstController(Controller):
    """Watermark-triggered burst refill.

    Tracks the request rate and relay delay with exponential averages.
    When buffered plus outstanding blocks fall under the low watermark it
    requests ``rate x delay x factor`` blocks in one burst, yielding the
    characteristic sawtooth buffer.
    """

    def __init__(
        self,
        factor: float = 70.0,
        watermark_slots: float = 1.0,
        rate_smoothing: float = 0.1,
        delay_smoothing: float = 0.2,
    ):
        if factor <= 0:
            raise ValueError("factor must be positive")
        self.factor = factor
        self.watermark_slots = watermark_slots
        self.rate_smoothing = rate_smoothing
        self.delay_smoothing = delay_smoothing
        self.est_rate = 0.0  # blocks per slot
        self.est_delay = 1.0  # slots
        self.outstanding = 0

    def step(self, obs: SlotObservation) -> int:
        for event in obs.deliveries:
            self.outstanding = max(0, self.outstanding - event.blocks)
            self.est_delay += self.delay_smoothing * (event.delay_slots - self.est_delay)
        self.est_rate += self.rate_smoothing * (obs.arrivals - self.est_rate)
        watermark = self.est_rate * self.watermark_slots
        if obs.buffer_level + self.outstanding < watermark:
            burst = round_half_up(self.est_rate * self.est_delay * self.factor)
            self.outstanding += burst
            return burst
        return 0


class AdaptivePhase(Enum):
    PROBING = "probing"
    ADJUSTING = "adjusting"
    STABLE = "stable"


@dataclass
class ProbeRecord:
    """Everything the probing phase accumulates.

    ``arrival_counts`` holds one entry per probe slot and ``delay_counts``
    the block-weighted histogram of realized delays, so memory stays
    proportional to the probe length and delay support.
    """

    start_slot: int
    arrival_counts: list[int] = field(default_factory=list)
    delay_counts: dict[int, int] = field(default_factory=dict)
    outstanding: dict[int, int] = field(default_factory=dict)
    slowest_seen: dict[int, int] = field(default_factory=dict)
    k_est: int | None = None
    oversend_aborted: bool = False


def probe_sizing(
    arrival_counts,
    delay_counts: dict[int, int],
    target_multiple: float = 5.0,
    ops: OpCounter | None = None,
) -> SizingResult:
    """Size the buffer from one probe's records.

    Normalizes the delay histogram into a pmf, estimates the arrival
    autocovariance up to the delay support, combines them into the change
    std, and rounds the target level to whole blocks (floor one).
    """
    positive = {d: c for d, c in delay_counts.items() if c > 0}
    if not positive:
        raise EmptyProbe("no deliveries observed during the probe window")
    k = max(positive)
    usable = len(arrival_counts) // 2
    if k > usable:
        # A straggler delivery can carry a delay the short record cannot
        # support; shrink the support and renormalize.
        logger.warning(
            "delay support %d exceeds what %d probe slots can estimate; capping at %d",
            k,
            len(arrival_counts),
            usable,
        )
        k = max(1, usable)
        positive = {d: c for d, c in positive.items() if d <= k} or {k: 1}
    delays = DelayDistribution.from_counts(positive)
    cov = estimate_autocovariance(arrival_counts, max_lag=delays.k, ops=ops)
    sigma = buffer_change_std(cov, delays, ops=ops)
    return sizing_from_std(sigma, target_multiple=target_multiple)


class AdaptiveController(Controller):
    """Two-phase adaptive buffer controller.

    Probing sends ``(1 + beta)`` times the arrivals while the delay
    support is still being measured, records arrivals and realized delays,
    and once every request of some slot has come back and the window has
    spanned ``(alpha + 1)`` times the measured support, sizes the buffer
    and steers the level onto the target.  The stable phase relays exactly
    the arrivals and falls back to probing only when the buffer drops
    below the estimated change std.
    """

    def __init__(
        self,
        alpha: int = 2,
        beta: int = 2,
        k_cap: int = 200,
        target_multiple: float = 5.0,
    ):
        if alpha < 1 or beta < 1:
            raise ValueError("alpha and beta must be at least 1")
        if k_cap < 2:
            raise ValueError("k_cap must be at least 2")
        self.alpha = alpha
        self.beta = beta
        self.k_cap = k_cap
        self.target_multiple = target_multiple
        self.phase = AdaptivePhase.PROBING
        self.probe: ProbeRecord | None = None
        self.sizing: SizingResult | None = None
        self.pending_adjust = 0
        self.probe_count = 0
        self.reprobe_slots: list[int] = []
        self.warmup_end_slot: int | None = None
        self.finalize_ops = 0
        self.last_step_ops = 0

    # -- bookkeeping helpers -------------------------------------------------

    def _enter_probe(self, slot: int) -> None:
        self.probe = ProbeRecord(start_slot=slot)
        self.probe_count += 1
        if self.probe_count > 1:
            self.reprobe_slots.append(slot)
        self.phase = AdaptivePhase.PROBING

    def _record_deliveries(self, obs: SlotObservation) -> None:
        probe = self.probe
        for event in obs.deliveries:
            probe.delay_counts[event.delay_slots] = (
                probe.delay_counts.get(event.delay_slots, 0) + event.blocks
            )
            send_slot = obs.slot - event.delay_slots
            if send_slot in probe.outstanding:
                probe.outstanding[send_slot] -= event.blocks
                probe.slowest_seen[send_slot] = max(
                    probe.slowest_seen.get(send_slot, 0), event.delay_slots
                )
                if probe.outstanding[send_slot] <= 0:
                    # all requests of that slot satisfied: revise the support
                    slowest = probe.slowest_seen.pop(send_slot)
                    del probe.outstanding[send_slot]
                    if probe.k_est is None or slowest > probe.k_est:
                        probe.k_est = slowest

    def _finalize_probe(self, obs: SlotObservation) -> None:
        ops = OpCounter()
        self.sizing = probe_sizing(
            self.probe.arrival_counts,
            self.probe.delay_counts,
            target_multiple=self.target_multiple,
            ops=ops,
        )
        self.finalize_ops = ops.count
        self.pending_adjust = self.sizing.target_level - obs.buffer_level
        self.probe = None
        if self.pending_adjust == 0:
            self.phase = AdaptivePhase.STABLE
        else:
            self.phase = AdaptivePhase.ADJUSTING
        if self.warmup_end_slot is None and self.phase is AdaptivePhase.STABLE:
            self.warmup_end_slot = obs.slot + 1

    # -- per-phase steps -----------------------------------------------------

    def _probe_step(self, obs: SlotObservation) -> int:
        probe = self.probe
        elapsed_before = obs.slot - probe.start_slot
        probe.arrival_counts.append(obs.arrivals)
        self._record_deliveries(obs)
        oversend = (
            not probe.oversend_aborted
            and (probe.k_est is None or elapsed_before < self.alpha * probe.k_est)
        )
        send = obs.arrivals + (self.beta * obs.arrivals if oversend else 0)
        if send > 0:
            probe.outstanding[obs.slot] = probe.outstanding.get(obs.slot, 0) + send
        elapsed_after = elapsed_before + 1
        if probe.k_est is not None and elapsed_after >= (self.alpha + 1) * probe.k_est:
            self._finalize_probe(obs)
        elif elapsed_after >= self.k_cap:
            if probe.k_est is not None:
                logger.warning(
                    "probe hit the %d-slot cap; finalizing with support %d",
                    self.k_cap,
                    probe.k_est,
                )
                self._finalize_probe(obs)
            elif not probe.oversend_aborted:
                logger.warning(
                    "probe saw no completed deliveries within %d slots; "
                    "over-sending disabled until the network answers",
                    self.k_cap,
                )
                probe.oversend_aborted = True
        return send

    def _adjust_step(self, obs: SlotObservation) -> int:
        send = max(0, obs.arrivals + self.pending_adjust)
        self.pending_adjust += obs.arrivals - send
        if self.pending_adjust == 0:
            self.phase = AdaptivePhase.STABLE
            if self.warmup_end_slot is None:
                self.warmup_end_slot = obs.slot + 1
        return send

    def step(self, obs: SlotObservation) -> int:
        ops = 1
        if self.phase is AdaptivePhase.STABLE:
            ops += 1  # threshold comparison
            if obs.buffer_level < self.sizing.change_std:
                self._enter_probe(obs.slot)
            else:
                self.last_step_ops = ops + 1
                return obs.arrivals
        if self.phase is AdaptivePhase.PROBING:
            if self.probe is None:
                self._enter_probe(obs.slot)
            send = self._probe_step(obs)
        else:
            send = self._adjust_step(obs)
        self.last_step_ops = ops + 4
        return send


def make_controller(kind: str, params: dict, slot_seconds: float) -> Controller:
    """Build a controller from its scenario description."""
    if kind == "no-buffer":
        return NoBufferController()
    if kind == "fixed-rate":
        return FixedRateController(params["rate_rps"], slot_seconds)
    if kind == "double-rate":
        return DoubleRateController(params.get("multiplier", 2.0))
    if kind == "threshold-burst":
        return ThresholdBurstController(
            factor=params.get("factor", 70.0),
            watermark_slots=params.get("watermark_slots", 1.0),
            rate_smoothing=params.get("rate_smoothing", 0.1),
            delay_smoothing=params.get("delay_smoothing", 0.2),
        )
    if kind == "adaptive":
        return AdaptiveController(
            alpha=params.get("alpha", 2),
            beta=params.get("beta", 2),
            k_cap=params.get("k_cap", 200),
            target_multiple=params.get("target_multiple", 5.0),
        )
    raise ValueError(f"unknown scheme kind {kind!r}")
