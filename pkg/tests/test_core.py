import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdbuffer.core import (
    BufferState,
    DelayDistribution,
    RelayBatch,
    SlotEvents,
    apply_slot,
    deliveries_for_slot,
    round_half_up,
)


class TestApplySlot:
    def test_keys_absorb_requests(self):
        out = apply_slot(BufferState(key_blocks=10), SlotEvents(arrivals=3, delivered=2))
        assert (out.key_blocks, out.backlog) == (9, 0)

    def test_starved_buffer_builds_backlog(self):
        out = apply_slot(BufferState(), SlotEvents(arrivals=5, delivered=0))
        assert (out.key_blocks, out.backlog) == (0, 5)

    def test_partial_service_flips_to_backlog(self):
        out = apply_slot(BufferState(key_blocks=2), SlotEvents(arrivals=5, delivered=1))
        assert (out.key_blocks, out.backlog) == (0, 2)
        assert out.signed_level == -2

    def test_backlog_served_before_new_arrivals(self):
        out = apply_slot(BufferState(backlog=4), SlotEvents(arrivals=2, delivered=5))
        assert (out.key_blocks, out.backlog) == (0, 1)

    @given(
        st.lists(
            st.tuples(st.integers(0, 20), st.integers(0, 20)),
            min_size=1,
            max_size=60,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_invariants_hold_over_any_event_sequence(self, events):
        state = BufferState()
        for arrivals, delivered in events:
            before = state.signed_level
            state = apply_slot(state, SlotEvents(arrivals=arrivals, delivered=delivered))
            # signed-level identity, exactly
            assert state.signed_level == before - arrivals + delivered
            # end-of-slot exclusivity
            assert state.key_blocks == 0 or state.backlog == 0
            assert state.key_blocks >= 0 and state.backlog >= 0

    def test_exclusivity_enforced_on_construction(self):
        with pytest.raises(ValueError):
            BufferState(key_blocks=1, backlog=1)

    def test_negative_events_rejected(self):
        with pytest.raises(ValueError):
            SlotEvents(arrivals=-1)


class TestDeliveriesForSlot:
    def test_due_requests_delivered_and_removed(self):
        batch = RelayBatch(send_slot=4, delays=(2, 2, 3))
        c, remaining = deliveries_for_slot((batch,), current=6)
        assert c == 2
        assert remaining == (RelayBatch(send_slot=4, delays=(3,)),)

    def test_empty_in_flight(self):
        assert deliveries_for_slot((), current=17) == (0, ())

    def test_unit_delay_clears_whole_batch(self):
        batch = RelayBatch(send_slot=9, delays=(1, 1, 1, 1))
        c, remaining = deliveries_for_slot((batch,), current=10)
        assert c == 4
        assert remaining == ()

    def test_every_request_delivered_exactly_once(self):
        rng = np.random.default_rng(7)
        in_flight: tuple[RelayBatch, ...] = ()
        sent = 0
        delivered = 0
        max_delay = 4
        for slot in range(60):
            count = int(rng.integers(0, 5))
            if count:
                delays = tuple(int(d) for d in rng.integers(1, max_delay + 1, count))
                in_flight = in_flight + (RelayBatch(slot, delays),)
                sent += count
            c, in_flight = deliveries_for_slot(in_flight, slot)
            delivered += c
            # conservation after every slot
            outstanding = sum(b.count for b in in_flight)
            assert delivered == sent - outstanding
        # drain the tail
        for slot in range(60, 60 + max_delay + 1):
            c, in_flight = deliveries_for_slot(in_flight, slot)
            delivered += c
        assert in_flight == ()
        assert delivered == sent


def test_reactive_relaying_matches_rates_long_run():
    """Relaying exactly the arrivals keeps the delivery rate matched to the
    arrival rate within the in-flight slack."""
    rng = np.random.default_rng(1234)
    horizon = 20_000
    max_delay = 6
    in_flight: tuple[RelayBatch, ...] = ()
    arrivals_total = 0
    delivered_total = 0
    peak = 0
    for slot in range(horizon):
        n = int(rng.poisson(3.0))
        peak = max(peak, n)
        if n:
            delays = tuple(int(d) for d in rng.integers(1, max_delay + 1, n))
            in_flight = in_flight + (RelayBatch(slot, delays),)
        c, in_flight = deliveries_for_slot(in_flight, slot)
        arrivals_total += n
        delivered_total += c
    gap = abs(delivered_total / horizon - arrivals_total / horizon)
    assert gap <= max_delay * peak / horizon


class TestDelayDistribution:
    def test_requires_normalized_pmf(self):
        with pytest.raises(ValueError):
            DelayDistribution(np.array([0.5, 0.4]))

    def test_trailing_zero_rejected(self):
        with pytest.raises(ValueError):
            DelayDistribution(np.array([1.0, 0.0]))

    def test_from_counts_trims_and_normalizes(self):
        dist = DelayDistribution.from_counts({1: 3, 2: 1, 5: 0})
        assert dist.k == 2
        np.testing.assert_allclose(dist.omega, [0.75, 0.25])

    def test_normalization_is_idempotent(self):
        dist = DelayDistribution.from_counts({1: 2, 3: 6})
        again = DelayDistribution.from_counts(
            {j + 1: w for j, w in enumerate(dist.omega)}
        )
        np.testing.assert_allclose(dist.omega, again.omega)

    def test_survival_function(self):
        dist = DelayDistribution(np.array([0.2, 0.3, 0.5]))
        np.testing.assert_allclose(dist.survival(), [1.0, 0.8, 0.5])


@pytest.mark.parametrize(
    "value,expected",
    [(0.4, 0), (0.5, 1), (1.5, 2), (2.4, 2), (22.35, 22), (22.5, 23)],
)
def test_round_half_up(value, expected):
    assert round_half_up(value) == expected
