"""QKD-network substrate: topology, routing, delays, and link key pools.

Relaying one key block end to end consumes one quantum-key block on every
link along the path.  Relay requests issued by a controller in slot t are
batched into one job per (pair, slot); the job departs at the end of that
slot, crosses the path hop by hop with per-hop delays sampled at send
time, and its delivery is recognized at the first slot boundary after the
final hop.  Entering a hop debits the hop's key pool atomically; if the
pool cannot cover the job it waits there, FIFO per link, and its realized
delay grows.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .errors import Unreachable

# Quantization tolerance for float time arithmetic.
_TIME_FUZZ = 1e-9


@dataclass(frozen=True)
class Link:
    """Undirected adjacency with routing metric and key-generation terms.

    ``key_rate`` is in blocks per second, ``initial_pool`` in blocks.
    """

    a: int
    b: int
    metric: float = 1.0
    mean_delay_s: float = 0.2
    key_rate: float = 0.0
    initial_pool: int = 0

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError("link endpoints must differ")
        if self.metric <= 0:
            raise ValueError("link metric must be positive")
        if self.mean_delay_s <= 0:
            raise ValueError("link delay must be positive")

    @property
    def key(self) -> tuple[int, int]:
        return (self.a, self.b) if self.a <= self.b else (self.b, self.a)


# 14-node NSFnet-style research backbone.  Metrics are mostly unit with two
# heavier edges so the documented 3-4-6-7 route is the unique shortest path
# between nodes 3 and 7.
NSFNET_EDGES: tuple[tuple[int, int, float], ...] = (
    (0, 1, 1), (0, 2, 1), (0, 3, 2),
    (1, 2, 1), (1, 7, 2),
    (2, 5, 1),
    (3, 4, 1), (3, 10, 1),
    (4, 5, 1), (4, 6, 1),
    (5, 9, 1), (5, 13, 1),
    (6, 7, 1),
    (7, 8, 1),
    (8, 9, 1), (8, 11, 1),
    (9, 10, 1), (9, 12, 1),
    (10, 11, 1),
    (11, 12, 1),
    (12, 13, 1),
)


class Topology:
    """Node set plus undirected links keyed by their canonical endpoints."""

    def __init__(self, links: list[Link]):
        if not links:
            raise ValueError("topology needs at least one link")
        self.links: dict[tuple[int, int], Link] = {}
        self.adjacency: dict[int, list[int]] = {}
        for link in links:
            if link.key in self.links:
                raise ValueError(f"duplicate link {link.key}")
            self.links[link.key] = link
            self.adjacency.setdefault(link.a, []).append(link.b)
            self.adjacency.setdefault(link.b, []).append(link.a)
        for node in self.adjacency:
            self.adjacency[node].sort()
        self.nodes = sorted(self.adjacency)

    def link_between(self, a: int, b: int) -> Link:
        key = (a, b) if a <= b else (b, a)
        return self.links[key]

    def is_connected(self) -> bool:
        seen = {self.nodes[0]}
        frontier = [self.nodes[0]]
        while frontier:
            node = frontier.pop()
            for peer in self.adjacency[node]:
                if peer not in seen:
                    seen.add(peer)
                    frontier.append(peer)
        return len(seen) == len(self.nodes)

    def with_delay(self, mean_delay_s: float) -> "Topology":
        """Copy with the same graph and a uniform per-link mean delay."""
        return Topology(
            [replace(link, mean_delay_s=mean_delay_s) for link in self.links.values()]
        )


def nsfnet(mean_delay_s: float = 0.2, key_rate: float = 0.0) -> Topology:
    """The bundled 14-node backbone with a uniform link delay."""
    return Topology(
        [
            Link(a, b, metric=m, mean_delay_s=mean_delay_s, key_rate=key_rate)
            for a, b, m in NSFNET_EDGES
        ]
    )


def load_topology(path) -> Topology:
    """Parse a plain-text edge list.

    One link per line: ``node_a node_b metric mean_delay_ms key_rate_bps``
    (key rate in blocks per second).  Blank lines and ``#`` comments are
    ignored.
    """
    links = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(
                    f"{path}:{lineno}: expected 5 fields "
                    "(node_a node_b metric mean_delay_ms key_rate_bps)"
                )
            try:
                a, b = int(parts[0]), int(parts[1])
                metric = float(parts[2])
                delay_ms = float(parts[3])
                key_rate = float(parts[4])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            links.append(
                Link(a, b, metric=metric, mean_delay_s=delay_ms / 1000.0, key_rate=key_rate)
            )
    return Topology(links)


def route(topology: Topology, source: int, destination: int) -> list[int]:
    """Minimum-metric path; equal-cost ties break to the lexicographically
    smaller node-id sequence."""
    if source == destination:
        raise ValueError("source and destination must differ")
    if source not in topology.adjacency or destination not in topology.adjacency:
        raise Unreachable(f"unknown endpoint in pair ({source}, {destination})")
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (source,))]
    done: set[int] = set()
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == destination:
            return list(path)
        for peer in topology.adjacency[node]:
            if peer not in done:
                weight = topology.link_between(node, peer).metric
                heapq.heappush(heap, (dist + weight, path + (peer,)))
    raise Unreachable(f"no path from {source} to {destination}")


def sample_hop_delay(mean_s: float, rng: np.random.Generator) -> float:
    """One hop's transit time: normal with sd a tenth of the mean,
    truncated below at a hundredth of the mean."""
    if mean_s <= 0:
        raise ValueError("mean delay must be positive")
    return max(float(rng.normal(mean_s, mean_s / 10.0)), mean_s / 100.0)


def min_key_requirement(topology: Topology, apps) -> dict[tuple[int, int], int]:
    """Blocks each link must supply so every application's demand can be
    relayed over its shortest path."""
    required: dict[tuple[int, int], int] = {key: 0 for key in topology.links}
    for app in apps:
        path = route(topology, app.source, app.destination)
        for a, b in zip(path, path[1:]):
            required[topology.link_between(a, b).key] += app.demand_blocks
    return required


class LinkKeyPool:
    """Quantum-key stock of one link.

    Accrual is fractional-exact: non-integer per-slot replenishment carries
    a remainder so the long-run rate is honored.  ``available=None`` models
    an abundant supply (consumption is still counted).
    """

    def __init__(self, available: int | None, replenish_rate: float = 0.0):
        if available is not None and available < 0:
            raise ValueError("initial pool must be non-negative")
        self.available = available
        self.replenish_rate = replenish_rate
        self.accrual_remainder = 0.0
        self.initial = available if available is not None else 0
        self.accrued = 0
        self.consumed = 0

    @property
    def unlimited(self) -> bool:
        return self.available is None

    def accrue(self, seconds: float) -> None:
        if self.unlimited or self.replenish_rate <= 0:
            return
        self.accrual_remainder += self.replenish_rate * seconds
        whole = int(self.accrual_remainder)
        if whole:
            self.accrual_remainder -= whole
            self.available += whole
            self.accrued += whole

    def can_cover(self, blocks: int) -> bool:
        return self.unlimited or self.available >= blocks

    def consume(self, blocks: int) -> None:
        if not self.can_cover(blocks):
            raise ValueError("pool cannot cover requested blocks")
        if not self.unlimited:
            self.available -= blocks
        self.consumed += blocks

    def conserved(self) -> bool:
        """consumed + available - accrued == initial, exactly."""
        if self.unlimited:
            return True
        return self.consumed + self.available - self.accrued == self.initial


class RelayJob:
    """One (pair, slot) batch of relay requests moving along a path."""

    __slots__ = (
        "job_id",
        "pair",
        "send_slot",
        "blocks",
        "path",
        "hop_delays",
        "hop",
        "clock",
    )

    def __init__(self, job_id, pair, send_slot, blocks, path, hop_delays, depart_time):
        self.job_id = job_id
        self.pair = pair
        self.send_slot = send_slot
        self.blocks = blocks
        self.path = path
        self.hop_delays = hop_delays
        self.hop = 0
        self.clock = depart_time  # time at which the job can enter its next hop
    @property
    def hops(self) -> int:
        return len(self.hop_delays)


@dataclass(frozen=True)
class Delivery:
    pair: tuple[int, int]
    send_slot: int
    blocks: int
    delivered_slot: int

    @property
    def delay_slots(self) -> int:
        return self.delivered_slot - self.send_slot


_DELIVERED = 0
_WAITING = 1
_IN_TRANSIT = 2


class RelayEngine:
    """Moves relay jobs through the network one slot at a time."""

    def __init__(
        self,
        topology: Topology,
        pools: dict[tuple[int, int], LinkKeyPool],
        slot_seconds: float,
        rng: np.random.Generator,
    ):
        self.topology = topology
        self.pools = pools
        self._pool_order = sorted(pools)
        self.slot_seconds = slot_seconds
        self.rng = rng
        self._active: list[RelayJob] = []
        self._queues: dict[tuple[int, int], deque[RelayJob]] = {}
        self._next_id = 0
        self.sent_blocks: dict[tuple[int, int], int] = {}
        self.delivered_blocks: dict[tuple[int, int], int] = {}
        self.in_network: dict[tuple[int, int], int] = {}

    def audit_in_network(self, pair) -> int:
        """Recount a pair's undelivered blocks straight from the job lists."""
        total = sum(job.blocks for job in self._active if job.pair == pair)
        for queue in self._queues.values():
            total += sum(job.blocks for job in queue if job.pair == pair)
        return total

    def submit(self, pair, send_slot: int, blocks: int, path: list[int]) -> None:
        """Create one job for this slot's relay requests; per-hop delays are
        sampled immediately so the trajectory is seed-determined."""
        if blocks <= 0:
            return
        delays = tuple(
            sample_hop_delay(self.topology.link_between(a, b).mean_delay_s, self.rng)
            for a, b in zip(path, path[1:])
        )
        job = RelayJob(
            job_id=self._next_id,
            pair=pair,
            send_slot=send_slot,
            blocks=blocks,
            path=tuple(path),
            hop_delays=delays,
            depart_time=(send_slot + 1) * self.slot_seconds,
        )
        self._next_id += 1
        self._active.append(job)
        self.sent_blocks[pair] = self.sent_blocks.get(pair, 0) + blocks
        self.in_network[pair] = self.in_network.get(pair, 0) + blocks

    def _link_key(self, job: RelayJob) -> tuple[int, int]:
        a, b = job.path[job.hop], job.path[job.hop + 1]
        return (a, b) if a <= b else (b, a)

    def _move_forward(
        self, job: RelayJob, window_end: float, deliveries: list[Delivery]
    ) -> int:
        """Advance a job as far as this slot's window allows."""
        while job.clock <= window_end + _TIME_FUZZ:
            if job.hop == job.hops:
                delivered_slot = max(
                    job.send_slot + 1,
                    math.ceil(job.clock / self.slot_seconds - 1.0 - _TIME_FUZZ),
                )
                deliveries.append(
                    Delivery(job.pair, job.send_slot, job.blocks, delivered_slot)
                )
                self.delivered_blocks[job.pair] = (
                    self.delivered_blocks.get(job.pair, 0) + job.blocks
                )
                self.in_network[job.pair] -= job.blocks
                return _DELIVERED
            key = self._link_key(job)
            queue = self._queues.setdefault(key, deque())
            pool = self.pools[key]
            if queue or not pool.can_cover(job.blocks):
                queue.append(job)
                return _WAITING
            pool.consume(job.blocks)
            job.clock += job.hop_delays[job.hop]
            job.hop += 1
        return _IN_TRANSIT

    def advance(self, slot: int) -> list[Delivery]:
        """Process one slot: accrue pools, release waiters FIFO, move jobs.

        Returns the deliveries recognized at this slot's boundary.
        """
        window_end = (slot + 1) * self.slot_seconds
        slot_start = slot * self.slot_seconds
        deliveries: list[Delivery] = []
        for key in self._pool_order:
            self.pools[key].accrue(self.slot_seconds)
        # Waiting jobs go first, strictly FIFO per link.  A released job
        # re-enters the hop at the slot boundary that made keys available.
        for key in sorted(k for k, q in self._queues.items() if q):
            queue = self._queues[key]
            pool = self.pools[key]
            while queue and pool.can_cover(queue[0].blocks):
                job = queue.popleft()
                pool.consume(job.blocks)
                job.clock = max(job.clock, slot_start) + job.hop_delays[job.hop]
                job.hop += 1
                self._active.append(job)
        # Then everything mobile, in creation order.
        still_active: list[RelayJob] = []
        for job in sorted(self._active, key=lambda j: j.job_id):
            if self._move_forward(job, window_end, deliveries) == _IN_TRANSIT:
                still_active.append(job)
        self._active = still_active
        return deliveries
