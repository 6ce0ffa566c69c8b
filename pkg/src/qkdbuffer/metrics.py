"""Per-run metric collection and artifact emission.

Four headline metrics: buffer size (bytes), key supply latency, instant
supply ratio (requests served in their arrival slot), and application
completion ratio.  Buffer and instant-ratio statistics exclude each
pair's initial probe/adjust warmup unless ``include_warmup`` is set;
completion is always whole-run.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class RequestRecord:
    pair: tuple[int, int]
    app_index: int
    arrival_slot: int
    served_slot: int
    count: int


@dataclass
class RunMetrics:
    """Aggregates of one finished run."""

    slot_seconds: float
    block_bytes: int
    instant_ratio: float
    completion_ratio: float
    mean_buffer_bytes: float
    max_buffer_bytes: float
    latency_samples: list[float]
    buffer_trace: dict[tuple[int, int], list[tuple[int, int, int]]]
    total_key_consumption: dict[tuple[int, int], int]
    per_pair: dict[tuple[int, int], dict]
    per_app: list[dict]
    requests_measured: int
    instant_ratio_with_warmup: float
    requests: list[RequestRecord] = field(default_factory=list)

    def latency_quantile(self, q: float) -> float:
        if not self.latency_samples:
            return 0.0
        ordered = sorted(self.latency_samples)
        idx = min(len(ordered) - 1, int(q * len(ordered)))
        return ordered[idx]


class MetricsCollector:
    """Streams per-request and per-slot records during a run."""

    def __init__(self, slot_seconds: float, block_bits: int = 256):
        self.slot_seconds = slot_seconds
        self.block_bytes = block_bits // 8
        self.requests: list[RequestRecord] = []
        self.traces: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
        self.warmup_end: dict[tuple[int, int], int] = {}
        self._instant_streaming = 0
        self._served_streaming = 0

    def record_request(
        self,
        pair: tuple[int, int],
        app_index: int,
        arrival_slot: int,
        served_slot: int,
        count: int = 1,
    ) -> float:
        """Register served requests; returns their latency in seconds."""
        if served_slot < arrival_slot:
            raise ValueError("requests cannot be served before they arrive")
        self.requests.append(
            RequestRecord(pair, app_index, arrival_slot, served_slot, count)
        )
        self._served_streaming += count
        if served_slot == arrival_slot:
            self._instant_streaming += count
        return (served_slot - arrival_slot) * self.slot_seconds

    def record_buffer(
        self, slot: int, pair: tuple[int, int], key_blocks: int, backlog: int
    ) -> None:
        self.traces.setdefault(pair, []).append((slot, key_blocks, backlog))

    def set_warmup(self, pair: tuple[int, int], end_slot: int) -> None:
        self.warmup_end[pair] = end_slot

    # -- finalization ---------------------------------------------------------

    def finalize(
        self,
        apps,
        served_per_app: dict[int, int],
        consumption: dict[tuple[int, int], int],
        include_warmup: bool = False,
    ) -> RunMetrics:
        """Aggregate the run.  ``apps`` is the ordered AppSpec list."""
        instant_all = 0
        served_all = 0
        instant_measured = 0
        served_measured = 0
        latencies: list[float] = []
        for rec in self.requests:
            warmup = 0 if include_warmup else self.warmup_end.get(rec.pair, 0)
            instant = rec.served_slot == rec.arrival_slot
            served_all += rec.count
            instant_all += rec.count if instant else 0
            if rec.arrival_slot >= warmup:
                served_measured += rec.count
                instant_measured += rec.count if instant else 0
                latencies.extend(
                    [(rec.served_slot - rec.arrival_slot) * self.slot_seconds]
                    * rec.count
                )
        # streaming counter and post-hoc scan must agree exactly
        assert served_all == self._served_streaming
        assert instant_all == self._instant_streaming

        per_pair: dict[tuple[int, int], dict] = {}
        level_sum = 0.0
        level_slots = 0
        level_max = 0
        for pair, trace in self.traces.items():
            warmup = 0 if include_warmup else self.warmup_end.get(pair, 0)
            levels = [blocks for slot, blocks, _ in trace if slot >= warmup]
            if not levels:
                levels = [0]
            pair_mean = sum(levels) / len(levels)
            pair_max = max(levels)
            level_sum += sum(levels)
            level_slots += len(levels)
            level_max = max(level_max, pair_max)
            per_pair[pair] = {
                "mean_buffer_bytes": pair_mean * self.block_bytes,
                "max_buffer_bytes": pair_max * self.block_bytes,
                "warmup_slots": self.warmup_end.get(pair, 0),
                "measured_slots": len(levels),
            }

        per_app = []
        completed = 0
        for idx, app in enumerate(apps):
            served = served_per_app.get(idx, 0)
            done = served >= app.demand_blocks
            completed += 1 if done else 0
            per_app.append(
                {
                    "source": app.source,
                    "destination": app.destination,
                    "demand_blocks": app.demand_blocks,
                    "served_blocks": served,
                    "completed": done,
                }
            )

        return RunMetrics(
            slot_seconds=self.slot_seconds,
            block_bytes=self.block_bytes,
            instant_ratio=(instant_measured / served_measured) if served_measured else 0.0,
            completion_ratio=(completed / len(apps)) if apps else 1.0,
            mean_buffer_bytes=(level_sum / level_slots) * self.block_bytes
            if level_slots
            else 0.0,
            max_buffer_bytes=float(level_max * self.block_bytes),
            latency_samples=latencies,
            buffer_trace=self.traces,
            total_key_consumption=dict(consumption),
            per_pair=per_pair,
            per_app=per_app,
            requests_measured=served_measured,
            instant_ratio_with_warmup=(instant_all / served_all) if served_all else 0.0,
            requests=self.requests,
        )


def summary_dict(metrics: RunMetrics, name: str, seed: int, horizon: int) -> dict:
    return {
        "scenario": name,
        "seed": seed,
        "horizon_slots": horizon,
        "slot_seconds": metrics.slot_seconds,
        "instant_ratio": metrics.instant_ratio,
        "instant_ratio_with_warmup": metrics.instant_ratio_with_warmup,
        "completion_ratio": metrics.completion_ratio,
        "mean_buffer_bytes": metrics.mean_buffer_bytes,
        "max_buffer_bytes": metrics.max_buffer_bytes,
        "requests_measured": metrics.requests_measured,
        "latency_s": {
            "mean": (
                sum(metrics.latency_samples) / len(metrics.latency_samples)
                if metrics.latency_samples
                else 0.0
            ),
            "p50": metrics.latency_quantile(0.50),
            "p95": metrics.latency_quantile(0.95),
            "max": max(metrics.latency_samples, default=0.0),
        },
        "key_consumption_blocks": {
            f"{a}-{b}": blocks
            for (a, b), blocks in sorted(metrics.total_key_consumption.items())
        },
        "pairs": {
            f"{a}-{b}": stats for (a, b), stats in sorted(metrics.per_pair.items())
        },
        "apps": metrics.per_app,
    }


def write_artifacts(
    metrics: RunMetrics,
    out_dir: Path,
    name: str,
    seed: int,
    horizon: int,
    config_text: str,
) -> None:
    """Emit the run directory: config snapshot, summary JSON, two CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(config_text, encoding="utf-8")
    summary = summary_dict(metrics, name, seed, horizon)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    with open(out_dir / "requests.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["source", "destination", "app", "arrival_slot", "served_slot",
             "latency_s", "instant"]
        )
        for rec in sorted(
            metrics.requests,
            key=lambda r: (r.arrival_slot, r.pair, r.app_index, r.served_slot),
        ):
            latency = (rec.served_slot - rec.arrival_slot) * metrics.slot_seconds
            for _ in range(rec.count):
                writer.writerow(
                    [
                        rec.pair[0],
                        rec.pair[1],
                        rec.app_index,
                        rec.arrival_slot,
                        rec.served_slot,
                        f"{latency:.6f}",
                        int(rec.served_slot == rec.arrival_slot),
                    ]
                )
    with open(out_dir / "buffer_trace.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["slot", "source", "destination", "key_blocks", "backlog"])
        for pair in sorted(metrics.buffer_trace):
            for slot, blocks, backlog in metrics.buffer_trace[pair]:
                writer.writerow([slot, pair[0], pair[1], blocks, backlog])
