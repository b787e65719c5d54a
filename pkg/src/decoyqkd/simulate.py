"""End-to-end runs: source -> channel -> clock recovery -> sifting -> tally."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import AggregateCounts, ChannelModel, DetectionBlock, detect_block, simulate_aggregate
from .params import ProtocolParams, Tally
from .rng import Stream, block_rng
from .sifting import SiftedBits, count_clicks, sample_test_bits, sift, tally, tally_from_aggregate
from .source import SourceStream, class_histogram, generate_block
from .sync import DEFAULT_GUARD, ClockModel, emit_timestamps, locate_slots

DEFAULT_BLOCK_SIZE = 1 << 20
PER_PULSE_CAP = 10**9


@dataclass
class PerPulseResult:
    sent: tuple[int, int, int]
    clicks: tuple[int, int, int]
    sifted: SiftedBits
    detections: DetectionBlock
    n_ambiguous: int = 0
    n_misindexed: int = 0
    blocks: int = 0
    extra: dict = field(default_factory=dict)

    def to_tally(self, decoy_qber: str = "all") -> Tally:
        return tally(self.sifted, self.sent, self.clicks, decoy_qber)


def run_per_pulse(
    params: ProtocolParams,
    channel: ChannelModel,
    n_pulses: int,
    seed: int,
    clock: ClockModel | None = None,
    block_size: int = DEFAULT_BLOCK_SIZE,
    guard: float = DEFAULT_GUARD,
    cap: int = PER_PULSE_CAP,
) -> PerPulseResult:
    """Event-level simulation of ``n_pulses`` slots.

    Detections are timestamped on Bob's clock and re-indexed from the sync
    frames.  Timestamps inside the guard band are discarded; detections whose
    recovered slot is wrong are sifted against the wrong plan, just as Bob
    would (they are counted in ``n_misindexed`` for diagnostics only).
    """
    if n_pulses > cap:
        raise ValueError(
            f"per-pulse mode is capped at {cap:.3g} pulses (asked for {n_pulses:.3g}); "
            "use aggregate mode for full-scale runs"
        )
    if n_pulses < 0:
        raise ValueError("n_pulses must be >= 0")
    clock = clock or ClockModel()
    stream = SourceStream(seed=seed, block_size=block_size, params=params)
    n_blocks = -(-n_pulses // block_size) if block_size else 0

    sent = np.zeros(3, dtype=np.int64)
    clicks = np.zeros(3, dtype=np.int64)
    sifted_parts, det_parts = [], []
    n_ambiguous = n_misindexed = 0
    for b in range(n_blocks):
        plans = generate_block(stream, b)
        if (b + 1) * block_size > n_pulses:
            plans = plans[: n_pulses - b * block_size]
        sent += class_histogram(plans).by_class
        det = detect_block(plans, channel, params, block_rng(seed, Stream.DETECTION, b))
        clicks += count_clicks(plans, det)
        times, frames = emit_timestamps(det.slot, clock, params, block_rng(seed, Stream.CLOCK, b))
        recovered, ambiguous = locate_slots(times, frames, params, guard)
        n_ambiguous += int(ambiguous.sum())
        n_misindexed += int(np.sum(~ambiguous & (recovered != det.slot)))
        lo, hi = (plans.slot[0], plans.slot[-1]) if len(plans) else (0, -1)
        # a slot recovered outside this block has no plan here; Bob loses it
        in_block = ~ambiguous & (recovered >= lo) & (recovered <= hi)
        seen = DetectionBlock(recovered[in_block], det.detector[in_block], det.outcome[in_block], times[in_block])
        det_parts.append(seen)
        sifted_parts.append(sift(plans, seen))

    detections = DetectionBlock.concat(det_parts)
    merged = _concat_sifted(sifted_parts)
    merged = sample_test_bits(
        merged, params.test_fraction_phase, params.test_fraction_bit, block_rng(seed, Stream.SAMPLING)
    )
    return PerPulseResult(
        sent=tuple(int(x) for x in sent),
        clicks=tuple(int(x) for x in clicks),
        sifted=merged,
        detections=detections,
        n_ambiguous=n_ambiguous,
        n_misindexed=n_misindexed,
        blocks=n_blocks,
    )


def _concat_sifted(parts: list[SiftedBits]) -> SiftedBits:
    if not parts:
        return SiftedBits([], [], [], [])
    return SiftedBits(
        np.concatenate([p.slot for p in parts]),
        np.concatenate([p.cls for p in parts]),
        np.concatenate([p.alice_bit for p in parts]),
        np.concatenate([p.bob_bit for p in parts]),
    )


def run_aggregate(
    params: ProtocolParams, channel: ChannelModel, n_pulses: int, seed: int
) -> AggregateCounts:
    return simulate_aggregate(params, channel, n_pulses, block_rng(seed, Stream.AGGREGATE))


def aggregate_tally(
    params: ProtocolParams, counts: AggregateCounts, seed: int, decoy_qber: str = "all"
) -> Tally:
    return tally_from_aggregate(counts, params, block_rng(seed, Stream.SAMPLING), decoy_qber)
