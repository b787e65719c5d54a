"""Block-wise slot recovery from sparse sync pulses and a drifting local clock.

Alice's slot clock runs at ``pulse_rate_hz``; every ``slots_per_block`` slots
she also emits a sync pulse.  Bob timestamps sync pulses and detections with
his own clock, which is offset, runs fast or slow by ``drift_ppm`` and adds
Gaussian jitter.  Within a block Bob counts nominal slot periods from the
last sync pulse, so the accumulated drift must stay under half a slot by the
end of the block.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousSlot
from .params import ProtocolParams

DEFAULT_GUARD = 0.05


@dataclass(frozen=True)
class ClockModel:
    drift_ppm: float = 0.0
    jitter_s: float = 0.0
    offset_s: float = 0.0

    def __post_init__(self):
        if not self.jitter_s >= 0.0:
            raise ValueError("jitter_s must be >= 0")

    def observe(self, true_time_s: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        t = self.offset_s + np.asarray(true_time_s, dtype=float) * (1.0 + self.drift_ppm * 1e-6)
        if self.jitter_s > 0.0:
            if rng is None:
                raise ValueError("a jittery clock needs an rng")
            t = t + rng.normal(0.0, self.jitter_s, size=t.shape)
        return t


@dataclass(frozen=True)
class SyncFrame:
    sync_timestamp_s: float
    block_index: int
    slots_per_block: int

    def __post_init__(self):
        if self.slots_per_block < 1:
            raise ValueError("slots_per_block must be a positive integer")


def emit_timestamps(
    slot_indices,
    clock: ClockModel,
    params: ProtocolParams,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[SyncFrame]]:
    """Bob's view of the given slots, plus one sync frame per block they span."""
    slots = np.asarray(slot_indices, dtype=np.int64)
    if slots.size == 0:
        return np.empty(0), []
    if np.any(np.diff(slots) < 0):
        raise ValueError("slot indices must be sorted ascending")
    spb = params.slots_per_block
    f = params.pulse_rate_hz
    blocks = np.arange(slots[0] // spb, slots[-1] // spb + 1, dtype=np.int64)
    # sync pulses first so the rng draw order does not depend on detections
    sync_times = clock.observe(blocks * spb / f, rng)
    times = clock.observe(slots / f, rng)
    frames = [SyncFrame(float(t), int(b), spb) for t, b in zip(sync_times, blocks)]
    return times, frames


def locate_slots(
    timestamps, frames: Sequence[SyncFrame], params: ProtocolParams, guard: float = DEFAULT_GUARD
) -> tuple[np.ndarray, np.ndarray]:
    """Recovered slot indices and a mask of positions inside the guard band.

    Each timestamp is measured from the latest sync frame at or before it, in
    nominal slot periods, and rounded.  A fractional part within ``guard`` of
    one half is flagged instead of trusted.
    """
    t = np.asarray(timestamps, dtype=float)
    if t.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=bool)
    if not frames:
        raise ValueError("no sync frames to anchor timestamps")
    sync_t = np.array([fr.sync_timestamp_s for fr in frames])
    block = np.array([fr.block_index for fr in frames], dtype=np.int64)
    spb = frames[0].slots_per_block
    if np.any(np.diff(sync_t) < 0):
        order = np.argsort(sync_t, kind="stable")
        sync_t, block = sync_t[order], block[order]
    which = np.searchsorted(sync_t, t, side="right") - 1
    # a detection jittered just ahead of the first sync pulse still belongs to it
    which = np.clip(which, 0, None)
    x = (t - sync_t[which]) * params.pulse_rate_hz
    frac = x - np.floor(x)
    ambiguous = np.abs(frac - 0.5) < guard
    idx = block[which] * spb + np.floor(x + 0.5).astype(np.int64)
    return idx, ambiguous


def recover_indices(
    timestamps, frames: Sequence[SyncFrame], params: ProtocolParams, guard: float = DEFAULT_GUARD
) -> np.ndarray:
    idx, ambiguous = locate_slots(timestamps, frames, params, guard)
    if ambiguous.any():
        where = np.flatnonzero(ambiguous)
        raise AmbiguousSlot(
            f"{where.size} timestamp(s) within {guard} slot of a slot boundary "
            f"(first at position {where[0]})",
            positions=where,
        )
    return idx


def max_tolerable_drift(params: ProtocolParams | int, jitter_margin: float = 0.0) -> float:
    """Largest clock drift, in ppm, that keeps a whole block under half a slot of error.

    ``params`` may be a slots-per-block count instead of a parameter set.
    """
    spb = params if isinstance(params, (int, np.integer)) else params.slots_per_block
    if spb < 1:
        raise ValueError("slots_per_block must be >= 1")
    return (0.5 - jitter_margin) / spb * 1e6
