"""Alice's transmitter: 4-bit random numbers to intensity class and polarization.

The two high bits pick the class (00 vacuum, 01 decoy, 10/11 signal), the two
low bits pick one of four diodes, i.e. the polarization (00 H, 01 V, 10 D,
11 A).  Low bits are ignored for vacuum pulses.
"""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .params import IntensityClass, Polarization, ProtocolParams
from .rng import Stream, block_rng

NO_POL = -1

# high two bits -> class
_CLASS_OF_PREFIX = np.array(
    [IntensityClass.VACUUM, IntensityClass.DECOY, IntensityClass.SIGNAL, IntensityClass.SIGNAL],
    dtype=np.int8,
)


@dataclass(frozen=True)
class PulsePlan:
    slot_index: int
    cls: IntensityClass
    polarization: Polarization | None
    intensity: float

    def __post_init__(self):
        if self.slot_index < 0:
            raise ValueError("slot_index must be >= 0")
        if self.cls == IntensityClass.VACUUM:
            if self.polarization is not None or self.intensity != 0.0:
                raise ValueError("a vacuum pulse has zero intensity and no polarization")
        else:
            if self.polarization is None:
                raise ValueError(f"a {self.cls.name.lower()} pulse needs a polarization")
            if not self.intensity > 0.0:
                raise ValueError(f"a {self.cls.name.lower()} pulse needs positive intensity")

    def check_against(self, params: ProtocolParams) -> None:
        if self.intensity != params.intensity(self.cls):
            raise ValueError(
                f"intensity {self.intensity} does not match class {self.cls.name} "
                f"({params.intensity(self.cls)})"
            )


def encode_pulse(slot_index: int, nibble: int, params: ProtocolParams | None = None) -> PulsePlan:
    if not 0 <= nibble <= 15:
        raise ValueError(f"nibble must be in [0, 15], got {nibble}")
    params = params or ProtocolParams()
    cls = IntensityClass(int(_CLASS_OF_PREFIX[nibble >> 2]))
    if cls == IntensityClass.VACUUM:
        return PulsePlan(slot_index, cls, None, 0.0)
    return PulsePlan(slot_index, cls, Polarization(nibble & 3), params.intensity(cls))


def encode_nibbles(nibbles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`encode_pulse`: returns (class codes, polarization codes)."""
    nibbles = np.asarray(nibbles, dtype=np.uint8)
    if nibbles.size and nibbles.max() > 15:
        raise ValueError("nibbles must be in [0, 15]")
    cls = _CLASS_OF_PREFIX[nibbles >> 2]
    pol = np.where(cls == IntensityClass.VACUUM, NO_POL, nibbles & 3).astype(np.int8)
    return cls, pol


class PulseBlock(Sequence):
    """Columnar run of pulse plans; indexing yields :class:`PulsePlan`."""

    def __init__(self, slot: np.ndarray, cls: np.ndarray, pol: np.ndarray, params: ProtocolParams):
        self.slot = np.asarray(slot, dtype=np.int64)
        self.cls = np.asarray(cls, dtype=np.int8)
        self.pol = np.asarray(pol, dtype=np.int8)
        self.params = params
        if not (len(self.slot) == len(self.cls) == len(self.pol)):
            raise ValueError("column lengths differ")

    @classmethod
    def from_plans(cls, plans: Iterable[PulsePlan], params: ProtocolParams) -> PulseBlock:
        plans = list(plans)
        for p in plans:
            p.check_against(params)
        return cls(
            np.array([p.slot_index for p in plans], dtype=np.int64),
            np.array([p.cls for p in plans], dtype=np.int8),
            np.array([NO_POL if p.polarization is None else p.polarization for p in plans], dtype=np.int8),
            params,
        )

    @property
    def intensity(self) -> np.ndarray:
        table = np.array([0.0, self.params.mu, self.params.mu_prime])
        return table[self.cls]

    def __len__(self) -> int:
        return len(self.slot)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return PulseBlock(self.slot[i], self.cls[i], self.pol[i], self.params)
        cls = IntensityClass(int(self.cls[i]))
        pol = None if self.pol[i] == NO_POL else Polarization(int(self.pol[i]))
        return PulsePlan(int(self.slot[i]), cls, pol, self.params.intensity(cls))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PulseBlock):
            return NotImplemented
        return (
            np.array_equal(self.slot, other.slot)
            and np.array_equal(self.cls, other.cls)
            and np.array_equal(self.pol, other.pol)
        )


@dataclass(frozen=True)
class SourceStream:
    seed: int
    block_size: int
    params: ProtocolParams

    def __post_init__(self):
        if self.block_size < 0:
            raise ValueError("block_size must be >= 0")


def generate_block(stream: SourceStream, block_index: int) -> PulseBlock:
    """Pulses ``block_index*block_size`` .. ``+block_size-1``; pure in (seed, block_index)."""
    if block_index < 0:
        raise ValueError("block_index must be >= 0")
    n = stream.block_size
    rng = block_rng(stream.seed, Stream.SOURCE, block_index)
    nibbles = rng.integers(0, 16, size=n, dtype=np.uint8)
    cls, pol = encode_nibbles(nibbles)
    start = block_index * n
    slot = np.arange(start, start + n, dtype=np.int64)
    return PulseBlock(slot, cls, pol, stream.params)


@dataclass(frozen=True)
class Histogram:
    by_class: tuple[int, int, int]
    # [class][polarization]; the vacuum row stays zero
    by_polarization: tuple[tuple[int, int, int, int], ...]

    @property
    def total(self) -> int:
        return sum(self.by_class)


def class_histogram(plans: PulseBlock | Iterable[PulsePlan]) -> Histogram:
    if isinstance(plans, PulseBlock):
        cls, pol = plans.cls.astype(np.int64), plans.pol.astype(np.int64)
    else:
        plans = list(plans)
        cls = np.array([p.cls for p in plans], dtype=np.int64)
        pol = np.array([NO_POL if p.polarization is None else p.polarization for p in plans], dtype=np.int64)
    by_class = np.bincount(cls, minlength=3)[:3]
    lit = pol != NO_POL
    grid = np.bincount(cls[lit] * 4 + pol[lit], minlength=12)[:12].reshape(3, 4)
    return Histogram(
        by_class=tuple(int(x) for x in by_class),
        by_polarization=tuple(tuple(int(x) for x in row) for row in grid),
    )


def write_pulse_dump(plans: PulseBlock, out: TextIO) -> None:
    """``slot_index,class,polarization`` per line; class V/D/S, polarization H/V/D/A/-."""
    pol_codes = np.array(["H", "V", "D", "A", "-"])
    cls_codes = np.array(["V", "D", "S"])
    pols = pol_codes[np.where(plans.pol == NO_POL, 4, plans.pol)]
    classes = cls_codes[plans.cls]
    for s, c, p in zip(plans.slot.tolist(), classes.tolist(), pols.tolist()):
        out.write(f"{s},{c},{p}\n")


def read_pulse_dump(lines: Iterable[str], params: ProtocolParams) -> PulseBlock:
    slots, classes, pols = [], [], []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            s, c, p = line.split(",")
            slot = int(s)
            cls = IntensityClass.from_code(c)
            pol = NO_POL if p == "-" else Polarization[p]
        except (ValueError, KeyError) as exc:
            raise ValueError(f"line {lineno}: bad pulse record {line!r}") from exc
        if (pol == NO_POL) != (cls == IntensityClass.VACUUM):
            raise ValueError(f"line {lineno}: polarization must be '-' exactly for vacuum pulses")
        slots.append(slot)
        classes.append(cls)
        pols.append(pol)
    return PulseBlock(np.array(slots, dtype=np.int64), np.array(classes, dtype=np.int8),
                      np.array(pols, dtype=np.int8), params)
