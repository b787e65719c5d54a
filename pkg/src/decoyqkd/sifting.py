"""Basis reconciliation, test-bit sampling and the tally handed to the analysis."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .channel import AggregateCounts, DetectionBlock
from .errors import EmptyTestSet, QberAboveHalf, UnknownSlot
from .params import IntensityClass, ProtocolParams, Tally
from .source import NO_POL, PulseBlock


class Role(IntEnum):
    KEY_CANDIDATE = 0
    PHASE_TEST = 1
    BIT_TEST = 2


@dataclass(frozen=True)
class SiftedBit:
    slot_index: int
    cls: IntensityClass
    alice_bit: int | None  # None for vacuum pulses: those clicks are darks
    bob_bit: int
    role: Role = Role.KEY_CANDIDATE

    @property
    def error(self) -> bool:
        return self.alice_bit is not None and self.alice_bit != self.bob_bit


class SiftedBits(Sequence):
    def __init__(self, slot, cls, alice_bit, bob_bit, role=None):
        self.slot = np.asarray(slot, dtype=np.int64)
        self.cls = np.asarray(cls, dtype=np.int8)
        self.alice_bit = np.asarray(alice_bit, dtype=np.int8)
        self.bob_bit = np.asarray(bob_bit, dtype=np.int8)
        self.role = np.zeros(len(self.slot), dtype=np.int8) if role is None else np.asarray(role, dtype=np.int8)

    def __len__(self) -> int:
        return len(self.slot)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray)):
            return SiftedBits(self.slot[i], self.cls[i], self.alice_bit[i], self.bob_bit[i], self.role[i])
        a = int(self.alice_bit[i])
        return SiftedBit(
            int(self.slot[i]), IntensityClass(int(self.cls[i])), None if a < 0 else a,
            int(self.bob_bit[i]), Role(int(self.role[i])),
        )

    @property
    def errors(self) -> np.ndarray:
        return (self.alice_bit >= 0) & (self.alice_bit != self.bob_bit)

    def of_class(self, cls: IntensityClass) -> SiftedBits:
        return self[self.cls == cls]

    def with_role(self, role: Role) -> SiftedBits:
        return self[self.role == role]

    @property
    def phase_test(self) -> SiftedBits:
        return self.with_role(Role.PHASE_TEST)

    @property
    def bit_test(self) -> SiftedBits:
        return self.with_role(Role.BIT_TEST)

    @property
    def key(self) -> SiftedBits:
        return self.with_role(Role.KEY_CANDIDATE)


def _lookup(plans: PulseBlock, slots: np.ndarray) -> np.ndarray:
    """Row of ``plans`` holding each slot; raises UnknownSlot for strays."""
    order = None
    plan_slots = plans.slot
    if np.any(np.diff(plan_slots) < 0):
        order = np.argsort(plan_slots, kind="stable")
        plan_slots = plan_slots[order]
    pos = np.searchsorted(plan_slots, slots)
    pos_c = np.minimum(pos, max(len(plan_slots) - 1, 0))
    bad = (pos >= len(plan_slots)) | (plan_slots[pos_c] != slots) if len(plan_slots) else np.ones(len(slots), bool)
    if np.any(bad):
        stray = int(slots[np.flatnonzero(bad)[0]])
        raise UnknownSlot(f"detection at slot {stray} matches no pulse plan")
    return pos_c if order is None else order[pos_c]


def sift(plans: PulseBlock, detections: DetectionBlock) -> SiftedBits:
    """Keep detections in Alice's basis, and every vacuum-pulse detection."""
    rows = _lookup(plans, detections.slot)
    cls = plans.cls[rows]
    pol = plans.pol[rows]
    det = detections.detector
    vacuum = cls == IntensityClass.VACUUM
    keep = vacuum | ((det >> 1) == (pol >> 1))
    alice = np.where(pol == NO_POL, -1, pol & 1)
    return SiftedBits(detections.slot[keep], cls[keep], alice[keep], (det & 1)[keep])


def count_clicks(plans: PulseBlock, detections: DetectionBlock) -> tuple[int, int, int]:
    """All detections per intensity class, before sifting."""
    rows = _lookup(plans, detections.slot)
    counts = np.bincount(plans.cls[rows].astype(np.int64), minlength=3)
    return tuple(int(c) for c in counts[:3])


def sample_test_bits(sifted: SiftedBits, L_p: float, L_b: float, rng: np.random.Generator) -> SiftedBits:
    """Assign each sifted bit independently to phase test (L_p), bit test (L_b) or key.

    The returned bits carry their roles; ``.phase_test``, ``.bit_test`` and
    ``.key`` give the three disjoint sets.
    """
    if not (0 <= L_p and 0 <= L_b and L_p + L_b < 1):
        raise ValueError("need L_p, L_b >= 0 and L_p + L_b < 1")
    u = rng.random(len(sifted))
    role = np.full(len(sifted), Role.KEY_CANDIDATE, dtype=np.int8)
    role[u < L_p + L_b] = Role.BIT_TEST
    role[u < L_p] = Role.PHASE_TEST
    return SiftedBits(sifted.slot, sifted.cls, sifted.alice_bit, sifted.bob_bit, role)


def _check_qber(e: float, n_test: int, cls: IntensityClass) -> float:
    # small test sets can exceed 1/2 by chance; that is an analysis outcome, not bad input
    if e > 0.5:
        raise QberAboveHalf(
            f"observed {cls.name.lower()} QBER {e:.4g} on {n_test} test bits exceeds 0.5; no key possible"
        )
    return e


def _qber(bits: SiftedBits, cls: IntensityClass) -> tuple[float, int]:
    if len(bits) == 0:
        raise EmptyTestSet(f"no test bits for the {cls.name.lower()} class")
    return _check_qber(float(bits.errors.sum()) / len(bits), len(bits), cls), len(bits)


def tally(
    sifted: SiftedBits,
    sent_counts: Sequence[int],
    click_counts: Sequence[int],
    decoy_qber: str = "all",
) -> Tally:
    """Build the analysis tally.

    ``click_counts`` are the per-class detection counts before sifting.  The
    signal QBER comes from the phase-test bits; the decoy QBER from all decoy
    bits (``decoy_qber="all"``) or from its phase-test bits (``"phase_test"``).
    """
    if decoy_qber not in ("all", "phase_test"):
        raise ValueError("decoy_qber must be 'all' or 'phase_test'")
    decoy = sifted.of_class(IntensityClass.DECOY)
    if decoy_qber == "phase_test":
        decoy = decoy.phase_test
    signal = sifted.of_class(IntensityClass.SIGNAL).phase_test
    e_mu, t_mu = _qber(decoy, IntensityClass.DECOY)
    e_mup, t_mup = _qber(signal, IntensityClass.SIGNAL)
    t_vac = len(sifted.of_class(IntensityClass.VACUUM).phase_test)
    return Tally(
        n_sent=tuple(sent_counts),
        c_received=tuple(click_counts),
        e_observed=(e_mu, e_mup),
        test_counts=(min(t_vac, click_counts[0]), t_mu, t_mup),
    )


def tally_from_aggregate(
    counts: AggregateCounts, params: ProtocolParams, rng: np.random.Generator, decoy_qber: str = "all"
) -> Tally:
    """Tally for aggregate-mode counts, drawing the phase-test subsets by count."""
    tests, errs = [], []
    for cls in IntensityClass:
        s, e = counts.sifted[cls], counts.errors[cls]
        t = int(rng.binomial(s, params.test_fraction_phase))
        if cls == IntensityClass.DECOY and decoy_qber == "all":
            tests.append(s)
            errs.append(e)
            continue
        if t == 0:
            te = 0
        elif max(e, s - e) < 10**9:
            te = int(rng.hypergeometric(e, s - e, t))
        else:
            te = int(rng.binomial(t, e / s))
        tests.append(t)
        errs.append(te)
    for cls in (IntensityClass.DECOY, IntensityClass.SIGNAL):
        if tests[cls] == 0:
            raise EmptyTestSet(f"no test bits for the {cls.name.lower()} class")
    e_obs = tuple(
        _check_qber(errs[c] / tests[c], tests[c], c) for c in (IntensityClass.DECOY, IntensityClass.SIGNAL)
    )
    return Tally(
        n_sent=counts.sent,
        c_received=counts.clicks,
        e_observed=e_obs,
        test_counts=(min(tests[0], counts.clicks[0]), tests[1], tests[2]),
    )
