import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decoyqkd.errors import AmbiguousSlot
from decoyqkd.fileio import read_frames, read_timestamps, write_frames, write_timestamps
from decoyqkd.params import ProtocolParams
from decoyqkd.sync import (
    DEFAULT_GUARD,
    ClockModel,
    SyncFrame,
    emit_timestamps,
    locate_slots,
    max_tolerable_drift,
    recover_indices,
)

P = ProtocolParams()
SPB = P.slots_per_block  # 8000


def test_identity_clock_timestamp():
    t, frames = emit_timestamps([8000], ClockModel(), P)
    assert t[0] == pytest.approx(25.0e-6, abs=1e-18)
    assert [f.block_index for f in frames] == [1]
    assert frames[0].sync_timestamp_s == t[0]


def test_drift_timestamp():
    t, _ = emit_timestamps([8000], ClockModel(drift_ppm=100.0), P)
    assert t[0] == pytest.approx(25.0025e-6, rel=1e-12)


def test_empty_input():
    t, frames = emit_timestamps([], ClockModel(), P)
    assert t.size == 0 and frames == []
    idx = recover_indices(np.empty(0), [], P)
    assert idx.size == 0


def test_unsorted_rejected():
    with pytest.raises(ValueError):
        emit_timestamps([5, 3], ClockModel(), P)


def test_frames_cover_spanned_blocks():
    _, frames = emit_timestamps([10, 16_005, 40_000], ClockModel(), P)
    assert [f.block_index for f in frames] == [0, 1, 2, 3, 4, 5]
    assert all(f.slots_per_block == SPB for f in frames)
    with pytest.raises(ValueError):
        SyncFrame(0.0, 0, 0)


def test_zero_drift_round_trip():
    rng = np.random.default_rng(0)
    slots = np.sort(rng.choice(10**7, 5000, replace=False))
    t, frames = emit_timestamps(slots, ClockModel(offset_s=1.7e-3), P)
    assert np.array_equal(recover_indices(t, frames, P), slots)


def _block_ends(n_blocks=50):
    return np.arange(1, n_blocks + 1) * SPB - 1


def test_drift_50ppm_recovers_exactly():
    slots = np.sort(np.r_[_block_ends(), np.arange(0, 400_000, 37)])
    t, frames = emit_timestamps(slots, ClockModel(drift_ppm=50.0), P)
    assert np.array_equal(recover_indices(t, frames, P), slots)


def test_drift_70ppm_misindexes_near_block_end():
    slots = np.arange(0, 3 * SPB)
    t, frames = emit_timestamps(slots, ClockModel(drift_ppm=70.0), P)
    idx, ambiguous = locate_slots(t, frames, P, guard=0.0)
    wrong = idx != slots
    assert wrong.any() and not ambiguous.any()
    pos_in_block = slots[wrong] % SPB
    # errors appear once 70e-6 * k exceeds half a slot, i.e. from k ~ 7143 on
    assert pos_in_block.min() >= 0.5 / 70e-6 - 1
    # with the default guard band those slots are flagged rather than silently wrong
    with pytest.raises(AmbiguousSlot) as exc:
        recover_indices(t, frames, P)
    assert exc.value.positions.size > 0


def test_guard_band_flags_half_slot():
    frames = [SyncFrame(0.0, 0, SPB)]
    slot = P.slot_period_s
    t = np.array([10.5 * slot, 10.46 * slot, 10.40 * slot, 10.56 * slot])
    idx, amb = locate_slots(t, frames, P)
    assert amb.tolist() == [True, True, False, False]
    assert idx[2] == 10 and idx[3] == 11
    _, amb0 = locate_slots(t, frames, P, guard=0.0)
    assert not amb0.any()


@pytest.mark.parametrize(
    "spb, margin, expected",
    [(8000, 0.0, 62.5), (1, 0.0, 500000.0), (8000, 0.25, 31.25)],
)
def test_max_tolerable_drift(spb, margin, expected):
    assert max_tolerable_drift(spb, margin) == pytest.approx(expected, rel=1e-12)


def test_max_tolerable_drift_from_params():
    assert max_tolerable_drift(P) == pytest.approx(62.5)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.0, 0.999), st.booleans(),
    st.lists(st.integers(0, 40 * SPB), min_size=1, max_size=300),
    st.floats(-1.0, 1.0),
)
def test_round_trip_below_tolerable_drift(fraction, negative, slots, offset):
    limit = max_tolerable_drift(P, jitter_margin=DEFAULT_GUARD)
    drift = fraction * limit * (-1 if negative else 1)
    slots = np.array(sorted(slots))
    t, frames = emit_timestamps(slots, ClockModel(drift_ppm=drift, offset_s=offset * 1e-3), P)
    assert np.array_equal(recover_indices(t, frames, P), slots)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.999), st.lists(st.integers(0, 10 * SPB), min_size=1, max_size=200))
def test_round_trip_up_to_limit_without_guard(fraction, slots):
    drift = fraction * max_tolerable_drift(P)
    slots = np.array(sorted(slots))
    t, frames = emit_timestamps(slots, ClockModel(drift_ppm=drift), P)
    idx, _ = locate_slots(t, frames, P, guard=0.0)
    assert np.array_equal(idx, slots)


@pytest.mark.parametrize("drift", [0.0, 40.0, 80.0])
def test_offset_invariance(drift):
    slots = np.arange(0, 5 * SPB, 3)
    t0, f0 = emit_timestamps(slots, ClockModel(drift_ppm=drift), P)
    for offset in (-3e-4, 2.5e-9, 0.125):
        t1, f1 = emit_timestamps(slots, ClockModel(drift_ppm=drift, offset_s=offset), P)
        # exact half-slot ties (80 ppm * 6250 slots) may round either way in floating point
        a, tie_a = locate_slots(t0, f0, P, guard=1e-6)
        b, tie_b = locate_slots(t1, f1, P, guard=1e-6)
        firm = ~(tie_a | tie_b)
        assert np.array_equal(a[firm], b[firm])
        assert firm.mean() > 0.999


def _error_rate(drift, jitter, seed=5):
    slots = np.arange(0, 20 * SPB, 7)
    rng = np.random.default_rng(seed)
    t, frames = emit_timestamps(slots, ClockModel(drift_ppm=drift, jitter_s=jitter), P, rng)
    idx, _ = locate_slots(t, frames, P, guard=0.0)
    return np.mean(idx != slots)


def test_error_rate_monotone_in_drift():
    rates = [_error_rate(d, 0.0) for d in (0, 30, 60, 63, 70, 100, 200, 400)]
    assert rates[:3] == [0.0, 0.0, 0.0]
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    assert rates[-1] > 0.5
    neg = [_error_rate(-d, 0.0) for d in (0, 70, 200)]
    assert all(a <= b for a, b in zip(neg, neg[1:]))


def test_error_rate_monotone_in_jitter():
    slot = P.slot_period_s
    rates = [_error_rate(20.0, j * slot) for j in (0.0, 0.05, 0.1, 0.2, 0.4, 1.0)]
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    assert rates[0] == 0.0 and rates[-1] > 0.3


def test_jitter_needs_rng():
    with pytest.raises(ValueError):
        ClockModel(jitter_s=1e-12).observe(np.zeros(3))
    with pytest.raises(ValueError):
        ClockModel(jitter_s=-1.0)


def test_timestamp_files_round_trip():
    slots = np.arange(0, 4 * SPB, 11) + 123_456 * SPB
    t, frames = emit_timestamps(slots, ClockModel(drift_ppm=10.0, offset_s=0.5), P)
    tbuf, fbuf = io.StringIO(), io.StringIO()
    write_timestamps(t, tbuf)
    write_frames(frames, fbuf)
    assert all(line.isdigit() for line in tbuf.getvalue().splitlines())
    assert fbuf.getvalue().splitlines()[0].split(",")[0] == str(123_456)
    t2 = read_timestamps(tbuf.getvalue().splitlines())
    f2 = read_frames(fbuf.getvalue().splitlines(), SPB)
    # nanosecond quantisation moves times by at most 0.16 slot, well inside the guard
    assert np.array_equal(recover_indices(t2, f2, P), slots)
