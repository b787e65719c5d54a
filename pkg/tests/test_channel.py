import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decoyqkd.channel import (
    ChannelModel,
    DetectionBlock,
    DetectionRecord,
    Outcome,
    calibrate_channel,
    class_probabilities,
    detect_block,
    detect_pulse,
    simulate_aggregate,
    system_transmittance,
    write_detection_dump,
)
from decoyqkd.errors import NoSolution, ValidationError
from decoyqkd.params import Basis, IntensityClass, Polarization, ProtocolParams, Tally
from decoyqkd.sifting import sift
from decoyqkd.source import PulseBlock, SourceStream, encode_pulse, generate_block
from decoyqkd.published import published_params, published_tally

V, D, S = IntensityClass


@pytest.fixture(scope="module")
def calibrated():
    cal = calibrate_channel(published_tally(), published_params())
    return cal, cal.apply(published_params())


def test_system_transmittance_examples():
    eta = system_transmittance(ProtocolParams())
    assert eta[0] == pytest.approx(4.0e-6, rel=1e-12)
    assert eta[3] == pytest.approx(3.0e-6, rel=1e-12)
    lossless = ProtocolParams(fiber_length_km=0.0, detector_efficiencies=(1.0,) * 4)
    assert np.all(system_transmittance(lossless) == 1.0)


def test_channel_model_invariants():
    with pytest.raises(ValidationError):
        ChannelModel(0.0, 0.01)
    with pytest.raises(ValidationError):
        ChannelModel(0.5, 0.6)
    assert ChannelModel.from_params(ProtocolParams()).transmittance == pytest.approx(1e-4)


def test_calibrated_signal_rate_matches_table(calibrated):
    cal, params = calibrated
    sig = class_probabilities(params, cal.channel, S)
    assert sig.click == pytest.approx(9.0941e-7, rel=1e-10)
    assert sig.qber == pytest.approx(0.0196, rel=1e-10)


def test_vacuum_no_darks_never_clicks():
    params = ProtocolParams(dark_rates_hz=(0.0,) * 4)
    ch = ChannelModel.from_params(params)
    rng = np.random.default_rng(0)
    plan = encode_pulse(0, 0, params)
    assert all(detect_pulse(plan, ch, params, rng).outcome == Outcome.NO_CLICK for _ in range(2000))
    assert class_probabilities(params, ch, V).click == 0.0


def test_dark_only_rate():
    params = ProtocolParams()
    p = class_probabilities(params, ChannelModel.from_params(params), V)
    assert p.click == pytest.approx(1.25e-8, rel=1e-6)
    # the exact four-detector expression differs from the linear sum only at 1e-16
    assert abs(p.click - sum(params.dark_rates_hz) / params.pulse_rate_hz) <= 1e-15
    assert p.sift == pytest.approx(p.click, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(1e-9, 1.0), st.floats(0.0, 0.5),
    st.lists(st.floats(0.0, 1e6), min_size=4, max_size=4),
    st.sampled_from(list(IntensityClass)),
)
def test_probabilities_sum_to_one(T, e, darks, cls):
    params = ProtocolParams(dark_rates_hz=tuple(darks))
    p = class_probabilities(params, ChannelModel(T, e), cls)
    assert abs(p.click + p.no_click - 1.0) <= 1e-12
    assert 0.0 <= p.error <= p.sift <= p.click + 1e-15


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-8, 0.5), st.floats(1e-8, 0.5), st.floats(0.0, 10.0), st.floats(0.0, 0.5))
def test_click_probability_monotone(T_a, T_b, dark, e):
    lo, hi = sorted((T_a, T_b))
    params = ProtocolParams(dark_rates_hz=(dark,) * 4)
    clicks = lambda T, c, p=params: class_probabilities(p, ChannelModel(T, e), c).click  # noqa: E731
    # intensity
    assert clicks(lo, V) <= clicks(lo, D) <= clicks(lo, S)
    # transmittance
    assert clicks(lo, S) <= clicks(hi, S)
    # dark rate
    more_dark = params.replace(dark_rates_hz=(dark + 1.0,) * 4)
    assert clicks(lo, S) <= clicks(lo, S, more_dark)


def test_zero_misalignment_zero_darks_gives_zero_qber():
    params = ProtocolParams(
        fiber_length_km=0.0, detector_efficiencies=(1.0,) * 4, dark_rates_hz=(0.0,) * 4,
        misalignment_prob=0.0,
    )
    ch = ChannelModel.from_params(params)
    block = generate_block(SourceStream(11, 200_000, params), 0)
    det = detect_block(block, ch, params, np.random.default_rng(1))
    bits = sift(block, det)
    nonvac = bits.of_class(D).errors.sum() + bits.of_class(S).errors.sum()
    assert len(bits) > 20_000 and nonvac == 0
    assert class_probabilities(params, ch, S).error == 0.0


def test_detect_pulse_record_consistency():
    params = ProtocolParams(fiber_length_km=0.0, detector_efficiencies=(1.0,) * 4)
    ch = ChannelModel.from_params(params)
    rng = np.random.default_rng(3)
    seen = set()
    for i in range(400):
        rec = detect_pulse(encode_pulse(i, 8 + i % 4, params), ch, params, rng)
        if rec.outcome != Outcome.NO_CLICK:
            assert rec.detector >> 1 == rec.basis_chosen
            seen.add(rec.detector)
    assert seen == {0, 1, 2, 3}
    with pytest.raises(ValueError):
        DetectionRecord(0, Basis.RECTILINEAR, Outcome.CLICK, detector=Polarization.D)


def test_monte_carlo_matches_analytic_block():
    # n = 1e7 per class, bright channel so every count is large
    params = ProtocolParams(
        fiber_length_km=20.0, misalignment_prob=0.03, dark_rates_hz=(2e4, 2e4, 1e4, 3e4)
    )
    ch = ChannelModel.from_params(params)
    n = 10**7
    rng = np.random.default_rng(2024)
    for cls in IntensityClass:
        pol = np.where(cls == V, -1, np.arange(n) % 4).astype(np.int8)
        block = PulseBlock(np.arange(n), np.full(n, cls, np.int8), pol, params)
        det = detect_block(block, ch, params, rng)
        bits = sift(block, det)
        p = class_probabilities(params, ch, cls)
        for observed, prob in ((len(det), p.click), (len(bits), p.sift), (int(bits.errors.sum()), p.error)):
            if cls == V and prob == p.error:
                continue
            sd = math.sqrt(n * prob * (1 - prob))
            assert abs(observed - n * prob) < 5 * sd, (cls, observed, n * prob)


def test_detect_pulse_matches_detect_block_distribution():
    params = ProtocolParams(fiber_length_km=0.0, detector_efficiencies=(0.3, 0.3, 0.2, 0.2),
                            misalignment_prob=0.1)
    ch = ChannelModel.from_params(params)
    rng = np.random.default_rng(8)
    n = 40_000
    plans = [encode_pulse(i, 4 + i % 4, params) for i in range(n)]
    single = np.bincount([r.detector for r in (detect_pulse(p, ch, params, rng) for p in plans)
                          if r.detector is not None], minlength=4)
    block = detect_block(PulseBlock.from_plans(plans, params), ch, params, rng)
    vec = np.bincount(block.detector, minlength=4)
    sd = np.sqrt(single + vec)
    assert np.all(np.abs(single - vec) < 5 * sd)


@pytest.mark.slow
def test_signal_pulses_monte_carlo_billion(calibrated):
    cal, params = calibrated
    chunk = 1 << 22
    blocks = 238  # 238 * 2^22 ~ 1.0e9 slots
    pol = (np.arange(chunk) % 4).astype(np.int8)
    block = PulseBlock(np.arange(chunk), np.full(chunk, S, np.int8), pol, params)
    clicks = sifted = errors = 0
    for i in range(blocks):
        det = detect_block(block, cal.channel, params, np.random.default_rng([99, i]))
        bits = sift(block, det)
        clicks += len(det)
        sifted += len(bits)
        errors += int(bits.errors.sum())
    n = chunk * blocks
    S_exp = 9.0941e-7
    assert abs(clicks - n * S_exp) < 5 * math.sqrt(n * S_exp)
    q = errors / sifted
    assert abs(q - 0.0196) < 5 * math.sqrt(0.0196 * (1 - 0.0196) / sifted)


def test_aggregate_zero_and_degenerate():
    params = ProtocolParams()
    z = simulate_aggregate(params, ChannelModel.from_params(params), 0, np.random.default_rng(0))
    assert z.sent == z.clicks == z.sifted == z.errors == (0, 0, 0)
    dark_free = params.replace(dark_rates_hz=(0.0,) * 4)
    tiny = ChannelModel(1e-300, 0.0)
    c = simulate_aggregate(dark_free, tiny, 10**12, np.random.default_rng(0))
    assert c.clicks == (0, 0, 0)
    with pytest.raises(OverflowError):
        simulate_aggregate(params, ChannelModel.from_params(params), 2**63, np.random.default_rng(0))


def test_aggregate_invariants_and_expectations(calibrated):
    cal, params = calibrated
    counts = simulate_aggregate(params, cal.channel, params.total_pulses, np.random.default_rng(5))
    for c in IntensityClass:
        assert counts.errors[c] <= counts.sifted[c] <= counts.clicks[c] <= counts.sent[c]
    # expected detection counts reproduce the published class counts
    for got, published in zip(counts.expected_clicks[1:], (77157, 449467)):
        assert got == pytest.approx(published, rel=1e-2)
    assert counts.expected_clicks[0] == pytest.approx(3263, rel=1e-2)
    for c in (D, S):
        assert counts.expected_sifted[c] == pytest.approx(counts.expected_clicks[c] / 2, rel=1e-3)


def test_aggregate_merge_is_additive(calibrated):
    cal, params = calibrated
    a = simulate_aggregate(params, cal.channel, 10**9, np.random.default_rng(1))
    b = simulate_aggregate(params, cal.channel, 10**9, np.random.default_rng(2))
    m = a.merge(b)
    assert m.sent == tuple(x + y for x, y in zip(a.sent, b.sent))
    assert m.expected_clicks[2] == pytest.approx(2 * a.expected_clicks[2])


def test_calibration_examples(calibrated):
    cal, _ = calibrated
    t = published_tally()
    assert cal.eta_sys == pytest.approx((t.S_mup - t.S0) / 0.6, rel=5e-3)
    assert cal.eta_sys == pytest.approx(1.494e-6, rel=2e-3)
    linear = (t.E_mup * t.S_mup - 0.5 * t.S0) / (t.S_mup - t.S0)
    assert cal.channel.misalignment_prob == pytest.approx(linear, abs=2e-4)
    assert cal.channel.misalignment_prob == pytest.approx(0.0125, abs=1e-4)
    # the decoy class is not fitted; its mismatch is reported
    assert abs(cal.residuals["S_mu_residual"]) / t.S_mu < 0.05
    assert cal.residuals["E_mu_residual"] < 0


def test_calibration_no_solution():
    t = published_tally()
    buried = Tally(n_sent=t.n_sent, c_received=(t.c_received[0], t.c_received[1], 6526),
                   e_observed=t.e_observed)
    assert buried.S_mup == pytest.approx(buried.S0)
    with pytest.raises(NoSolution):
        calibrate_channel(buried, published_params())
    empty = Tally(n_sent=t.n_sent, c_received=(0, *t.c_received[1:]), e_observed=t.e_observed)
    with pytest.raises(NoSolution):
        calibrate_channel(empty, published_params())


def test_detection_dump_format():
    block = DetectionBlock([5, 9], [2, 1], [Outcome.CLICK, Outcome.DOUBLE_CLICK], [1e-6, 2.5e-6])
    buf = io.StringIO()
    write_detection_dump(block, buf)
    assert buf.getvalue().splitlines() == ["5,D,click,2,1000", "9,R,double,1,2500"]
