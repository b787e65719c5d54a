"""Fiber channel and Bob's passive four-detector BB84 receiver.

Detectors 0..3 register H, V, D, A.  A pulse of mean photon number ``x``
enters the rectilinear or diagonal analyser with probability 1/2 each.  In
the analyser matching Alice's basis the light goes to the correct detector
with probability ``1 - e_mis`` and to its partner with ``e_mis``; in the
other analyser it splits evenly.  Coherent light splits into independent
Poisson streams, so detector ``i`` fires with probability

    1 - exp(-x * eta_i * w_i) * (1 - d_i)

independently of the others, where ``w_i`` is the routing weight, ``eta_i``
the overall efficiency and ``d_i = dark_rate_i / f`` the per-slot dark-count
probability.  Multiple clicks are resolved to one uniformly chosen detector.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import TextIO

import numpy as np
from scipy.optimize import brentq

from .errors import NoSolution, ValidationError, ViolatedInvariant
from .params import Basis, IntensityClass, Polarization, ProtocolParams, Tally
from .source import NO_POL, PulseBlock, PulsePlan

_MAX_COUNT = 2**62


class Outcome(IntEnum):
    NO_CLICK = 0
    CLICK = 1
    DOUBLE_CLICK = 2


@dataclass(frozen=True)
class ChannelModel:
    transmittance: float
    misalignment_prob: float

    def __post_init__(self):
        bad = []
        if not (0.0 < self.transmittance <= 1.0):
            bad.append(ViolatedInvariant("transmittance", "must lie in (0, 1]"))
        if not (0.0 <= self.misalignment_prob <= 0.5):
            bad.append(ViolatedInvariant("misalignment_prob", "must lie in [0, 0.5]"))
        if bad:
            raise ValidationError(bad, what="channel")

    @classmethod
    def from_params(cls, params: ProtocolParams) -> ChannelModel:
        loss_db = params.fiber_length_km * params.atten_db_per_km + params.extra_loss_db
        return cls(10.0 ** (-loss_db / 10.0), params.misalignment_prob)


def system_transmittance(params: ProtocolParams) -> np.ndarray:
    """Overall efficiency of each detector path: fiber and lumped loss times detector efficiency."""
    loss_db = params.fiber_length_km * params.atten_db_per_km + params.extra_loss_db
    return 10.0 ** (-loss_db / 10.0) * np.asarray(params.detector_efficiencies, dtype=float)


def _routing_table(e_mis: float) -> np.ndarray:
    """Weights [pol (4 = no light), analyser basis, detector]."""
    w = np.zeros((5, 2, 4))
    for pol in Polarization:
        for b in Basis:
            pair = (2 * b, 2 * b + 1)
            if b == pol.basis:
                w[pol, b, pol] = 1.0 - e_mis
                w[pol, b, pol ^ 1] = e_mis
            else:
                w[pol, b, pair[0]] = w[pol, b, pair[1]] = 0.5
    return w


def _eta_and_dark(channel: ChannelModel, params: ProtocolParams) -> tuple[np.ndarray, np.ndarray]:
    eta = channel.transmittance * np.asarray(params.detector_efficiencies, dtype=float)
    dark = np.asarray(params.dark_rates_hz, dtype=float) / params.pulse_rate_hz
    return eta, dark


def _click_probs(flux: np.ndarray, dark: np.ndarray) -> np.ndarray:
    # 1 - exp(-flux) (1 - d), written to stay accurate at 1e-9 scale
    return -np.expm1(-flux + np.log1p(-dark))


@dataclass(frozen=True)
class ClassProbabilities:
    """Exact per-pulse probabilities for one intensity class.

    ``sift`` is the probability that Bob's (resolved) click lies in Alice's
    basis; for the vacuum class every click counts.  ``error`` is the
    probability of a sifted click on the wrong detector.
    """

    click: float
    no_click: float
    sift: float
    error: float

    @property
    def qber(self) -> float:
        return self.error / self.sift if self.sift > 0 else 0.0


def _enumerate(probs: np.ndarray, alice_pol: int | None):
    """Sum over the 16 click patterns of four independent detectors."""
    sift = err = 0.0
    for pattern in itertools.product((0, 1), repeat=4):
        k = sum(pattern)
        if k == 0:
            continue
        p = 1.0
        for i, hit in enumerate(pattern):
            p *= probs[i] if hit else 1.0 - probs[i]
        for i, hit in enumerate(pattern):
            if not hit:
                continue
            share = p / k
            if alice_pol is None:
                sift += share
            elif i >> 1 == alice_pol >> 1:
                sift += share
                if i != alice_pol:
                    err += share
    return float(sift), float(err)


def class_probabilities(
    params: ProtocolParams, channel: ChannelModel, cls: IntensityClass
) -> ClassProbabilities:
    eta, dark = _eta_and_dark(channel, params)
    x = params.intensity(cls)
    w = _routing_table(channel.misalignment_prob)
    log_dark = float(np.log1p(-dark).sum())
    if cls == IntensityClass.VACUUM:
        probs = _click_probs(np.zeros(4), dark)
        sift, err = _enumerate(probs, None)
        log_none = log_dark
        return ClassProbabilities(-math.expm1(log_none), math.exp(log_none), sift, 0.0)

    click = no_click = sift = err = 0.0
    for pol in Polarization:
        for b in Basis:
            flux = x * eta * w[pol, b]
            probs = _click_probs(flux, dark)
            log_none = float(-flux.sum()) + log_dark
            weight = 0.125  # 1/4 polarization * 1/2 analyser
            click += weight * -math.expm1(log_none)
            no_click += weight * math.exp(log_none)
            s, e = _enumerate(probs, int(pol))
            sift += weight * s
            err += weight * e
    return ClassProbabilities(click, no_click, sift, err)


@dataclass(frozen=True)
class DetectionRecord:
    slot_index: int
    basis_chosen: Basis
    outcome: Outcome
    detector: int | None = None
    timestamp_s: float | None = None

    def __post_init__(self):
        if self.outcome == Outcome.NO_CLICK:
            if self.detector is not None:
                raise ValueError("a no-click record has no detector")
        else:
            if self.detector is None or not 0 <= self.detector <= 3:
                raise ValueError("a click record needs a detector id in 0..3")
            if self.detector >> 1 != self.basis_chosen:
                raise ValueError("detector basis differs from the chosen basis")

    @property
    def double_click(self) -> bool:
        return self.outcome == Outcome.DOUBLE_CLICK

    @property
    def bit(self) -> int | None:
        return None if self.detector is None else self.detector & 1


def detect_pulse(
    plan: PulsePlan, channel: ChannelModel, params: ProtocolParams, rng: np.random.Generator
) -> DetectionRecord:
    eta, dark = _eta_and_dark(channel, params)
    route = int(rng.integers(0, 2))
    pol = 4 if plan.polarization is None else int(plan.polarization)
    flux = plan.intensity * eta * _routing_table(channel.misalignment_prob)[pol, route]
    probs = _click_probs(flux, dark)
    hits = np.flatnonzero(rng.random(4) < probs)
    if hits.size == 0:
        return DetectionRecord(plan.slot_index, Basis(route), Outcome.NO_CLICK)
    det = int(hits[int(rng.random() * hits.size)])
    outcome = Outcome.CLICK if hits.size == 1 else Outcome.DOUBLE_CLICK
    return DetectionRecord(plan.slot_index, Basis(det >> 1), outcome, det)


class DetectionBlock:
    """Columnar detections (clicked slots only) with optional timestamps."""

    def __init__(self, slot, detector, outcome, timestamp_s=None):
        self.slot = np.asarray(slot, dtype=np.int64)
        self.detector = np.asarray(detector, dtype=np.int8)
        self.outcome = np.asarray(outcome, dtype=np.int8)
        self.timestamp_s = None if timestamp_s is None else np.asarray(timestamp_s, dtype=float)

    @property
    def basis(self) -> np.ndarray:
        return (self.detector >> 1).astype(np.int8)

    def __len__(self) -> int:
        return len(self.slot)

    def __getitem__(self, i: int) -> DetectionRecord:
        det = int(self.detector[i])
        ts = None if self.timestamp_s is None else float(self.timestamp_s[i])
        return DetectionRecord(int(self.slot[i]), Basis(det >> 1), Outcome(int(self.outcome[i])), det, ts)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_records(cls, records) -> DetectionBlock:
        clicked = [r for r in records if r.outcome != Outcome.NO_CLICK]
        ts = [r.timestamp_s for r in clicked]
        return cls(
            [r.slot_index for r in clicked],
            [r.detector for r in clicked],
            [r.outcome for r in clicked],
            None if any(t is None for t in ts) or not clicked else ts,
        )

    @classmethod
    def concat(cls, blocks: list[DetectionBlock]) -> DetectionBlock:
        if not blocks:
            return cls([], [], [])
        ts = None
        if all(b.timestamp_s is not None for b in blocks):
            ts = np.concatenate([b.timestamp_s for b in blocks])
        return cls(
            np.concatenate([b.slot for b in blocks]),
            np.concatenate([b.detector for b in blocks]),
            np.concatenate([b.outcome for b in blocks]),
            ts,
        )

    def with_slots(self, slot: np.ndarray) -> DetectionBlock:
        return DetectionBlock(slot, self.detector, self.outcome, self.timestamp_s)


def detect_block(
    plans: PulseBlock, channel: ChannelModel, params: ProtocolParams, rng: np.random.Generator
) -> DetectionBlock:
    """Vectorised :func:`detect_pulse` over a block; returns clicked slots only.

    Slots sharing a (polarization, analyser) pair have identical per-detector
    click probabilities, so each detector's hits in that group are drawn as a
    binomial count placed on uniformly chosen slots.  Same distribution as
    per-slot Bernoulli draws, but the cost scales with the number of clicks.
    """
    n = len(plans)
    eta, dark = _eta_and_dark(channel, params)
    route = rng.integers(0, 2, size=n, dtype=np.int8)
    pol_idx = np.where(plans.pol == NO_POL, 4, plans.pol).astype(np.int8)
    w = _routing_table(channel.misalignment_prob)
    group = (plans.cls.astype(np.int16) * 5 + pol_idx) * 2 + route
    sizes = np.bincount(group, minlength=30)
    rows, dets = [], []
    for g in np.flatnonzero(sizes):
        cls, rest = divmod(int(g), 10)
        pol, b = divmod(rest, 2)
        probs = _click_probs(params.intensity(IntensityClass(cls)) * eta * w[pol, b], dark)
        hits = rng.binomial(sizes[g], probs)
        if not hits.any():
            continue
        members = np.flatnonzero(group == g)
        for det, k in enumerate(hits):
            if k:
                rows.append(members[rng.choice(members.size, k, replace=False)])
                dets.append(np.full(k, det, dtype=np.int8))
    if not rows:
        return DetectionBlock([], [], [])
    row = np.concatenate(rows)
    det = np.concatenate(dets)
    order = np.lexsort((det, row))
    row, det = row[order], det[order]
    starts = np.flatnonzero(np.r_[True, row[1:] != row[:-1]])
    k = np.diff(np.r_[starts, row.size])
    pick = starts + np.floor(rng.random(starts.size) * k).astype(np.int64)
    outcome = np.where(k > 1, Outcome.DOUBLE_CLICK, Outcome.CLICK)
    return DetectionBlock(plans.slot[row[starts]], det[pick], outcome)


@dataclass(frozen=True)
class AggregateCounts:
    """Per-class counts, indexed by :class:`IntensityClass`.

    ``clicks`` are all detections, ``sifted`` those in Alice's basis (every
    vacuum click), ``errors`` the sifted clicks on the wrong detector.  The
    ``expected_*`` fields hold the exact expectations of the sampled ones.
    """

    sent: tuple[int, int, int]
    clicks: tuple[int, int, int]
    sifted: tuple[int, int, int]
    errors: tuple[int, int, int]
    expected_sent: tuple[float, float, float]
    expected_clicks: tuple[float, float, float]
    expected_sifted: tuple[float, float, float]
    expected_errors: tuple[float, float, float]

    def merge(self, other: AggregateCounts) -> AggregateCounts:
        add = lambda a, b: tuple(x + y for x, y in zip(a, b))  # noqa: E731
        return AggregateCounts(*(add(getattr(self, f), getattr(other, f)) for f in self.__dataclass_fields__))


def simulate_aggregate(
    params: ProtocolParams, channel: ChannelModel, n_pulses: int, rng: np.random.Generator
) -> AggregateCounts:
    """Sample class, click, sift and error counts from the exact per-pulse model."""
    if n_pulses < 0:
        raise ValueError("n_pulses must be >= 0")
    if n_pulses > _MAX_COUNT:
        raise OverflowError(f"n_pulses={n_pulses} exceeds the 64-bit count range")
    probs = [class_probabilities(params, channel, c) for c in IntensityClass]
    sent = rng.multinomial(n_pulses, params.class_probs)
    clicks, sifted, errors = [], [], []
    e_sent, e_clicks, e_sifted, e_errors = [], [], [], []
    for c, p in zip(IntensityClass, probs):
        n = int(sent[c])
        k = int(rng.binomial(n, p.click))
        s = int(rng.binomial(k, min(1.0, p.sift / p.click))) if p.click > 0 else 0
        e = int(rng.binomial(s, min(1.0, p.error / p.sift))) if p.sift > 0 else 0
        clicks.append(k)
        sifted.append(s)
        errors.append(e)
        exp_n = n_pulses * params.class_probs[c]
        e_sent.append(exp_n)
        e_clicks.append(exp_n * p.click)
        e_sifted.append(exp_n * p.sift)
        e_errors.append(exp_n * p.error)
    return AggregateCounts(
        tuple(int(x) for x in sent), tuple(clicks), tuple(sifted), tuple(errors),
        tuple(e_sent), tuple(e_clicks), tuple(e_sifted), tuple(e_errors),
    )


@dataclass(frozen=True)
class Calibration:
    channel: ChannelModel
    dark_rates_hz: tuple[float, float, float, float]
    extra_loss_db: float
    eta_sys: float
    residuals: dict = field(default_factory=dict, compare=False)

    def apply(self, params: ProtocolParams) -> ProtocolParams:
        return params.replace(
            extra_loss_db=self.extra_loss_db,
            misalignment_prob=self.channel.misalignment_prob,
            dark_rates_hz=self.dark_rates_hz,
        )


def _fit_dark_rates(S0: float, params: ProtocolParams) -> tuple[float, ...]:
    base = np.asarray(params.dark_rates_hz, dtype=float)
    if base.sum() == 0:
        base = np.ones(4)
    if S0 == 0:
        return (0.0, 0.0, 0.0, 0.0)
    f = params.pulse_rate_hz
    # 1 - prod(1 - k*base/f) = S0, monotone in k
    g = lambda k: -math.expm1(np.log1p(-k * base / f).sum()) - S0  # noqa: E731
    k_hi = f / base.max() * (1 - 1e-12)
    if g(k_hi) < 0:
        raise NoSolution("vacuum counting rate exceeds what dark counts can produce")
    k = brentq(g, 0.0, k_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    return tuple(float(v) for v in k * base)


def calibrate_channel(tally: Tally, params: ProtocolParams) -> Calibration:
    """Fit dark rates, transmittance and misalignment to the observed rates.

    Dark rates (keeping their ratios) reproduce S0; transmittance reproduces
    the signal-class counting rate on top of that dark floor; misalignment
    reproduces the signal-class QBER.  The decoy class is not fitted: its
    mismatch is returned in ``residuals``.
    """
    S0, S_sig, E_sig = tally.S0, tally.S_mup, tally.E_mup
    if any(c == 0 for c in tally.c_received):
        raise NoSolution("every intensity class needs non-zero counts")
    if S_sig <= S0:
        raise NoSolution(
            f"signal counting rate {S_sig:.6g} does not exceed the dark floor {S0:.6g}"
        )
    darks = _fit_dark_rates(S0, params)
    p = params.replace(dark_rates_hz=darks)
    sig = IntensityClass.SIGNAL

    def click(T, e):
        return class_probabilities(p, ChannelModel(T, e), sig).click

    def qber(T, e):
        return class_probabilities(p, ChannelModel(T, e), sig).qber

    e_mis = min(0.5, params.misalignment_prob)
    T = 1.0
    for _ in range(50):
        if click(1.0, e_mis) < S_sig:
            raise NoSolution("observed signal rate exceeds a lossless channel")
        T_new = brentq(lambda t: click(t, e_mis) - S_sig, 1e-300, 1.0, xtol=1e-300, rtol=1e-14)
        if qber(T_new, 0.0) >= E_sig:
            e_new = 0.0
        elif qber(T_new, 0.5) <= E_sig:
            e_new = 0.5
        else:
            e_new = brentq(lambda e: qber(T_new, e) - E_sig, 0.0, 0.5, xtol=1e-16, rtol=1e-14)
        converged = abs(T_new - T) <= 1e-13 * T_new and abs(e_new - e_mis) <= 1e-13
        T, e_mis = T_new, e_new
        if converged:
            break

    channel = ChannelModel(T, e_mis)
    loss_db = -10.0 * math.log10(T)
    extra = loss_db - params.fiber_length_km * params.atten_db_per_km
    dec = class_probabilities(p, channel, IntensityClass.DECOY)
    fitted_sig = class_probabilities(p, channel, sig)
    residuals = {
        "S_mu_model": dec.click,
        "S_mu_residual": dec.click - tally.S_mu,
        "E_mu_model": dec.qber,
        "E_mu_residual": dec.qber - tally.E_mu,
        "S_mup_residual": fitted_sig.click - S_sig,
        "E_mup_residual": fitted_sig.qber - E_sig,
    }
    eta_sys = T * float(np.mean(params.detector_efficiencies))
    residuals = {k: float(v) for k, v in residuals.items()}
    return Calibration(channel, darks, extra, eta_sys, residuals)


def write_detection_dump(block: DetectionBlock, out: TextIO) -> None:
    """``slot_index,basis,outcome,detector,timestamp_ns`` per line."""
    outcome_codes = {Outcome.CLICK: "click", Outcome.DOUBLE_CLICK: "double"}
    for i in range(len(block)):
        ts = "-" if block.timestamp_s is None else str(int(round(block.timestamp_s[i] * 1e9)))
        det = int(block.detector[i])
        out.write(
            f"{int(block.slot[i])},{Basis(det >> 1).code},{outcome_codes[Outcome(int(block.outcome[i]))]},"
            f"{det},{ts}\n"
        )
