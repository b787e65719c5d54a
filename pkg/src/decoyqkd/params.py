"""Shared domain types, parameter validation and the Poisson photon-number weights."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum

from .errors import ValidationError, ViolatedInvariant

_SUM_TOL = 1e-12


class IntensityClass(IntEnum):
    VACUUM = 0
    DECOY = 1
    SIGNAL = 2

    @property
    def code(self) -> str:
        return "VDS"[self]

    @classmethod
    def from_code(cls, code: str) -> IntensityClass:
        try:
            return cls("VDS".index(code))
        except ValueError:
            raise ValueError(f"unknown intensity class code {code!r}") from None


class Basis(IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1

    @property
    def code(self) -> str:
        return "RD"[self]

    @classmethod
    def from_code(cls, code: str) -> Basis:
        try:
            return cls("RD".index(code))
        except ValueError:
            raise ValueError(f"unknown basis code {code!r}") from None


class Polarization(IntEnum):
    """BB84 states. The integer value doubles as the id of the detector that
    registers the state without error."""

    H = 0
    V = 1
    D = 2  # pi/4
    A = 3  # 3pi/4

    @property
    def basis(self) -> Basis:
        return Basis(self >> 1)

    @property
    def bit(self) -> int:
        return self & 1


@dataclass(frozen=True)
class ProtocolParams:
    """Physical and protocol constants for one run.

    Defaults describe the 200 km polarization set-up: intensities 0/0.2/0.6
    sent 1:1:2, a 320 MHz slot clock with 40 kHz sync pulses, four detectors
    with efficiencies of 3-4% and ~1 Hz dark counts, and the 3089 s run.
    ``extra_loss_db`` and ``misalignment_prob`` are not known from the hardware
    description; see :func:`decoyqkd.channel.calibrate_channel`.
    """

    mu: float = 0.2
    mu_prime: float = 0.6
    class_probs: tuple[float, float, float] = (0.25, 0.25, 0.5)
    pulse_rate_hz: float = 320e6
    sync_rate_hz: float = 40e3
    fiber_length_km: float = 200.0
    atten_db_per_km: float = 0.2
    extra_loss_db: float = 0.0
    detector_efficiencies: tuple[float, float, float, float] = (0.04, 0.04, 0.04, 0.03)
    dark_rates_hz: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    misalignment_prob: float = 0.0125
    n_sigma: float = 10.0
    test_fraction_phase: float = 0.1
    test_fraction_bit: float = 0.05
    duration_s: float = 3089.0
    total_pulses: int = 988_480_000_000
    ec_efficiency: float = 1.0

    def __post_init__(self):
        # normalise sequences so equality and hashing behave
        object.__setattr__(self, "class_probs", tuple(float(p) for p in self.class_probs))
        object.__setattr__(
            self, "detector_efficiencies", tuple(float(e) for e in self.detector_efficiencies)
        )
        object.__setattr__(self, "dark_rates_hz", tuple(float(d) for d in self.dark_rates_hz))
        object.__setattr__(self, "total_pulses", int(self.total_pulses))

    @property
    def slots_per_block(self) -> int:
        return int(round(self.pulse_rate_hz / self.sync_rate_hz))

    @property
    def slot_period_s(self) -> float:
        return 1.0 / self.pulse_rate_hz

    def intensity(self, cls: IntensityClass) -> float:
        return (0.0, self.mu, self.mu_prime)[cls]

    def replace(self, **changes) -> ProtocolParams:
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _check_unit(name: str, value: float, out: list[ViolatedInvariant]) -> None:
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        out.append(ViolatedInvariant(name, f"must lie in [0, 1], got {value!r}"))


def param_violations(params: ProtocolParams) -> list[ViolatedInvariant]:
    """Every invariant of ``params`` that does not hold (empty when valid)."""
    out: list[ViolatedInvariant] = []
    p = params

    if not (0.0 < p.mu < p.mu_prime):
        if p.mu >= p.mu_prime:
            out.append(ViolatedInvariant("mu", "mu must be < mu_prime"))
        if p.mu <= 0.0:
            out.append(ViolatedInvariant("mu", "mu must be > 0"))
    if not math.isfinite(p.mu_prime):
        out.append(ViolatedInvariant("mu_prime", "must be finite"))

    if len(p.class_probs) != 3:
        out.append(ViolatedInvariant("class_probs", "needs exactly three entries"))
    else:
        if abs(sum(p.class_probs) - 1.0) > _SUM_TOL:
            out.append(ViolatedInvariant("class_probs", "probabilities must sum to 1"))
        if any(not (q > 0.0) for q in p.class_probs):
            out.append(ViolatedInvariant("class_probs", "every probability must be > 0"))

    for name in ("detector_efficiencies", "dark_rates_hz"):
        if len(getattr(p, name)) != 4:
            out.append(ViolatedInvariant(name, "needs exactly four entries"))
    for i, eff in enumerate(p.detector_efficiencies):
        _check_unit(f"detector_efficiencies[{i}]", eff, out)
    for i, dark in enumerate(p.dark_rates_hz):
        if not (dark >= 0.0) or not math.isfinite(dark):
            out.append(ViolatedInvariant(f"dark_rates_hz[{i}]", "must be a finite rate >= 0"))
        elif p.pulse_rate_hz > 0 and dark / p.pulse_rate_hz > 1.0:
            out.append(ViolatedInvariant(f"dark_rates_hz[{i}]", "exceeds one dark count per slot"))

    _check_unit("misalignment_prob", p.misalignment_prob, out)
    _check_unit("test_fraction_phase", p.test_fraction_phase, out)
    _check_unit("test_fraction_bit", p.test_fraction_bit, out)
    if not (p.test_fraction_phase + p.test_fraction_bit < 1.0):
        out.append(
            ViolatedInvariant("test_fraction_phase", "test_fraction_phase + test_fraction_bit must be < 1")
        )

    if not (p.pulse_rate_hz > 0 and math.isfinite(p.pulse_rate_hz)):
        out.append(ViolatedInvariant("pulse_rate_hz", "must be a positive rate"))
    if not (p.sync_rate_hz > 0 and math.isfinite(p.sync_rate_hz)):
        out.append(ViolatedInvariant("sync_rate_hz", "must be a positive rate"))
    elif p.pulse_rate_hz > 0:
        ratio = p.pulse_rate_hz / p.sync_rate_hz
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
            out.append(
                ViolatedInvariant("sync_rate_hz", "pulse_rate_hz must be an integer multiple of sync_rate_hz")
            )

    for name in ("fiber_length_km", "atten_db_per_km", "extra_loss_db", "n_sigma"):
        value = getattr(p, name)
        if not (value >= 0.0) or not math.isfinite(value):
            out.append(ViolatedInvariant(name, f"must be finite and >= 0, got {value!r}"))
    if not (p.duration_s > 0 and math.isfinite(p.duration_s)):
        out.append(ViolatedInvariant("duration_s", "must be > 0"))
    if p.total_pulses < 0:
        out.append(ViolatedInvariant("total_pulses", "must be >= 0"))
    if not (p.ec_efficiency >= 1.0) or not math.isfinite(p.ec_efficiency):
        out.append(ViolatedInvariant("ec_efficiency", "must be finite and >= 1"))
    return out


def validate_params(params: ProtocolParams) -> ProtocolParams:
    """Return ``params`` unchanged, or raise ValidationError listing every violation."""
    violations = param_violations(params)
    if violations:
        raise ValidationError(violations)
    return params


def poisson_pmf(mu: float, n: int) -> float:
    """Probability that a coherent pulse of mean ``mu`` holds exactly ``n`` photons."""
    if mu < 0 or math.isnan(mu):
        raise ValueError(f"mean photon number must be >= 0, got {mu!r}")
    if n < 0 or int(n) != n:
        raise ValueError(f"photon number must be a non-negative integer, got {n!r}")
    n = int(n)
    if mu == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(n * math.log(mu) - mu - math.lgamma(n + 1))


def multi_photon_tail(mu: float) -> float:
    """Weight ``c`` of the two-or-more photon part of a coherent state."""
    if mu < 0 or math.isnan(mu):
        raise ValueError(f"mean photon number must be >= 0, got {mu!r}")
    # -expm1(-mu) avoids cancellation at small mu
    return max(0.0, -math.expm1(-mu) - mu * math.exp(-mu))


@dataclass(frozen=True)
class Tally:
    """Observed statistics per intensity class.

    ``n_sent`` and ``c_received`` are indexed by :class:`IntensityClass`;
    ``e_observed`` holds (E_mu, E_mu') for the decoy and signal classes.
    ``c_received`` counts every click Bob registered for pulses of that class,
    irrespective of basis; the sifting loss is charged later in the final key.
    """

    n_sent: tuple[int, int, int]
    c_received: tuple[int, int, int]
    e_observed: tuple[float, float]
    test_counts: tuple[int, int, int] | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "n_sent", tuple(int(n) for n in self.n_sent))
        object.__setattr__(self, "c_received", tuple(int(c) for c in self.c_received))
        object.__setattr__(self, "e_observed", tuple(float(e) for e in self.e_observed))
        if self.test_counts is not None:
            object.__setattr__(self, "test_counts", tuple(int(t) for t in self.test_counts))
        violations = self.violations()
        if violations:
            raise ValidationError(violations, what="tally")

    def violations(self) -> list[ViolatedInvariant]:
        out: list[ViolatedInvariant] = []
        if len(self.n_sent) != 3 or len(self.c_received) != 3:
            return [ViolatedInvariant("n_sent", "needs one count per intensity class")]
        if len(self.e_observed) != 2:
            return [ViolatedInvariant("e_observed", "needs (E_mu, E_mu')")]
        for cls in IntensityClass:
            n, c = self.n_sent[cls], self.c_received[cls]
            if n < 0 or c < 0:
                out.append(ViolatedInvariant(f"counts[{cls.name}]", "counts must be >= 0"))
            if c > n:
                out.append(
                    ViolatedInvariant(f"c_received[{cls.name}]", "received count exceeds sent count")
                )
        for name, e in zip(("E_mu", "E_mu_prime"), self.e_observed):
            if not (0.0 <= e <= 0.5):
                out.append(ViolatedInvariant(name, f"QBER must lie in [0, 0.5], got {e!r}"))
        if self.test_counts is not None:
            if len(self.test_counts) != 3:
                out.append(ViolatedInvariant("test_counts", "needs one count per intensity class"))
            elif any(t < 0 or t > c for t, c in zip(self.test_counts, self.c_received)):
                out.append(ViolatedInvariant("test_counts", "must lie in [0, c_received]"))
        return out

    def counting_rate(self, cls: IntensityClass) -> float:
        n = self.n_sent[cls]
        return self.c_received[cls] / n if n else 0.0

    @property
    def S0(self) -> float:
        return self.counting_rate(IntensityClass.VACUUM)

    @property
    def S_mu(self) -> float:
        return self.counting_rate(IntensityClass.DECOY)

    @property
    def S_mup(self) -> float:
        return self.counting_rate(IntensityClass.SIGNAL)

    @property
    def E_mu(self) -> float:
        return self.e_observed[0]

    @property
    def E_mup(self) -> float:
        return self.e_observed[1]
