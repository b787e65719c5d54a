"""Finite-size decoy-state key-rate analysis for three intensities (0, mu, mu').

The chain runs: vacuum fluctuation bounds -> fluctuation-corrected QBER upper
bounds -> single-photon counting rate from the joint constraints (solved by
bisection) -> single-photon fraction and QBER -> key rate per pulse -> final
key counts and rates in Hz.  All functions are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import (
    AnalysisError,
    EmptyTestSet,
    Infeasible,
    NegativeSc,
    ZeroDelta,
    ZeroVacuumCounts,
)
from .params import IntensityClass, ProtocolParams, Tally, multi_photon_tail

SOLVER_RTOL = 1e-12
SOLVER_MAX_ITER = 200


def binary_entropy(x: float) -> float:
    """Shannon entropy of a Bernoulli(x) variable, in bits; H(0) = H(1) = 0."""
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"binary entropy needs x in [0, 1], got {x!r}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def qber_upper_bound(E: float, C: float, L_p: float, n_sigma: float = 10.0) -> float:
    """Observed QBER plus ``n_sigma`` standard deviations of its test-set estimate."""
    n_test = C * L_p
    if not (n_test > 0):
        raise EmptyTestSet(f"no phase-test bits (C={C!r}, L_p={L_p!r})")
    if E < 0:
        raise ValueError(f"QBER must be >= 0, got {E!r}")
    return E + n_sigma * math.sqrt(E / n_test)


@dataclass(frozen=True)
class VacuumBounds:
    r0: float
    s0_low: float
    s0_high: float


def vacuum_bounds(S0: float, N0: float, n_sigma: float = 10.0) -> VacuumBounds:
    """Worst-case interval for the vacuum counting rate, S0 * (1 -/+ r0)."""
    count = S0 * N0
    if not (count > 0):
        raise ZeroVacuumCounts(
            "no vacuum-pulse counts: the dark floor cannot be bounded from data"
        )
    r0 = n_sigma / math.sqrt(count)
    return VacuumBounds(r0=r0, s0_low=max(0.0, (1.0 - r0) * S0), s0_high=(1.0 + r0) * S0)


def _shrink(value: float, n_sigma: float, scale: float, count_factor: float) -> float:
    """``(1 - n_sigma*scale/sqrt(value*count_factor)) * value`` with the factor clamped at 0."""
    if value <= 0.0:
        return 0.0
    if n_sigma == 0.0:
        return value
    factor = 1.0 - n_sigma * scale / math.sqrt(value * count_factor)
    return max(0.0, factor) * value


@dataclass(frozen=True)
class DecoyConstraint:
    """The joint constraints on (s1, s_c) for one choice of vacuum rates.

    The equality ties s_c to s1 through the decoy counting rate; the
    inequality bounds the fluctuated multiphoton term by what the signal
    counting rate leaves after its vacuum and single-photon parts.
    """

    S_mu: float
    S_mup: float
    mu: float
    mu_prime: float
    N_mu: float
    n_sigma: float
    s0_equality: float
    s0_prime: float

    @classmethod
    def from_tally(
        cls, tally: Tally, params: ProtocolParams, s0_equality: float, s0_prime: float
    ) -> DecoyConstraint:
        return cls(
            S_mu=tally.S_mu,
            S_mup=tally.S_mup,
            mu=params.mu,
            mu_prime=params.mu_prime,
            N_mu=float(tally.n_sent[IntensityClass.DECOY]),
            n_sigma=params.n_sigma,
            s0_equality=s0_equality,
            s0_prime=s0_prime,
        )

    @property
    def c(self) -> float:
        return multi_photon_tail(self.mu)

    @property
    def s1_max(self) -> float:
        """Largest s1 that keeps s_c >= 0 in the equality."""
        e = math.exp(-self.mu)
        return (self.S_mu - e * self.s0_equality) / (self.mu * e)

    def s_c(self, s1: float) -> float:
        e = math.exp(-self.mu)
        return (self.S_mu - e * self.s0_equality - self.mu * e * s1) / self.c

    def s1_prime(self, s1: float) -> float:
        return _shrink(s1, self.n_sigma, math.exp(self.mu / 2.0), self.mu * self.N_mu)

    def s_c_prime(self, s1: float) -> float:
        return _shrink(self.s_c(s1), self.n_sigma, 1.0, self.N_mu)

    def rhs(self, s1: float) -> float:
        mu, mup = self.mu, self.mu_prime
        ratio = (mu * mu * math.exp(-mu)) / (mup * mup * math.exp(-mup))
        remaining = self.S_mup - mup * math.exp(-mup) * self.s1_prime(s1) - math.exp(-mup) * self.s0_prime
        return ratio * remaining

    def residual(self, s1: float) -> float:
        """RHS - LHS of the inequality; >= 0 where it holds."""
        return self.rhs(s1) - self.c * self.s_c_prime(s1)

    def equality_residual(self, s1: float, s_c: float) -> float:
        e = math.exp(-self.mu)
        return self.S_mu - (e * self.s0_equality + self.mu * e * s1 + self.c * s_c)


@dataclass(frozen=True)
class SinglePhotonSolution:
    s1: float
    s1_prime: float
    s_c: float
    iterations: int
    residual: float


def solve_single_photon(
    tally: Tally,
    params: ProtocolParams,
    s0_equality: float,
    s0_prime: float,
    rtol: float = SOLVER_RTOL,
    max_iter: int = SOLVER_MAX_ITER,
) -> SinglePhotonSolution:
    """Smallest single-photon counting rate compatible with the observed rates.

    Bisects on s1 over ``[0, s1_max]`` where ``s1_max`` is the point at which
    the equality would force s_c below zero.  The inequality residual is
    increasing in s1 on this interval because its left side falls with slope
    ``mu e^-mu`` while its right side falls only with ``mu^2 e^-mu / mu'``.

    Returns the bound s1, its fluctuation-shrunk counterpart s1' and s_c.
    """
    if not (0.0 < params.mu < params.mu_prime):
        raise Infeasible("need 0 < mu < mu_prime")
    con = DecoyConstraint.from_tally(tally, params, s0_equality, s0_prime)
    hi = con.s1_max
    if hi < 0.0:
        raise NegativeSc(
            f"s_c < 0 for every s1 >= 0 (S_mu={con.S_mu:.6g} below the vacuum part)"
        )
    hi = min(hi, 1.0)
    lo = 0.0
    iterations = 0

    if con.residual(lo) >= 0.0:
        hi = lo
    elif con.residual(hi) < 0.0:
        raise Infeasible(
            f"constraint violated for every s1 in [0, {hi:.6g}] (residual {con.residual(hi):.3g})"
        )
    else:
        while iterations < max_iter and hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            if con.residual(mid) >= 0.0:
                hi = mid
            else:
                lo = mid
            iterations += 1

    s1 = hi
    return SinglePhotonSolution(
        s1=s1,
        s1_prime=con.s1_prime(s1),
        s_c=con.s_c(s1),
        iterations=iterations,
        residual=con.residual(s1),
    )


def single_photon_fraction(s1: float, mu: float, S: float) -> float:
    """Fraction of counts at intensity ``mu`` due to single-photon emissions."""
    if not (S > 0):
        raise ValueError(f"counting rate must be > 0, got {S!r}")
    return min(1.0, max(0.0, s1 * mu * math.exp(-mu) / S))


def _single_photon_qber_raw(E_u, s0_low, mu, S, delta1):
    if delta1 <= 0.0:
        raise ZeroDelta("single-photon fraction is zero; E1 is undefined")
    return (E_u - s0_low * math.exp(-mu) / (2.0 * S)) / delta1


def single_photon_qber(E_u: float, s0_low: float, mu: float, S: float, delta1: float) -> float:
    """Upper bound on the single-photon QBER, clamped to [0, 0.5].

    Vacuum contributions are subtracted at the lower vacuum bound s0_low,
    assuming they carry a 50% error rate.
    """
    return min(0.5, max(0.0, _single_photon_qber_raw(E_u, s0_low, mu, S, delta1)))


def _key_rate_raw(S, delta1, E_observed, E1, ec_efficiency=1.0):
    return S * (delta1 - ec_efficiency * binary_entropy(E_observed) - delta1 * binary_entropy(E1))


def key_rate(
    S: float, delta1: float, E_observed: float, E1: float, ec_efficiency: float = 1.0
) -> float:
    """Secure bits per emitted pulse, clamped at 0."""
    return max(0.0, _key_rate_raw(S, delta1, E_observed, E1, ec_efficiency))


def final_key(R: float, N_class: float, L_p: float, L_b: float) -> float:
    """Final key bits: half the counts survive sifting, minus the test fractions."""
    if R < 0:
        raise ValueError(f"key rate must be >= 0, got {R!r}")
    return 0.5 * (1.0 - L_p - L_b) * R * N_class


@dataclass(frozen=True)
class SecurityBounds:
    r0: float
    s0_low: float
    s0_high: float
    E_u_mu: float
    E_u_mup: float
    s1: float
    s1_prime: float
    s_c: float
    s_c_prime_branch: float
    delta1_mu: float
    delta1_mup: float
    e1_mu: float
    e1_mup: float


@dataclass(frozen=True)
class SecurityReport:
    R_mup: float
    R_mu: float
    K_mup: float
    K_mu: float
    rate_mup_hz: float
    rate_mu_hz: float
    rate_total_hz: float
    flags: tuple[str, ...] = ()
    diagnostics: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class AnalysisResult:
    bounds: SecurityBounds
    report: SecurityReport


@dataclass
class _Branch:
    E_u: float = math.nan
    s1: float = math.nan
    s_c: float = math.nan
    delta1: float = math.nan
    e1: float = math.nan
    R: float = 0.0
    K: float = 0.0


def _run_branch(
    name, cls, tally, params, vac, s0_equality, s0_prime, pick_prime, flags, diag, strict
) -> _Branch:
    out = _Branch()
    mu_k = params.intensity(cls)
    S_k = tally.counting_rate(cls)
    E_k = tally.e_observed[cls - 1]
    C_k = tally.c_received[cls]
    try:
        out.E_u = qber_upper_bound(E_k, C_k, params.test_fraction_phase, params.n_sigma)
        sol = solve_single_photon(tally, params, s0_equality, s0_prime)
        diag[f"solver_iterations_{name}"] = sol.iterations
        diag[f"solver_residual_{name}"] = sol.residual
        diag[f"s1_raw_{name}"] = sol.s1
        out.s1 = sol.s1_prime if pick_prime else sol.s1
        out.s_c = sol.s_c
        out.delta1 = single_photon_fraction(out.s1, mu_k, S_k)
        raw_e1 = _single_photon_qber_raw(out.E_u, vac.s0_low, mu_k, S_k, out.delta1)
        out.e1 = min(0.5, max(0.0, raw_e1))
        if out.e1 != raw_e1:
            flags.append(f"e1_{name}_clamped")
        raw_r = _key_rate_raw(S_k, out.delta1, E_k, out.e1, params.ec_efficiency)
        out.R = max(0.0, raw_r)
        if raw_r < 0:
            flags.append(f"R_{name}_negative")
        out.K = final_key(out.R, tally.n_sent[cls], params.test_fraction_phase, params.test_fraction_bit)
    except AnalysisError as exc:
        if strict:
            raise
        flags.append(f"{name}_failed")
        diag[f"error_{name}"] = f"{type(exc).__name__} in {exc.operation}: {exc}"
        out.R = out.K = 0.0
    return out


def analyze(tally: Tally, params: ProtocolParams, strict: bool = False) -> AnalysisResult:
    """Run the full key-rate chain for both the signal and the decoy class.

    The signal class uses the two-step worst case (upper vacuum bound in the
    equality, lower in the inequality) and the fluctuation-shrunk s1'.  The
    decoy class uses the lower vacuum bound in both places.  With
    ``strict=False`` a failing class reports zero key and a diagnostic instead
    of raising; vacuum-bound failures always raise.
    """
    vac = vacuum_bounds(tally.S0, tally.n_sent[IntensityClass.VACUUM], params.n_sigma)
    flags: list[str] = []
    diag: dict = {}
    sig = _run_branch(
        "mup", IntensityClass.SIGNAL, tally, params, vac, vac.s0_high, vac.s0_low, True, flags, diag, strict
    )
    dec = _run_branch(
        "mu", IntensityClass.DECOY, tally, params, vac, vac.s0_low, vac.s0_low, False, flags, diag, strict
    )
    T = params.duration_s
    bounds = SecurityBounds(
        r0=vac.r0,
        s0_low=vac.s0_low,
        s0_high=vac.s0_high,
        E_u_mu=dec.E_u,
        E_u_mup=sig.E_u,
        s1=dec.s1,
        s1_prime=sig.s1,
        s_c=dec.s_c,
        s_c_prime_branch=sig.s_c,
        delta1_mu=dec.delta1,
        delta1_mup=sig.delta1,
        e1_mu=dec.e1,
        e1_mup=sig.e1,
    )
    report = SecurityReport(
        R_mup=sig.R,
        R_mu=dec.R,
        K_mup=sig.K,
        K_mu=dec.K,
        rate_mup_hz=sig.K / T,
        rate_mu_hz=dec.K / T,
        rate_total_hz=(sig.K + dec.K) / T,
        flags=tuple(flags),
        diagnostics=diag,
    )
    return AnalysisResult(bounds=bounds, report=report)
