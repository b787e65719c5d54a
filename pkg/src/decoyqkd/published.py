"""Published 200 km run: observed tally and reference analysis values."""
from __future__ import annotations

from dataclasses import dataclass

from .analysis import AnalysisResult
from .params import ProtocolParams, Tally

N_TOTAL = 988_480_000_000
DURATION_S = 3089.0
COUNTS = (3263, 77157, 449467)
E_MU = 0.0404
E_MUP = 0.0196


def published_params(**overrides) -> ProtocolParams:
    return ProtocolParams(total_pulses=N_TOTAL, duration_s=DURATION_S).replace(**overrides)


def published_tally() -> Tally:
    n = (N_TOTAL // 4, N_TOTAL // 4, N_TOTAL // 2)
    return Tally(n_sent=n, c_received=COUNTS, e_observed=(E_MU, E_MUP))


@dataclass(frozen=True)
class Row:
    name: str
    published: float
    tol: float
    relative: bool

    def get(self, result: AnalysisResult) -> float:
        b, r = result.bounds, result.report
        return {
            "E_u_mup": b.E_u_mup,
            "E_u_mu": b.E_u_mu,
            "s1": b.s1,
            "s1_prime": b.s1_prime,
            "e1_mup": b.e1_mup,
            "e1_mu": b.e1_mu,
            "R_mup": r.R_mup,
            "R_mu": r.R_mu,
            "K_mup": r.K_mup,
            "K_mu": r.K_mu,
            "rate_mup_hz": r.rate_mup_hz,
            "rate_mu_hz": r.rate_mu_hz,
            "rate_total_hz": r.rate_total_hz,
        }[self.name]

    def deviation(self, value: float) -> float:
        diff = abs(value - self.published)
        return diff / abs(self.published) if self.relative else diff

    def passes(self, value: float) -> bool:
        return self.deviation(value) <= self.tol


# (quantity, published value, tolerance, relative?)
ROWS: tuple[Row, ...] = (
    Row("E_u_mup", 0.0263, 2e-4, False),
    Row("E_u_mu", 0.0633, 2e-4, False),
    Row("s1", 1.3707e-6, 2e-3, True),
    Row("s1_prime", 1.2788e-6, 5e-3, True),
    Row("e1_mup", 0.0496, 5e-4, False),
    Row("e1_mu", 0.0682, 5e-4, False),
    Row("R_mup", 1.7445e-7, 1e-2, True),
    Row("R_mu", 6.7564e-8, 2e-2, True),
    Row("K_mup", 3.6644e4, 1e-2, True),
    Row("K_mu", 7.0960e3, 2e-2, True),
    Row("rate_mup_hz", 11.8626, 1e-2, True),
    Row("rate_mu_hz", 2.2972, 2e-2, True),
    Row("rate_total_hz", 14.1, 0.3, False),
)
