"""Entanglement and measurement rate budgets."""
from __future__ import annotations

from dataclasses import dataclass

from .sequences import REP_RATE

STANDARD_EFFICIENCY = 4e-5
FAST_EFFICIENCY = 4e-6
PI_PULSE_OCCUPATION = 0.5
SIGMA_PROJECTION = 0.5


class RateError(ValueError):
    pass


@dataclass(frozen=True)
class RateBudget:
    """Per-node factors; ``branching`` is the chance per pulse of a usable photon."""

    rep_rate: float = REP_RATE
    de_entangled: float = STANDARD_EFFICIENCY
    de_readout: float = STANDARD_EFFICIENCY
    branching: float = 1.0
    coincidence_factor: float = 1.0

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise RateError("rep_rate must be > 0")
        for name in ("de_entangled", "de_readout", "branching"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise RateError(f"{name} must lie in [0, 1], got {v}")
        if self.coincidence_factor < 0:
            raise RateError("coincidence_factor must be >= 0")


def entangled_photon_rate(budget: RateBudget) -> float:
    """Detected entangled photons per second."""
    return budget.rep_rate * budget.de_entangled * budget.branching


def measurement_success_rate(budget: RateBudget, basis: str, projection: float | None = None) -> tuple[float, dict]:
    """Heralded spin readouts per second and the factors that make them up.

    A pi excitation leaves the measured spin state occupied half of the time.
    In the z basis the circular analyzer passes a further ``projection``
    (1/2 unless given).
    """
    if basis not in ("x", "z"):
        raise RateError(f"basis must be 'x' or 'z', got {basis!r}")
    factors = {
        "entangled_photon_rate": entangled_photon_rate(budget),
        "de_readout": budget.de_readout,
        "occupation": PI_PULSE_OCCUPATION,
    }
    if basis == "z":
        factors["sigma_projection"] = SIGMA_PROJECTION if projection is None else projection
    value = 1.0
    for v in factors.values():
        value *= v
    return value, factors


def spin_spin_rate(budget_a: RateBudget, budget_b: RateBudget, coincidence_factor: float) -> float:
    """Two-node heralded spin-spin entanglement rate (1/s)."""
    if budget_a.rep_rate != budget_b.rep_rate:
        raise RateError("both nodes must run at the same repetition rate")
    if coincidence_factor < 0:
        raise RateError("coincidence_factor must be >= 0")
    return (
        budget_a.rep_rate
        * budget_a.de_entangled
        * budget_a.branching
        * budget_b.de_entangled
        * budget_b.branching
        * coincidence_factor
    )


def per_minute(rate: float) -> float:
    return 60.0 * rate
