"""Unit systems, model parameters, and closed-form collapse estimators.

The estimators implement the macroscopic order-of-magnitude predictions of
the model (self-gravitational energy, collapse timescale, Coulomb/gravity
ratio, fifth-power size scaling).  They deliberately drop geometry
prefactors: results are order-of-magnitude statements, and the tests treat
them as such.

Dynamics elsewhere in the package runs in natural units (hbar = 1, masses
O(1), gravitational strength a free dimensionless knob); SI units are only
meaningful for the estimators in this module.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

# CODATA / SI constants
HBAR_SI = 1.0545718e-34          # J s
G_SI = 6.674e-11                 # m^3 kg^-1 s^-2
ELEMENTARY_CHARGE_SI = 1.602176634e-19   # C
VACUUM_PERMITTIVITY_SI = 8.8541878128e-12  # F/m
ELECTRON_MASS_SI = 9.1093837015e-31      # kg
PROTON_MASS_SI = 1.67262192369e-27       # kg


class DomainError(ValueError):
    """Raised when an estimator input is outside its physical domain."""


class UnitModeError(ValueError):
    """Raised when an operation is unsupported in the active unit mode."""


class UnitMode(enum.Enum):
    SI = "SI"
    NATURAL = "natural"


@dataclass(frozen=True)
class UnitSystem:
    """Unit convention: SI constants, or natural units with hbar = 1.

    In natural mode the gravitational coupling is a single dimensionless
    strength and all derived quantities are dimensionless.
    """

    mode: UnitMode
    hbar: float
    grav_const: float

    @classmethod
    def si(cls) -> "UnitSystem":
        return cls(UnitMode.SI, HBAR_SI, G_SI)

    @classmethod
    def natural(cls, grav_strength: float = 1.0) -> "UnitSystem":
        return cls(UnitMode.NATURAL, 1.0, grav_strength)


@dataclass
class ModelParams:
    """Physical and numerical parameters of a simulation run.

    epsilon is the dimensionless imaginary part of the gravitational
    coupling g = 1 - i*epsilon; grav_strength is the (natural-unit)
    gravitational constant; softening regularizes the 1/|r - q| kernel;
    smear_length > 0 switches the source density to Gaussian clouds.
    """

    epsilon: float = 1e-3
    grav_strength: float = 1.0
    particle_masses: tuple[float, ...] = (1.0,)
    softening: float = 0.1
    smear_length: float = 0.0
    dt: float = 0.01
    t_max: float = 1.0
    seed: int = 0
    units: UnitSystem = field(default_factory=UnitSystem.natural)
    # Localization source terms: grav-6-bis sums over all particles, so the
    # anti-Hermitian part keeps self terms by default.  The Hermitian part
    # keeps them only in single-collective-coordinate (pointer) mode.
    localization_self_terms: bool = True
    hermitian_self_source: bool | None = None
    # Per-particle weights scaling each particle's strength as a
    # localization source (used e.g. to switch off one party's collapse
    # coupling in bipartite experiments).  None means all ones.
    loc_source_weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        self.particle_masses = tuple(float(m) for m in self.particle_masses)
        if self.epsilon < 0:
            raise DomainError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.softening <= 0:
            raise DomainError(f"softening must be > 0, got {self.softening}")
        if self.smear_length < 0:
            raise DomainError(f"smear_length must be >= 0, got {self.smear_length}")
        if self.dt <= 0:
            raise DomainError(f"dt must be > 0, got {self.dt}")
        if len(self.particle_masses) < 1:
            raise DomainError("at least one particle mass is required")
        if any(m <= 0 for m in self.particle_masses):
            raise DomainError("particle masses must be positive")
        if self.loc_source_weights is not None:
            self.loc_source_weights = tuple(float(w) for w in self.loc_source_weights)
            if len(self.loc_source_weights) != len(self.particle_masses):
                raise DomainError("loc_source_weights must match particle count")

    @property
    def num_particles(self) -> int:
        return len(self.particle_masses)

    def hermitian_includes_self(self) -> bool:
        if self.hermitian_self_source is not None:
            return self.hermitian_self_source
        return self.num_particles == 1


def self_grav_energy(mass: float, size: float, units: UnitSystem) -> float:
    """Self-gravitational energy scale G M^2 / L of a body of mass M, size L."""
    if mass < 0:
        raise DomainError(f"mass must be >= 0, got {mass}")
    if size <= 0:
        raise DomainError(f"size must be > 0, got {size}")
    return units.grav_const * mass * mass / size


def collapse_time_estimate(epsilon: float, mass: float, size: float,
                           units: UnitSystem) -> float:
    """Collapse timescale hbar / (epsilon |E_sg|), order of magnitude only.

    epsilon = 0 returns infinity (no anti-Hermitian term, no collapse).
    """
    if epsilon < 0:
        raise DomainError(f"epsilon must be >= 0, got {epsilon}")
    if mass <= 0:
        raise DomainError(f"mass must be > 0, got {mass}")
    if size <= 0:
        raise DomainError(f"size must be > 0, got {size}")
    if epsilon == 0.0:
        return math.inf
    return units.hbar / (epsilon * self_grav_energy(mass, size, units))


def coulomb_gravity_ratio(units: UnitSystem) -> float:
    """Ratio of Coulomb to gravitational attraction in the e-p system.

    Only meaningful with SI constants; natural mode has no electromagnetic
    sector and raises.
    """
    if units.mode is not UnitMode.SI:
        raise UnitModeError("Coulomb/gravity ratio requires SI units")
    coulomb = ELEMENTARY_CHARGE_SI ** 2 / (4.0 * math.pi * VACUUM_PERMITTIVITY_SI)
    grav = units.grav_const * ELECTRON_MASS_SI * PROTON_MASS_SI
    return coulomb / grav


def fifth_power_scaling_check(density: float, sizes: list[float], epsilon: float,
                              units: UnitSystem) -> list[tuple[float, float]]:
    """Collapse time vs size at constant density: tau(L) with M = density L^3.

    Since E_sg = G (rho L^3)^2 / L grows as L^5, tau falls as L^-5; the
    returned (L, tau) pairs have log-log slope exactly -5.
    """
    if density <= 0:
        raise DomainError(f"density must be > 0, got {density}")
    sizes = [float(L) for L in sizes]
    if len(set(sizes)) < 2:
        raise DomainError("need at least two distinct sizes for a scaling check")
    if any(L <= 0 for L in sizes):
        raise DomainError("sizes must be positive")
    return [(L, collapse_time_estimate(epsilon, density * L ** 3, L, units))
            for L in sizes]


def loglog_slope(pairs: list[tuple[float, float]]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    if len(pairs) < 2:
        raise DomainError("need at least two points to fit a slope")
    lx = [math.log(x) for x, _ in pairs]
    ly = [math.log(y) for _, y in pairs]
    mx = sum(lx) / len(lx)
    my = sum(ly) / len(ly)
    sxx = sum((x - mx) ** 2 for x in lx)
    if sxx == 0.0:
        raise DomainError("x values are all equal; slope undefined")
    sxy = sum((x - mx) * (y - my) for x, y in zip(lx, ly))
    return sxy / sxx
