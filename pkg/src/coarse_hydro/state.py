from enum import IntEnum


class Representation(IntEnum):
    """Representation of a wave function's values.

    >>> int(Representation.position) == 0
    True
    >>> int(Representation.spectral) == 1
    True
    """

    position = 0
    """Values sampled on the configuration-space lattice"""
    spectral = 1
    """Values on the wavenumber lattice (continuous-transform scaling)"""


class FluctuationMode(IntEnum):
    """How the unsmeared initial state driving the fluctuation term is built.

    >>> int(FluctuationMode.deterministic) == 0
    True
    >>> int(FluctuationMode.ensemble) == 1
    True
    """

    deterministic = 0
    """Use the unsmeared initial state exactly"""
    ensemble = 1
    """Add seeded complex Gaussian components where the projector suppresses"""


class PrefactorMode(IntEnum):
    """Prefactor convention of the quantum energy.

    >>> int(PrefactorMode.standard) == 0
    True
    >>> int(PrefactorMode.mass_scaled) == 1
    True
    >>> int(PrefactorMode.mass_scaled_signed) == 2
    True
    """

    standard = 0
    """Bohm form (1/2m) * integral |grad sqrt(rho)|^2"""
    mass_scaled = 1
    """Standard form scaled by m^2 (prefactor m/2)"""
    mass_scaled_signed = 2
    """(m/2) * integral phi * laplace(phi), negative semidefinite"""


class KappaReading(IntEnum):
    """Parenthesization of the kappa term on the right side of the Euler equation.

    >>> int(KappaReading.outer) == 0
    True
    >>> int(KappaReading.inner) == 1
    True
    """

    outer = 0
    """rho * grad[(kappa / 2 rho) * dE/dkappa]"""
    inner = 1
    """rho * grad(kappa / 2 rho) * dE/dkappa"""


class UnitMode(IntEnum):
    """Unit system of the temperature map.

    >>> int(UnitMode.natural) == 0
    True
    >>> int(UnitMode.si) == 1
    True
    """

    natural = 0
    """hbar = k_B = 1"""
    si = 1
    """SI units; l_av in meters, m in kilograms, T in kelvin"""


class InitialStateKind(IntEnum):
    """Kind of initial (unsmeared) state.

    >>> int(InitialStateKind.gaussian_packet) == 0
    True
    >>> int(InitialStateKind.plane_wave) == 1
    True
    >>> int(InitialStateKind.superposition) == 2
    True
    >>> int(InitialStateKind.file) == 3
    True
    """

    gaussian_packet = 0
    plane_wave = 1
    superposition = 2
    file = 3


class BoundNorm(IntEnum):
    """Norm used when the quantum-force bound enters the verdict.

    >>> int(BoundNorm.l2) == 0
    True
    >>> int(BoundNorm.sup) == 1
    True
    """

    l2 = 0
    sup = 1


if __name__ == "__main__":
    import doctest

    doctest.testmod()
