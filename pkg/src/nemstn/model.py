"""Physical model definition: a spinless resonant level coupled to one
quantized vibrational mode, two Lorentzian fermionic reservoirs realized as
damped auxiliary modes, and a weak thermal phonon bath.

Units: hbar = k_B = e = 1 throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class ModelValidationError(ValueError):
    """Raised when a parameter set violates a model invariant."""


def match_lorentzian(gamma_height: float, delta_width: float) -> tuple[float, float]:
    """Damping and coupling of the single auxiliary mode reproducing a
    Lorentzian hybridization of height ``gamma_height`` and width ``delta_width``.

    Returns ``(gamma, kappa)`` with ``gamma = 2*delta`` and
    ``kappa = sqrt(gamma_height*delta/2)``.
    """
    if gamma_height <= 0 or delta_width <= 0:
        raise ModelValidationError("match_lorentzian requires strictly positive inputs")
    return 2.0 * delta_width, math.sqrt(gamma_height * delta_width / 2.0)


def fermi_occupation(energy: float, mu: float, temperature: float) -> float:
    """Fermi-Dirac occupation 1/(exp((e-mu)/T)+1), overflow safe.

    T = 0 is the step function with value 1/2 at the edge; mu = -inf gives 0.
    """
    if mu == -math.inf:
        return 0.0
    if mu == math.inf:
        return 1.0
    if temperature < 0:
        raise ModelValidationError("temperature must be nonnegative")
    if temperature == 0.0:
        if energy < mu:
            return 1.0
        if energy > mu:
            return 0.0
        return 0.5
    x = (energy - mu) / temperature
    if x >= 0:
        e = math.exp(-x)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(x))


def bose_occupation(omega: float, temperature: float) -> float:
    """Bose-Einstein occupation 1/(exp(omega/T)-1); zero at T = 0."""
    if omega <= 0:
        raise ModelValidationError("bose_occupation requires omega > 0")
    if temperature < 0:
        raise ModelValidationError("temperature must be nonnegative")
    if temperature == 0.0:
        return 0.0
    x = omega / temperature
    if x > 700:
        return 0.0
    return 1.0 / math.expm1(x)


@dataclass(frozen=True)
class AuxMode:
    """One damped auxiliary reservoir mode."""

    energy: float
    coupling: float
    damping: float
    fermi_occupation: float

    def __post_init__(self):
        if self.coupling <= 0 or self.damping <= 0:
            raise ModelValidationError("auxiliary mode rates must be strictly positive")
        if not 0.0 <= self.fermi_occupation <= 1.0:
            raise ModelValidationError("occupation must lie in [0, 1]")


@dataclass(frozen=True)
class LeadSpec:
    """Lorentzian reservoir: height gamma_height, width delta_width, peak
    omega_center, with chemical potential mu (may be -inf) and temperature."""

    gamma_height: float
    delta_width: float
    omega_center: float
    mu: float
    temperature: float
    aux_modes: tuple[AuxMode, ...] = field(default=())

    def __post_init__(self):
        if self.gamma_height <= 0 or self.delta_width <= 0:
            raise ModelValidationError("lead rates must be strictly positive")
        if self.temperature < 0:
            raise ModelValidationError("lead temperature must be nonnegative")
        if not self.aux_modes:
            gamma, kappa = match_lorentzian(self.gamma_height, self.delta_width)
            mode = AuxMode(
                energy=self.omega_center,
                coupling=kappa,
                damping=gamma,
                fermi_occupation=fermi_occupation(self.omega_center, self.mu,
                                                  self.temperature),
            )
            object.__setattr__(self, "aux_modes", (mode,))
        else:
            object.__setattr__(self, "aux_modes", tuple(self.aux_modes))
            for m in self.aux_modes:
                expect = fermi_occupation(m.energy, self.mu, self.temperature)
                if abs(m.fermi_occupation - expect) > 1e-12:
                    raise ModelValidationError(
                        "auxiliary mode occupation inconsistent with lead (mu, T)")

    def spectral_density(self, omega) -> np.ndarray:
        """Target Lorentzian J(omega) = Gamma*delta^2/((omega-omega_c)^2+delta^2)."""
        omega = np.asarray(omega, dtype=float)
        return self.gamma_height * self.delta_width**2 / (
            (omega - self.omega_center) ** 2 + self.delta_width**2)


def effective_hybridization(omega, lead: LeadSpec) -> np.ndarray:
    """Hybridization produced by the damped auxiliary modes,
    sum_l |kappa|^2 gamma / ((omega-eps)^2 + (gamma/2)^2)."""
    if not lead.aux_modes:
        raise ModelValidationError("lead carries no auxiliary modes")
    omega = np.asarray(omega, dtype=float)
    out = np.zeros_like(omega)
    for m in lead.aux_modes:
        out = out + m.coupling**2 * m.damping / (
            (omega - m.energy) ** 2 + (m.damping / 2.0) ** 2)
    return out


@dataclass(frozen=True)
class ModelSpec:
    """All physical parameters of the augmented open system."""

    epsilon: float
    omega0: float
    lam: float
    leads: tuple[LeadSpec, ...]
    gamma_ph: float
    t_ph: float
    phonon_cutoff_M: int
    n_g: float = 0.5

    def __post_init__(self):
        if self.omega0 <= 0:
            raise ModelValidationError("omega0 must be positive")
        if self.lam < 0:
            raise ModelValidationError("coupling must be nonnegative")
        if not 0.0 <= self.n_g <= 1.0:
            raise ModelValidationError("n_g must lie in [0, 1]")
        if self.gamma_ph < 0 or self.t_ph < 0:
            raise ModelValidationError("phonon bath parameters must be nonnegative")
        m = self.phonon_cutoff_M
        if m < 2 or (m & (m - 1)) != 0:
            raise ModelValidationError("phonon_cutoff_M must be a power of two >= 2")
        if self.gamma_ph > 0 and self.gamma_ph >= self.omega0:
            raise ModelValidationError(
                "gamma_ph >= omega0 violates the high-quality-factor assumption")
        if len(self.leads) != 2:
            raise ModelValidationError("exactly two leads (L, R) are required")
        object.__setattr__(self, "leads", tuple(self.leads))

    @property
    def lead_L(self) -> LeadSpec:
        return self.leads[0]

    @property
    def lead_R(self) -> LeadSpec:
        return self.leads[1]

    @property
    def n_pseudosites(self) -> int:
        return self.phonon_cutoff_M.bit_length() - 1

    @property
    def quality_factor(self) -> float:
        return math.inf if self.gamma_ph == 0 else self.omega0 / self.gamma_ph

    @property
    def adiabaticity(self) -> float:
        return self.lead_L.gamma_height / self.omega0

    @property
    def epsilon_eff(self) -> float:
        return self.epsilon - self.lam**2 * self.omega0 * (1.0 - 2.0 * self.n_g)

    @property
    def nbar_ph(self) -> float:
        return bose_occupation(self.omega0, self.t_ph)

    def vibronic_gap(self, n: int, m: int) -> float:
        return self.epsilon + (n - m) * self.omega0

    def replace(self, **kwargs) -> "ModelSpec":
        vals = {
            "epsilon": self.epsilon, "omega0": self.omega0, "lam": self.lam,
            "leads": self.leads, "gamma_ph": self.gamma_ph, "t_ph": self.t_ph,
            "phonon_cutoff_M": self.phonon_cutoff_M, "n_g": self.n_g,
        }
        vals.update(kwargs)
        return ModelSpec(**vals)


def truncated_lowering(m_cutoff: int) -> np.ndarray:
    """Textbook truncated annihilation operator b on M levels."""
    b = np.zeros((m_cutoff, m_cutoff), dtype=complex)
    for m in range(1, m_cutoff):
        b[m - 1, m] = math.sqrt(m)
    return b


def franck_condon_matrix(lam: float, m_cutoff: int) -> np.ndarray:
    """Displacement matrix exp(-lam (b^dag - b)) with truncated ladder operators.

    Evaluated with the matrix exponential of the antisymmetric generator so the
    result stays exactly unitary on the truncated space; the analytic
    infinite-space factors are inconsistent with a finite cutoff.
    """
    b = truncated_lowering(m_cutoff)
    gen = -lam * (b.conj().T - b)
    return scipy.linalg.expm(gen)


def franck_condon(n: int, m: int, lam: float, m_cutoff: int) -> complex:
    """Amplitude <n| exp(-lam (b^dag - b)) |m> on the truncated space."""
    if not (0 <= n < m_cutoff and 0 <= m < m_cutoff):
        raise ModelValidationError("Fock index out of range")
    return complex(franck_condon_matrix(lam, m_cutoff)[n, m])
