import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nemstn.model import (
    AuxMode,
    LeadSpec,
    ModelSpec,
    ModelValidationError,
    bose_occupation,
    effective_hybridization,
    fermi_occupation,
    franck_condon,
    franck_condon_matrix,
    match_lorentzian,
)


def make_lead(**kw):
    base = dict(gamma_height=1.0, delta_width=1.0, omega_center=1.0,
                mu=5.0, temperature=1.0)
    base.update(kw)
    return LeadSpec(**base)


def make_spec(**kw):
    base = dict(epsilon=0.0, omega0=1.0, lam=0.5,
                leads=(make_lead(), make_lead(omega_center=-1.0, mu=-5.0)),
                gamma_ph=0.01, t_ph=0.1, phonon_cutoff_M=8)
    base.update(kw)
    return ModelSpec(**base)


def test_match_lorentzian_examples():
    assert match_lorentzian(1.0, 1.0) == (2.0, pytest.approx(math.sqrt(0.5), abs=1e-12))
    assert match_lorentzian(1.0, 0.5) == (1.0, pytest.approx(0.5, abs=1e-15))
    assert match_lorentzian(4.0, 2.0) == (4.0, pytest.approx(2.0, abs=1e-15))
    with pytest.raises(ModelValidationError):
        match_lorentzian(0.0, 1.0)
    with pytest.raises(ModelValidationError):
        match_lorentzian(1.0, -2.0)


def test_fermi_examples():
    assert fermi_occupation(3.0, 3.0, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert fermi_occupation(0.0, -math.inf, 1.0) == 0.0
    # frozen against 40-digit arithmetic: 0.98201379003790844197
    assert fermi_occupation(1.0, 5.0, 1.0) == pytest.approx(0.9820137900379084, abs=1e-15)


def test_fermi_zero_temperature_step():
    assert fermi_occupation(-1.0, 0.0, 0.0) == 1.0
    assert fermi_occupation(1.0, 0.0, 0.0) == 0.0
    assert fermi_occupation(0.0, 0.0, 0.0) == 0.5


def test_fermi_overflow_safe():
    assert fermi_occupation(1e6, 0.0, 1.0) == 0.0
    assert fermi_occupation(-1e6, 0.0, 1.0) == 1.0


@given(st.floats(-50, 50), st.floats(-20, 20), st.floats(0.01, 50), st.floats(0.01, 40))
def test_fermi_symmetry_and_monotonicity(mu, x, t, dx):
    f_plus = fermi_occupation(mu + x, mu, t)
    f_minus = fermi_occupation(mu - x, mu, t)
    assert f_plus + f_minus == pytest.approx(1.0, abs=1e-12)
    assert fermi_occupation(mu + x + dx, mu, t) <= f_plus + 1e-15


def test_bose_occupation():
    assert bose_occupation(1.0, 0.0) == 0.0
    t = 1.0
    assert bose_occupation(1.0, t) == pytest.approx(1.0 / (math.e - 1.0), rel=1e-14)


def test_lead_matched_mode():
    lead = make_lead()
    (mode,) = lead.aux_modes
    assert mode.energy == lead.omega_center
    assert mode.damping == 2.0 * lead.delta_width
    assert mode.coupling == pytest.approx(math.sqrt(0.5), abs=1e-14)
    assert mode.fermi_occupation == pytest.approx(
        fermi_occupation(1.0, 5.0, 1.0), abs=1e-15)


def test_effective_hybridization_peak_and_decay():
    lead = make_lead()
    assert effective_hybridization(lead.omega_center, lead) == pytest.approx(
        lead.gamma_height, rel=1e-13)
    assert effective_hybridization(1e8, lead) == pytest.approx(0.0, abs=1e-12)


def test_effective_hybridization_reproduces_lorentzian():
    lead = make_lead(gamma_height=1.0, delta_width=1.0, omega_center=1.0)
    assert effective_hybridization(0.0, lead) == pytest.approx(0.5, rel=1e-13)
    grid = np.linspace(-10 * lead.delta_width, 10 * lead.delta_width, 1000)
    got = effective_hybridization(grid, lead)
    ref = lead.spectral_density(grid)
    assert np.max(np.abs(got - ref)) < 1e-13


def test_aux_mode_validation():
    with pytest.raises(ModelValidationError):
        AuxMode(energy=0.0, coupling=0.0, damping=1.0, fermi_occupation=0.5)
    with pytest.raises(ModelValidationError):
        AuxMode(energy=0.0, coupling=1.0, damping=1.0, fermi_occupation=1.5)


def test_model_spec_validation():
    with pytest.raises(ModelValidationError):
        make_spec(phonon_cutoff_M=6)
    with pytest.raises(ModelValidationError):
        make_spec(phonon_cutoff_M=1)
    with pytest.raises(ModelValidationError):
        make_spec(omega0=-1.0)
    with pytest.raises(ModelValidationError):
        make_spec(gamma_ph=2.0)  # violates gamma_ph < omega0
    with pytest.raises(ModelValidationError):
        make_spec(n_g=1.5)
    with pytest.raises(ModelValidationError):
        make_spec(leads=(make_lead(),))


def test_derived_accessors():
    spec = make_spec(gamma_ph=0.01, omega0=2.0, lam=0.5, n_g=0.25, epsilon=1.0)
    assert spec.quality_factor == pytest.approx(200.0)
    assert spec.adiabaticity == pytest.approx(0.5)
    assert spec.epsilon_eff == pytest.approx(1.0 - 0.25 * 2.0 * 0.5)
    assert spec.vibronic_gap(3, 1) == pytest.approx(1.0 + 2 * 2.0)
    assert make_spec(n_g=0.5, epsilon=0.7).epsilon_eff == pytest.approx(0.7)
    assert make_spec(gamma_ph=0.0).quality_factor == math.inf


def test_franck_condon_identity_at_zero_coupling():
    x = franck_condon_matrix(0.0, 16)
    assert np.allclose(x, np.eye(16), atol=1e-14)


def test_franck_condon_ground_amplitude():
    # large-M limit of X_00 is exp(-lam^2/2); frozen 0.88249690258459540286
    x00 = franck_condon(0, 0, 0.5, 128)
    assert abs(x00 - 0.8824969025845954) < 1e-9


def test_franck_condon_unitary():
    x = franck_condon_matrix(0.7, 32)
    assert np.max(np.abs(x.conj().T @ x - np.eye(32))) < 1e-12
    # probability columns sum to one for every m
    probs = np.abs(x) ** 2
    assert np.allclose(probs.sum(axis=0), 1.0, atol=1e-12)


def test_franck_condon_index_errors():
    with pytest.raises(ModelValidationError):
        franck_condon(16, 0, 0.5, 16)
