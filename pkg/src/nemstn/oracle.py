"""Exact dense machinery: directly assembled superoperators, null-space steady
states, Landauer quadrature with Lorentzian self-energies, the wide-band
current-occupation identity, and quantum-regression correlators.

The physical Hilbert space orders fermion modes exactly as their physical
sites appear on the interleaved chain, so chain and dense results are
comparable mode by mode.  Vectorization is column-stacking throughout:
vec(A rho B) = (B^T kron A) vec(rho).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from nemstn.diagnostics import (
    ObservableBundle,
    PhononReducedState,
    TorotropyOptions,
    bundle_from_phonon_and_transport,
)
from nemstn.liouville import SiteChain, build_site_chain
from nemstn.model import LeadSpec, ModelSpec, fermi_occupation, truncated_lowering

DENSE_DIM_LIMIT = 1024
DENSE_SVD_DIM = 64


class OracleScaleError(ValueError):
    """Raised when a dense computation would exceed the oracle's size gate."""


class DegenerateSteadyStateError(RuntimeError):
    """Raised when the generator kernel is not one dimensional."""


@dataclass
class DenseModel:
    spec: ModelSpec
    chain: SiteChain
    dim: int
    annihilators: dict[str, sp.csr_matrix]
    lowering: sp.csr_matrix          # phonon b
    mode_keys: tuple[str, ...]


def dense_model(spec: ModelSpec, chain: SiteChain | None = None) -> DenseModel:
    """Sparse second-quantized operators on the physical Hilbert space."""
    if chain is None:
        chain = build_site_chain(spec)
    keys = chain.fermion_modes
    nf = len(keys)
    m_cut = spec.phonon_cutoff_M
    dim = 2**nf * m_cut
    if dim > DENSE_DIM_LIMIT:
        raise OracleScaleError(f"dense oracle gated to D <= {DENSE_DIM_LIMIT}, got {dim}")
    sm = sp.csr_matrix(np.array([[0, 1], [0, 0]], dtype=complex))
    z = sp.csr_matrix(np.diag([1.0, -1.0]).astype(complex))
    eye2 = sp.identity(2, format="csr", dtype=complex)
    eye_ph = sp.identity(m_cut, format="csr", dtype=complex)
    ann = {}
    for j, key in enumerate(keys):
        op = sp.identity(1, format="csr", dtype=complex)
        for t in range(nf):
            op = sp.kron(op, z if t < j else (sm if t == j else eye2), format="csr")
        ann[key] = sp.kron(op, eye_ph, format="csr")
    b_ph = sp.csr_matrix(truncated_lowering(m_cut))
    eye_f = sp.identity(2**nf, format="csr", dtype=complex)
    lowering = sp.kron(eye_f, b_ph, format="csr")
    return DenseModel(spec=spec, chain=chain, dim=dim, annihilators=ann,
                      lowering=lowering, mode_keys=keys)


def dense_hamiltonian(dm: DenseModel) -> sp.csr_matrix:
    spec = dm.spec
    h = sp.csr_matrix((dm.dim, dm.dim), dtype=complex)
    d = dm.annihilators["dot"]
    nd = (d.conj().T @ d).tocsr()
    for side, lead in zip("LR", spec.leads):
        for l, mode in enumerate(lead.aux_modes):
            c = dm.annihilators[f"lead_{side}:{l}"]
            h = h + mode.energy * (c.conj().T @ c)
            hop = mode.coupling * (d.conj().T @ c)
            h = h + hop + hop.conj().T
    h = h + spec.epsilon * nd
    b = dm.lowering
    h = h + spec.omega0 * (b.conj().T @ b)
    if spec.lam != 0.0:
        ng_id = spec.n_g * sp.identity(dm.dim, format="csr", dtype=complex)
        h = h + spec.lam * spec.omega0 * ((nd - ng_id) @ (b + b.conj().T))
    return h.tocsr()


def _lindblad_superoperator(h: sp.csr_matrix, jumps) -> sp.csr_matrix:
    dim = h.shape[0]
    eye = sp.identity(dim, format="csr", dtype=complex)
    liou = -1j * (sp.kron(eye, h, format="csr") - sp.kron(h.T, eye, format="csr"))
    for op, rate in jumps:
        if rate == 0.0:
            continue
        opd = op.conj().T.tocsr()
        anti = (opd @ op).tocsr()
        liou = liou + rate * (
            sp.kron(op.conj(), op, format="csr")
            - 0.5 * sp.kron(eye, anti, format="csr")
            - 0.5 * sp.kron(anti.T, eye, format="csr"))
    return liou.tocsr()


def dense_liouvillian(spec: ModelSpec, chain: SiteChain | None = None
                      ) -> tuple[sp.csr_matrix, DenseModel]:
    """Directly constructed superoperator -i[H, .] + sum of dissipators."""
    dm = dense_model(spec, chain)
    h = dense_hamiltonian(dm)
    jumps = []
    for side, lead in zip("LR", spec.leads):
        for l, mode in enumerate(lead.aux_modes):
            c = dm.annihilators[f"lead_{side}:{l}"]
            jumps.append((c, mode.damping * (1.0 - mode.fermi_occupation)))
            jumps.append((c.conj().T.tocsr(), mode.damping * mode.fermi_occupation))
    if spec.gamma_ph > 0.0:
        nbar = spec.nbar_ph
        b = dm.lowering
        jumps.append((b, spec.gamma_ph * (nbar + 1.0)))
        jumps.append((b.conj().T.tocsr(), spec.gamma_ph * nbar))
    return _lindblad_superoperator(h, jumps), dm


def _null_vector(liou: sp.csr_matrix, dim: int) -> np.ndarray:
    if dim <= DENSE_SVD_DIM:
        dense = liou.toarray()
        _, s, vh = np.linalg.svd(dense)
        if s.size > 1 and s[-2] < 1e-8 * max(s[0], 1.0):
            raise DegenerateSteadyStateError(
                f"singular values {s[-2]:.3e}, {s[-1]:.3e} indicate a degenerate kernel")
        return vh[-1].conj()
    # shifted inverse iteration on the sparse generator
    rng = np.random.default_rng(7)
    scale = abs(liou).max()
    shift = 1e-10 * scale
    eye = sp.identity(liou.shape[0], format="csc", dtype=complex)
    lu = spla.splu((liou - shift * eye).tocsc())
    v = rng.standard_normal(liou.shape[0]) + 1j * rng.standard_normal(liou.shape[0])
    v /= np.linalg.norm(v)
    prev = np.inf
    for _ in range(50):
        v = lu.solve(v)
        v /= np.linalg.norm(v)
        res = np.linalg.norm(liou @ v)
        if res < 1e-13 * max(scale, 1.0) or abs(prev - res) < 1e-16 * max(scale, 1.0):
            break
        prev = res
    # kernel-degeneracy probe: deflate and rerun
    w = rng.standard_normal(liou.shape[0]) + 1j * rng.standard_normal(liou.shape[0])
    w -= np.vdot(v, w) * v
    w /= np.linalg.norm(w)
    for _ in range(12):
        w = lu.solve(w)
        w -= np.vdot(v, w) * v
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        w /= nw
    if np.linalg.norm(liou @ w) < 1e-8 * max(scale, 1.0):
        raise DegenerateSteadyStateError("second kernel vector found")
    return v


def dense_ness(spec: ModelSpec, chain: SiteChain | None = None
               ) -> tuple[np.ndarray, float, DenseModel]:
    """Steady-state density matrix, its residual, and the operator set.

    The raw null vector is Hermitized, clamped, and trace normalized;
    eigenvalues below -1e-8 are treated as non-convergence.
    """
    liou, dm = dense_liouvillian(spec, chain)
    v = _null_vector(liou, dm.dim)
    rho = v.reshape(dm.dim, dm.dim, order="F")
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho)
    if abs(tr) < 1e-14:
        raise DegenerateSteadyStateError("null vector is traceless; not a state")
    rho = rho / tr
    evals, evecs = np.linalg.eigh(rho)
    if evals.min() < -1e-8:
        raise DegenerateSteadyStateError(
            f"steady state has eigenvalue {evals.min():.3e} < -1e-8")
    evals = np.clip(evals, 0.0, None)
    rho = (evecs * evals) @ evecs.conj().T
    rho /= np.trace(rho).real
    vec = rho.flatten(order="F")
    residual = float(np.linalg.norm(liou @ vec) / np.linalg.norm(vec))
    return rho, residual, dm


# ---------------------------------------------------------------------------
# dense observables

def dense_currents(rho: np.ndarray, dm: DenseModel) -> tuple[float, float, float]:
    spec = dm.spec
    vals = {}
    for side, lead in zip("LR", spec.leads):
        total = 0.0
        for l, mode in enumerate(lead.aux_modes):
            c = dm.annihilators[f"lead_{side}:{l}"]
            occ = float(np.real(np.trace(rho @ (c.conj().T @ c).toarray())))
            total += mode.damping * (mode.fermi_occupation - occ)
        vals[side] = total
    d = dm.annihilators["dot"]
    j_total = 0.0
    for l, mode in enumerate(spec.lead_L.aux_modes):
        c = dm.annihilators[f"lead_L:{l}"]
        z = complex(np.trace(rho @ (d.conj().T @ c).toarray()))
        j_total += 2.0 * mode.coupling * z.imag
    return vals["L"], vals["R"], j_total


def dense_reduced_phonon(rho: np.ndarray, dm: DenseModel) -> PhononReducedState:
    m_cut = dm.spec.phonon_cutoff_M
    nf = len(dm.mode_keys)
    r = rho.reshape(2**nf, m_cut, 2**nf, m_cut)
    rho_ph = np.einsum("fmfn->mn", r)
    rho_ph = 0.5 * (rho_ph + rho_ph.conj().T)
    return PhononReducedState(rho=rho_ph, raw_trace=complex(np.trace(rho_ph)))


def dense_bundle(spec: ModelSpec,
                 torotropy_opts: TorotropyOptions = TorotropyOptions()
                 ) -> tuple[ObservableBundle, float]:
    """Observable bundle of the dense steady state, tagged source="oracle"."""
    rho, residual, dm = dense_ness(spec)
    ps = dense_reduced_phonon(rho, dm)
    i_l, i_r, j_coh = dense_currents(rho, dm)
    d = dm.annihilators["dot"]
    n_d = float(np.real(np.trace(rho @ (d.conj().T @ d).toarray())))
    bundle = bundle_from_phonon_and_transport(ps, n_d, i_l, i_r, j_coh, spec,
                                              torotropy_opts, source="oracle")
    return bundle, residual


# ---------------------------------------------------------------------------
# Landauer benchmark with Lorentzian self-energies

def retarded_self_energy(omega, lead: LeadSpec) -> np.ndarray:
    """Sigma^R(omega) = kappa^2 / (omega - omega_c + i delta) per matched mode."""
    omega = np.asarray(omega, dtype=complex)
    out = np.zeros_like(omega)
    for m in lead.aux_modes:
        out = out + m.coupling**2 / (omega - m.energy + 1j * m.damping / 2.0)
    return out


def transmission(omega, spec: ModelSpec) -> np.ndarray:
    """T(omega) = J_L J_R |G_d^R|^2 with the Lorentzian self-energies."""
    omega_arr = np.asarray(omega, dtype=float)
    lead_l, lead_r = spec.leads
    sigma = retarded_self_energy(omega_arr, lead_l) + retarded_self_energy(omega_arr, lead_r)
    g_ret = 1.0 / (omega_arr - spec.epsilon - sigma)
    j_l = np.zeros_like(omega_arr)
    j_r = np.zeros_like(omega_arr)
    for m in lead_l.aux_modes:
        j_l = j_l + m.coupling**2 * m.damping / ((omega_arr - m.energy) ** 2
                                                 + (m.damping / 2.0) ** 2)
    for m in lead_r.aux_modes:
        j_r = j_r + m.coupling**2 * m.damping / ((omega_arr - m.energy) ** 2
                                                 + (m.damping / 2.0) ** 2)
    return j_l * j_r * np.abs(g_ret) ** 2


def _integration_window(spec: ModelSpec) -> tuple[float, list[float]]:
    pts = [spec.epsilon]
    width = 50.0
    for lead in spec.leads:
        for m in lead.aux_modes:
            pts.append(m.energy)
            width = max(width, abs(m.energy) + 25.0 * m.damping)
        if lead.mu not in (-math.inf, math.inf):
            pts.append(lead.mu)
            width = max(width, abs(lead.mu) + 25.0 * max(lead.temperature, 1.0))
    return width, sorted(set(pts))


def landauer_current(spec: ModelSpec, occupations: str = "fermi",
                     abs_tol: float = 1e-8) -> float:
    """(1/2pi) int T(omega) [f_L - f_R] domega for the decoupled (lam = 0) model.

    ``occupations="fermi"`` uses the full Fermi functions of the reservoirs;
    ``occupations="embedded"`` uses the energy-independent occupations pinned
    at the auxiliary-mode energies, which is what the damped single-mode
    embedding physically realizes.
    """
    if spec.lam != 0.0:
        raise ValueError("Landauer quadrature requires lam = 0")
    lead_l, lead_r = spec.leads
    if occupations == "fermi":
        def bias(w):
            return (fermi_occupation(w, lead_l.mu, lead_l.temperature)
                    - fermi_occupation(w, lead_r.mu, lead_r.temperature))
    elif occupations == "embedded":
        f_l = lead_l.aux_modes[0].fermi_occupation if len(lead_l.aux_modes) == 1 else None
        f_r = lead_r.aux_modes[0].fermi_occupation if len(lead_r.aux_modes) == 1 else None
        if f_l is None or f_r is None:
            raise ValueError("embedded occupations defined for single-mode leads")

        def bias(w):
            return f_l - f_r
    else:
        raise ValueError(f"unknown occupation convention {occupations!r}")
    width, pts = _integration_window(spec)
    pts = [p for p in pts if -width < p < width]

    def integrand(w):
        return float(transmission(w, spec)) * bias(w) / (2.0 * math.pi)

    val, err = scipy.integrate.quad(integrand, -width, width, points=pts,
                                    limit=400, epsabs=abs_tol / 2, epsrel=0.0)
    tail = transmission(width, spec) * width / 5.0 / math.pi  # ~1/w^6 decay
    if err + tail > abs_tol:
        raise RuntimeError(f"quadrature did not converge: err={err:.2e}, "
                           f"tail estimate={tail:.2e} on [-{width}, {width}]")
    return float(val)


def current_occupation_deviation(i_l: float, n_d: float, spec: ModelSpec) -> float:
    """|I_L - Gamma <n_d>| / |I_L| for the wide-band, empty-drain identity."""
    gamma = spec.lead_L.gamma_height
    if i_l == 0.0:
        raise ValueError("vanishing current; identity undefined")
    return abs(i_l - gamma * n_d) / abs(i_l)


# ---------------------------------------------------------------------------
# quantum-regression correlators at oracle scale

def regression_correlator(spec: ModelSpec, times: np.ndarray,
                          chain: SiteChain | None = None):
    """Position autocorrelation C_xx(t) = <x(t) x(0)> - <x>^2 with
    x = (b + b^dag)/sqrt(2), via eigendecomposition of the dense generator
    (falling back to Krylov time stepping for larger problems).

    Returns (C_xx complex array, rho_ss, DenseModel).
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be an increasing grid starting at 0")
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
        raise ValueError("times must be uniform")
    liou, dm = dense_liouvillian(spec, chain)
    rho, _, _ = dense_ness(spec, chain)
    x_op = (dm.lowering + dm.lowering.conj().T).toarray() / math.sqrt(2.0)
    x_mean = float(np.real(np.trace(x_op @ rho)))
    v0 = (x_op @ rho).flatten(order="F")
    dim = dm.dim
    x_row = x_op.T.flatten(order="F")  # Tr[x M] = x_row . vec(M)
    if dim**2 <= 4096:
        evals, evecs = scipy.linalg.eig(liou.toarray())
        coeff = np.linalg.solve(evecs, v0)
        weights = (x_row @ evecs) * coeff
        cxx = np.array([np.sum(weights * np.exp(evals * t)) for t in times])
    else:
        segs = spla.expm_multiply(liou, v0, start=times[0], stop=times[-1],
                                  num=len(times))
        cxx = segs @ x_row
    return cxx - x_mean**2, rho, dm


def power_spectral_density(times: np.ndarray, cxx: np.ndarray,
                           omegas: np.ndarray) -> np.ndarray:
    """S_xx(omega) = int e^{i omega t} C(t) dt with a rectangular window on
    [0, T_max], one-sided transform symmetrized via C(-t) = C(t)^*."""
    omegas = np.asarray(omegas, dtype=float)
    out = np.empty_like(omegas)
    for i, w in enumerate(omegas):
        out[i] = 2.0 * np.real(np.trapz(np.exp(1j * w * times) * cxx, times))
    return out


def damped_oscillator_correlator(times: np.ndarray, omega0: float,
                                 gamma_ph: float, nbar: float) -> np.ndarray:
    """Closed-form C_xx(t) of the thermal damped mode: the quantum regression
    of the weak-coupling Lindblad model."""
    times = np.asarray(times, dtype=float)
    return 0.5 * ((nbar + 1.0) * np.exp(-1j * omega0 * times)
                  + nbar * np.exp(1j * omega0 * times)) * np.exp(-gamma_ph * times / 2.0)
