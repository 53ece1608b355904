"""Steady-state observables: reduced phonon state, currents, number
statistics, Husimi distributions, torotropy, and the pumping indicator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from nemstn.liouville import Liouvillian, SiteChain, build_left_vacuum, monomial_train
from nemstn.model import ModelSpec, truncated_lowering
from nemstn.phonon_encoding import HC_NUMBER
from nemstn.tn_core import OperatorTrain, TensorTrain, inner, sandwich

logger = logging.getLogger(__name__)

G2_UNDEFINED = float("nan")


@dataclass
class PhononReducedState:
    """M x M reduced density matrix of the vibrational mode."""

    rho: np.ndarray
    raw_trace: complex

    @property
    def cutoff(self) -> int:
        return self.rho.shape[0]

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.rho))

    @property
    def top_state_weight(self) -> float:
        return float(np.real(self.rho[-1, -1]))


def reduce_phonon(state: TensorTrain, chain: SiteChain,
                  trace_tol: float = 1e-6) -> PhononReducedState:
    """Trace out all fermionic dimers; requires a trace-normalized state."""
    n_bits = len(chain.phonon_bits)
    if n_bits == 0:
        raise ValueError("chain carries no phonon block")
    first_ph = chain.phonon_sites("physical")[0]
    vac = build_left_vacuum(chain)
    env = np.ones((1, 1), dtype=complex)
    for i in range(first_ph):
        t = np.tensordot(env, state.cores[i], axes=([1], [0]))
        env = np.tensordot(vac.cores[i].conj(), t, axes=([0, 1], [0, 1]))
    # env: (vac bond = 1, state bond); keep all remaining physical indices open
    t = env.reshape(-1)
    bond = state.cores[first_ph].shape[0]
    t = t.reshape(1, bond)
    for i in range(first_ph, chain.n_sites):
        t = np.tensordot(t, state.cores[i], axes=([t.ndim - 1], [0]))
    t = t.reshape((2, 2) * n_bits)
    # axes alternate (phys bit, tilde bit), most significant first
    perm = [2 * k for k in range(n_bits)] + [2 * k + 1 for k in range(n_bits)]
    m_cut = 2**n_bits
    rho = t.transpose(perm).reshape(m_cut, m_cut)
    raw_trace = complex(np.trace(rho))
    if abs(raw_trace - 1.0) > trace_tol:
        raise ValueError(f"state is not trace normalized (trace deviation "
                         f"{abs(raw_trace - 1.0):.3e})")
    rho = rho / raw_trace
    rho = 0.5 * (rho + rho.conj().T)
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -1e-8:
        raise ValueError(f"reduced state has eigenvalue {evals.min():.3e} < -1e-8")
    if evals.min() < 0.0:
        level = logging.WARNING if evals.min() < -1e-13 else logging.DEBUG
        logger.log(level, "clamping small negative phonon-state eigenvalues (min %.2e)",
                   evals.min())
        w, v = np.linalg.eigh(rho)
        w = np.clip(w, 0.0, None)
        rho = (v * w) @ v.conj().T
        rho /= np.trace(rho).real
    return PhononReducedState(rho=rho, raw_trace=raw_trace)


def expectation(state: TensorTrain, chain: SiteChain, op: OperatorTrain) -> complex:
    """<<1| O |rho>> / <<1|rho>>, the trace-functional expectation value."""
    vac = build_left_vacuum(chain)
    tr = inner(vac, state)
    if tr == 0:
        raise ValueError("state has zero trace overlap")
    return sandwich(vac, op, state) / tr


def currents(state: TensorTrain, chain: SiteChain, spec: ModelSpec
             ) -> tuple[float, float, float]:
    """Lindblad injection currents (I_L, I_R) and the coherent tunneling
    current J across the left lead--dot interface.

    Sign fixed by the continuity equation: positive J flows lead_L -> dot, so
    I_L = J holds in the steady state.
    """
    vals = {}
    for side, lead in zip("LR", spec.leads):
        total = 0.0
        for l, mode in enumerate(lead.aux_modes):
            key = f"lead_{side}:{l}"
            s = chain.site(key)
            n_op = OperatorTrain.from_local(chain.n_sites, {s: HC_NUMBER})
            occ = expectation(state, chain, n_op).real
            total += mode.damping * (mode.fermi_occupation - occ)
        vals[side] = total
    j_total = 0.0
    sd = chain.site("dot")
    for l, mode in enumerate(spec.lead_L.aux_modes):
        s = chain.site(f"lead_L:{l}")
        hop = monomial_train(chain, [(sd, True), (s, False)])
        j_total += 2.0 * mode.coupling * expectation(state, chain, hop).imag
    return vals["L"], vals["R"], j_total


def dot_occupation(state: TensorTrain, chain: SiteChain) -> float:
    sd = chain.site("dot")
    n_op = OperatorTrain.from_local(chain.n_sites, {sd: HC_NUMBER})
    return expectation(state, chain, n_op).real


def number_statistics(ps: PhononReducedState) -> tuple[float, float, float, float]:
    """(<n>, Var(n), Fano factor, g2(0)) from the Fock-diagonal moments."""
    p = ps.populations
    m = np.arange(len(p), dtype=float)
    n_mean = float(m @ p)
    n2 = float((m**2) @ p)
    var = n2 - n_mean**2
    if n_mean <= 0.0:
        return n_mean, var, G2_UNDEFINED, G2_UNDEFINED
    fano = var / n_mean
    g2 = (n2 - n_mean) / n_mean**2
    return n_mean, var, fano, g2


def coherent_amplitudes(alpha: complex, m_cutoff: int) -> np.ndarray:
    """Truncated coherent vector, renormalized to unit norm."""
    m = np.arange(m_cutoff)
    if alpha == 0:
        v = np.zeros(m_cutoff, dtype=complex)
        v[0] = 1.0
        return v
    logmod = m * math.log(abs(alpha)) - 0.5 * gammaln(m + 1.0) - abs(alpha) ** 2 / 2.0
    phase = np.exp(1j * m * np.angle(alpha))
    v = np.exp(logmod) * phase
    return v / np.linalg.norm(v)


def husimi_values(rho: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Q(alpha) = <alpha|rho|alpha>/pi on arbitrary points, vectorized."""
    m_cut = rho.shape[0]
    flat = np.asarray(alphas, dtype=complex).reshape(-1)
    vecs = np.empty((flat.size, m_cut), dtype=complex)
    for i, a in enumerate(flat):
        vecs[i] = coherent_amplitudes(a, m_cut)
    q = np.einsum("pm,mn,pn->p", vecs.conj(), rho, vecs).real / math.pi
    return q.reshape(np.shape(alphas))


def barycenter(ps: PhononReducedState) -> complex:
    """First antinormal moment Tr[b rho]; equals the Husimi barycenter."""
    rho = ps.rho
    m = np.arange(1, ps.cutoff)
    return complex(np.sum(np.sqrt(m) * rho[m, m - 1]))


@dataclass
class HusimiGrid:
    center: complex
    halfwidth: float
    resolution: int
    alphas: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    mass: float

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("alpha_re,alpha_im,Q\n")
            for a, q in zip(self.alphas.reshape(-1), self.values.reshape(-1)):
                fh.write(f"{a.real:.17g},{a.imag:.17g},{q:.17g}\n")


def default_halfwidth(n_ph: float) -> float:
    return max(4.0, 1.5 * math.sqrt(max(n_ph, 0.0)) + 4.0)


def husimi(ps: PhononReducedState, center: complex | None = None,
           halfwidth: float | None = None, resolution: int = 101,
           mass_floor: float = 0.99) -> HusimiGrid:
    """Husimi distribution on a square grid; auto-widened once if the grid
    captures less than ``mass_floor`` of the distribution."""
    n_ph, *_ = number_statistics(ps)
    if center is None:
        center = barycenter(ps)
    if halfwidth is None:
        halfwidth = default_halfwidth(n_ph)
    for attempt in range(2):
        x = np.linspace(-halfwidth, halfwidth, resolution)
        re, im = np.meshgrid(x, x, indexing="ij")
        alphas = center + re + 1j * im
        q = husimi_values(ps.rho, alphas)
        step = x[1] - x[0]
        mass = float(np.trapz(np.trapz(q, dx=step, axis=1), dx=step))
        if mass >= mass_floor:
            return HusimiGrid(center=center, halfwidth=halfwidth,
                              resolution=resolution, alphas=alphas, values=q,
                              mass=mass)
        halfwidth *= 1.5
    raise ValueError(f"Husimi grid captured only {mass:.4f} of the state "
                     "after widening; supply a larger grid")


@dataclass(frozen=True)
class TorotropyOptions:
    n_angles: int = 64
    n_radii: int = 400
    r_max: float | None = None
    z_floor: float = 1e-3


def torotropy(ps: PhononReducedState, opts: TorotropyOptions = TorotropyOptions()
              ) -> float:
    """Entropy-weighted deviation of radial Husimi profiles from their
    decreasing rearrangement, minimized over ray directions.

    Rays emanate from the barycenter; a ray whose captured weight falls below
    ``z_floor`` times the maximum is excluded (it misses the distribution).
    """
    n_ph, *_ = number_statistics(ps)
    alpha_c = barycenter(ps)
    r_max = opts.r_max if opts.r_max is not None else default_halfwidth(n_ph)
    radii = np.linspace(0.0, r_max, opts.n_radii)
    angles = 2.0 * math.pi * np.arange(opts.n_angles) / opts.n_angles
    points = alpha_c + radii[None, :] * np.exp(1j * angles[:, None])
    q = husimi_values(ps.rho, points)
    z = np.trapz(q, radii, axis=1)
    z_max = z.max()
    if z_max <= 0.0:
        raise ValueError("all rays captured zero weight")
    included = z >= opts.z_floor * z_max
    if not np.any(included):
        raise ValueError("all rays excluded by the weight floor")
    n_excluded = int(np.sum(~included))
    if n_excluded:
        logger.warning("torotropy: excluded %d rays with negligible weight", n_excluded)
    scores = []
    for k in np.nonzero(included)[0]:
        prof = q[k] / z[k]
        rearranged = np.sort(prof)[::-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            integrand = np.where(prof > 0.0, prof * np.log(prof), 0.0)
        entropy = -np.trapz(integrand, radii)
        if entropy <= 0.0:
            continue
        score = np.trapz(radii * (prof - rearranged), radii) / entropy
        scores.append(score)
    if not scores:
        raise ValueError("no usable rays for the torotropy minimization")
    return max(0.0, float(min(scores)))


def pumping_indicator(i_r: float, n_ph: float, omega0: float) -> float:
    """Transport-based excitation measure |I_R| <n_ph> / omega0."""
    return abs(i_r) * n_ph / omega0


@dataclass
class ObservableBundle:
    n_ph: float
    var_n_ph: float
    fano: float
    g2: float
    n_d: float
    current_left: float
    current_right: float
    current_coherent: float
    zeta: float
    torotropy: float
    alpha_c: complex
    top_state_weight: float
    source: str = "tensor-network"

    def to_dict(self) -> dict:
        return {
            "n_ph": self.n_ph,
            "var_n_ph": self.var_n_ph,
            "fano": self.fano,
            "g2": self.g2,
            "n_d": self.n_d,
            "I_L": self.current_left,
            "I_R": self.current_right,
            "J": self.current_coherent,
            "zeta": self.zeta,
            "T_Q": self.torotropy,
            "alpha_c_re": self.alpha_c.real,
            "alpha_c_im": self.alpha_c.imag,
            "top_state_weight": self.top_state_weight,
            "source": self.source,
        }

    FIELD_NAMES = ("n_ph", "var_n_ph", "fano", "g2", "n_d", "I_L", "I_R", "J",
                   "zeta", "T_Q", "alpha_c_re", "alpha_c_im", "top_state_weight")


def check_statistics_identity(n_ph: float, fano: float, g2: float,
                              tol: float = 1e-10) -> None:
    """g2 = 1 + (F-1)/<n>, asserted whenever the occupation is resolvable."""
    if n_ph <= 1e-6 or math.isnan(g2):
        return
    ref = 1.0 + (fano - 1.0) / n_ph
    if abs(g2 - ref) > tol * max(1.0, abs(g2)):
        raise AssertionError(f"statistics identity violated: g2={g2!r}, "
                             f"1+(F-1)/n={ref!r}")


def bundle_from_phonon_and_transport(ps: PhononReducedState, n_d: float,
                                     i_l: float, i_r: float, j_coh: float,
                                     spec: ModelSpec,
                                     torotropy_opts: TorotropyOptions = TorotropyOptions(),
                                     source: str = "tensor-network") -> ObservableBundle:
    n_ph, var, fano, g2 = number_statistics(ps)
    check_statistics_identity(n_ph, fano, g2)
    t_q = torotropy(ps, torotropy_opts)
    return ObservableBundle(
        n_ph=n_ph, var_n_ph=var, fano=fano, g2=g2, n_d=n_d,
        current_left=i_l, current_right=i_r, current_coherent=j_coh,
        zeta=pumping_indicator(i_r, n_ph, spec.omega0),
        torotropy=t_q, alpha_c=barycenter(ps),
        top_state_weight=ps.top_state_weight, source=source)


def observable_bundle(state: TensorTrain, liou: Liouvillian,
                      torotropy_opts: TorotropyOptions = TorotropyOptions()
                      ) -> ObservableBundle:
    """Full diagnostic bundle of a (trace-normalized) steady-state train."""
    chain, spec = liou.chain, liou.spec
    ps = reduce_phonon(state, chain)
    i_l, i_r, j_coh = currents(state, chain, spec)
    n_d = dot_occupation(state, chain)
    return bundle_from_phonon_and_transport(ps, n_d, i_l, i_r, j_coh, spec,
                                            torotropy_opts)


def thermal_phonon_state(m_cutoff: int, omega0: float, t_ph: float) -> np.ndarray:
    """Truncated Gibbs state of the number operator, normalized on M levels."""
    m = np.arange(m_cutoff, dtype=float)
    if t_ph == 0.0:
        p = np.zeros(m_cutoff)
        p[0] = 1.0
    else:
        w = np.exp(-m * omega0 / t_ph)
        p = w / w.sum()
    return np.diag(p).astype(complex)
