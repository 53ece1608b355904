"""Doubled (superfermion) Liouville space on an interleaved site chain.

Every physical mode is immediately followed by its tilde partner.  Fermionic
operators carry Jordan-Wigner strings over the full interleaved ordering,
tilde fermions included; hard-core-boson pseudosites carry no strings.  The
vectorized generator acts on |rho>> = rho|1>> where |1>> is the left vacuum;
right multiplication is expressed through the conjugation rules

    f_j^dag |1>> = -f~_j |1>>,   f_j |1>> = f~_j^dag |1>>,
    a_j^dag |1>> =  a~_j |1>>,   a_j |1>> = a~_j^dag |1>>.

The resulting train is exact on the even-fermion-parity (physical) sector,
which the dynamics never leaves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from nemstn.model import ModelSpec, truncated_lowering
from nemstn.phonon_encoding import (
    HC_ID,
    HC_LOWER,
    HC_NUMBER,
    HC_RAISE,
    BinaryCode,
    build_number,
    build_raising,
    phonon_operator_train,
)
from nemstn.tn_core import OperatorTrain, TensorTrain, mpo_multiply, mpo_sum

PAULI_Z = np.diag([1.0, -1.0]).astype(complex)


class LiouvillianBuildError(RuntimeError):
    """Raised when a term cannot be compressed under the configured bond ceiling."""


@dataclass(frozen=True)
class SiteDescriptor:
    kind: str                 # "fermion" | "phonon_pseudosite"
    copy: str                 # "physical" | "tilde"
    label: str
    mode: str                 # mode key shared by the physical/tilde pair
    significance: int | None = None
    local_dim: int = 2


class SiteChain:
    """Ordered interleaved chain with lookup helpers."""

    def __init__(self, sites: list[SiteDescriptor]):
        self.sites = tuple(sites)
        self._index = {(s.mode, s.copy): i for i, s in enumerate(self.sites)}
        for i, s in enumerate(self.sites):
            if s.copy == "physical":
                partner = self.sites[i + 1]
                if partner.copy != "tilde" or partner.mode != s.mode:
                    raise ValueError("every physical site must be followed by its tilde partner")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_pairs(self) -> int:
        return self.n_sites // 2

    @property
    def fermion_site_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.sites) if s.kind == "fermion")

    @property
    def fermion_modes(self) -> tuple[str, ...]:
        return tuple(s.mode for s in self.sites
                     if s.kind == "fermion" and s.copy == "physical")

    @property
    def phonon_bits(self) -> tuple[int, ...]:
        """Significances in chain order (most significant first)."""
        return tuple(s.significance for s in self.sites
                     if s.kind == "phonon_pseudosite" and s.copy == "physical")

    @property
    def phonon_cutoff(self) -> int:
        return 2 ** len(self.phonon_bits)

    def site(self, mode: str, copy: str = "physical") -> int:
        return self._index[(mode, copy)]

    def phonon_sites(self, copy: str) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.sites)
                     if s.kind == "phonon_pseudosite" and s.copy == copy)

    def pairs(self) -> list[tuple[int, int, SiteDescriptor]]:
        return [(i, i + 1, s) for i, s in enumerate(self.sites) if s.copy == "physical"]


def build_site_chain(spec: ModelSpec) -> SiteChain:
    """Deterministic layout: [lead_L pairs][dot pair][lead_R pairs][phonon pairs].

    Phonon pseudosites are placed most significant first.  With several
    auxiliary modes per lead, modes closest to the transport window
    (smallest |eps - mu|) sit nearest the dot.
    """
    sites: list[SiteDescriptor] = []

    def add_pair(kind, label, mode, significance=None):
        sites.append(SiteDescriptor(kind, "physical", label, mode, significance))
        sites.append(SiteDescriptor(kind, "tilde", label, mode, significance))

    def lead_order(lead, reverse):
        order = sorted(range(len(lead.aux_modes)),
                       key=lambda l: abs(lead.aux_modes[l].energy - lead.mu)
                       if lead.mu != -np.inf else l)
        return order[::-1] if reverse else order

    lead_l, lead_r = spec.leads
    for l in lead_order(lead_l, reverse=True):
        label = "lead_L" if len(lead_l.aux_modes) == 1 else f"lead_L_{l+1}"
        add_pair("fermion", label, f"lead_L:{l}")
    add_pair("fermion", "dot", "dot")
    for l in lead_order(lead_r, reverse=False):
        label = "lead_R" if len(lead_r.aux_modes) == 1 else f"lead_R_{l+1}"
        add_pair("fermion", label, f"lead_R:{l}")
    n = spec.n_pseudosites
    for j in range(n, 0, -1):
        add_pair("phonon_pseudosite", f"ph_bit_{j}", f"ph:{j}", significance=j)
    return SiteChain(sites)


def build_left_vacuum(chain: SiteChain) -> TensorTrain:
    """Product of maximally correlated pair states |00> + |11> over all dimers."""
    cores = []
    for _ in range(chain.n_pairs):
        a = np.zeros((1, 2, 2), dtype=complex)
        a[0, 0, 0] = 1.0
        a[0, 1, 1] = 1.0
        b = np.zeros((2, 2, 1), dtype=complex)
        b[0, 0, 0] = 1.0
        b[1, 1, 0] = 1.0
        cores.extend([a, b])
    return TensorTrain(cores, center=0)


def annihilation_factors(chain: SiteChain, site: int) -> dict[int, np.ndarray]:
    """Local factors of the annihilation operator at ``site``; fermions carry a
    Jordan-Wigner string over all preceding fermionic sites."""
    desc = chain.sites[site]
    factors: dict[int, np.ndarray] = {}
    if desc.kind == "fermion":
        for t in chain.fermion_site_indices:
            if t < site:
                factors[t] = PAULI_Z
    factors[site] = HC_LOWER
    return factors


def elementary_factors(chain: SiteChain, site: int, dagger: bool) -> dict[int, np.ndarray]:
    fac = annihilation_factors(chain, site)
    if dagger:
        fac = {s: m.conj().T for s, m in fac.items()}
    return fac


def _product_factors(factor_list: list[dict[int, np.ndarray]]) -> dict[int, np.ndarray]:
    """Sitewise product; earlier entries in the list multiply on the left."""
    out: dict[int, np.ndarray] = {}
    for fac in factor_list:
        for s, m in fac.items():
            out[s] = out[s] @ m if s in out else m.copy()
    return out


def monomial_train(chain: SiteChain, elems: list[tuple[int, bool]],
                   coeff: complex = 1.0) -> OperatorTrain:
    """Bond-1 train for a product of elementary operators given in operator
    order (leftmost factor first)."""
    facs = _product_factors([elementary_factors(chain, s, d) for s, d in elems])
    return OperatorTrain.from_local(chain.n_sites, facs, coeff)


def support_of_factors(factors: dict[int, np.ndarray]) -> tuple[int, ...]:
    return tuple(sorted(s for s, m in factors.items()
                        if np.max(np.abs(m - np.eye(2))) > 1e-15))


def extend_phonon_train(chain: SiteChain, seg: OperatorTrain, copy: str) -> OperatorTrain:
    """Insert a pseudosite-block train into the full chain, passing its bonds
    through the interleaved partner sites."""
    block_sites = chain.phonon_sites(copy)
    if len(block_sites) != seg.n_sites:
        raise ValueError("segment length does not match the phonon block")
    cores = []
    bond = 1
    next_seg = 0
    lo, hi = block_sites[0], block_sites[-1]
    for i in range(chain.n_sites):
        if i in block_sites:
            core = seg.cores[next_seg]
            next_seg += 1
            bond = core.shape[3]
            cores.append(core)
        elif lo < i < hi:
            eye_b = np.eye(bond, dtype=complex)
            core = np.einsum("lr,st->lstr", eye_b, np.eye(2, dtype=complex))
            cores.append(core)
        else:
            cores.append(np.eye(2, dtype=complex).reshape(1, 2, 2, 1))
    return OperatorTrain(cores)


def phonon_block_train(chain: SiteChain, mat: np.ndarray, copy: str,
                       cutoff: float = 1e-30) -> OperatorTrain:
    """Full-chain train of an M x M phonon operator on one copy."""
    return extend_phonon_train(chain, phonon_operator_train(mat, cutoff), copy)


# ---------------------------------------------------------------------------
# Liouvillian assembly

@dataclass(frozen=True)
class TermInfo:
    name: str
    kind: str                 # hamiltonian | lead_dissipator | phonon_dissipator
    support: tuple[int, ...]


@dataclass
class Liouvillian:
    train: OperatorTrain
    chain: SiteChain
    spec: ModelSpec
    terms: tuple[TermInfo, ...]
    tol: float

    @property
    def n_sites(self) -> int:
        return self.chain.n_sites


def _hamiltonian_terms(spec: ModelSpec, chain: SiteChain, tilde: bool,
                       cutoff: float):
    """Monomial/block decomposition of H on one copy; constants are dropped
    since they cancel in the commutator."""
    copy = "tilde" if tilde else "physical"
    terms = []

    def mode_sites(key):
        return chain.site(key, copy)

    for side, lead in zip("LR", spec.leads):
        for l, mode in enumerate(lead.aux_modes):
            key = f"lead_{side}:{l}"
            s = mode_sites(key)
            if mode.energy != 0.0:
                terms.append((f"H_eps_{key}", OperatorTrain.from_local(
                    chain.n_sites, {s: HC_NUMBER}, mode.energy)))
            sd = mode_sites("dot")
            hop1 = monomial_train(chain, [(sd, True), (s, False)], mode.coupling)
            hop2 = monomial_train(chain, [(s, True), (sd, False)], mode.coupling)
            terms.append((f"H_hop_{key}", mpo_sum([hop1, hop2], cutoff=cutoff)))
    sd = mode_sites("dot")
    if spec.epsilon != 0.0:
        terms.append(("H_eps_dot", OperatorTrain.from_local(
            chain.n_sites, {sd: HC_NUMBER}, spec.epsilon)))
    n = spec.n_pseudosites
    terms.append(("H_phonon_energy",
                  extend_phonon_train(chain, build_number(n).train, copy)
                  .scale(spec.omega0)))
    if spec.lam != 0.0:
        b = truncated_lowering(spec.phonon_cutoff_M)
        disp = phonon_block_train(chain, b + b.conj().T, copy, cutoff)
        coupled = disp.copy()
        # dress the displacement with the dot charge n_d - n_g
        charge = np.diag([-spec.n_g, 1.0 - spec.n_g]).astype(complex)
        coupled.cores[sd] = np.einsum("st,ltqr->lsqr", charge, coupled.cores[sd])
        terms.append(("H_dot_phonon", coupled.scale(spec.lam * spec.omega0)))
    return terms


def _dissipator_terms(spec: ModelSpec, chain: SiteChain, cutoff: float):
    terms = []
    n_sites = chain.n_sites
    ident = OperatorTrain.identity(n_sites)
    for side, lead in zip("LR", spec.leads):
        for l, mode in enumerate(lead.aux_modes):
            key = f"lead_{side}:{l}"
            s = chain.site(key, "physical")
            st = chain.site(key, "tilde")
            g_loss = mode.damping * (1.0 - mode.fermi_occupation)
            g_gain = mode.damping * mode.fermi_occupation
            pieces = []
            if g_loss != 0.0:
                pieces.append(monomial_train(chain, [(s, False), (st, False)], -g_loss))
                pieces.append(OperatorTrain.from_local(n_sites, {s: HC_NUMBER}, -0.5 * g_loss))
                pieces.append(OperatorTrain.from_local(n_sites, {st: HC_NUMBER}, -0.5 * g_loss))
            if g_gain != 0.0:
                pieces.append(monomial_train(chain, [(s, True), (st, True)], g_gain))
                pieces.append(ident.scale(-g_gain))
                pieces.append(OperatorTrain.from_local(n_sites, {s: HC_NUMBER}, 0.5 * g_gain))
                pieces.append(OperatorTrain.from_local(n_sites, {st: HC_NUMBER}, 0.5 * g_gain))
            terms.append((f"D_{key}", "lead_dissipator",
                          mpo_sum(pieces, cutoff=cutoff), (s, st)))
    if spec.gamma_ph > 0.0:
        m_cut = spec.phonon_cutoff_M
        b = truncated_lowering(m_cut)
        bd = b.conj().T
        nb = bd @ b
        bbd = b @ bd
        nbar = spec.nbar_ph
        down = spec.gamma_ph * (nbar + 1.0)
        up = spec.gamma_ph * nbar
        pieces = []
        b_phys = phonon_block_train(chain, b, "physical", cutoff)
        b_tilde = phonon_block_train(chain, b, "tilde", cutoff)
        pieces.append(mpo_multiply(b_phys, b_tilde, cutoff=cutoff).scale(down))
        pieces.append(phonon_block_train(chain, nb, "physical", cutoff).scale(-0.5 * down))
        pieces.append(phonon_block_train(chain, nb, "tilde", cutoff).scale(-0.5 * down))
        if up != 0.0:
            bd_phys = phonon_block_train(chain, bd, "physical", cutoff)
            bd_tilde = phonon_block_train(chain, bd, "tilde", cutoff)
            pieces.append(mpo_multiply(bd_phys, bd_tilde, cutoff=cutoff).scale(up))
            pieces.append(phonon_block_train(chain, bbd, "physical", cutoff).scale(-0.5 * up))
            pieces.append(phonon_block_train(chain, bbd, "tilde", cutoff).scale(-0.5 * up))
        support = tuple(sorted(chain.phonon_sites("physical")
                               + chain.phonon_sites("tilde")))
        terms.append(("D_phonon", "phonon_dissipator",
                      mpo_sum(pieces, cutoff=cutoff), support))
    return terms


def build_liouvillian(spec: ModelSpec, chain: SiteChain | None = None,
                      tol: float = 1e-12, bond_ceiling: int = 6000) -> Liouvillian:
    """Assemble the vectorized generator as one compressed operator train.

    ``tol`` bounds the relative Frobenius error of the compressed train; the
    engine's squared-singular-value cutoff is tol^2.
    """
    if not 0.0 < tol <= 1e-6:
        raise ValueError("compression tolerance must lie in (0, 1e-6]")
    if chain is None:
        chain = build_site_chain(spec)
    cutoff = tol * tol
    trains = []
    infos = []

    def check_bond(name, train):
        wmax = max([1] + train.bond_dims)
        if wmax > bond_ceiling:
            raise LiouvillianBuildError(
                f"term {name!r} exceeded the bond ceiling ({wmax} > {bond_ceiling})")

    for name, train in _hamiltonian_terms(spec, chain, tilde=False, cutoff=cutoff):
        t = train.scale(-1j)
        check_bond(name, t)
        trains.append(t)
        infos.append(TermInfo(name, "hamiltonian", ()))
    for name, train in _hamiltonian_terms(spec, chain, tilde=True, cutoff=cutoff):
        t = train.scale(1j)
        check_bond(name + "_tilde", t)
        trains.append(t)
        infos.append(TermInfo(name + "_tilde", "hamiltonian", ()))
    for name, kind, train, support in _dissipator_terms(spec, chain, cutoff):
        check_bond(name, train)
        trains.append(train)
        infos.append(TermInfo(name, kind, support))
    total = mpo_sum(trains, cutoff=cutoff, chi_max=bond_ceiling)
    if max([1] + total.bond_dims) >= bond_ceiling:
        raise LiouvillianBuildError("compressed generator saturated the bond ceiling")
    total.meta["compression_tol"] = tol
    return Liouvillian(train=total, chain=chain, spec=spec,
                       terms=tuple(infos), tol=tol)


def build_adjoint_liouvillian(liou: Liouvillian) -> OperatorTrain:
    return liou.train.adjoint()


# ---------------------------------------------------------------------------
# dense verification helpers (gated to small chains)

DENSE_GATE_SITES = 14


def dense_chain_operator(chain: SiteChain, factors: dict[int, np.ndarray]) -> sp.csr_matrix:
    out = sp.identity(1, format="csr", dtype=complex)
    for i in range(chain.n_sites):
        m = factors.get(i, np.eye(2, dtype=complex))
        out = sp.kron(out, sp.csr_matrix(m), format="csr")
    return out


@dataclass
class ConjugationReport:
    records: list[tuple[str, str, float, bool]]

    @property
    def passed(self) -> bool:
        return all(ok for *_, ok in self.records)

    @property
    def first_violation(self):
        for label, rule, dev, ok in self.records:
            if not ok:
                return label, rule, dev
        return None


def verify_conjugation_rules(chain: SiteChain, tol: float = 1e-12) -> ConjugationReport:
    """Check the conjugation identities on the densified left vacuum."""
    if chain.n_sites > DENSE_GATE_SITES:
        raise ValueError(f"dense check gated to <= {DENSE_GATE_SITES} sites")
    vac = build_left_vacuum(chain).densify()
    records = []
    for s_phys, s_tilde, desc in chain.pairs():
        op = dense_chain_operator(chain, elementary_factors(chain, s_phys, False))
        opd = dense_chain_operator(chain, elementary_factors(chain, s_phys, True))
        til = dense_chain_operator(chain, elementary_factors(chain, s_tilde, False))
        tild = dense_chain_operator(chain, elementary_factors(chain, s_tilde, True))
        sign = -1.0 if desc.kind == "fermion" else 1.0
        dev1 = np.max(np.abs(opd @ vac - sign * (til @ vac)))
        rule1 = "f^dag|1>> = -f~|1>>" if desc.kind == "fermion" else "a^dag|1>> = a~|1>>"
        records.append((desc.label, rule1, float(dev1), dev1 <= tol))
        dev2 = np.max(np.abs(op @ vac - tild @ vac))
        rule2 = "f|1>> = f~^dag|1>>" if desc.kind == "fermion" else "a|1>> = a~^dag|1>>"
        records.append((desc.label, rule2, float(dev2), dev2 <= tol))
    return ConjugationReport(records)


def physical_basis_maps(chain: SiteChain):
    """Sparse elementary operators used to build the vectorization isomorphism."""
    f_create = [dense_chain_operator(chain, elementary_factors(chain, chain.site(m), True))
                for m in chain.fermion_modes]
    ph_create = [dense_chain_operator(chain, {s: HC_RAISE})
                 for s in chain.phonon_sites("physical")]
    proj = {}
    for i, s in enumerate(chain.sites):
        if s.copy == "physical":
            proj[i] = np.diag([1.0, 0.0]).astype(complex)
    p_vac = dense_chain_operator(chain, proj)
    return f_create, ph_create, p_vac


def vectorization_map(chain: SiteChain):
    """Matrix V with V @ vec(rho) = |rho>> (column-stacked vec), plus the
    even-fermion-parity column mask.

    Physical basis: fermion modes in chain order (first mode most significant)
    tensor the phonon Fock label; D = 2^{n_f} * M.
    """
    if chain.n_sites > DENSE_GATE_SITES:
        raise ValueError(f"vectorization map gated to <= {DENSE_GATE_SITES} sites")
    f_create, ph_create, p_vac = physical_basis_maps(chain)
    nf = len(f_create)
    code = BinaryCode(len(ph_create)) if ph_create else None
    m_cut = chain.phonon_cutoff
    dim_phys = 2**nf * m_cut
    dim_chain = 2**chain.n_sites
    vac = build_left_vacuum(chain).densify()

    def creator(h):
        focc, m = divmod(h, m_cut)
        vecs = []
        for j in range(nf):
            if (focc >> (nf - 1 - j)) & 1:
                vecs.append(f_create[j])
        if code is not None:
            bits = code.chain_bits(m)
            for site_pos, bit in enumerate(bits):
                if bit:
                    vecs.append(ph_create[site_pos])
        return vecs

    parity = np.zeros(dim_phys, dtype=int)
    cache = {}
    for h in range(dim_phys):
        # A(h)^dag reverses the creation product, so its rightmost factor is
        # the dagger of the first creator; apply in forward order
        v = vac
        for o in creator(h):
            v = o.conj().T @ v
        cache[h] = p_vac @ v
        parity[h] = bin(h // m_cut).count("1") & 1
    v_mat = sp.lil_matrix((dim_chain, dim_phys**2), dtype=complex)
    for hp in range(dim_phys):
        base = cache[hp]
        if not np.any(base):
            continue
        for h in range(dim_phys):
            v = base
            for o in reversed(creator(h)):
                v = o @ v
            col = h + dim_phys * hp
            nz = np.nonzero(v)[0]
            for idx in nz:
                v_mat[idx, col] = v[idx]
    even_mask = np.zeros(dim_phys**2, dtype=bool)
    for hp in range(dim_phys):
        for h in range(dim_phys):
            even_mask[h + dim_phys * hp] = parity[h] == parity[hp]
    return v_mat.tocsr(), even_mask


def embed_density_matrix(rho: np.ndarray, chain: SiteChain,
                         cutoff: float = 1e-14, chi_max: int = 10**9) -> TensorTrain:
    """Vectorize a dense density matrix into a train on the chain."""
    v_mat, _ = vectorization_map(chain)
    vec = np.asarray(rho, dtype=complex).flatten(order="F")
    return TensorTrain.from_dense(v_mat @ vec, chain.n_sites, cutoff, chi_max)
