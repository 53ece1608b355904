"""Exact binary pseudosite representation of a truncated bosonic mode.

An M = 2^N level Fock space is carried by N two-level hard-core-boson sites.
Operator trains are stored in chain order, most significant pseudosite first,
matching the placement of the high-excitation bits nearest the dot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nemstn.model import truncated_lowering
from nemstn.tn_core import OperatorTrain, TensorTrain, mpo_multiply

HC_LOWER = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)   # a
HC_RAISE = HC_LOWER.T.conj()                                   # a^dag
HC_NUMBER = np.diag([0.0, 1.0]).astype(complex)
HC_ID = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class BinaryCode:
    """Bijection between Fock labels {0..2^N-1} and N-bit occupation strings."""

    n_sites: int

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("need at least one pseudosite")

    @property
    def cutoff(self) -> int:
        return 2**self.n_sites

    def encode(self, m: int) -> tuple[int, ...]:
        """Little-endian bits (r_1 .. r_N) with m = sum_j 2^(j-1) r_j."""
        if not 0 <= m < self.cutoff:
            raise ValueError(f"Fock index {m} out of range for M={self.cutoff}")
        return tuple((m >> j) & 1 for j in range(self.n_sites))

    def decode(self, bits) -> int:
        bits = tuple(bits)
        if len(bits) != self.n_sites or any(b not in (0, 1) for b in bits):
            raise ValueError("invalid bit string")
        return sum(b << j for j, b in enumerate(bits))

    def chain_bits(self, m: int) -> tuple[int, ...]:
        """Bits in chain order (most significant pseudosite first)."""
        return self.encode(m)[::-1]


def encode_index(m: int, n_sites: int) -> tuple[int, ...]:
    return BinaryCode(n_sites).encode(m)


def decode_index(bits) -> int:
    return BinaryCode(len(tuple(bits))).decode(bits)


@dataclass
class PseudositeOperator:
    """Operator train over the N pseudosites of one mode copy."""

    train: OperatorTrain
    tag: str

    @property
    def n_sites(self) -> int:
        return self.train.n_sites

    @property
    def bond_dims(self) -> list[int]:
        return self.train.bond_dims

    def to_dense(self) -> np.ndarray:
        return self.train.densify()

    def compress(self, tol: float = 1e-14) -> float:
        """Truncate at relative Frobenius error ``tol`` (squared cutoff inside)."""
        return self.train.compress(tol * tol)


def _reverse_mpo(cores: list[np.ndarray]) -> list[np.ndarray]:
    return [c.transpose(3, 1, 2, 0) for c in reversed(cores)]


def build_increment(n_sites: int) -> PseudositeOperator:
    """Bare shift B^dag: |m> -> |m+1>, annihilating the top state.

    Realized as the binary carry chain sum_l a^dag_l prod_{j<l} a_j, a
    bond-dimension-2 train.
    """
    if n_sites < 1:
        raise ValueError("need at least one pseudosite")
    if n_sites == 1:
        return PseudositeOperator(OperatorTrain([HC_RAISE.reshape(1, 2, 2, 1)]), "increment")
    first = np.zeros((1, 2, 2, 2), dtype=complex)
    first[0, :, :, 0] = HC_LOWER
    first[0, :, :, 1] = HC_RAISE
    mid = np.zeros((2, 2, 2, 2), dtype=complex)
    mid[0, :, :, 0] = HC_LOWER
    mid[0, :, :, 1] = HC_RAISE
    mid[1, :, :, 1] = HC_ID
    last = np.zeros((2, 2, 2, 1), dtype=complex)
    last[0, :, :, 0] = HC_RAISE
    last[1, :, :, 0] = HC_ID
    cores = [first] + [mid] * (n_sites - 2) + [last]
    return PseudositeOperator(OperatorTrain(_reverse_mpo(cores)), "increment")


def build_number(n_sites: int) -> PseudositeOperator:
    """Phonon number operator sum_j 2^(j-1) n_j, diagonal, bond dimension 2."""
    if n_sites == 1:
        return PseudositeOperator(OperatorTrain([HC_NUMBER.reshape(1, 2, 2, 1)]), "number")
    first = np.zeros((1, 2, 2, 2), dtype=complex)
    first[0, :, :, 0] = HC_ID
    first[0, :, :, 1] = HC_NUMBER
    cores = [first]
    for j in range(2, n_sites):
        mid = np.zeros((2, 2, 2, 2), dtype=complex)
        mid[0, :, :, 0] = HC_ID
        mid[0, :, :, 1] = 2.0 ** (j - 1) * HC_NUMBER
        mid[1, :, :, 1] = HC_ID
        cores.append(mid)
    last = np.zeros((2, 2, 2, 1), dtype=complex)
    last[0, :, :, 0] = 2.0 ** (n_sites - 1) * HC_NUMBER
    last[1, :, :, 0] = HC_ID
    cores.append(last)
    return PseudositeOperator(OperatorTrain(_reverse_mpo(cores)), "number")


def diagonal_train(values: np.ndarray, cutoff: float = 1e-30) -> OperatorTrain:
    """Diagonal operator train from the 2^N diagonal values (Fock order).

    The projector-sum form has one term per Fock state; decomposing the
    diagonal as a train over the binary digits is the equivalent
    polynomial-cost construction.
    """
    m = len(values)
    n = m.bit_length() - 1
    if 2**n != m:
        raise ValueError("diagonal length must be a power of two")
    vec = TensorTrain.from_dense(np.asarray(values, dtype=complex), n,
                                 cutoff=cutoff)
    cores = []
    for c in vec.cores:
        l, _, r = c.shape
        op = np.zeros((l, 2, 2, r), dtype=complex)
        op[:, 0, 0, :] = c[:, 0, :]
        op[:, 1, 1, :] = c[:, 1, :]
        cores.append(op)
    return OperatorTrain(cores)


def build_sqrt_shift(n_sites: int) -> PseudositeOperator:
    """Diagonal sqrt(n+1) = diag(sqrt(1), ..., sqrt(M))."""
    m = 2**n_sites
    vals = np.sqrt(np.arange(1, m + 1, dtype=float))
    return PseudositeOperator(diagonal_train(vals), "sqrt_shift")


def build_raising(n_sites: int) -> PseudositeOperator:
    """Truncated creation operator b^dag = B^dag sqrt(n+1)."""
    inc = build_increment(n_sites)
    sq = build_sqrt_shift(n_sites)
    train = mpo_multiply(inc.train, sq.train, cutoff=1e-30)
    return PseudositeOperator(train, "raise")


def build_lowering(n_sites: int) -> PseudositeOperator:
    return PseudositeOperator(build_raising(n_sites).train.adjoint(), "lower")


def phonon_operator_train(mat: np.ndarray, cutoff: float = 1e-30) -> OperatorTrain:
    """Exact train of an arbitrary M x M phonon operator (M a power of two)."""
    m = mat.shape[0]
    n = m.bit_length() - 1
    if 2**n != m or mat.shape != (m, m):
        raise ValueError("operator must be M x M with M a power of two")
    return OperatorTrain.from_dense(np.asarray(mat, dtype=complex), n,
                                    cutoff=cutoff)


def dense_raising(m_cutoff: int) -> np.ndarray:
    """Textbook truncated b^dag for comparison."""
    return truncated_lowering(m_cutoff).conj().T
