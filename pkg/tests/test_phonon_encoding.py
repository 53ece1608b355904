import numpy as np
import pytest
from hypothesis import given, strategies as st

from nemstn.model import truncated_lowering
from nemstn.phonon_encoding import (
    BinaryCode,
    build_increment,
    build_lowering,
    build_number,
    build_raising,
    build_sqrt_shift,
    decode_index,
    diagonal_train,
    encode_index,
    phonon_operator_train,
)
from nemstn.tn_core import mpo_multiply


def test_encode_examples():
    assert encode_index(5, 3) == (1, 0, 1)
    assert encode_index(0, 4) == (0, 0, 0, 0)
    assert encode_index(7, 3) == (1, 1, 1)
    with pytest.raises(ValueError):
        encode_index(8, 3)


@given(st.integers(min_value=1, max_value=12), st.data())
def test_encode_decode_roundtrip(n, data):
    code = BinaryCode(n)
    m = data.draw(st.integers(min_value=0, max_value=code.cutoff - 1))
    assert code.decode(code.encode(m)) == m


def test_increment_single_bit():
    b = build_increment(1).to_dense()
    assert np.allclose(b, np.array([[0, 0], [1, 0]]), atol=1e-15)


def test_increment_carry():
    op = build_increment(2).to_dense()
    # |01> is m=1 (chain order: site0 msb), maps to |10> = m=2
    assert abs(op[2, 1] - 1.0) < 1e-14


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_increment_is_shift(n):
    m = 2**n
    shift = np.zeros((m, m))
    for k in range(m - 1):
        shift[k + 1, k] = 1.0
    assert np.allclose(build_increment(n).to_dense(), shift, atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_sqrt_shift_diagonal(n):
    m = 2**n
    ref = np.diag(np.sqrt(np.arange(1, m + 1)))
    assert np.max(np.abs(build_sqrt_shift(n).to_dense() - ref)) < 1e-15 * m


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_raising_matches_textbook(n):
    m = 2**n
    ref = truncated_lowering(m).conj().T
    got = build_raising(n).to_dense()
    assert np.max(np.abs(got - ref)) < 1e-12


def test_raising_annihilates_top_state():
    n = 3
    got = build_raising(n).to_dense()
    assert np.allclose(got[:, 2**n - 1], 0.0, atol=1e-13)


def test_raising_action_example():
    got = build_raising(2).to_dense()
    vec = np.zeros(4)
    vec[1] = 1.0
    out = got @ vec
    assert abs(out[2] - np.sqrt(2)) < 1e-13


@pytest.mark.parametrize("n", [2, 3])
def test_number_diagonal(n):
    m = 2**n
    assert np.allclose(build_number(n).to_dense(), np.diag(np.arange(m)), atol=1e-14)


@pytest.mark.parametrize("n", [2, 5])
def test_number_equals_bdag_b(n):
    bd = build_raising(n)
    b = build_lowering(n)
    prod = mpo_multiply(bd.train, b.train, cutoff=1e-15).densify()
    assert np.max(np.abs(prod - build_number(n).to_dense())) < 1e-12


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_truncated_commutator(n):
    m = 2**n
    bd = build_raising(n).to_dense()
    b = build_lowering(n).to_dense()
    comm = b @ bd - bd @ b
    ref = np.eye(m)
    ref[m - 1, m - 1] = 1.0 - m
    assert np.max(np.abs(comm - ref)) < 1e-12


def test_increment_bond_dimension_linear():
    for n in range(1, 8):
        dims = build_increment(n).bond_dims
        assert max(dims, default=1) <= n + 1


def test_compression_keeps_entries():
    op = build_raising(6)
    before = op.to_dense()
    op.compress(cutoff=1e-14)
    assert np.max(np.abs(op.to_dense() - before)) < 1e-12


def test_nesting_property():
    # restriction of b^dag(N) to the lower half equals b^dag(N-1): the carry
    # out of |half-1> leaves the block, matching the smaller code's truncation
    for n in [2, 3, 4]:
        half = 2 ** (n - 1)
        big = build_raising(n).to_dense()[:half, :half]
        small = build_raising(n - 1).to_dense()
        assert np.max(np.abs(big - small)) < 1e-12


def test_diagonal_train_generic():
    vals = np.linspace(0.3, 2.0, 8) ** 2
    assert np.allclose(diagonal_train(vals).densify(), np.diag(vals), atol=1e-13)


def test_phonon_operator_train_generic():
    rng = np.random.default_rng(5)
    mat = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    assert np.allclose(phonon_operator_train(mat).densify(), mat, atol=1e-12)
