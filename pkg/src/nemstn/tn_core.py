"""Tensor-train engine for the doubled-space steady-state search.

States are trains of rank-3 tensors ``(left bond, physical=2, right bond)``,
operators are trains of rank-4 tensors ``(left, out, in, right)``.  All
truncations use the relative squared-singular-value convention: the discarded
tail satisfies ``sum(s_disc^2) <= cutoff * sum(s^2)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SVD_CUTOFF = 1e-10
DEFAULT_CHI_MAX = 250
DENSIFY_SITE_LIMIT = 14

_CKPT_MAGIC = b"TTCK"
_CKPT_VERSION = 1


def _truncation_rank(s: np.ndarray, cutoff: float, chi_max: int) -> tuple[int, float]:
    """Rank to keep under the squared-relative convention; returns (rank, discarded weight)."""
    total = float(np.sum(s**2))
    if total == 0.0:
        return 1, 0.0
    tail = np.cumsum((s**2)[::-1])[::-1]  # tail[k] = sum of s[k:]**2
    keep = len(s)
    for k in range(len(s), 0, -1):
        if tail[k - 1] <= cutoff * total:
            keep = k - 1
        else:
            break
    keep = max(1, min(keep if keep > 0 else 1, chi_max, len(s)))
    discarded = float(tail[keep]) / total if keep < len(s) else 0.0
    return keep, discarded


def _svd_split(theta: np.ndarray, cutoff: float, chi_max: int):
    """SVD of a matrix with truncation; returns (U, s, Vh, discarded)."""
    try:
        u, s, vh = np.linalg.svd(theta, full_matrices=False)
    except np.linalg.LinAlgError:
        u, s, vh = np.linalg.svd(theta + 1e-300, full_matrices=False)
    keep, disc = _truncation_rank(s, cutoff, chi_max)
    return u[:, :keep], s[:keep], vh[:keep, :], disc


class TensorTrain:
    """Finite train of rank-3 tensors with an optional orthogonality center."""

    def __init__(self, cores: list[np.ndarray], center: int | None = None):
        self.cores = [np.asarray(c, dtype=complex) for c in cores]
        self.center = center
        self.meta: dict = {}

    @property
    def n_sites(self) -> int:
        return len(self.cores)

    @property
    def bond_dims(self) -> list[int]:
        return [c.shape[2] for c in self.cores[:-1]]

    def copy(self) -> "TensorTrain":
        out = TensorTrain([c.copy() for c in self.cores], self.center)
        out.meta = dict(self.meta)
        return out

    @classmethod
    def from_dense(cls, vec: np.ndarray, n_sites: int, cutoff: float = 0.0,
                   chi_max: int = 10**9) -> "TensorTrain":
        """Exact TT-SVD of a dense vector over ``n_sites`` two-level sites."""
        if vec.size != 2**n_sites:
            raise ValueError("vector size does not match site count")
        t = np.asarray(vec, dtype=complex).reshape((1,) + (2,) * n_sites)
        cores = []
        left = 1
        for i in range(n_sites - 1):
            mat = t.reshape(left * 2, -1)
            u, s, vh, _ = _svd_split(mat, cutoff, chi_max)
            r = u.shape[1]
            cores.append(u.reshape(left, 2, r))
            t = (s[:, None] * vh).reshape((r,) + (2,) * (n_sites - 1 - i))
            left = r
        cores.append(t.reshape(left, 2, 1))
        return cls(cores, center=n_sites - 1)

    @classmethod
    def product_state(cls, blocks: list[np.ndarray]) -> "TensorTrain":
        """Train from a list of cores joined at bond dimension 1 boundaries."""
        return cls([np.asarray(b, dtype=complex) for b in blocks])

    def densify(self) -> np.ndarray:
        if self.n_sites > DENSIFY_SITE_LIMIT:
            raise ValueError(f"densify gated to <= {DENSIFY_SITE_LIMIT} sites")
        out = self.cores[0]
        for c in self.cores[1:]:
            out = np.tensordot(out, c, axes=([out.ndim - 1], [0]))
        return out.reshape(-1)

    def norm(self) -> float:
        return float(np.sqrt(abs(inner(self, self))))

    def scale(self, factor: complex) -> "TensorTrain":
        out = self.copy()
        i = self.center if self.center is not None else 0
        out.cores[i] = out.cores[i] * factor
        return out

    def canonicalize(self, center: int = 0) -> "TensorTrain":
        """QR-canonicalize in place around ``center``; the represented vector is unchanged."""
        n = self.n_sites
        if not 0 <= center < n:
            raise ValueError("center out of range")
        for i in range(center):
            l, d, r = self.cores[i].shape
            q, rm = np.linalg.qr(self.cores[i].reshape(l * d, r))
            self.cores[i] = q.reshape(l, d, q.shape[1])
            self.cores[i + 1] = np.tensordot(rm, self.cores[i + 1], axes=([1], [0]))
        for i in range(n - 1, center, -1):
            l, d, r = self.cores[i].shape
            q, rm = np.linalg.qr(self.cores[i].reshape(l, d * r).T)
            k = q.shape[1]
            self.cores[i] = q.T.reshape(k, d, r)
            self.cores[i - 1] = np.tensordot(self.cores[i - 1], rm.T, axes=([2], [0]))
        self.center = center
        return self

    def compress(self, cutoff: float = DEFAULT_SVD_CUTOFF,
                 chi_max: int = DEFAULT_CHI_MAX) -> float:
        """Truncate all bonds; returns total discarded relative weight."""
        self.canonicalize(self.n_sites - 1)
        total_disc = 0.0
        for i in range(self.n_sites - 1, 0, -1):
            l, d, r = self.cores[i].shape
            u, s, vh, disc = _svd_split(self.cores[i].reshape(l, d * r), cutoff, chi_max)
            total_disc += disc
            k = len(s)
            self.cores[i] = vh.reshape(k, d, r)
            self.cores[i - 1] = np.tensordot(self.cores[i - 1], u * s, axes=([2], [0]))
        self.center = 0
        return total_disc

    def is_canonical(self, tol: float = 1e-12) -> bool:
        if self.center is None:
            return False
        for i, c in enumerate(self.cores):
            l, d, r = c.shape
            if i < self.center:
                m = c.reshape(l * d, r)
                if np.max(np.abs(m.conj().T @ m - np.eye(r))) > tol:
                    return False
            elif i > self.center:
                m = c.reshape(l, d * r)
                if np.max(np.abs(m @ m.conj().T - np.eye(l))) > tol:
                    return False
        return True


class OperatorTrain:
    """Finite train of rank-4 tensors ``(left, out, in, right)``."""

    def __init__(self, cores: list[np.ndarray]):
        self.cores = [np.asarray(c, dtype=complex) for c in cores]
        self.meta: dict = {}

    @property
    def n_sites(self) -> int:
        return len(self.cores)

    @property
    def bond_dims(self) -> list[int]:
        return [c.shape[3] for c in self.cores[:-1]]

    def copy(self) -> "OperatorTrain":
        out = OperatorTrain([c.copy() for c in self.cores])
        out.meta = dict(self.meta)
        return out

    @classmethod
    def identity(cls, n_sites: int) -> "OperatorTrain":
        eye = np.eye(2, dtype=complex).reshape(1, 2, 2, 1)
        return cls([eye.copy() for _ in range(n_sites)])

    @classmethod
    def from_local(cls, n_sites: int, factors: dict[int, np.ndarray],
                   coeff: complex = 1.0) -> "OperatorTrain":
        """Bond-1 train from per-site 2x2 factors (identity elsewhere)."""
        cores = []
        for i in range(n_sites):
            m = factors.get(i, np.eye(2))
            cores.append(np.asarray(m, dtype=complex).reshape(1, 2, 2, 1))
        if cores:
            cores[0] = cores[0] * coeff
        return cls(cores)

    @classmethod
    def from_dense(cls, mat: np.ndarray, n_sites: int, cutoff: float = 0.0,
                   chi_max: int = 10**9) -> "OperatorTrain":
        """Exact TT-SVD of a dense operator over ``n_sites`` two-level sites."""
        dim = 2**n_sites
        if mat.shape != (dim, dim):
            raise ValueError("matrix shape does not match site count")
        t = np.asarray(mat, dtype=complex).reshape((2,) * n_sites + (2,) * n_sites)
        # interleave (out_i, in_i) per site
        perm = []
        for i in range(n_sites):
            perm.extend([i, n_sites + i])
        t = t.transpose(perm).reshape((1,) + (4,) * n_sites)
        cores = []
        left = 1
        for i in range(n_sites - 1):
            u, s, vh, _ = _svd_split(t.reshape(left * 4, -1), cutoff, chi_max)
            r = u.shape[1]
            cores.append(u.reshape(left, 2, 2, r))
            t = (s[:, None] * vh).reshape((r,) + (4,) * (n_sites - 1 - i))
            left = r
        cores.append(t.reshape(left, 2, 2, 1))
        return cls(cores)

    def densify(self) -> np.ndarray:
        if self.n_sites > DENSIFY_SITE_LIMIT:
            raise ValueError(f"densify gated to <= {DENSIFY_SITE_LIMIT} sites")
        n = self.n_sites
        out = self.cores[0]
        for c in self.cores[1:]:
            out = np.tensordot(out, c, axes=([out.ndim - 1], [0]))
        out = out.reshape((2, 2) * n)
        perm = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
        return out.transpose(perm).reshape(2**n, 2**n)

    def adjoint(self) -> "OperatorTrain":
        return OperatorTrain([c.conj().transpose(0, 2, 1, 3) for c in self.cores])

    def scale(self, factor: complex) -> "OperatorTrain":
        out = self.copy()
        out.cores[0] = out.cores[0] * factor
        return out

    def _as_fused_tt(self) -> TensorTrain:
        return TensorTrain([c.reshape(c.shape[0], 4, c.shape[3]) for c in self.cores])

    def compress(self, cutoff: float = 1e-14, chi_max: int = 10**9) -> float:
        tt = self._as_fused_tt()
        disc = tt.compress(cutoff, chi_max)
        self.cores = [c.reshape(c.shape[0], 2, 2, c.shape[2]) for c in tt.cores]
        return disc

    def frobenius_scale(self) -> float:
        """sqrt(Tr(A^dag A) / 2^n): operator scale used for relative residual checks."""
        env = np.ones((1, 1))
        for c in self.cores:
            t = np.tensordot(env, c, axes=([0], [0]))
            env = np.tensordot(t, c.conj(), axes=([0, 1, 2], [0, 1, 2]))
        val = abs(env.reshape(())) / 2**self.n_sites
        return float(np.sqrt(val))


def tt_add(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Direct-sum addition of two trains on the same chain."""
    if a.n_sites != b.n_sites:
        raise ValueError("site mismatch")
    n = a.n_sites
    cores = []
    for i in range(n):
        ca, cb = a.cores[i], b.cores[i]
        la, d, ra = ca.shape
        lb, _, rb = cb.shape
        if n == 1:
            cores.append(ca + cb)
            continue
        if i == 0:
            c = np.zeros((1, d, ra + rb), dtype=complex)
            c[:, :, :ra] = ca
            c[:, :, ra:] = cb
        elif i == n - 1:
            c = np.zeros((la + lb, d, 1), dtype=complex)
            c[:la] = ca
            c[la:] = cb
        else:
            c = np.zeros((la + lb, d, ra + rb), dtype=complex)
            c[:la, :, :ra] = ca
            c[la:, :, ra:] = cb
        cores.append(c)
    return TensorTrain(cores)


def mpo_sum(terms: list[OperatorTrain], cutoff: float = 1e-14,
            chi_max: int = 10**9, batch: int = 8) -> OperatorTrain:
    """Sum of operator trains with batched pairwise addition and compression."""
    if not terms:
        raise ValueError("empty sum")
    acc = terms[0].copy()
    pending = 0
    for t in terms[1:]:
        fused = tt_add(acc._as_fused_tt(), t._as_fused_tt())
        acc = OperatorTrain([c.reshape(c.shape[0], 2, 2, c.shape[2]) for c in fused.cores])
        pending += 1
        if pending >= batch:
            acc.compress(cutoff, chi_max)
            pending = 0
    acc.compress(cutoff, chi_max)
    return acc


def mpo_multiply(a: OperatorTrain, b: OperatorTrain, cutoff: float = 1e-14,
                 chi_max: int = 10**9) -> OperatorTrain:
    """Product a @ b as one train, zip-up compressed at ``cutoff``."""
    if a.n_sites != b.n_sites:
        raise ValueError("site mismatch")
    n = a.n_sites
    carry = np.ones((1, 1, 1), dtype=complex)  # (new_left, a_bond, b_bond)
    cores = []
    for i in range(n):
        wa = a.cores[i]
        wb = b.cores[i]
        t = np.tensordot(carry, wa, axes=([1], [0]))        # (k, bb, s, m, wa2)
        t = np.tensordot(t, wb, axes=([1, 3], [0, 1]))      # contract a-in with b-out
        t = t.transpose(0, 1, 3, 2, 4)                      # (k, s, q, wa2, wb2)
        k, _, _, ra, rb = t.shape
        if i == n - 1:
            cores.append(t.reshape(k, 2, 2, ra * rb))
            break
        mat = t.reshape(k * 4, ra * rb)
        u, s, vh, _ = _svd_split(mat, cutoff, chi_max)
        r = u.shape[1]
        cores.append(u.reshape(k, 2, 2, r))
        carry = (s[:, None] * vh).reshape(r, ra, rb)
    out = OperatorTrain(cores)
    out.compress(cutoff, chi_max)
    return out


def inner(bra: TensorTrain, ket: TensorTrain) -> complex:
    """<bra|ket> with complex conjugation on the bra."""
    if bra.n_sites != ket.n_sites:
        raise ValueError("site mismatch")
    env = np.ones((1, 1), dtype=complex)
    for cb, ck in zip(bra.cores, ket.cores):
        t = np.tensordot(env, ck, axes=([1], [0]))
        env = np.tensordot(cb.conj(), t, axes=([0, 1], [0, 1]))
    return complex(env.reshape(()))


def sandwich(bra: TensorTrain, op: OperatorTrain, ket: TensorTrain) -> complex:
    """<bra|op|ket> by transfer contraction."""
    env = np.ones((1, 1, 1), dtype=complex)  # (bra, op, ket)
    for cb, w, ck in zip(bra.cores, op.cores, ket.cores):
        t = np.tensordot(env, ck, axes=([2], [0]))          # (b, w, q, k2)
        t = np.tensordot(t, w, axes=([1, 2], [0, 2]))       # (b, k2, s, w2)
        env = np.tensordot(cb.conj(), t, axes=([0, 1], [0, 2]))  # (b2, k2, w2)
        env = env.transpose(0, 2, 1)
    return complex(env.reshape(()))


def apply_operator(op: OperatorTrain, tt: TensorTrain,
                   cutoff: float = DEFAULT_SVD_CUTOFF,
                   chi_max: int = DEFAULT_CHI_MAX) -> TensorTrain:
    """op|tt> with zip-up compression; result is canonical with center 0.

    A ``truncation_warning`` flag is set in the result metadata when chi_max
    was saturated before the cutoff criterion.
    """
    if op.n_sites != tt.n_sites:
        raise ValueError("site mismatch")
    n = tt.n_sites
    carry = np.ones((1, 1, 1), dtype=complex)  # (new_left, op_bond, tt_bond)
    cores = []
    truncated = False
    for i in range(n):
        w = op.cores[i]
        a = tt.cores[i]
        t = np.tensordot(carry, w, axes=([1], [0]))       # (k, c, s, q, w2)
        t = np.tensordot(t, a, axes=([1, 3], [0, 1]))     # (k, s, w2, c2)
        k, _, rw, rc = t.shape
        if i == n - 1:
            cores.append(t.reshape(k, 2, rw * rc))
            break
        mat = t.transpose(0, 1, 2, 3).reshape(k * 2, rw * rc)
        u, s, vh, _ = _svd_split(mat, cutoff, chi_max)
        r = u.shape[1]
        if r == chi_max and len(s) == chi_max:
            truncated = True
        cores.append(u.reshape(k, 2, r))
        carry = (s[:, None] * vh).reshape(r, rw, rc)
    out = TensorTrain(cores, center=n - 1)
    out.compress(cutoff, chi_max)
    if truncated:
        out.meta["truncation_warning"] = True
    return out


def random_tt(n_sites: int, chi: int, seed: int = 0) -> TensorTrain:
    rng = np.random.default_rng(seed)
    dims = [1] + [min(chi, 2**min(i + 1, n_sites - i - 1)) for i in range(n_sites - 1)] + [1]
    cores = [rng.standard_normal((dims[i], 2, dims[i + 1]))
             + 1j * rng.standard_normal((dims[i], 2, dims[i + 1]))
             for i in range(n_sites)]
    tt = TensorTrain(cores)
    tt.canonicalize(0)
    nrm = tt.norm()
    if nrm > 0:
        tt.cores[0] /= nrm
    return tt


def random_mpo(n_sites: int, chi: int, seed: int = 0) -> OperatorTrain:
    rng = np.random.default_rng(seed)
    dims = [1] + [chi] * (n_sites - 1) + [1]
    cores = [rng.standard_normal((dims[i], 2, 2, dims[i + 1]))
             + 1j * rng.standard_normal((dims[i], 2, 2, dims[i + 1]))
             for i in range(n_sites)]
    return OperatorTrain(cores)


# ---------------------------------------------------------------------------
# quadratic-form minimizer (two-site sweeps on A = L^dag L)

@dataclass
class SweepOptions:
    """Controls for the two-site sweeping eigensolver."""

    chi_max: int = DEFAULT_CHI_MAX
    svd_cutoff: float = DEFAULT_SVD_CUTOFF
    krylov_min: int = 8
    krylov_max: int = 30
    krylov_tol: float = 1e-13
    max_sweeps: int = 40
    energy_rtol: float = 1e-10
    noise_initial: float = 1e-4
    noise_decay: float = 0.25
    a_mode: str = "auto"            # auto | lazy | compressed
    a_tol: float = 1e-13
    a_chi_max: int = 2000
    lazy_bond_limit: int = 26       # lazy pair used when max L bond <= this
    env_memory_budget: float = 2.0e9
    hermiticity_tol: float = 1e-10

    def __post_init__(self):
        if self.chi_max < 1 or self.krylov_min < 2 or self.krylov_max < self.krylov_min:
            raise ValueError("invalid sweep options")
        if self.svd_cutoff <= 0 or self.max_sweeps < 1:
            raise ValueError("invalid sweep options")
        if self.noise_initial < 0 or not 0 <= self.noise_decay < 1:
            raise ValueError("noise schedule must be non-increasing and end at zero")


@dataclass
class SweepRecord:
    energy: float
    max_discarded: float
    total_discarded: float
    chi_max_reached: int
    noise: float
    herm_dev: float


def _lanczos_ground(matvec, v0: np.ndarray, k_max: int, tol: float):
    """Smallest eigenpair of a Hermitian operator by Lanczos with full reorthogonalization.

    Returns (theta, vector, n_iter, relative hermiticity deviation of the
    projected tridiagonal).
    """
    nrm0 = np.linalg.norm(v0)
    if nrm0 == 0:
        raise ValueError("zero start vector")
    v = v0 / nrm0
    basis = [v]
    alphas, betas = [], []
    imag_dev = 0.0
    scale = 0.0
    w = matvec(v)
    for k in range(k_max):
        a = np.vdot(basis[k], w)
        imag_dev = max(imag_dev, abs(a.imag))
        scale = max(scale, abs(a))
        alphas.append(a.real)
        w = w - a.real * basis[k]
        if k > 0:
            w = w - betas[-1] * basis[k - 1]
        for u in basis:
            w = w - np.vdot(u, w) * u
        b = np.linalg.norm(w)
        tmat = np.diag(alphas)
        if betas:
            tmat = tmat + np.diag(betas, 1) + np.diag(betas, -1)
        evals, evecs = np.linalg.eigh(tmat)
        theta = float(evals[0])
        y = evecs[:, 0]
        resid_bound = b * abs(y[-1])
        if resid_bound <= tol * max(scale, 1e-300) or b <= 1e-300 or k == k_max - 1:
            vec = basis[0] * y[0]
            for i in range(1, len(basis)):
                vec = vec + y[i] * basis[i]
            herm_rel = imag_dev / max(scale, 1e-300)
            return theta, vec / np.linalg.norm(vec), k + 1, herm_rel
        betas.append(b)
        basis.append(w / b)
        w = matvec(basis[-1])
    raise RuntimeError("unreachable")


class _LazyEnv:
    """Four-layer environments for <rho| L^dag L |rho> without forming the product."""

    def __init__(self, ld: OperatorTrain, l: OperatorTrain, state: TensorTrain):
        self.ld = ld
        self.l = l
        self.state = state
        n = state.n_sites
        self.left = [None] * (n + 1)
        self.right = [None] * (n + 1)
        self.left[0] = np.ones((1, 1, 1, 1), dtype=complex)
        self.right[n] = np.ones((1, 1, 1, 1), dtype=complex)

    def _absorb(self, env, i, side):
        d = self.ld.cores[i]
        w = self.l.cores[i]
        k = self.state.cores[i]
        if side == "left":
            t = np.tensordot(env, k, axes=([3], [0]))            # (b, wd, wl, q, k2)
            t = np.tensordot(t, w, axes=([2, 3], [0, 2]))        # (b, wd, k2, m, wl2)
            t = np.tensordot(t, d, axes=([1, 3], [0, 2]))        # (b, k2, wl2, s, wd2)
            env2 = np.tensordot(self.state.cores[i].conj(), t, axes=([0, 1], [0, 3]))
            # env2: (b2, k2, wl2, wd2) -> (b2, wd2, wl2, k2)
            return env2.transpose(0, 3, 2, 1)
        t = np.tensordot(k, env, axes=([2], [3]))                # (k1, q, b, wd, wl)
        t = np.tensordot(w, t, axes=([3, 2], [4, 1]))            # (wl1, m, k1, b, wd)
        t = np.tensordot(d, t, axes=([3, 2], [4, 1]))            # (wd1, s, wl1, k1, b)
        env2 = np.tensordot(t, self.state.cores[i].conj(), axes=([4, 1], [2, 1]))
        # env2: (wd1, wl1, k1, b1) -> (b1, wd1, wl1, k1)
        return env2.transpose(3, 0, 1, 2)

    def build_right(self, first_bond: int):
        n = self.state.n_sites
        for i in range(n - 1, first_bond, -1):
            self.right[i] = self._absorb(self.right[i + 1], i, "right")

    def update_left(self, i):
        self.left[i + 1] = self._absorb(self.left[i], i, "left")

    def update_right(self, i):
        self.right[i] = self._absorb(self.right[i + 1], i, "right")

    def matvec(self, i, v):
        """Apply the projected operator at sites (i, i+1) to v (l, 2, 2, r)."""
        el = self.left[i]
        er = self.right[i + 2]
        d1, d2 = self.ld.cores[i], self.ld.cores[i + 1]
        w1, w2 = self.l.cores[i], self.l.cores[i + 1]
        t = np.tensordot(el, v, axes=([3], [0]))           # (b, wd, wl, q1, q2, r)
        t = np.tensordot(t, w1, axes=([2, 3], [0, 2]))     # (b, wd, q2, r, m1, wl')
        t = np.tensordot(t, w2, axes=([5, 2], [0, 2]))     # (b, wd, r, m1, m2, wl'')
        t = np.tensordot(t, d1, axes=([1, 3], [0, 2]))     # (b, r, m2, wl'', s1, wd')
        t = np.tensordot(t, d2, axes=([5, 2], [0, 2]))     # (b, r, wl'', s1, s2, wd'')
        t = np.tensordot(t, er, axes=([1, 5, 2], [3, 1, 2]))  # over (r->k, wd'', wl'') -> (b, s1, s2, b2)
        return t

    def local_dim(self, i):
        return (self.left[i].shape[0] * 4 * self.right[i + 2].shape[0])


class _MpoEnv:
    """Three-layer environments for <rho| A |rho> with a single operator train."""

    def __init__(self, a: OperatorTrain, state: TensorTrain):
        self.a = a
        self.state = state
        n = state.n_sites
        self.left = [None] * (n + 1)
        self.right = [None] * (n + 1)
        self.left[0] = np.ones((1, 1, 1), dtype=complex)
        self.right[n] = np.ones((1, 1, 1), dtype=complex)

    def _absorb(self, env, i, side):
        w = self.a.cores[i]
        k = self.state.cores[i]
        if side == "left":
            t = np.tensordot(env, k, axes=([2], [0]))        # (b, w, q, k2)
            t = np.tensordot(t, w, axes=([1, 2], [0, 2]))    # (b, k2, s, w2)
            env2 = np.tensordot(k.conj(), t, axes=([0, 1], [0, 2]))  # (b2, k2, w2)
            return env2.transpose(0, 2, 1)
        t = np.tensordot(k, env, axes=([2], [2]))            # (k1, q, b, w)
        t = np.tensordot(w, t, axes=([3, 2], [3, 1]))        # (w1, s, k1, b)
        env2 = np.tensordot(t, self.state.cores[i].conj(), axes=([3, 1], [2, 1]))
        # (w1, k1, b1) -> (b1, w1, k1)
        return env2.transpose(2, 0, 1)

    def build_right(self, first_bond: int):
        n = self.state.n_sites
        for i in range(n - 1, first_bond, -1):
            self.right[i] = self._absorb(self.right[i + 1], i, "right")

    def update_left(self, i):
        self.left[i + 1] = self._absorb(self.left[i], i, "left")

    def update_right(self, i):
        self.right[i] = self._absorb(self.right[i + 1], i, "right")

    def matvec(self, i, v):
        el = self.left[i]
        er = self.right[i + 2]
        w1, w2 = self.a.cores[i], self.a.cores[i + 1]
        t = np.tensordot(el, v, axes=([2], [0]))           # (b, w, q1, q2, r)
        t = np.tensordot(t, w1, axes=([1, 2], [0, 2]))     # (b, q2, r, s1, w')
        t = np.tensordot(t, w2, axes=([4, 1], [0, 2]))     # (b, r, s1, s2, w'')
        t = np.tensordot(t, er, axes=([1, 4], [2, 1]))     # (b, s1, s2, b2)
        return t

    def local_dim(self, i):
        return self.left[i].shape[0] * 4 * self.right[i + 2].shape[0]


class QuadraticFormMinimizer:
    """Two-site DMRG sweeps minimizing <rho|L^dag L|rho>/<rho|rho>."""

    def __init__(self, liouvillian: OperatorTrain, state: TensorTrain,
                 opts: SweepOptions):
        self.opts = opts
        self.l = liouvillian
        self.ld = liouvillian.adjoint()
        self.state = state.copy()
        self.state.canonicalize(0)
        nrm = self.state.norm()
        if nrm == 0:
            raise ValueError("zero initial state")
        self.state.cores[0] /= nrm
        self.mode = self._choose_mode()
        if self.mode == "lazy":
            self.env = _LazyEnv(self.ld, self.l, self.state)
        else:
            a = mpo_multiply(self.ld, self.l, cutoff=opts.a_tol, chi_max=opts.a_chi_max)
            a.meta["role"] = "quadratic form"
            self.a = a
            self.env = _MpoEnv(a, self.state)
        self.env.build_right(1)
        self.noise = opts.noise_initial
        self.history: list[SweepRecord] = []

    def _choose_mode(self) -> str:
        mode = self.opts.a_mode
        if mode not in ("auto", "lazy", "compressed"):
            raise ValueError(f"unknown a_mode {mode!r}")
        if mode != "auto":
            return mode
        wmax = max([1] + self.l.bond_dims)
        n = self.l.n_sites
        env_bytes = 16 * n * (self.opts.chi_max**2) * wmax**2
        if wmax <= self.opts.lazy_bond_limit and env_bytes <= self.opts.env_memory_budget:
            return "lazy"
        return "compressed"

    def _local_solve(self, i):
        v0 = np.tensordot(self.state.cores[i], self.state.cores[i + 1], axes=([2], [0]))
        shape = v0.shape
        flat0 = v0.reshape(-1)

        def mv(x):
            return self.env.matvec(i, x.reshape(shape)).reshape(-1)

        k = self.opts.krylov_min
        theta, vec, niter, herm = _lanczos_ground(mv, flat0, k, self.opts.krylov_tol)
        # grow the Krylov space when the local solve stalls
        while niter == k and k < self.opts.krylov_max:
            k = min(2 * k, self.opts.krylov_max)
            theta2, vec2, niter, herm2 = _lanczos_ground(mv, vec, k, self.opts.krylov_tol)
            herm = max(herm, herm2)
            improved = theta2 < theta - 1e-12 * max(abs(theta), 1e-300)
            if theta2 <= theta:
                theta, vec = theta2, vec2
            if not improved:
                break
        if herm > self.opts.hermiticity_tol:
            raise RuntimeError(
                f"projected operator not Hermitian at sites ({i},{i+1}): dev={herm:.2e}")
        if self.noise > 0:
            probe = mv(vec)
            pn = np.linalg.norm(probe)
            if pn > 0:
                vec = vec + self.noise * probe / pn
                vec /= np.linalg.norm(vec)
        return theta, vec.reshape(shape), herm

    def sweep(self) -> SweepRecord:
        st = self.state
        n = st.n_sites
        opts = self.opts
        max_disc = 0.0
        tot_disc = 0.0
        chi_seen = 1
        herm_max = 0.0
        energy = np.inf
        for i in range(n - 1):
            energy, theta, herm = self._local_solve(i)
            herm_max = max(herm_max, herm)
            l, _, _, r = theta.shape
            u, s, vh, disc = _svd_split(theta.reshape(l * 2, 2 * r),
                                        opts.svd_cutoff, opts.chi_max)
            max_disc = max(max_disc, disc)
            tot_disc += disc
            kdim = len(s)
            chi_seen = max(chi_seen, kdim)
            st.cores[i] = u.reshape(l, 2, kdim)
            st.cores[i + 1] = (s[:, None] * vh).reshape(kdim, 2, r)
            st.center = i + 1
            self.env.update_left(i)
        for i in range(n - 2, -1, -1):
            energy, theta, herm = self._local_solve(i)
            herm_max = max(herm_max, herm)
            l, _, _, r = theta.shape
            u, s, vh, disc = _svd_split(theta.reshape(l * 2, 2 * r),
                                        opts.svd_cutoff, opts.chi_max)
            max_disc = max(max_disc, disc)
            tot_disc += disc
            kdim = len(s)
            chi_seen = max(chi_seen, kdim)
            st.cores[i] = (u * s).reshape(l, 2, kdim)
            st.cores[i + 1] = vh.reshape(kdim, 2, r)
            st.center = i
            self.env.update_right(i + 1)
        nrm = np.linalg.norm(st.cores[st.center])
        if nrm > 0:
            st.cores[st.center] /= nrm
        rec = SweepRecord(energy=float(energy), max_discarded=max_disc,
                          total_discarded=tot_disc, chi_max_reached=chi_seen,
                          noise=self.noise, herm_dev=herm_max)
        self.history.append(rec)
        self.noise *= self.opts.noise_decay
        if self.noise < 1e-12:
            self.noise = 0.0
        return rec

    def energy(self) -> float:
        nrm2 = abs(inner(self.state, self.state))
        if self.mode == "lazy":
            lv = apply_operator(self.l, self.state, cutoff=1e-14, chi_max=4 * self.opts.chi_max)
            val = abs(inner(lv, lv))
        else:
            val = sandwich(self.state, self.a, self.state).real
        return max(val / nrm2, 0.0)


def minimize_quadratic_form(liouvillian: OperatorTrain, tt0: TensorTrain,
                            opts: SweepOptions) -> tuple[TensorTrain, list[float]]:
    """Sweep until the energy <rho|L^dag L|rho>/<rho|rho> stagnates or the budget runs out.

    Returns the best iterate and the per-sweep energy history; a ``converged``
    flag is left in the result metadata.
    """
    minimizer = QuadraticFormMinimizer(liouvillian, tt0, opts)
    energies = []
    converged = False
    for _ in range(opts.max_sweeps):
        rec = minimizer.sweep()
        energies.append(rec.energy)
        if len(energies) >= 2 and rec.noise == 0.0:
            prev = energies[-2]
            scale = max(abs(prev), abs(rec.energy), 1e-300)
            if abs(prev - rec.energy) <= opts.energy_rtol * scale:
                converged = True
                break
    out = minimizer.state
    out.meta["converged"] = converged
    out.meta["energy_history"] = energies
    return out, energies


def residual_norm(liouvillian: OperatorTrain, tt: TensorTrain) -> float:
    """|| L|rho> || / || |rho> ||, clamped at zero against round-off."""
    nrm = tt.norm()
    if nrm == 0:
        raise ValueError("zero state")
    lv = apply_operator(liouvillian, tt, cutoff=1e-15, chi_max=10**9)
    return max(lv.norm() / nrm, 0.0)


# ---------------------------------------------------------------------------
# checkpoint container: versioned header, shape table, little-endian doubles

def save_train(path, tt: TensorTrain, metadata: dict | None = None) -> None:
    meta = dict(metadata or {})
    meta["center"] = tt.center
    blob = json.dumps(meta).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, tt.n_sites))
        for c in tt.cores:
            fh.write(struct.pack("<III", *c.shape))
        for c in tt.cores:
            arr = np.ascontiguousarray(c, dtype="<c16")
            fh.write(arr.tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def load_train(path) -> tuple[TensorTrain, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError("not a train checkpoint")
        version, n = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        shapes = [struct.unpack("<III", fh.read(12)) for _ in range(n)]
        cores = []
        for shp in shapes:
            count = shp[0] * shp[1] * shp[2]
            buf = fh.read(16 * count)
            cores.append(np.frombuffer(buf, dtype="<c16").reshape(shp).astype(complex))
        (mlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(mlen).decode())
    tt = TensorTrain(cores, center=meta.get("center"))
    return tt, meta
