"""Occupation-number bases and sparse operators for L-site, N-particle bosons.

Basis ordering is lexicographically descending in the occupations and frozen,
so golden files and indices are stable across runs.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels

DIM_CAP_DEFAULT = 2_000_000


class SizingError(ValueError):
    """Requested basis exceeds the configured dimension cap."""


class UnsupportedGeometryError(ValueError):
    """Operator undefined for this lattice size."""


@dataclass(frozen=True)
class FockBasis:
    """Fixed-N bosonic occupation basis on L sites.

    states[i] is the i-th occupation vector; index maps tuple(state) -> i.
    """

    L: int
    N: int
    states: np.ndarray  # (dim, L) int32
    index: dict = field(repr=False)

    @property
    def dim(self):
        return self.states.shape[0]

    @property
    def ntilde(self):
        """Shifted particle number N+1 used by the effective Planck constant."""
        return self.N + 1

    @property
    def heff(self):
        """Effective Planck constant 1/(N+1)."""
        return 1.0 / (self.N + 1)

    def state_index(self, occ):
        return self.index[tuple(int(n) for n in occ)]

    def basis_vector(self, occ):
        v = np.zeros(self.dim, dtype=np.complex128)
        v[self.state_index(occ)] = 1.0
        return v


class SparseOperator:
    """Row-compressed real operator on a Fock basis.

    Stores raw CSR arrays so the jitted kernels can consume them directly.
    All Hamiltonians and observables here are real; complex state vectors are
    handled at apply time.
    """

    def __init__(self, dim, data, indices, indptr, hermitian=True, drop_tolerance=0.0):
        if drop_tolerance > 0.0:
            keep = np.abs(data) > drop_tolerance
            # rebuild indptr after dropping small entries
            counts = np.diff(indptr)
            row_of = np.repeat(np.arange(dim), counts)[keep]
            data = data[keep]
            indices = indices[keep]
            indptr = np.zeros(dim + 1, dtype=indptr.dtype)
            np.add.at(indptr[1:], row_of, 1)
            indptr = np.cumsum(indptr).astype(np.int64)
        self.dim = dim
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.hermitian = hermitian

    @classmethod
    def from_scipy(cls, mat, hermitian=True, drop_tolerance=0.0):
        csr = mat.tocsr()
        csr.sort_indices()
        return cls(csr.shape[0], csr.data, csr.indices.astype(np.int64),
                   csr.indptr.astype(np.int64), hermitian=hermitian,
                   drop_tolerance=drop_tolerance)

    @classmethod
    def from_diagonal(cls, diag):
        dim = len(diag)
        return cls(dim, np.asarray(diag, dtype=np.float64),
                   np.arange(dim, dtype=np.int64),
                   np.arange(dim + 1, dtype=np.int64), hermitian=True)

    def as_scipy(self):
        return sp.csr_matrix((self.data, self.indices, self.indptr),
                             shape=(self.dim, self.dim))

    @property
    def is_diagonal(self):
        if not hasattr(self, "_is_diag"):
            self._is_diag = (len(self.data) == self.dim
                             and np.array_equal(self.indices, np.arange(self.dim)))
        return self._is_diag

    def diagonal(self):
        return self.as_scipy().diagonal()

    def tridiagonal_parts(self):
        """(diag, offdiag) arrays if the operator is tridiagonal, else None."""
        rows = np.repeat(np.arange(self.dim), np.diff(self.indptr))
        if np.any(np.abs(self.indices - rows) > 1):
            return None
        m = self.as_scipy()
        diag = m.diagonal().copy()
        off = m.diagonal(1).copy()
        upper = m.diagonal(-1)
        if not np.array_equal(off, upper):
            return None
        return diag, off

    def matvec(self, x, out=None):
        if out is None:
            out = np.empty(self.dim, dtype=np.complex128)
        kernels.csr_matvec(self.data, self.indices, self.indptr,
                           np.ascontiguousarray(x, dtype=np.complex128), out)
        return out

    def matmat(self, x, out=None):
        if out is None:
            out = np.empty_like(x)
        kernels.csr_matvec_block(self.data, self.indices, self.indptr,
                                 np.ascontiguousarray(x, dtype=np.complex128), out)
        return out

    def apply(self, x):
        """A @ x for vectors or column blocks, via the active kernel backend."""
        x = np.asarray(x)
        if x.ndim == 1:
            return self.matvec(x)
        return self.matmat(x)

    def norm_est(self):
        """Cheap Gershgorin upper bound on the spectral norm."""
        row_sums = np.add.reduceat(np.abs(self.data), self.indptr[:-1])
        row_sums[self.indptr[:-1] == self.indptr[1:]] = 0.0
        return float(row_sums.max())

    def hermiticity_defect(self):
        m = self.as_scipy()
        d = m - m.T
        return 0.0 if d.nnz == 0 else float(np.abs(d.data).max())


def basis_dimension(L, N):
    return math.comb(N + L - 1, L - 1)


def build_basis(L, N, dim_cap=DIM_CAP_DEFAULT):
    """Enumerate the fixed-N occupation basis, lexicographically descending."""
    if L < 2:
        raise ValueError(f"need at least two sites, got L={L}")
    if N < 1:
        raise ValueError(f"need at least one particle, got N={N}")
    dim = basis_dimension(L, N)
    if dim > dim_cap:
        raise SizingError(
            f"basis dimension {dim} for (L={L}, N={N}) exceeds cap {dim_cap}")

    states = np.empty((dim, L), dtype=np.int32)
    occ = np.zeros(L, dtype=np.int64)

    def fill(site, remaining, row):
        if site == L - 1:
            occ[site] = remaining
            states[row] = occ
            return row + 1
        for n in range(remaining, -1, -1):
            occ[site] = n
            row = fill(site + 1, remaining - n, row)
        return row

    rows = fill(0, N, 0)
    assert rows == dim
    index = {tuple(int(v) for v in s): i for i, s in enumerate(states)}
    return FockBasis(L=L, N=N, states=states, index=index)


def build_hamiltonian(basis, J, U, periodic=True):
    """Hopping -J(a+_j a_{j+1} + h.c.) plus on-site (U/2) a+^2 a^2.

    For L=2 there is a single bond and the periodic flag is ignored.
    Conjugate hopping pairs evaluate to the identical expression, so the
    stored matrix is symmetric exactly.
    """
    L, states, index = basis.L, basis.states, basis.index
    if L == 2:
        bonds = [(0, 1)]
    else:
        bonds = [(j, j + 1) for j in range(L - 1)]
        if periodic:
            bonds.append((L - 1, 0))

    occ = states.astype(np.int64)
    diag = 0.5 * U * np.sum(occ * (occ - 1), axis=1).astype(np.float64)

    rows, cols, vals = [], [], []
    for i in range(basis.dim):
        st = states[i]
        for (a, b) in bonds:
            for (src, dst) in ((a, b), (b, a)):
                n_src = int(st[src])
                if n_src == 0:
                    continue
                n_dst = int(st[dst])
                target = list(st)
                target[src] = n_src - 1
                target[dst] = n_dst + 1
                j = index[tuple(target)]
                rows.append(j)
                cols.append(i)
                vals.append(-J * math.sqrt(n_src * (n_dst + 1)))
    rows.extend(range(basis.dim))
    cols.extend(range(basis.dim))
    vals.extend(diag.tolist())
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim))
    return SparseOperator.from_scipy(mat, hermitian=True)


def z_operator(basis):
    """Dimer imbalance (n1 - n2) / (2*(N+1)), diagonal."""
    if basis.L != 2:
        raise UnsupportedGeometryError("imbalance operator is defined for L=2 only")
    n1 = basis.states[:, 0].astype(np.float64)
    n2 = basis.states[:, 1].astype(np.float64)
    return SparseOperator.from_diagonal((n1 - n2) / (2.0 * basis.ntilde))


def site_number_operator(basis, j, scaled=False):
    """Diagonal n_j, or n_j/N when scaled. Sites are 1-based."""
    if not 1 <= j <= basis.L:
        raise ValueError(f"site {j} out of range 1..{basis.L}")
    n = basis.states[:, j - 1].astype(np.float64)
    if scaled:
        n = n / basis.N
    return SparseOperator.from_diagonal(n)


def shift_operator(basis):
    """Cyclic site shift j -> j+1 as a permutation on occupation vectors."""
    perm = np.empty(basis.dim, dtype=np.int64)
    for i, st in enumerate(basis.states):
        shifted = tuple(int(v) for v in np.roll(st, 1))
        perm[basis.index[shifted]] = i
    data = np.ones(basis.dim)
    indptr = np.arange(basis.dim + 1, dtype=np.int64)
    return SparseOperator(basis.dim, data, perm, indptr, hermitian=False)


# ---------------------------------------------------------------------------
# diagonal observable expressions
# ---------------------------------------------------------------------------

def _generator_diagonal(basis, name):
    if name == "1":
        return np.ones(basis.dim)
    if name == "z":
        return z_operator(basis).diagonal()
    if name.startswith("n"):
        body = name[1:]
        scaled = body.endswith("/N")
        if scaled:
            body = body[:-2]
        if body.isdigit():
            return site_number_operator(basis, int(body), scaled=scaled).diagonal()
    raise ValueError(f"unknown generator {name!r}")


def operator_polynomial(basis, expr):
    """Diagonal operator from an expression over {z, n_j, n_j/N, 1}.

    Grammar: terms joined by +/-, each term 'coeff*gen^pow' with optional
    coefficient and power, e.g. "z+z^2", "n1/N", "0.5*z - 2".
    """
    text = expr.replace(" ", "")
    if not text:
        raise ValueError("empty observable expression")
    # split into signed terms
    terms = []
    start, sign = 0, 1.0
    if text[0] in "+-":
        sign = -1.0 if text[0] == "-" else 1.0
        start = 1
    pos = start
    cur_sign = sign
    cur = []
    for ch in text[start:]:
        if ch in "+-":
            terms.append((cur_sign, "".join(cur)))
            cur_sign = -1.0 if ch == "-" else 1.0
            cur = []
        else:
            cur.append(ch)
    terms.append((cur_sign, "".join(cur)))

    total = np.zeros(basis.dim)
    for sign_, term in terms:
        if not term:
            raise ValueError(f"malformed expression {expr!r}")
        coeff = sign_
        if "*" in term:
            pre, term = term.split("*", 1)
            coeff *= float(pre)
        power = 1
        if "^" in term:
            term, p = term.split("^", 1)
            power = int(p)
        try:
            coeff = coeff * float(term)
            total += coeff
            continue
        except ValueError:
            pass
        total += coeff * _generator_diagonal(basis, term) ** power
    return SparseOperator.from_diagonal(total)


# ---------------------------------------------------------------------------
# prequench eigenbasis with degenerate-multiplet resolution
# ---------------------------------------------------------------------------

@dataclass
class PrequenchBasis:
    """Lowest eigenstates of the noninteracting Hamiltonian with stable labels.

    Degenerate multiplets are rotated to diagonalize the projected on-site
    interaction (first-order degenerate perturbation theory), after resolving
    quasi-momentum sectors on a ring. Labels are ints k for the dimer and
    (k1, k2) quasi-momentum occupations for the trimer.
    """

    energies: np.ndarray
    states: np.ndarray            # (dim, m) complex
    labels: list
    multiplets: list              # index ranges [(start, stop), ...]

    def state(self, label):
        return self.states[:, self.labels.index(label)]


def prequench_eigenbasis(basis, J, m, degeneracy_epsilon=1e-8, u_sign=-1.0):
    """m lowest eigenstates of the U=0 Hamiltonian, multiplets resolved.

    Within each multiplet (energies within degeneracy_epsilon*J) the basis is
    rotated to diagonalize the projected interaction; on the trimer ring the
    rotation is done per quasi-momentum sector so every state carries a sharp
    momentum and a (k1, k2) mode-occupation label.
    """
    from .propagator import lowest_eigenpairs

    if degeneracy_epsilon <= 0:
        raise ValueError("degeneracy_epsilon must be positive")
    if m > basis.dim:
        raise ValueError(f"m={m} exceeds basis dimension {basis.dim}")

    h0 = build_hamiltonian(basis, J=J, U=0.0, periodic=True)
    energies, vecs = lowest_eigenpairs(h0, m)
    vecs = vecs.astype(np.complex128)

    # group into multiplets
    multiplets = []
    start = 0
    for i in range(1, m + 1):
        if i == m or energies[i] - energies[start] > degeneracy_epsilon * abs(J):
            multiplets.append((start, i))
            start = i

    w_diag = 0.5 * np.sum(basis.states.astype(np.float64)
                          * (basis.states.astype(np.float64) - 1), axis=1)
    w_diag = u_sign * w_diag  # attractive quench selects the ordering

    labels = [None] * m
    if basis.L == 2:
        for k in range(m):
            labels[k] = k
        return PrequenchBasis(energies=energies, states=vecs,
                              labels=labels, multiplets=multiplets)

    if basis.L != 3:
        raise UnsupportedGeometryError(
            "multiplet labeling implemented for L=2 and L=3 rings")

    shift = shift_operator(basis)
    n1_diag = basis.states[:, 0].astype(np.float64)
    e0 = energies[0]
    for (a, b) in multiplets:
        g = b - a
        block = vecs[:, a:b]
        s_level = int(round((energies[a] - e0) / (3.0 * abs(J))))
        if g == 1 and s_level == 0:
            labels[a] = (0, 0)
            continue
        # resolve momentum sectors inside the multiplet
        tb = block.conj().T @ shift.apply(block)
        evals, evecs = np.linalg.eig(tb)
        charges = np.rint(np.angle(evals) / (2.0 * np.pi / 3.0)).astype(int) % 3
        rotated_cols = []
        for p in sorted(set(charges.tolist())):
            sel = np.where(charges == p)[0]
            vp = block @ evecs[:, sel]
            # orthonormalize within the sector
            q_, _ = np.linalg.qr(vp)
            proj = q_.conj().T @ (w_diag[:, None] * q_)
            wvals, wvecs = np.linalg.eigh(proj)
            cols = q_ @ wvecs
            n1bar = np.real(np.einsum("ij,i,ij->j", cols.conj(), n1_diag, cols))
            order = np.lexsort((n1bar, np.round(wvals / 1e-9)))
            cols = cols[:, order]
            wvals = wvals[order]
            # candidate labels with this momentum charge, k1 descending
            cands = [(k1, s_level - k1) for k1 in range(s_level, -1, -1)
                     if (k1 - (s_level - k1)) % 3 == p]
            if len(cands) != len(sel):
                raise RuntimeError(
                    f"momentum sector {p} of multiplet s={s_level} has "
                    f"{len(sel)} states but {len(cands)} candidate labels")
            rotated_cols.append((p, cols, cands))
        pos = a
        for p, cols, cands in rotated_cols:
            for j, lab in enumerate(cands):
                vecs[:, pos] = cols[:, j]
                labels[pos] = lab
                pos += 1
    return PrequenchBasis(energies=energies, states=vecs,
                          labels=labels, multiplets=multiplets)
