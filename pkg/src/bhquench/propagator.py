"""Low-lying eigensolving and unitary time evolution for sparse Hamiltonians.

The workhorse is an adaptive Lanczos (Krylov) propagator with an a-posteriori
local error estimate. For banded Hamiltonians of moderate dimension a spectral
propagator (full tridiagonal eigendecomposition) is also provided; it makes
echo-type schedules (evolve forward, apply an operator, evolve back) affordable
where stepping propagators are not.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla


class ConvergenceError(RuntimeError):
    """Eigensolver or stepper failed to reach the requested accuracy."""


class StiffnessError(RuntimeError):
    """Adaptive step size underflowed below a machine-meaningful scale."""


@dataclass
class KrylovConfig:
    max_subspace: int = 30
    step_tolerance: float = 1e-10
    max_dt: float = np.inf

    def __post_init__(self):
        if self.max_subspace < 4:
            raise ValueError("max_subspace must be at least 4")
        if self.step_tolerance <= 0:
            raise ValueError("step_tolerance must be positive")


@dataclass
class EvolvedState:
    """Normalized state vector at time t with accumulated norm drift."""

    coefficients: np.ndarray
    t: float = 0.0
    norm_drift: float = 0.0

    @classmethod
    def from_vector(cls, vec, t=0.0):
        vec = np.asarray(vec, dtype=np.complex128)
        nrm = np.linalg.norm(vec)
        if abs(nrm - 1.0) > 1e-10:
            raise ValueError(f"state not normalized: |1-norm| = {abs(nrm-1.0):.3e}")
        return cls(coefficients=vec.copy(), t=t)

    @property
    def norm(self):
        return float(np.linalg.norm(self.coefficients))


def lowest_eigenpairs(H, m, tol_factor=1e-10):
    """m lowest eigenpairs with residuals below tol_factor * ||H||_est.

    Backed by LAPACK for banded/small operators and ARPACK otherwise; the
    returned block is re-orthonormalized and every residual is verified, with
    a diagnostic raised on failure.
    """
    dim = H.dim
    if m > dim:
        raise ValueError(f"requested {m} pairs from dimension {dim}")
    norm_est = max(H.norm_est(), 1.0)

    tri = H.tridiagonal_parts() if dim > 2000 else None
    if dim <= 2000:
        dense = H.as_scipy().toarray()
        energies, vecs = np.linalg.eigh(dense)
        energies, vecs = energies[:m], vecs[:, :m]
    elif tri is not None:
        diag, off = tri
        energies, vecs = sla.eigh_tridiagonal(
            diag, off, select="i", select_range=(0, m - 1))
    else:
        ncv = min(dim, max(4 * m, 64))
        try:
            energies, vecs = spla.eigsh(H.as_scipy(), k=m, which="SA", ncv=ncv)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(f"ARPACK did not converge: {exc}") from exc
        order = np.argsort(energies)
        energies, vecs = energies[order], vecs[:, order]

    # full re-orthonormalization of the returned block
    vecs, _ = np.linalg.qr(vecs)
    resid = H.apply(vecs.astype(np.complex128)) - vecs * energies[None, :]
    resid_norms = np.linalg.norm(resid, axis=0)
    if np.any(resid_norms > tol_factor * norm_est):
        raise ConvergenceError(
            f"eigenpair residuals {resid_norms.max():.3e} exceed "
            f"{tol_factor * norm_est:.3e}; residual history: {resid_norms}")
    return energies, np.ascontiguousarray(vecs)


def _lanczos_step(H, v0, m):
    """Lanczos factorization with full reorthogonalization.

    Returns (V, alpha, beta, beta_next) with H V_m = V_m T_m + beta_next v_{m+1} e_m.
    """
    n = v0.shape[0]
    V = np.empty((n, m + 1), dtype=np.complex128)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[:, 0] = v0
    w = np.empty(n, dtype=np.complex128)
    k_used = m
    for j in range(m):
        H.matvec(V[:, j], w)
        a = np.real(np.vdot(V[:, j], w))
        alpha[j] = a
        w -= a * V[:, j]
        if j > 0:
            w -= beta[j - 1] * V[:, j - 1]
        # full reorthogonalization, twice for safety
        for _ in range(2):
            overlaps = V[:, :j + 1].conj().T @ w
            w -= V[:, :j + 1] @ overlaps
        b = np.linalg.norm(w)
        if b < 1e-14:
            k_used = j + 1
            beta[j] = 0.0
            V[:, j + 1] = 0.0
            break
        beta[j] = b
        V[:, j + 1] = w / b
    return V, alpha, beta, k_used


def _krylov_apply(alpha, beta, k, dt):
    """(exp(-i dt T_k) e1, local error estimate) from the Lanczos tridiagonal."""
    evals, evecs = sla.eigh_tridiagonal(alpha[:k], beta[:k - 1]) if k > 1 else (
        alpha[:1], np.ones((1, 1)))
    phase = np.exp(-1j * dt * evals)
    u = evecs @ (phase * evecs[0, :].conj())
    beta_next = beta[k - 1] if k < len(alpha) + 1 else 0.0
    err = abs(dt) * abs(beta_next) * abs(u[k - 1])
    return u, err


def evolve(H, psi, t_target, cfg=None):
    """Propagate psi to t_target under exp(-iHt) with adaptive Lanczos steps.

    Local step error is kept below cfg.step_tolerance via the residual-based
    a-posteriori estimate; the state is renormalized after every step and the
    drift accumulated, never reset.
    """
    if cfg is None:
        cfg = KrylovConfig()
    if t_target < psi.t:
        raise ValueError(f"t_target {t_target} precedes current time {psi.t}")
    remaining = t_target - psi.t
    vec = psi.coefficients.copy()
    drift = psi.norm_drift
    if remaining == 0.0:
        return EvolvedState(coefficients=vec, t=t_target, norm_drift=drift)

    m = min(cfg.max_subspace, H.dim)
    norm_est = max(H.norm_est(), 1e-30)
    dt = min(remaining, cfg.max_dt, 2.0 * m / norm_est)
    t_min = max(remaining, 1.0) * 1e-14

    while remaining > 0.0:
        dt = min(dt, remaining, cfg.max_dt)
        V, alpha, beta, k = _lanczos_step(H, vec, m)
        while True:
            u, err = _krylov_apply(alpha, beta, k, dt)
            if err <= cfg.step_tolerance or k < m:
                break
            if dt < t_min:
                raise StiffnessError(
                    f"step size underflow at t={t_target - remaining:.6g}: "
                    f"dt={dt:.3e}, err={err:.3e}")
            dt *= max(0.2, 0.7 * (cfg.step_tolerance / err) ** (1.0 / m))
        vec = V[:, :k] @ u
        nrm = np.linalg.norm(vec)
        drift += abs(1.0 - nrm)
        vec /= nrm
        remaining -= dt
        if err > 0.0:
            dt = min(dt * min(2.0, 0.9 * (cfg.step_tolerance / err) ** (1.0 / m)),
                     2.0 * dt)
        else:
            dt *= 2.0
    return EvolvedState(coefficients=vec, t=t_target, norm_drift=drift)


def evolve_on_grid(H, psi, grid, cfg=None):
    """Yield (t, EvolvedState) along a nondecreasing time grid, one sweep."""
    state = psi
    for t in grid:
        state = evolve(H, state, t, cfg)
        yield t, state


class SpectralPropagator:
    """Exact evolution through a full eigendecomposition.

    Only available for tridiagonal operators (any dimension that fits dense
    eigenvectors in memory) or small dense ones. Time arguments may be
    negative, which makes echo schedules cheap. The eigenvector matrix is
    real, so complex blocks are propagated as stacked real/imaginary columns.
    """

    def __init__(self, H, dense_cap=4000):
        tri = H.tridiagonal_parts()
        if tri is not None:
            diag, off = tri
            self.energies, self.vectors = sla.eigh_tridiagonal(diag, off)
        elif H.dim <= dense_cap:
            self.energies, self.vectors = np.linalg.eigh(H.as_scipy().toarray())
        else:
            raise ValueError(
                f"spectral propagation needs a tridiagonal or small operator "
                f"(dim {H.dim} > {dense_cap})")
        self.vectors = np.ascontiguousarray(self.vectors)
        self.dim = H.dim

    def _to_eigenbasis(self, block):
        ncol = block.shape[1]
        stacked = np.empty((block.shape[0], 2 * ncol))
        stacked[:, :ncol] = block.real
        stacked[:, ncol:] = block.imag
        return self.vectors.T @ stacked

    def propagate(self, block, t):
        """exp(-iHt) applied to a vector or column block."""
        block = np.asarray(block, dtype=np.complex128)
        squeeze = block.ndim == 1
        if squeeze:
            block = block[:, None]
        ncol = block.shape[1]
        coeff = self._to_eigenbasis(block)
        phases = np.exp(-1j * t * self.energies)
        rotated = np.empty_like(coeff)
        cre, cim = coeff[:, :ncol], coeff[:, ncol:]
        rotated[:, :ncol] = phases.real[:, None] * cre - phases.imag[:, None] * cim
        rotated[:, ncol:] = phases.real[:, None] * cim + phases.imag[:, None] * cre
        back = self.vectors @ rotated
        out = back[:, :ncol] + 1j * back[:, ncol:]
        return out[:, 0] if squeeze else out


class ShellCaptureError(RuntimeError):
    """Initial states leak outside the retained energy shell."""


class WindowedSpectralPropagator:
    """Exact forward evolution on a conserved-energy shell.

    Large tridiagonal Hamiltonians act on low-lying wavepackets that occupy a
    narrow band of postquench eigenstates, and energy conservation keeps them
    there forever. Diagonalizing only inside a window around the packet energy
    gives machine-accurate propagation at a small fraction of the full
    spectral cost; the captured weight of every initial state is verified
    against the requested leak tolerance and the window is widened until it
    holds.
    """

    def __init__(self, H, initial_states, leak_tolerance=1e-12,
                 initial_half_width=50.0, max_states=20000):
        tri = H.tridiagonal_parts()
        if tri is None:
            raise ValueError("energy-shell propagation needs a tridiagonal operator")
        diag, off = tri
        block = np.asarray(initial_states, dtype=np.complex128)
        if block.ndim == 1:
            block = block[:, None]
        hpsi = H.matmat(np.ascontiguousarray(block))
        e_mean = np.real(np.einsum("ij,ij->j", block.conj(), hpsi))
        lo = e_mean.min() - initial_half_width
        hi = e_mean.max() + initial_half_width
        for _ in range(20):
            energies, vectors = sla.eigh_tridiagonal(
                diag, off, select="v", select_range=(lo, hi))
            if len(energies) == 0:
                lo -= initial_half_width
                hi += initial_half_width
                continue
            if len(energies) > max_states:
                raise ShellCaptureError(
                    f"energy shell [{lo:.3g}, {hi:.3g}] needs {len(energies)} "
                    f"eigenpairs > cap {max_states}")
            proj = vectors.T @ block.real + 1j * (vectors.T @ block.imag)
            captured = np.sum(np.abs(proj) ** 2, axis=0)
            leak = float((1.0 - captured).max())
            if leak < leak_tolerance:
                self.energies = energies
                self.vectors = np.ascontiguousarray(vectors)
                self.leak = leak
                self.dim = H.dim
                return
            lo -= 2.0 * initial_half_width
            hi += 2.0 * initial_half_width
        raise ShellCaptureError(
            f"failed to capture initial states to {leak_tolerance:.1e}; "
            f"worst leak {leak:.3e} in [{lo:.3g}, {hi:.3g}]")

    def propagate(self, block, t):
        block = np.asarray(block, dtype=np.complex128)
        squeeze = block.ndim == 1
        if squeeze:
            block = block[:, None]
        ncol = block.shape[1]
        stacked = np.empty((block.shape[0], 2 * ncol))
        stacked[:, :ncol] = block.real
        stacked[:, ncol:] = block.imag
        coeff = self.vectors.T @ stacked
        phases = np.exp(-1j * t * self.energies)
        rotated = np.empty_like(coeff)
        cre, cim = coeff[:, :ncol], coeff[:, ncol:]
        rotated[:, :ncol] = phases.real[:, None] * cre - phases.imag[:, None] * cim
        rotated[:, ncol:] = phases.real[:, None] * cim + phases.imag[:, None] * cre
        back = self.vectors @ rotated
        out = back[:, :ncol] + 1j * back[:, ncol:]
        return out[:, 0] if squeeze else out


def heisenberg_matrix_element(H, A, psi_k, psi_l, grid, cfg=None, propagator=None):
    """<psi_k| e^{iHt} A e^{-iHt} |psi_l> on a nondecreasing time grid.

    The two states are co-evolved once; each grid point costs one application
    of A and one inner product.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("time grid must be nondecreasing")
    out = np.empty(len(grid), dtype=np.complex128)
    if propagator is not None:
        for i, t in enumerate(grid):
            uk = propagator.propagate(psi_k, t)
            ul = propagator.propagate(psi_l, t)
            out[i] = np.vdot(uk, A.apply(ul))
        return out
    sk = EvolvedState.from_vector(psi_k)
    sl = EvolvedState.from_vector(psi_l)
    for i, t in enumerate(grid):
        sk = evolve(H, sk, t, cfg)
        sl = evolve(H, sl, t, cfg)
        out[i] = np.vdot(sk.coefficients, A.apply(sl.coefficients))
    return out
