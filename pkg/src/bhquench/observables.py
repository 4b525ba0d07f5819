"""Numerical measurement layer on top of the propagators.

Matrix-element scans, squared commutators, outcome-distribution cumulants,
thermal ensembles, collapse statistics and exponent fits. Ensemble reductions
use a fixed summation order, so reruns are bitwise reproducible for a fixed
thread count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .propagator import EvolvedState, KrylovConfig, SpectralPropagator, evolve


class WindowError(ValueError):
    """Fit window too short or values unusable inside it."""


@dataclass
class TimeSeries:
    """Observable trace on a strictly increasing time grid (units 1/J)."""

    grid: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values)
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("time grid must be strictly increasing")
        finite = np.isfinite(self.values.real) & np.isfinite(self.values.imag) \
            if np.iscomplexobj(self.values) else np.isfinite(self.values)
        if not np.all(finite):
            raise ValueError("series contains non-finite values")

    def window_mask(self, window):
        lo, hi = window
        return (self.grid >= lo) & (self.grid <= hi)

    def is_complex(self):
        return np.iscomplexobj(self.values)


@dataclass
class ThermalEnsemble:
    """Boltzmann mixture over prequench eigenstates.

    States are included until the discarded weight drops below the mass
    tolerance; weights are normalized over the retained set.
    """

    states: np.ndarray           # (dim, n) complex columns
    weights: np.ndarray
    energies: np.ndarray
    beta: float
    truncation_mass: float

    @classmethod
    def build(cls, energies, states, beta, mass_tolerance=1e-10):
        energies = np.asarray(energies, dtype=float)
        if math.isinf(beta):
            ens = cls(states=np.ascontiguousarray(states[:, :1]),
                      weights=np.array([1.0]), energies=energies[:1],
                      beta=beta, truncation_mass=0.0)
            return ens
        boltz = np.exp(-beta * (energies - energies[0]))
        # geometric estimate of the spectral tail beyond the supplied basis
        ratio = boltz[-1] / boltz[-2] if len(boltz) > 1 else 0.0
        beyond = boltz[-1] * ratio / (1.0 - ratio) if ratio < 1.0 else np.inf
        total = boltz.sum() + beyond
        tail = (np.concatenate([np.cumsum(boltz[::-1])[::-1][1:], [0.0]])
                + beyond) / total
        keep = int(np.argmax(tail < mass_tolerance)) + 1
        if tail[keep - 1] >= mass_tolerance:
            raise ValueError(
                f"prequench basis too small: {len(energies)} states leave "
                f"discarded weight {tail[-1]:.2e} >= {mass_tolerance:.0e}")
        weights = boltz[:keep] / boltz[:keep].sum()
        ens = cls(states=np.ascontiguousarray(states[:, :keep]),
                  weights=weights, energies=energies[:keep], beta=beta,
                  truncation_mass=float(tail[keep - 1]))
        assert abs(ens.weights.sum() - 1.0) < 1e-12
        assert ens.truncation_mass < mass_tolerance
        return ens

    @property
    def n_states(self):
        return len(self.weights)


def make_propagator(H, prefer_spectral=True, spectral_cap=200_000):
    """Spectral propagator when the operator is banded and fits, else None."""
    if not prefer_spectral:
        return None
    if H.tridiagonal_parts() is None and H.dim > 4000:
        return None
    if H.dim > spectral_cap:
        return None
    return SpectralPropagator(H)


def _forward_states(H, columns, grid, propagator=None, cfg=None, threads=1):
    """Yield (t, block) with block = e^{-iHt} columns, sweeping the grid once."""
    if propagator is not None:
        for t in grid:
            yield t, propagator.propagate(columns, t)
        return
    norms = np.linalg.norm(columns, axis=0)
    unit = np.zeros(columns.shape[0], dtype=np.complex128)
    unit[0] = 1.0
    states = [EvolvedState.from_vector(columns[:, j] / norms[j] if norms[j] > 0
                                       else unit)
              for j in range(columns.shape[1])]
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t in grid:
            if pool is not None:
                states = list(pool.map(lambda s: evolve(H, s, t, cfg), states))
            else:
                states = [evolve(H, s, t, cfg) for s in states]
            yield t, np.column_stack([s.coefficients for s in states]) * norms
    finally:
        if pool is not None:
            pool.shutdown()


def matrix_element_scan(H, A, bra_states, ket_state, grid, labels=None,
                        propagator=None, cfg=None, threads=1, meta=None):
    """<bra_k| A(t) |ket> for a family of bra states on a shared grid.

    The ket is co-evolved once with all bras: one propagation per state total,
    one application of A and one inner product per (state, grid point).
    """
    grid = np.asarray(grid, dtype=float)
    bra_states = np.asarray(bra_states)
    if bra_states.ndim == 1:
        bra_states = bra_states[:, None]
    nbra = bra_states.shape[1]
    if labels is None:
        labels = list(range(nbra))
    columns = np.column_stack([bra_states, ket_state]).astype(np.complex128)
    out = np.empty((len(grid), nbra), dtype=np.complex128)
    for i, (t, block) in enumerate(_forward_states(H, columns, grid,
                                                   propagator, cfg, threads)):
        aket = A.apply(block[:, -1])
        out[i, :] = block[:, :nbra].conj().T @ aket
    table = {}
    for j, lab in enumerate(labels):
        table[lab] = TimeSeries(grid=grid, values=out[:, j],
                                meta=dict(meta or {}, label=lab))
    return table


def two_time_commutator_scan(H, A, B, bra_states, ket_state, grid, labels=None,
                             propagator=None, cfg=None, threads=1, meta=None):
    """<bra_k| [A(t), B(0)] |ket> via two co-evolved state families.

    Needs e^{-iHt} on bra_k, B bra_k, ket and B ket; all diagonal-operator
    applications happen pointwise on the evolved columns.
    """
    _, table = element_and_commutator_scan(
        H, A, B, bra_states, ket_state, grid, labels=labels,
        propagator=propagator, cfg=cfg, threads=threads, meta=meta)
    return table


def element_and_commutator_scan(H, A, B, bra_states, ket_state, grid,
                                labels=None, propagator=None, cfg=None,
                                threads=1, meta=None):
    """One co-evolution sweep yielding both <k|A(t)|0> and <k|[A(t), B]|0>.

    The bra family, its B image, the ket and its B image share a single
    propagation, so the combined cost is half of two separate scans.
    """
    grid = np.asarray(grid, dtype=float)
    bra_states = np.asarray(bra_states)
    if bra_states.ndim == 1:
        bra_states = bra_states[:, None]
    nbra = bra_states.shape[1]
    if labels is None:
        labels = list(range(nbra))
    b_bras = B.apply(bra_states.astype(np.complex128))
    b_ket = B.apply(np.asarray(ket_state, dtype=np.complex128))
    columns = np.column_stack([bra_states, b_bras, ket_state, b_ket]).astype(
        np.complex128)
    elems = np.empty((len(grid), nbra), dtype=np.complex128)
    comms = np.empty((len(grid), nbra), dtype=np.complex128)
    for i, (t, block) in enumerate(_forward_states(H, columns, grid,
                                                   propagator, cfg, threads)):
        ket_t = block[:, -2]
        bket_t = block[:, -1]
        a_ket = A.apply(ket_t)
        a_bket = A.apply(bket_t)
        elems[i, :] = block[:, :nbra].conj().T @ a_ket
        # <k| A(t) B |0> - <k| B A(t) |0>
        comms[i, :] = (block[:, :nbra].conj().T @ a_bket
                       - block[:, nbra:2 * nbra].conj().T @ a_ket)
    etable, ctable = {}, {}
    for j, lab in enumerate(labels):
        etable[lab] = TimeSeries(grid=grid, values=elems[:, j],
                                 meta=dict(meta or {}, label=lab))
        ctable[lab] = TimeSeries(grid=grid, values=comms[:, j],
                                 meta=dict(meta or {}, label=lab))
    return etable, ctable


def otoc_numeric(H, A, B, ensemble, grid, propagator=None, cfg=None):
    """Thermal squared commutator -<[A(t), B]^2> on a time grid.

    Per grid point: forward-evolve the ensemble block and its B image, apply
    A, echo back through B, and take weighted squared norms of the commutator
    action (four propagations per state and grid point). Positive by
    construction for Hermitian inputs.
    """
    if not (A.hermitian and B.hermitian):
        raise ValueError("squared commutator defined for Hermitian operators")
    grid = np.asarray(grid, dtype=float)
    psi = ensemble.states.astype(np.complex128)
    bpsi = B.apply(psi)
    vals = np.empty(len(grid))
    for i, t in enumerate(grid):
        if propagator is not None:
            u = propagator.propagate(psi, t)
            r = propagator.propagate(bpsi, t)
            g = A.apply(u)
            h = propagator.propagate(B.apply(propagator.propagate(g, -t)), t)
        else:
            u = _krylov_block(H, psi, t, cfg)
            r = _krylov_block(H, bpsi, t, cfg)
            g = A.apply(u)
            h = _krylov_block(H, B.apply(_krylov_block(H, g, -t, cfg)), t, cfg)
        w = A.apply(r) - h
        contrib = np.einsum("ij,ij->j", w.conj(), w).real
        vals[i] = float(np.dot(ensemble.weights, contrib))
    return TimeSeries(grid=grid, values=vals,
                      meta={"observable": "squared_commutator"})


def _krylov_block(H, block, t, cfg):
    """exp(-iHt) on columns via adaptive steps; negative t evolves under -H."""
    from .fockspace import SparseOperator

    if t == 0.0:
        return block.copy()
    op = H
    if t < 0:
        op = SparseOperator(H.dim, -H.data, H.indices, H.indptr,
                            hermitian=H.hermitian)
        t = -t
    cols = []
    for j in range(block.shape[1]):
        vec = block[:, j]
        nrm = np.linalg.norm(vec)
        state = EvolvedState.from_vector(vec / nrm)
        cols.append(evolve(op, state, t, cfg).coefficients * nrm)
    return np.column_stack(cols)


def moments_to_cumulants(mu):
    """Cumulants from central moments mu[j] = <(a - <a>)^(j+1)>, mu[0] = 0."""
    n = len(mu)
    kappa = np.zeros(n)
    for j in range(1, n + 1):
        acc = mu[j - 1]
        for i in range(2, j):
            acc -= math.comb(j - 1, i - 1) * kappa[i - 1] * mu[j - i - 1]
        kappa[j - 1] = acc
    if n >= 1:
        kappa[0] = mu[0]
    return kappa


def cumulants_numeric(H, A, ensemble, grid, n_max, propagator=None, cfg=None,
                      noise_floor=1e-13):
    """Cumulants of the outcome distribution of a diagonal observable.

    The full distribution at time t is read off the evolved amplitudes, so no
    extra propagations are needed beyond one forward sweep per ensemble state.
    Central power sums run through compensated (double-double) accumulation;
    per order, values below the cancellation floor are flagged
    precision-limited rather than trusted.
    """
    if n_max > 12:
        raise ValueError("cumulants beyond n=12 are below double precision "
                         "for any realistic distribution; rejected")
    if not A.is_diagonal:
        raise ValueError("outcome distributions need a diagonal observable")
    avals = A.diagonal()
    grid = np.asarray(grid, dtype=float)
    psi = ensemble.states.astype(np.complex128)
    kappas = np.empty((len(grid), n_max))
    flags = np.zeros((len(grid), n_max), dtype=bool)
    for i, (t, block) in enumerate(_forward_states(H, psi, grid, propagator, cfg)):
        probs = (np.abs(block) ** 2) @ ensemble.weights
        mean = float(kernels.dd_weighted_power_sums(avals, probs, 0.0, 1)[0])
        sums = kernels.dd_weighted_power_sums(avals, probs, mean, n_max)
        sums_abs = kernels.dd_weighted_power_sums(np.abs(avals - mean) + mean,
                                                  probs, mean, n_max)
        mu = sums.copy()
        mu[0] = 0.0
        kappa = moments_to_cumulants(mu)
        kappas[i] = kappa
        # cancellation scale: gross magnitude that entered each cumulant
        gross = np.abs(sums_abs)
        for n in range(2, n_max + 1):
            g = gross[n - 1]
            for j in range(2, n):
                g += math.comb(n - 1, j - 1) * abs(kappa[j - 1]) * gross[n - j - 1]
            flags[i, n - 1] = abs(kappa[n - 1]) < noise_floor * g
    table = {}
    for n in range(1, n_max + 1):
        table[n] = TimeSeries(
            grid=grid, values=kappas[:, n - 1],
            meta={"cumulant_order": n,
                  "precision_flags": flags[:, n - 1].tolist()})
    return table


def fit_exponent(series, window):
    """Least-squares growth rate of ln|values| over a time window.

    Returns (rate, intercept, rms residual); refuses windows shorter than
    five grid points and windows containing zeros or sign changes.
    """
    mask = series.window_mask(window)
    if mask.sum() < 5:
        raise WindowError(f"window {window} covers {int(mask.sum())} < 5 points")
    vals = series.values[mask]
    ts = series.grid[mask]
    mags = np.abs(vals)
    if np.any(mags == 0.0):
        raise WindowError("zero values inside fit window")
    if not series.is_complex() and np.any(np.sign(vals[:-1]) != np.sign(vals[1:])):
        raise WindowError("sign change inside fit window")
    y = np.log(mags)
    coeffs, res = np.polyfit(ts, y, 1, full=True)[:2]
    rate, intercept = float(coeffs[0]), float(coeffs[1])
    rms = float(np.sqrt(res[0] / mask.sum())) if len(res) else 0.0
    return rate, intercept, rms


def phase_deviation(series, k, l, phi, magnitude_floor=1e-14):
    """Phase residual arg(e^{i(l-k)phi} value) folded to (-pi/2, pi/2].

    Grid points whose magnitude is below the floor are returned as NaN (the
    phase is undefined there) and listed in the metadata.
    """
    if k == l:
        raise ValueError("phase prediction needs k != l")
    rotated = np.exp(1j * (l - k) * phi) * series.values
    mags = np.abs(rotated)
    res = np.angle(rotated)
    res = np.mod(res + 0.5 * np.pi, np.pi) - 0.5 * np.pi
    bad = mags < magnitude_floor
    res = np.where(bad, np.nan, res)
    # bypass __post_init__: NaN marks points with undefined phase, which the
    # finite-values invariant would otherwise reject
    out = TimeSeries.__new__(TimeSeries)
    out.grid = series.grid
    out.values = res
    out.meta = dict(series.meta, undefined_points=int(bad.sum()))
    return out


def collapse_statistic(series_table, lam, heff, order_of, ckl=None, band=0.25,
                       zero_floor=1e-300):
    """Rescale matrix-element traces onto the renormalized growth function.

    order_of(label) gives the growth order n of each series (|k-l| for a
    dimer pair, k1+k2 for trimer excitations); the curve is
    f(t) = |value (/ c_kl when given)|^(2/n) / (heff e^(2 lam t)), constant
    wherever the dominant scaling holds. Zero-order labels are skipped and
    all-zero series excluded with a selection-rule note. Returns
    (curves, report) with each curve's plateau window (longest stretch within
    the relative band around its running median) and level.
    """
    curves = {}
    report = {}
    for label, series in series_table.items():
        n = order_of(label)
        if n == 0:
            continue
        mags = np.abs(series.values)
        if np.all(mags < zero_floor):
            report[label] = {"excluded": "selection rule (all-zero series)"}
            continue
        vals = mags
        if ckl is not None:
            c = ckl(label) if callable(ckl) else ckl[label]
            vals = mags / abs(c)
        f = vals ** (2.0 / n) / (heff * np.exp(2.0 * lam * series.grid))
        curve = TimeSeries(grid=series.grid, values=f,
                           meta=dict(series.meta, collapse_order=n))
        curves[label] = curve
        report[label] = _plateau(curve, band)
    return curves, report


def _plateau(curve, band):
    f = curve.values
    best = (0, 0)
    i = 0
    npts = len(f)
    while i < npts:
        j = i + 1
        while j <= npts:
            seg = f[i:j]
            med = np.median(seg)
            if med <= 0 or np.any(np.abs(seg / med - 1.0) > band):
                break
            j += 1
        j -= 1
        if j - i > best[1] - best[0]:
            best = (i, j)
        i += 1
    i, j = best
    if j <= i:
        return {"window": None, "level": None}
    seg = f[i:j]
    return {"window": (float(curve.grid[i]), float(curve.grid[j - 1])),
            "level": float(np.median(seg)),
            "spread": float((seg.max() - seg.min()) / np.median(seg))}
