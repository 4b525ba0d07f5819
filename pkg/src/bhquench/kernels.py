"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time:

* ``BHQUENCH_BACKEND=numba``  force the jitted kernels (raises if numba is missing),
* ``BHQUENCH_BACKEND=numpy``  force the pure-numpy fallback,
* unset or ``auto``           use numba when importable, numpy otherwise.

All kernels are deterministic for a fixed thread count; reductions use a
fixed summation order.  ``benchmarks/bench_kernels.py`` compares both paths.
"""

import os

import numpy as np

_requested = os.environ.get("BHQUENCH_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"BHQUENCH_BACKEND must be auto|numba|numpy, got {_requested!r}")

_HAVE_NUMBA = False
if _requested in ("auto", "numba"):
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise
        _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and _requested != "numpy"


def backend_name():
    """Active kernel backend, 'numba' or 'numpy'."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# sparse matrix-vector products (real symmetric CSR on complex vectors)
# ---------------------------------------------------------------------------

def _csr_matvec_py(data, indices, indptr, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        acc = 0.0 + 0.0j
        for jj in range(indptr[i], indptr[i + 1]):
            acc += data[jj] * x[indices[jj]]
        out[i] = acc
    return out


def _csr_matvec_block_py(data, indices, indptr, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        acc = np.zeros(x.shape[1], dtype=np.complex128)
        for jj in range(indptr[i], indptr[i + 1]):
            d = data[jj]
            col = indices[jj]
            for c in range(x.shape[1]):
                acc[c] += d * x[col, c]
        out[i, :] = acc
    return out


def _tridiag_matvec_py(diag, off, x, out):
    n = diag.shape[0]
    out[0] = diag[0] * x[0] + (off[0] * x[1] if n > 1 else 0.0)
    for i in range(1, n - 1):
        out[i] = off[i - 1] * x[i - 1] + diag[i] * x[i] + off[i] * x[i + 1]
    if n > 1:
        out[n - 1] = off[n - 2] * x[n - 2] + diag[n - 1] * x[n - 1]
    return out


# ---------------------------------------------------------------------------
# compensated (double-double) weighted power sums for cumulant pipelines
# ---------------------------------------------------------------------------

def _dd_weighted_power_sums_py(values, weights, center, nmax):
    """sums[j] = sum_i weights[i] * (values[i]-center)**(j+1), j=0..nmax-1.

    Accumulated in double-double arithmetic so that high powers survive the
    massive cancellation of nearly symmetric distributions.
    """
    hi = np.zeros(nmax)
    lo = np.zeros(nmax)
    n = values.shape[0]
    for i in range(n):
        d = values[i] - center
        w = weights[i]
        term = w
        for j in range(nmax):
            term = term * d
            # two-sum of (hi[j], term)
            s = hi[j] + term
            bp = s - hi[j]
            err = (hi[j] - (s - bp)) + (term - bp)
            hi[j] = s
            lo[j] += err
    return hi + lo


def _poly_gauss_power_sums_py(coeffs, s, g, nmax):
    """Power sums of Y = sum_k coeffs[k] * (s*g)**k over samples g.

    Returns sums[j] = sum_i Y_i**(j+1), double-double compensated.
    """
    hi = np.zeros(nmax)
    lo = np.zeros(nmax)
    kmax = coeffs.shape[0] - 1
    for i in range(g.shape[0]):
        u = s * g[i]
        y = coeffs[kmax]
        for k in range(kmax - 1, -1, -1):
            y = y * u + coeffs[k]
        term = 1.0
        for j in range(nmax):
            term = term * y
            t = hi[j] + term
            bp = t - hi[j]
            err = (hi[j] - (t - bp)) + (term - bp)
            hi[j] = t
            lo[j] += err
    return hi, lo


if USE_NUMBA:
    csr_matvec = njit(cache=True)(_csr_matvec_py)
    csr_matvec_block = njit(cache=True)(_csr_matvec_block_py)
    tridiag_matvec = njit(cache=True)(_tridiag_matvec_py)
    dd_weighted_power_sums = njit(cache=True)(_dd_weighted_power_sums_py)
    poly_gauss_power_sums = njit(cache=True)(_poly_gauss_power_sums_py)
else:
    def csr_matvec(data, indices, indptr, x, out):
        n = indptr.shape[0] - 1
        # vectorized CSR product: segment sums over rows
        prod = data * x[indices]
        out[:] = np.add.reduceat(prod, indptr[:-1])
        out[indptr[:-1] == indptr[1:]] = 0.0
        return out

    def csr_matvec_block(data, indices, indptr, x, out):
        prod = data[:, None] * x[indices, :]
        out[:, :] = np.add.reduceat(prod, indptr[:-1], axis=0)
        out[indptr[:-1] == indptr[1:], :] = 0.0
        return out

    def tridiag_matvec(diag, off, x, out):
        out[:] = diag * x
        out[:-1] += off * x[1:]
        out[1:] += off * x[:-1]
        return out

    def dd_weighted_power_sums(values, weights, center, nmax):
        d = (values - center).astype(np.longdouble)
        w = weights.astype(np.longdouble)
        sums = np.empty(nmax)
        term = w.copy()
        for j in range(nmax):
            term = term * d
            sums[j] = float(term.sum())
        return sums

    def poly_gauss_power_sums(coeffs, s, g, nmax):
        u = s * g
        y = np.full_like(g, coeffs[-1])
        for k in range(coeffs.shape[0] - 2, -1, -1):
            y = y * u + coeffs[k]
        y = y.astype(np.longdouble)
        hi = np.empty(nmax)
        lo = np.zeros(nmax)
        term = y.copy()
        sums = term.sum()
        hi[0] = float(sums)
        for j in range(1, nmax):
            term = term * y
            hi[j] = float(term.sum())
        return hi, lo
