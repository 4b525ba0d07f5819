"""Pure-growth coefficients from the classical unstable manifold.

The pure-growth sector of the Heisenberg expansion (monomial y^k, time factor
e^(k lam t), half-order k) is closed under Poisson brackets alone: matching
the half-order, degree and growth bookkeeping forces every Moyal correction
out. It therefore equals the classical asymptotics of the observable along
the unstable manifold of the hyperbolic fixed point, which this module
computes to essentially arbitrary order by series inversion:

1. hyperbolic canonical coordinates  w-+ = (lam*z -+ phi)/sqrt(2*lam)  with
   Hamiltonian  -lam*w- w+ + v,
2. unstable manifold  w- = M(w+)  from its invariance equation,
3. linearizing coordinate sigma on the manifold, flow sigma(t)=sigma0 e^(lam t),
4. observable along the manifold re-expanded in sigma.

The result cross-validates against the full commutator expansion at low
order and extends it to the high orders the correlator series needs.
"""

import numpy as np


def _mul(a, b, kmax):
    out = np.convolve(a, b)
    return out[: kmax + 1]


def _poly_eval_series(poly2d, mseries, kmax):
    """sum_{i,l} poly2d[i][l] * M(w)^i * w^l as a 1d series in w."""
    deg_i = poly2d.shape[0]
    out = np.zeros(kmax + 1)
    mpow = np.zeros(kmax + 1)
    mpow[0] = 1.0
    for i in range(deg_i):
        row = poly2d[i]
        if np.any(row):
            acc = np.zeros(kmax + 1)
            top = min(len(row) - 1, kmax)
            acc[: top + 1] = row[: top + 1]
            out += _mul(mpow, acc, kmax)
        mpow = _mul(mpow, mseries, kmax)
        if not np.any(mpow):
            break
    return out


def _to_quadrature_coeffs(coeffs_zphi, lam, kmax):
    """Polynomial in (z, phi) re-expanded in (w-, w+), dense 2d array."""
    out = np.zeros((kmax + 1, kmax + 1))
    cz = 1.0 / np.sqrt(2.0 * lam)
    cp = np.sqrt(0.5 * lam)
    for (a, b), c in coeffs_zphi.items():
        c = float(c)
        if c == 0.0 or a + b > kmax:
            continue
        # (w- + w+)^a * (w+ - w-)^b, indices (i: w- power, j: w+ power)
        poly = {(0, 0): 1.0}
        for _ in range(a):
            nxt = {}
            for (i, j), w in poly.items():
                nxt[(i + 1, j)] = nxt.get((i + 1, j), 0.0) + w
                nxt[(i, j + 1)] = nxt.get((i, j + 1), 0.0) + w
            poly = nxt
        for _ in range(b):
            nxt = {}
            for (i, j), w in poly.items():
                nxt[(i + 1, j)] = nxt.get((i + 1, j), 0.0) - w
                nxt[(i, j + 1)] = nxt.get((i, j + 1), 0.0) + w
            poly = nxt
        scale = c * cz ** a * cp ** b
        for (i, j), w in poly.items():
            out[i, j] += scale * w
    return out


class UnstableManifold:
    """Series data of the hyperbolic fixed point's unstable manifold."""

    def __init__(self, vcoeffs, lam, kmax=50):
        self.lam = float(lam)
        self.kmax = int(kmax)
        v2d = _to_quadrature_coeffs(vcoeffs, self.lam, kmax + 2)
        # partial derivatives of the generator
        vm = np.zeros_like(v2d)   # d v / d w-
        vp = np.zeros_like(v2d)   # d v / d w+
        for i in range(1, v2d.shape[0]):
            vm[i - 1, :] = i * v2d[i, :]
        for j in range(1, v2d.shape[1]):
            vp[:, j - 1] = j * v2d[:, j]
        self._solve_manifold(vm, vp)
        self._solve_linearization()

    def _solve_manifold(self, vm, vp):
        """w- = M(w+) from -lam*M + Vp(M,w) = M'(w) * (lam*w - Vm(M,w))."""
        kmax, lam = self.kmax, self.lam
        m = np.zeros(kmax + 1)
        for j in range(2, kmax + 1):
            vp_series = _poly_eval_series(vp, m, j)
            vm_series = _poly_eval_series(vm, m, j)
            mprime = np.arange(1, kmax + 1) * m[1:]
            flow = -vm_series
            flow[1] += lam
            lhs = -lam * m.copy()
            lhs[: j + 1] += vp_series[: j + 1]
            rhs = np.zeros(j + 1)
            conv = np.convolve(np.concatenate([mprime, [0.0]]), flow)[: j + 1]
            rhs[: j + 1] = conv
            resid = lhs[j] - rhs[j]
            # residual is linear in the unknown m_j with slope -(j+1)*lam
            m[j] = resid / ((j + 1) * lam)
        self.m = m
        self.vm = vm
        self.vp = vp

    def _solve_linearization(self):
        """Flow on the manifold and its exactly linearizing coordinate."""
        kmax, lam = self.kmax, self.lam
        g = -_poly_eval_series(self.vm, self.m, kmax)
        g[1] += lam
        self.g = g
        sigma = np.zeros(kmax + 1)
        sigma[1] = 1.0
        for j in range(2, kmax + 1):
            sprime = np.arange(1, kmax + 1) * sigma[1:]
            lhs = np.convolve(np.concatenate([sprime, [0.0]]), g)[: j + 1]
            resid = lhs[j] - lam * sigma[j]
            sigma[j] = -resid / ((j - 1) * lam)
        self.sigma = sigma
        # series inversion w(s)
        w = np.zeros(kmax + 1)
        w[1] = 1.0
        for deg in range(2, kmax + 1):
            acc = 0.0
            wpow = w.copy()
            for j in range(2, deg + 1):
                wpow = _mul(wpow, w, deg)
                acc += sigma[j] * wpow[deg]
            w[deg] = -acc
        self.w_of_s = w

    def observable_series(self, coeffs_zphi):
        """Pure-growth coefficients of a (z, phi) polynomial observable.

        Entry k multiplies (sqrt(heff) e^(lam t) b+)^k.
        """
        kmax = self.kmax
        w = self.w_of_s
        m_of_s = np.zeros(kmax + 1)
        mpow = w.copy()
        for j in range(2, kmax + 1):
            mpow = _mul(mpow, w, kmax)
            if self.m[j]:
                m_of_s += self.m[j] * mpow
        z_of_s = (m_of_s + w) / np.sqrt(2.0 * self.lam)
        p_of_s = np.sqrt(0.5 * self.lam) * (w - m_of_s)
        out = np.zeros(kmax + 1)
        for (a, b), c in coeffs_zphi.items():
            c = float(c)
            if c == 0.0:
                continue
            term = np.zeros(kmax + 1)
            term[0] = 1.0
            for _ in range(a):
                term = _mul(term, z_of_s, kmax)
            for _ in range(b):
                term = _mul(term, p_of_s, kmax)
            out += c * term
        return out


def dominant_coefficients(vcoeffs, observable, lam, kmax=50):
    """Growth coefficients C_k, k = 0..kmax, for a (z, phi) observable."""
    manifold = UnstableManifold(vcoeffs, lam, kmax=kmax)
    return manifold.observable_series(observable)
