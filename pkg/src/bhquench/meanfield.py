"""Classical mean-field layer: Josephson energy, stability spectra, timescales.

Two coupling conventions are used and interconvert exactly:

* dimer convention  alpha = -U*(N+1)/(2J), attractive for alpha > 0,
* general-L convention  u = U*N/J.

Expansions are carried out in exact rational arithmetic and converted to
floating point only where the symbolic quadrature algebra takes over.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class StabilityError(ValueError):
    """Requested quantity needs an unstable (or stable) fixed point."""


@dataclass(frozen=True)
class MeanFieldModel:
    """Site count, coupling and energy scale of a Bose-Hubbard ring."""

    L: int
    alpha: float
    J: float = 1.0

    @classmethod
    def from_u(cls, L, u, N, J=1.0):
        return cls(L=L, alpha=alpha_from_u(u, N), J=J)

    def u(self, N):
        return u_from_alpha(self.alpha, N)


def alpha_from_u(u, N):
    """alpha = -u*(Ntilde/N)/2 with Ntilde = N+1."""
    return -0.5 * u * (N + 1) / N


def u_from_alpha(alpha, N):
    return -2.0 * alpha * N / (N + 1)


@dataclass(frozen=True)
class StabilitySpectrum:
    """Linearized modes about a fixed point.

    Each mode is exclusively stable (omega > 0) or unstable (lambda > 0);
    marginal modes (|omega^2| below threshold) are listed explicitly.
    """

    fixed_point: tuple
    stable_freqs: tuple
    unstable_rates: tuple
    marginal: tuple = ()

    @property
    def degeneracies(self):
        out = {}
        for v in self.unstable_rates:
            key = round(v, 9)
            out[key] = out.get(key, 0) + 1
        return out

    @property
    def max_rate(self):
        if not self.unstable_rates:
            raise StabilityError("no unstable mode in spectrum")
        return max(self.unstable_rates)


MARGINAL_THRESHOLD = 1e-9


def josephson_energy(z, phi, alpha):
    """Energy per particle 1 - sqrt(1-4z^2)*cos(phi) - 2*alpha*z^2."""
    if abs(z) > 0.5:
        raise ValueError(f"imbalance |z|={abs(z)} outside [-1/2, 1/2]")
    return 1.0 - math.sqrt(1.0 - 4.0 * z * z) * math.cos(phi) - 2.0 * alpha * z * z


def dimer_frequencies(alpha, J=1.0):
    """Single dimer mode: omega = 2*sqrt(1-alpha) or lam = 2*sqrt(alpha-1)."""
    wsq = 4.0 * (1.0 - alpha) * J * J
    if abs(wsq) < MARGINAL_THRESHOLD:
        return StabilitySpectrum((0.0, 0.0), (), (), marginal=(0.0,))
    if wsq > 0:
        return StabilitySpectrum((0.0, 0.0), (math.sqrt(wsq),), ())
    return StabilitySpectrum((0.0, 0.0), (), (math.sqrt(-wsq),))


def _sqrt_series_coeffs(nmax):
    """Rational coefficients S_j of sqrt(1-4 z^2) = sum_j S_j z^(2j)."""
    coeffs = [Fraction(1)]
    # binomial(1/2, j) * (-4)^j
    binom = Fraction(1)
    for j in range(1, nmax + 1):
        binom *= (Fraction(1, 2) - (j - 1)) / j
        coeffs.append(binom * Fraction(-4) ** j)
    return coeffs


def _cos_series_coeffs(nmax):
    """Rational coefficients C_i of cos(phi) = sum_i C_i phi^(2i)."""
    coeffs = []
    for i in range(nmax + 1):
        coeffs.append(Fraction((-1) ** i, math.factorial(2 * i)))
    return coeffs


def taylor_v(order=8):
    """Exact rational Taylor coefficients of the anharmonic remainder v(z, phi).

    v is the Josephson energy minus its constant and quadratic parts around
    the symmetric fixed point; the coupling enters only quadratically, so v
    itself is coupling-independent. Returns {(a, b): Fraction} for monomials
    z^a phi^b with 3 <= a+b <= order (only even a, b occur).
    """
    if order < 3:
        raise ValueError("expansion order must be at least 3")
    s = _sqrt_series_coeffs(order // 2)
    c = _cos_series_coeffs(order // 2)
    out = {}
    for j, sj in enumerate(s):
        for i, ci in enumerate(c):
            a, b = 2 * j, 2 * i
            if a + b < 3 or a + b > order:
                continue
            out[(a, b)] = -sj * ci
    return out


def gp_stability(u, L, J=1.0):
    """Linearized modes about the uniform state of the discrete GP equation.

    Closed form: omega_k^2 = eps_k * (eps_k + 2u/L) * J^2 with lattice
    dispersion eps_k = 2*(1 - cos k), k = 2*pi*m/L for m != 0. The dimer has a
    single bond, which halves eps. Negative omega^2 is reported as an
    unstable rate lambda = sqrt(-omega^2).

    A strongly attractive coupling below the uniform-minimum bifurcation is
    flagged with a warning: the uniform state is then not the global minimum
    and a prequench condensate prepared there is not the ground state.
    """
    if L < 2:
        raise ValueError("need at least two sites")
    stable, unstable, marginal = [], [], []
    bond_factor = 0.5 if L == 2 else 1.0
    crit = None
    for mmode in range(1, L):
        k = 2.0 * np.pi * mmode / L
        eps = bond_factor * 2.0 * (1.0 - np.cos(k))
        wsq = eps * (eps + 2.0 * u / L) * J * J
        if crit is None or wsq < crit:
            crit = wsq
        if abs(wsq) < MARGINAL_THRESHOLD:
            marginal.append(0.0)
        elif wsq > 0:
            stable.append(math.sqrt(wsq))
        else:
            unstable.append(math.sqrt(-wsq))
    if crit is not None and crit < -MARGINAL_THRESHOLD and u < 0:
        import warnings

        warnings.warn(
            "uniform state is unstable at this coupling; it is a valid "
            "postquench expansion point but not a prequench ground state",
            stacklevel=2)
    fp = tuple([1.0 / math.sqrt(L)] * L)
    return StabilitySpectrum(fixed_point=fp, stable_freqs=tuple(sorted(stable)),
                             unstable_rates=tuple(sorted(unstable)),
                             marginal=tuple(marginal))


def gp_linearization_matrix(u, L, J=1.0):
    """Reduced 2(L-1)-dimensional Jacobian about the uniform state.

    Canonical coordinates are the site densities rho_j and phases theta_j with
    rho_L and the global phase eliminated; used as an independent numerical
    cross-check of the closed-form Bogoliubov spectrum.
    """
    # classical energy per particle in (rho, theta); single bond for L=2
    bonds = [(0, 1)] if L == 2 else [(j, (j + 1) % L) for j in range(L)]

    def energy(x):
        rho = np.empty(L)
        rho[: L - 1] = x[: L - 1]
        rho[L - 1] = 1.0 - np.sum(x[: L - 1])
        theta = np.concatenate([x[L - 1:], [0.0]])
        e = 0.5 * u * np.sum(rho**2)
        for (a, b) in bonds:
            e -= 2.0 * np.sqrt(rho[a] * rho[b]) * np.cos(theta[b] - theta[a])
        return J * e

    n = 2 * (L - 1)
    x0 = np.concatenate([np.full(L - 1, 1.0 / L), np.zeros(L - 1)])
    h = 1e-6
    hess = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            xpp = x0.copy(); xpp[i] += h; xpp[j] += h
            xpm = x0.copy(); xpm[i] += h; xpm[j] -= h
            xmp = x0.copy(); xmp[i] -= h; xmp[j] += h
            xmm = x0.copy(); xmm[i] -= h; xmm[j] -= h
            hess[i, j] = (energy(xpp) - energy(xpm) - energy(xmp) + energy(xmm)) / (4 * h * h)
    omega_sympl = np.zeros((n, n))
    omega_sympl[: L - 1, L - 1:] = np.eye(L - 1)
    omega_sympl[L - 1:, : L - 1] = -np.eye(L - 1)
    return omega_sympl @ hess


def gp_stability_numeric(u, L, J=1.0, degeneracy_threshold=MARGINAL_THRESHOLD):
    """Bogoliubov modes from the eigenvalues of the reduced Jacobian."""
    jac = gp_linearization_matrix(u, L, J)
    evals = np.linalg.eigvals(jac)
    stable, unstable, marginal = [], [], []
    used = np.zeros(len(evals), dtype=bool)
    for i, ev in enumerate(evals):
        if used[i]:
            continue
        used[i] = True
        # consume the symplectic partner -ev so each mode is counted once
        for j in range(i + 1, len(evals)):
            if not used[j] and abs(evals[j] + ev) < 1e-6 * max(1.0, abs(ev)):
                used[j] = True
                break
        mag = abs(ev)
        if mag < degeneracy_threshold:
            marginal.append(0.0)
        elif abs(ev.real) > abs(ev.imag):
            unstable.append(abs(ev.real))
        else:
            stable.append(abs(ev.imag))
    return StabilitySpectrum(fixed_point=tuple([1.0 / math.sqrt(L)] * L),
                             stable_freqs=tuple(sorted(stable)),
                             unstable_rates=tuple(sorted(unstable)),
                             marginal=tuple(marginal))


def ehrenfest_time(N, lam):
    """log(N+1) / (2*lambda), the window of the quadratic description."""
    if lam <= 0:
        raise StabilityError("Ehrenfest time requires an unstable rate lambda > 0")
    if N < 2:
        raise ValueError("need at least two particles")
    return math.log(N + 1.0) / (2.0 * lam)
