"""Analytic predictions: growth coefficients, matrix elements, correlator
series, cumulant prefactors, all organized in the renormalized parameter
heff * e^(2 lam t) * <b+^2>.

Combinatorial factors are produced by explicit pairing counts; neither
double factorial nor factorial is ever hardcoded, and both variants of the
thermal series are exposed so exact numerics can adjudicate between them.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import WeylPolynomial, quantize_polynomial, quantize_v
from .dyson import dominant_and_remainder, dyson_expand
from .exppoly import ExpPoly
from .normalform import dominant_coefficients
from .. import meanfield


class OrderError(ValueError):
    """A coefficient beyond the computed order was requested."""


def bplus_matrix_element(k, l, n, phi):
    """<k| b+^n |l> on prequench oscillator states, exact ladder walk.

    b+ = (e^(-i phi) a + e^(i phi) a+) / sqrt(2 sin 2 phi); the n-fold product
    is expanded by walking amplitudes level by level, so the selection rule
    <k|b+^n|l> = 0 for n < |k-l| holds exactly.
    """
    if min(k, l, n) < 0:
        raise ValueError("k, l, n must be nonnegative")
    if n < abs(k - l):
        return 0.0 + 0.0j
    scale = 1.0 / math.sqrt(2.0 * math.sin(2.0 * phi))
    down = scale * np.exp(-1j * phi)
    up = scale * np.exp(1j * phi)
    amp = {l: 1.0 + 0.0j}
    for _ in range(n):
        nxt = {}
        for level, a in amp.items():
            if level > 0:
                nxt[level - 1] = nxt.get(level - 1, 0.0) + a * down * math.sqrt(level)
            nxt[level + 1] = nxt.get(level + 1, 0.0) + a * up * math.sqrt(level + 1)
        amp = nxt
    return amp.get(k, 0.0 + 0.0j)


def thermal_covariance(beta, delta, phi):
    """Symmetrized covariance of (b-, b+) in a thermal oscillator state.

    Returns a 2x2 matrix [[<b-^2>, c], [c, <b+^2>]] with
    <b+^2> = <b-^2> = coth(beta*delta/2) / (2 sin 2 phi) and the symmetrized
    cross term carrying an extra cos 2 phi. beta may be inf (ground state).
    """
    if not 0.0 < phi < 0.5 * math.pi:
        raise ValueError(f"mixing angle {phi} outside (0, pi/2)")
    if beta <= 0:
        raise ValueError("beta must be positive or inf")
    coth = 1.0 if math.isinf(beta) else 1.0 / math.tanh(0.5 * beta * delta)
    s2 = math.sin(2.0 * phi)
    var = coth / (2.0 * s2)
    cross = coth * math.cos(2.0 * phi) / (2.0 * s2)
    return np.array([[var, cross], [cross, var]])


def gaussian_moment(mu, nu, cov):
    """<x^mu y^nu> for a centered bivariate Gaussian (Isserlis recursion)."""
    memo = {}

    def rec(a, b):
        if a < 0 or b < 0:
            return 0.0
        if a + b == 0:
            return 1.0
        if (a + b) % 2:
            return 0.0
        key = (a, b)
        if key in memo:
            return memo[key]
        if a > 0:
            val = (a - 1) * cov[0, 0] * rec(a - 2, b) + b * cov[0, 1] * rec(a - 1, b - 1)
        else:
            val = (b - 1) * cov[1, 1] * rec(a, b - 2)
        memo[key] = val
        return val

    return rec(mu, nu)


def wick_expectation(poly, cov):
    """Expectation of a WeylPolynomial in a centered Gaussian state.

    Symmetric ordering makes the symbol-level Gaussian moment formula exact;
    cov is a single-mode 2x2 covariance or a list of per-mode covariances.
    Odd-degree monomials contribute zero.
    """
    covs = [np.asarray(cov)] if np.asarray(cov).ndim == 2 else [np.asarray(c) for c in cov]
    if len(covs) != poly.n_modes:
        raise ValueError("one covariance block per mode required")
    out = ExpPoly()
    for key, coeff in poly.terms.items():
        w = 1.0
        for i in range(poly.n_modes):
            w *= gaussian_moment(key[2 * i], key[2 * i + 1], covs[i])
            if w == 0.0:
                break
        if w != 0.0:
            out = out + coeff.scale(w)
    return out.prune()


def count_pairings(r):
    """Number of perfect matchings of r items (0 for odd r).

    Computed by the matching recursion f(r) = (r-1) f(r-2), never by a
    factorial formula.
    """
    if r < 0:
        raise ValueError("negative order")
    if r % 2:
        return 0
    count = 1
    while r > 0:
        count *= r - 1
        r -= 2
    return count


@dataclass
class ScalingPrediction:
    """Growth coefficients and everything derived from them.

    C[k] multiplies (sqrt(heff) e^(lam t) b+)^k in the dominant form of the
    Heisenberg observable; all entries are independent of particle number.
    """

    lam: float
    omega: float
    phi: float
    delta: float
    C: np.ndarray
    remainder: WeylPolynomial
    heisenberg: WeylPolynomial
    C_expansion_order: int = field(default=0)

    def __post_init__(self):
        if not np.all(np.isfinite(self.C)):
            raise ValueError("growth coefficients must be finite")

    def C_at(self, k):
        if k >= len(self.C):
            raise OrderError(
                f"C_{k} beyond computed order {len(self.C) - 1}")
        return float(self.C[k])

    def predict_ckl(self, k, l):
        """Matrix-element constant c_kl = C_|k-l| <k|b+^|k-l||l>."""
        n = abs(k - l)
        return self.C_at(n) * bplus_matrix_element(k, l, n, self.phi)

    def renorm_param(self, t, heff, beta):
        """The renormalized expansion parameter heff e^(2 lam t) <b+^2>."""
        var = thermal_covariance(beta, self.delta, self.phi)[1, 1]
        return heff * math.exp(2.0 * self.lam * t) * var

    def matrix_element_dominant(self, k, l, t, heff):
        """c_kl (sqrt(heff) e^(lam t))^|k-l|."""
        n = abs(k - l)
        return self.predict_ckl(k, l) * (math.sqrt(heff) * math.exp(self.lam * t)) ** n


def expectation_series(pred, beta, max_m=None):
    """Thermal expectation as a series in the renormalized parameter.

    Term m couples the even growth coefficient C_2m to the pairing count of
    2m quadrature factors. Returns (coefficients, evaluate, evaluate_variant)
    where the variant replaces the pairing count by the factorial (2m-1)! so
    exact numerics can pick the correct combinatorial weight.
    """
    var = thermal_covariance(beta, pred.delta, pred.phi)[1, 1]
    if max_m is None:
        max_m = (len(pred.C) - 1) // 2
    ms = np.arange(max_m + 1)
    pairing = np.array([count_pairings(2 * m) for m in ms], dtype=float)
    factorial = np.array([math.factorial(max(2 * m - 1, 0)) for m in ms], dtype=float)
    c_even = np.array([pred.C[2 * m] if 2 * m < len(pred.C) else 0.0 for m in ms])

    def evaluate(t, heff, weights=pairing):
        u = heff * np.exp(2.0 * pred.lam * np.asarray(t)) * var
        out = np.zeros_like(u, dtype=float)
        for m in ms:
            out = out + weights[m] * c_even[m] * u ** m
        return out

    def evaluate_variant(t, heff):
        return evaluate(t, heff, weights=factorial)

    return pairing * c_even, evaluate, evaluate_variant


def expectation_finite_time(pred, beta):
    """Full finite-time expectation from the retained expansion terms."""
    cov = thermal_covariance(beta, pred.delta, pred.phi)
    full = wick_expectation(pred.heisenberg, cov)

    def evaluate(t, heff):
        return np.array([full.evaluate(ti, pred.lam, heff).real
                         for ti in np.atleast_1d(np.asarray(t, dtype=float))])

    return full, evaluate


def _dominant_polynomial(pred, kmin=1):
    terms = {}
    for k in range(kmin, len(pred.C)):
        c = pred.C[k]
        if c != 0.0:
            terms[(0, k)] = ExpPoly({(0, k, k): complex(c)})
    return WeylPolynomial(n_modes=1, terms=terms, lam=pred.lam,
                          omega=pred.omega, phi=pred.phi)


def otoc_series(pred, B, cov, max_m):
    """Multiexponential squared-commutator series in the renormalized parameter.

    Built from the dominant form of the Heisenberg observable: commutator with
    B, star square, Gaussian expectation; coefficient c_m multiplies
    (heff e^(lam t))^2 (heff e^(2 lam t) <b+^2>)^m.
    """
    var = float(np.asarray(cov)[1, 1])
    needed = 2 * max_m + 2
    if len(pred.C) < needed:
        raise OrderError(
            f"series to m={max_m} needs growth coefficients through k={needed - 1}, "
            f"have {len(pred.C) - 1}")
    a_dom = _dominant_polynomial(pred)
    comm = a_dom.commutator(B)
    square = comm.star(comm)
    expect = wick_expectation(square, cov).scale(-1.0)
    cms = np.zeros(max_m + 1)
    for (p, q, s), c in expect.terms.items():
        if p != 0:
            continue
        m = (q - 2) // 2
        if q != 2 * m + 2 or not 0 <= m <= max_m:
            continue
        if s != 2 * m + 4:
            continue
        if abs(c.imag) > 1e-10 * max(1.0, abs(c)):
            raise AssertionError(f"correlator coefficient not real at m={m}: {c}")
        cms[m] += c.real / var ** m

    def evaluate(t, heff):
        t = np.asarray(t, dtype=float)
        u = heff * np.exp(2.0 * pred.lam * t) * var
        lead = (heff * np.exp(pred.lam * t)) ** 2
        out = np.zeros_like(t)
        for m in range(max_m + 1):
            out = out + cms[m] * u ** m
        return lead * out

    return cms, evaluate


def otoc_finite_time(pred, B, cov, half_order=None):
    """Squared commutator with full time dependence of the retained orders.

    With half_order=4 this is the complete leading order in heff including
    its short-time behavior (exact when the generator is switched off).
    """
    comm = pred.heisenberg.commutator(B)
    square = comm.star(comm)
    expect = wick_expectation(square, cov).scale(-1.0)
    if half_order is not None:
        expect = expect.restrict_halforder(half_order)

    def evaluate(t, heff):
        return np.array([expect.evaluate(ti, pred.lam, heff).real
                         for ti in np.atleast_1d(np.asarray(t, dtype=float))])

    return expect, evaluate


def cumulant_prediction(pred, cov, n, cancellation_rtol=1e-9, s_cap=None):
    """Leading cumulant prefactor d_n of the dominant-form observable.

    Treats the observable as a polynomial of a centered Gaussian with variance
    <b+^2>, computes the n-th cumulant as an exact series in
    s = sqrt(heff) e^(lam t) up to power s_cap (default: just past the leading
    surviving order), checks that every order below s^(2(n-1)) cancels, and
    returns d_n with the full series for diagnostics.
    """
    if n < 1:
        raise ValueError("cumulant order must be positive")
    var = float(np.asarray(cov)[1, 1])
    kmax = len(pred.C) - 1
    if kmax < n - 1:
        raise OrderError(f"cumulant order {n} needs C through k={n - 1}")
    cap = 2 * (n - 1) + 4 if s_cap is None else int(s_cap)
    # moments of Y = sum_k C_k s^k g^k: the g-power equals the s-power, so a
    # moment is a 1d series in s with sigma-powers fixed by the pairing count
    base = np.zeros(cap + 1)
    base[: min(kmax, cap) + 1] = pred.C[: min(kmax, cap) + 1]
    moments = []
    signed = {}
    gross = {}
    ypow = np.zeros(cap + 1)
    ypow[0] = 1.0
    for j in range(1, n + 1):
        ypow = np.convolve(ypow, base)[: cap + 1]
        mj = np.zeros(cap + 1)
        mj_abs = np.zeros(cap + 1)
        for r in range(0, cap + 1):
            w = count_pairings(r) * var ** (r // 2) if r % 2 == 0 else 0.0
            mj[r] = ypow[r] * w
            mj_abs[r] = abs(ypow[r]) * w
        moments.append((mj, mj_abs))
    kappas = []
    for j in range(1, n + 1):
        mj, mj_abs = moments[j - 1]
        kj = mj.copy()
        kj_abs = mj_abs.copy()
        for i in range(1, j):
            w = math.comb(j - 1, i - 1)
            ki, ki_abs = kappas[i - 1]
            mrest, mrest_abs = moments[j - i - 1]
            kj = kj - w * np.convolve(ki, mrest)[: cap + 1]
            kj_abs = kj_abs + w * np.convolve(ki_abs, mrest_abs)[: cap + 1]
        kappas.append((kj, kj_abs))
    kn, kn_abs = kappas[n - 1]
    lead = 2 * (n - 1)
    for r in range(lead):
        if abs(kn[r]) > cancellation_rtol * max(kn_abs[r], 1e-300):
            raise AssertionError(
                f"cumulant order {n}: expected cancellation at s^{r} failed "
                f"({kn[r]:.3e} vs gross {kn_abs[r]:.3e})")
    d_n = kn[lead] / var ** (n - 1)
    return d_n, kn


def build_dimer_prediction(alpha_post, alpha_pre=0.0, observable=None,
                           taylor_order=8, max_half_order=6, kmax=55):
    """Assemble the full prediction set for a dimer interaction quench.

    observable maps (a, b) -> coefficient of z^a phi^b; defaults to z + z^2.
    The commutator expansion supplies every retained order (dominant plus
    finite-time remainder); the classical manifold extends the pure-growth
    coefficients to kmax, and the two constructions are cross-checked on
    their overlap.
    """
    if alpha_post <= 1.0:
        raise meanfield.StabilityError(
            f"postquench coupling {alpha_post} is not beyond the bifurcation")
    if alpha_pre >= 1.0:
        raise meanfield.StabilityError(
            f"prequench coupling {alpha_pre} must be on the stable side")
    if observable is None:
        observable = {(1, 0): 1.0, (2, 0): 1.0}
    lam = 2.0 * math.sqrt(alpha_post - 1.0)
    omega = 2.0 * math.sqrt(1.0 - alpha_pre)
    phi = math.atan2(omega, lam)
    delta = omega  # level spacing of the prequench harmonic spectrum, units J

    vc = {k: float(v) for k, v in meanfield.taylor_v(order=taylor_order).items()}
    vq = quantize_v(vc, lam, omega=omega, phi=phi)
    aq = quantize_polynomial(observable, lam, attach_free_evolution=True,
                             omega=omega, phi=phi)
    heis = dyson_expand(aq, vq, max_half_order)
    c_dyson, remainder = dominant_and_remainder(heis)

    c_full = dominant_coefficients(vc, observable, lam, kmax=kmax)
    mf_value = float(observable.get((0, 0), 0.0))
    c_full[0] = mf_value
    for k, c in c_dyson.items():
        if k == 0:
            continue
        scale = max(abs(c), abs(c_full[k]), 1e-12)
        if abs(c - c_full[k]) > 1e-7 * scale:
            raise AssertionError(
                f"growth coefficient mismatch at k={k}: commutator expansion "
                f"{c:.12e} vs manifold {c_full[k]:.12e}")
    return ScalingPrediction(lam=lam, omega=omega, phi=phi, delta=delta,
                             C=c_full, remainder=remainder, heisenberg=heis,
                             C_expansion_order=max_half_order)


def quantized_observable(observable, lam, omega=None, phi=None,
                         free_evolution=False):
    """Helper for B-type operators entering correlators at time zero."""
    return quantize_polynomial(observable, lam,
                               attach_free_evolution=free_evolution,
                               omega=omega, phi=phi)
